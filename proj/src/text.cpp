#include "distsearch/text.hpp"

#include <charconv>
#include <cmath>

#include "distsearch/errors.hpp"

namespace distsearch {

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  auto r = std::from_chars(field.data(), field.data() + field.size(), v);
  if (r.ec != std::errc() || r.ptr != field.data() + field.size() || !std::isfinite(v))
    throw FormatError(where + ": bad value '" + field + "'");
  return v;
}

}  // namespace distsearch
