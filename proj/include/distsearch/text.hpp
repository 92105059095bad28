#pragma once

#include <string>

namespace distsearch {

// Shortest decimal form that round-trips to the same double.
std::string fmt_double(double v);

// Strict full-string parse of a finite double; `where` prefixes the
// FormatError message (e.g. "sched.csv:3").
double parse_double(const std::string& field, const std::string& where);

}  // namespace distsearch
