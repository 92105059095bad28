#include "distsearch/schedule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "distsearch/errors.hpp"
#include "distsearch/text.hpp"

namespace distsearch {

namespace {

double parse_field(const std::string& field, const std::string& path, size_t line_no) {
  return parse_double(field, path + ":" + std::to_string(line_no));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool is_pathway_id(const std::string& id) {
  size_t pos = 0;
  auto eat_int = [&](char prefix) {
    if (pos >= id.size() || id[pos] != prefix) return false;
    ++pos;
    size_t start = pos;
    while (pos < id.size() && std::isdigit(static_cast<unsigned char>(id[pos]))) ++pos;
    return pos > start;
  };
  if (!eat_int('t')) return false;
  if (pos >= id.size() || id[pos] != '-') return false;
  ++pos;
  if (!eat_int('s')) return false;
  if (pos >= id.size() || id[pos] != '-') return false;
  ++pos;
  if (!eat_int('k')) return false;
  return pos == id.size();
}

struct CsvTable {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> values;
  std::vector<std::pair<std::string, std::string>> metadata;
};

CsvTable read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open schedule file " + path);
  CsvTable t;
  std::string line;
  size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      throw FormatError(path + ":" + std::to_string(line_no) + ": CRLF line ending");
    if (!saw_header && !line.empty() && line[0] == '#') {
      const size_t start = line.find_first_not_of("# ");
      if (start == std::string::npos) continue;
      std::string body = line.substr(start);
      auto eq = body.find('=');
      if (eq != std::string::npos) t.metadata.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    auto fields = split_csv(line);
    if (!saw_header) {
      if (fields.empty() || fields[0] != "step")
        throw FormatError(path + ":" + std::to_string(line_no) + ": header must start with 'step'");
      if (fields.size() < 2)
        throw FormatError(path + ":" + std::to_string(line_no) + ": no pathway columns");
      for (size_t i = 1; i < fields.size(); ++i) {
        if (!is_pathway_id(fields[i]))
          throw FormatError(path + ":" + std::to_string(line_no) + ": column '" + fields[i] +
                            "' is not a pathway id");
        t.ids.push_back(fields[i]);
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;  // tolerate one trailing newline
    if (fields.size() != t.ids.size() + 1)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.ids.size() + 1) + " fields, got " +
                        std::to_string(fields.size()));
    const double step = parse_field(fields[0], path, line_no);
    if (step != static_cast<double>(t.values.size()))
      throw FormatError(path + ":" + std::to_string(line_no) + ": step column must read " +
                        std::to_string(t.values.size()));
    std::vector<double> row(t.ids.size());
    for (size_t i = 0; i < row.size(); ++i) row[i] = parse_field(fields[i + 1], path, line_no);
    t.values.push_back(std::move(row));
  }
  if (!saw_header) throw FormatError(path + ": missing header line");
  return t;
}

void write_table(const std::string& path, const std::vector<std::string>& ids,
                 const std::vector<std::vector<double>>& values,
                 const std::vector<std::pair<std::string, std::string>>& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write schedule file " + path);
  for (auto& [k, v] : metadata) out << "# " << k << "=" << v << "\n";
  out << "step";
  for (auto& id : ids) out << "," << id;
  out << "\n";
  for (size_t r = 0; r < values.size(); ++r) {
    out << r;
    for (double v : values[r]) out << "," << fmt_double(v);
    out << "\n";
  }
  if (!out) throw FormatError("failed while writing " + path);
}

}  // namespace

void Schedule::validate() const {
  if (pathway_ids.empty()) throw ContractError("schedule has no pathway columns");
  for (auto& id : pathway_ids)
    if (id.empty()) throw ContractError("schedule has an empty pathway id");
  if (raw_rows.size() != rows.size())
    throw ContractError("schedule raw/normalized row counts differ");
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != pathway_ids.size() || raw_rows[r].size() != pathway_ids.size())
      throw ContractError("schedule row " + std::to_string(r) + " has wrong width");
    for (size_t c = 0; c < pathway_ids.size(); ++c)
      if (!std::isfinite(rows[r][c]) || !std::isfinite(raw_rows[r][c]))
        throw ContractError("schedule row " + std::to_string(r) + " has a non-finite value");
  }
}

Schedule Schedule::reordered(const std::vector<std::string>& ids) const {
  validate();
  std::unordered_map<std::string, size_t> where;
  for (size_t i = 0; i < pathway_ids.size(); ++i) where[pathway_ids[i]] = i;
  if (ids.size() != pathway_ids.size() || where.size() != pathway_ids.size())
    throw ConfigError("schedule has " + std::to_string(pathway_ids.size()) +
                      " pathway columns, expected " + std::to_string(ids.size()));
  std::vector<size_t> perm(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = where.find(ids[i]);
    if (it == where.end()) throw ConfigError("schedule is missing pathway '" + ids[i] + "'");
    perm[i] = it->second;
  }
  Schedule out;
  out.pathway_ids = ids;
  out.metadata = metadata;
  out.rows.reserve(rows.size());
  out.raw_rows.reserve(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> nr(ids.size()), rr(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
      nr[i] = rows[r][perm[i]];
      rr[i] = raw_rows[r][perm[i]];
    }
    out.rows.push_back(std::move(nr));
    out.raw_rows.push_back(std::move(rr));
  }
  return out;
}

Schedule constant_schedule(const std::vector<std::string>& ids, double normalized_value,
                           double raw_value, size_t length) {
  if (ids.empty()) throw ContractError("constant_schedule: no pathway ids");
  Schedule s;
  s.pathway_ids = ids;
  s.rows.assign(length, std::vector<double>(ids.size(), normalized_value));
  s.raw_rows.assign(length, std::vector<double>(ids.size(), raw_value));
  s.validate();
  return s;
}

Schedule interpolate(const Schedule& s, size_t target_length) {
  s.validate();
  if (s.rows.empty()) throw ContractError("cannot interpolate an empty schedule");
  if (target_length < s.rows.size())
    throw ContractError("interpolation target " + std::to_string(target_length) +
                        " is shorter than the schedule (" + std::to_string(s.rows.size()) + ")");
  Schedule out;
  out.pathway_ids = s.pathway_ids;
  out.metadata = s.metadata;
  out.rows.reserve(target_length);
  out.raw_rows.reserve(target_length);
  const size_t src = s.rows.size();
  for (size_t t = 0; t < target_length; ++t) {
    if (src == 1 || target_length == 1) {
      out.rows.push_back(s.rows[src == 1 ? 0 : t]);
      out.raw_rows.push_back(s.raw_rows[src == 1 ? 0 : t]);
      continue;
    }
    const double x = static_cast<double>(t) * static_cast<double>(src - 1) /
                     static_cast<double>(target_length - 1);
    size_t lo = static_cast<size_t>(x);
    if (lo >= src - 1) lo = src - 2;
    const double frac = x - static_cast<double>(lo);
    if (frac == 0.0) {
      out.rows.push_back(s.rows[lo]);
      out.raw_rows.push_back(s.raw_rows[lo]);
      continue;
    }
    std::vector<double> nr(s.width()), rr(s.width());
    for (size_t c = 0; c < s.width(); ++c) {
      nr[c] = (1.0 - frac) * s.rows[lo][c] + frac * s.rows[lo + 1][c];
      rr[c] = (1.0 - frac) * s.raw_rows[lo][c] + frac * s.raw_rows[lo + 1][c];
    }
    out.rows.push_back(std::move(nr));
    out.raw_rows.push_back(std::move(rr));
  }
  return out;
}

std::string raw_sibling_path(const std::string& path) {
  const std::string suffix = ".csv";
  if (path.size() > suffix.size() && path.substr(path.size() - suffix.size()) == suffix)
    return path.substr(0, path.size() - suffix.size()) + ".raw.csv";
  return path + ".raw.csv";
}

void save_schedule(const Schedule& s, const std::string& path) {
  s.validate();
  write_table(path, s.pathway_ids, s.rows, s.metadata);
  write_table(raw_sibling_path(path), s.pathway_ids, s.raw_rows, {});
}

Schedule load_schedule(const std::string& path) {
  CsvTable norm = read_table(path);
  CsvTable raw = read_table(raw_sibling_path(path));
  if (raw.ids != norm.ids)
    throw FormatError(raw_sibling_path(path) + ": pathway columns differ from " + path);
  if (raw.values.size() != norm.values.size())
    throw FormatError(raw_sibling_path(path) + ": row count differs from " + path);
  Schedule s;
  s.pathway_ids = std::move(norm.ids);
  s.rows = std::move(norm.values);
  s.raw_rows = std::move(raw.values);
  s.metadata = std::move(norm.metadata);
  s.validate();
  return s;
}

}  // namespace distsearch
