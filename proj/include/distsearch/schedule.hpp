#pragma once

#include <string>
#include <utility>
#include <vector>

namespace distsearch {

// The learned importance process: one row of per-pathway weights per search
// step. Normalized rows are what training consumes; the parallel raw rows are
// kept for clip decisions and audit.
struct Schedule {
  std::vector<std::string> pathway_ids;
  std::vector<std::vector<double>> rows;      // length x P, normalized
  std::vector<std::vector<double>> raw_rows;  // length x P, pre-normalization
  std::vector<std::pair<std::string, std::string>> metadata;

  size_t length() const { return rows.size(); }
  size_t width() const { return pathway_ids.size(); }

  void validate() const;

  // Returns a copy with columns permuted into the given id order. Throws
  // ConfigError when the id sets differ.
  Schedule reordered(const std::vector<std::string>& ids) const;
};

Schedule constant_schedule(const std::vector<std::string>& ids, double normalized_value,
                           double raw_value, size_t length);

// Linearly expands the schedule to target_length rows, endpoints preserved
// bit-for-bit. A single-row schedule is constant-extended.
Schedule interpolate(const Schedule& s, size_t target_length);

// Writes <path> with the normalized rows and a sibling <stem>.raw.csv with the
// raw rows. Metadata is stored as leading "# key=value" lines.
void save_schedule(const Schedule& s, const std::string& path);
Schedule load_schedule(const std::string& path);

std::string raw_sibling_path(const std::string& path);

}  // namespace distsearch
