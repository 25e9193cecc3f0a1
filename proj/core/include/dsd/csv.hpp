#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsd/gaussian.hpp"

namespace dsd::io {

/// Library version baked in at build time.
const char* version();

/// Provenance stamped on every artifact as a leading `#` comment line.
struct Stamp {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string note;  // optional second comment line

  std::string comment_line() const;  // "# config_hash=...,seed=...,version=...\n"
};

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Writes `content` to `path + ".tmp"` and renames it over `path`.
/// Parent directories are created. Throws IoError on failure.
void atomic_write(const std::string& path, const std::string& content);

/// Comma-separated table with a mandatory header row and LF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t row_count() const { return rows_.size(); }

  void add_row(std::vector<std::string> cells);
  void add_row(const std::vector<double>& values);

  std::string to_string(const Stamp* stamp = nullptr) const;
  void write(const std::string& path, const Stamp* stamp = nullptr) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

struct ParsedCsv {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;  // without the leading '#'
};

ParsedCsv parse_csv(const std::string& text);
ParsedCsv read_csv(const std::string& path);

/// Points as an n x d table with columns x0..x{d-1} (x,y for d = 2).
void write_points(const std::string& path, const Mat& points, const Stamp* stamp = nullptr);
Mat read_points(const std::string& path);

std::string read_text(const std::string& path);

}  // namespace dsd::io
