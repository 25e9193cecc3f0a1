#include "dsd/csv.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <system_error>

#include "dsd/errors.hpp"

#ifndef DSD_VERSION
#define DSD_VERSION "0.0.0"
#endif

namespace dsd::io {

namespace fs = std::filesystem;

const char* version() { return DSD_VERSION; }

std::string Stamp::comment_line() const {
  std::string line = "# config_hash=" + config_hash + ",seed=" + std::to_string(seed) + ",version=" + version() + "\n";
  if (!note.empty()) line += "# " + note + "\n";
  return line;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void atomic_write(const std::string& path, const std::string& content) {
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + target.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + target.string());
  }
}

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw PreconditionError("CsvTable: need at least one column");
}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns_.size()) throw PreconditionError("CsvTable::add_row: wrong number of cells");
  for (const std::string& c : cells) {
    if (c.find_first_of(",\n\r") != std::string::npos) {
      throw PreconditionError("CsvTable::add_row: cell contains a separator or newline");
    }
  }
  rows_.push_back(std::move(cells));
}

void CsvTable::add_row(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_double(v));
  add_row(std::move(cells));
}

std::string CsvTable::to_string(const Stamp* stamp) const {
  std::string out;
  if (stamp) out += stamp->comment_line();
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (i) out += ',';
    out += columns_[i];
  }
  out += '\n';
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

void CsvTable::write(const std::string& path, const Stamp* stamp) const { atomic_write(path, to_string(stamp)); }

ParsedCsv parse_csv(const std::string& text) {
  ParsedCsv out;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = s.find(',', start);
      cells.push_back(s.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return cells;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') throw IoError("CSV must use LF line endings");
    if (line.empty()) continue;
    if (line[0] == '#') {
      out.comments.push_back(line.substr(1));
      continue;
    }
    auto cells = split(line);
    if (!have_header) {
      out.columns = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != out.columns.size()) throw IoError("CSV row has " + std::to_string(cells.size()) +
                                                          " cells, header has " + std::to_string(out.columns.size()));
    out.rows.push_back(std::move(cells));
  }
  if (!have_header) throw IoError("CSV has no header row");
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ParsedCsv read_csv(const std::string& path) { return parse_csv(read_text(path)); }

namespace {

std::vector<std::string> point_columns(Eigen::Index d) {
  if (d == 2) return {"x", "y"};
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < d; ++j) cols.push_back("x" + std::to_string(j));
  return cols;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("not a number: '" + s + "'");
  return v;
}

}  // namespace

void write_points(const std::string& path, const Mat& points, const Stamp* stamp) {
  CsvTable t(point_columns(points.cols()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::vector<double> row(points.row(i).data(), points.row(i).data() + points.cols());
    t.add_row(row);
  }
  t.write(path, stamp);
}

Mat read_points(const std::string& path) {
  const ParsedCsv csv = read_csv(path);
  Mat out(static_cast<Eigen::Index>(csv.rows.size()), static_cast<Eigen::Index>(csv.columns.size()));
  for (std::size_t i = 0; i < csv.rows.size(); ++i)
    for (std::size_t j = 0; j < csv.columns.size(); ++j) out(i, j) = parse_double(csv.rows[i][j]);
  return out;
}

}  // namespace dsd::io
