#include "dsd/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "dsd/csv.hpp"
#include "dsd/errors.hpp"

namespace dsd::svg {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 480;
constexpr int kMargin = 40;
constexpr std::array<const char*, 5> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string scatter_svg(const std::vector<PointSet>& sets, const std::string& title) {
  if (sets.size() > kColors.size()) throw PreconditionError("scatter_svg: at most 5 point sets");
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  bool any = false;
  for (const PointSet& s : sets) {
    if (s.points.rows() > 0 && s.points.cols() != 2) throw PreconditionError("scatter_svg: points must be n x 2");
    for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
      const double x = s.points(i, 0), y = s.points(i, 1);
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (!any) {
        lo_x = hi_x = x;
        lo_y = hi_y = y;
        any = true;
      }
      lo_x = std::min(lo_x, x);
      hi_x = std::max(hi_x, x);
      lo_y = std::min(lo_y, y);
      hi_y = std::max(hi_y, y);
    }
  }
  if (!any) {
    lo_x = lo_y = -1.0;
    hi_x = hi_y = 1.0;
  }
  // Equal aspect ratio, centred.
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12}) * 1.05;
  const double plot_w = kWidth - 2 * kMargin, plot_h = kHeight - 2 * kMargin;
  const double scale = std::min(plot_w, plot_h) / span;
  auto px = [&](double x) { return kWidth / 2.0 + (x - cx) * scale; };
  auto py = [&](double y) { return kHeight / 2.0 - (y - cy) * scale; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) + "\" height=\"" +
         std::to_string(kHeight) + "\" viewBox=\"0 0 " + std::to_string(kWidth) + " " + std::to_string(kHeight) +
         "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    out += "<text x=\"" + std::to_string(kWidth / 2) +
           "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + escape(title) +
           "</text>\n";
  }
  for (std::size_t k = 0; k < sets.size(); ++k) {
    out += "<g fill=\"" + std::string(kColors[k]) + "\" fill-opacity=\"0.5\">\n";
    const Mat& p = sets[k].points;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (!std::isfinite(p(i, 0)) || !std::isfinite(p(i, 1))) continue;
      out += "<circle cx=\"" + fmt(px(p(i, 0))) + "\" cy=\"" + fmt(py(p(i, 1))) + "\" r=\"1.5\"/>\n";
    }
    out += "</g>\n";
  }
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const int y = 40 + 18 * static_cast<int>(k);
    out += "<rect x=\"" + std::to_string(kWidth - 150) + "\" y=\"" + std::to_string(y - 10) +
           "\" width=\"10\" height=\"10\" fill=\"" + kColors[k] + "\"/>\n";
    out += "<text x=\"" + std::to_string(kWidth - 134) + "\" y=\"" + std::to_string(y) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(sets[k].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

void emit_scatter_svg(const std::vector<PointSet>& sets, const std::string& path, const std::string& title) {
  io::atomic_write(path, scatter_svg(sets, title));
}

}  // namespace dsd::svg
