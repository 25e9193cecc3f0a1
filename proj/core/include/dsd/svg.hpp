#pragma once

#include <string>
#include <vector>

#include "dsd/gaussian.hpp"

namespace dsd::svg {

struct PointSet {
  std::string label;
  Mat points;  // n x 2
};

/// Standalone SVG scatter plot on a fixed 640 x 480 canvas with a legend.
/// Colors follow set order. At most five sets.
std::string scatter_svg(const std::vector<PointSet>& sets, const std::string& title = "");

/// Renders scatter_svg and writes it atomically.
void emit_scatter_svg(const std::vector<PointSet>& sets, const std::string& path, const std::string& title = "");

}  // namespace dsd::svg
