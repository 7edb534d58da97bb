#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gbs/blend.hpp"
#include "gbs/grid.hpp"

// Pointing-game evaluation.
namespace gbs::eval {

// Pixel box covering columns [x_min, x_max) and rows [y_min, y_max).
struct Box {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  bool contains(int row, int col) const {
    return col >= x_min && col < x_max && row >= y_min && row < y_max;
  }
  long area() const { return static_cast<long>(x_max - x_min) * (y_max - y_min); }
  bool operator==(const Box&) const = default;
};

struct GroundingSample {
  std::string id;        // image id
  int phrase_index = 0;  // position of the phrase within its image record
  Image image;
  blend::Tokens phrase;
  std::vector<Box> gt_boxes;
  std::string category;  // optional breakdown key
};

struct EvalReport {
  long total = 0;
  long hits = 0;
  double accuracy = 0.0;
  std::map<std::string, std::pair<long, long>> per_category;  // hits, total

  std::string to_text() const;
  std::string to_key_value() const;
};

// Bilinear, pixel-center aligned; targets must be >= the native size.
Heatmap upsample_heatmap(const Heatmap& h, int target_height, int target_width);

// Row-major index of the first maximal pixel.
std::pair<int, int> argmax(const Heatmap& h);

// True iff the argmax pixel lies inside any of the boxes.
bool pointing_hit(const Heatmap& h, const std::vector<Box>& gt_boxes);

using HeatmapSource = std::function<Heatmap(const GroundingSample&)>;

// Heatmaps smaller than the image are upsampled before the argmax.
EvalReport evaluate(const HeatmapSource& source, const std::vector<GroundingSample>& samples);

// Mean fraction of the image covered by the union of each sample's boxes.
double chance_rate(const std::vector<GroundingSample>& samples);

void write_report(const std::filesystem::path& stem, const EvalReport& report);

}  // namespace gbs::eval
