#include "gbs/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gbs::eval {

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "pointing game: " << hits << " / " << total << " hits, accuracy " << accuracy << "\n";
  for (const auto& [category, counts] : per_category) {
    const double acc = counts.second ? static_cast<double>(counts.first) / counts.second : 0.0;
    out << "  " << category << ": " << counts.first << " / " << counts.second << " (" << acc << ")\n";
  }
  return out.str();
}

std::string EvalReport::to_key_value() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "total=" << total << "\nhits=" << hits << "\naccuracy=" << accuracy << "\n";
  for (const auto& [category, counts] : per_category)
    out << "category." << category << ".hits=" << counts.first << "\ncategory." << category
        << ".total=" << counts.second << "\n";
  return out.str();
}

Heatmap upsample_heatmap(const Heatmap& h, int target_height, int target_width) {
  GBS_CHECK(target_height >= h.height() && target_width >= h.width(), kShape,
            "upsample_heatmap: target smaller than the native map");
  if (target_height == h.height() && target_width == h.width()) return h;
  Heatmap out(target_height, target_width);
  const double sy = static_cast<double>(h.height()) / target_height;
  const double sx = static_cast<double>(h.width()) / target_width;
  for (int r = 0; r < target_height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, h.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < target_width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, h.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, h.width() - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * h(y0, x0) + wx * h(y0, x1);
      const double bottom = (1 - wx) * h(y1, x0) + wx * h(y1, x1);
      out(r, c) = (1 - wy) * top + wy * bottom;
    }
  }
  return out;
}

std::pair<int, int> argmax(const Heatmap& h) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[best]) best = i;
  return {static_cast<int>(best / h.width()), static_cast<int>(best % h.width())};
}

bool pointing_hit(const Heatmap& h, const std::vector<Box>& gt_boxes) {
  GBS_CHECK(!gt_boxes.empty(), kConfig, "pointing_hit: no ground-truth boxes");
  const auto [row, col] = argmax(h);
  return std::any_of(gt_boxes.begin(), gt_boxes.end(), [&](const Box& b) { return b.contains(row, col); });
}

EvalReport evaluate(const HeatmapSource& source, const std::vector<GroundingSample>& samples) {
  GBS_CHECK(!samples.empty(), kConfig, "evaluate: no samples");
  EvalReport report;
  for (const auto& s : samples) {
    Heatmap h = source(s);
    if (h.height() != s.image.height() || h.width() != s.image.width())
      h = upsample_heatmap(h, s.image.height(), s.image.width());
    const bool hit = pointing_hit(h, s.gt_boxes);
    ++report.total;
    report.hits += hit;
    if (!s.category.empty()) {
      auto& c = report.per_category[s.category];
      c.first += hit;
      ++c.second;
    }
  }
  report.accuracy = static_cast<double>(report.hits) / static_cast<double>(report.total);
  return report;
}

double chance_rate(const std::vector<GroundingSample>& samples) {
  GBS_CHECK(!samples.empty(), kConfig, "chance_rate: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    long covered = 0;
    for (int r = 0; r < s.image.height(); ++r)
      for (int c = 0; c < s.image.width(); ++c)
        covered += std::any_of(s.gt_boxes.begin(), s.gt_boxes.end(),
                               [&](const Box& b) { return b.contains(r, c); });
    total += static_cast<double>(covered) / (static_cast<double>(s.image.height()) * s.image.width());
  }
  return total / static_cast<double>(samples.size());
}

void write_report(const std::filesystem::path& stem, const EvalReport& report) {
  std::ofstream text(stem.string() + ".txt");
  std::ofstream kv(stem.string() + ".kv");
  GBS_CHECK(text.good() && kv.good(), kIo, "cannot write report: " + stem.string());
  text << report.to_text();
  kv << report.to_key_value();
}

}  // namespace gbs::eval
