#include "gbs/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "gbs/manifest.hpp"
#include "gbs/trainer.hpp"

namespace gbs::workbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string output_name(HeatmapOutput output) {
  switch (output) {
    case HeatmapOutput::kFused: return "fused";
    case HeatmapOutput::kGbs: return "gbs";
    case HeatmapOutput::kI2t: return "i2t";
  }
  return "?";
}

HeatmapOutput parse_output(const std::string& name) {
  if (name == "fused") return HeatmapOutput::kFused;
  if (name == "gbs") return HeatmapOutput::kGbs;
  if (name == "i2t") return HeatmapOutput::kI2t;
  throw Error(ErrorKind::kParameter, "unknown heatmap output '" + name + "' (fused, gbs, i2t)");
}

Heatmap model_heatmap(const net::GbsModel<float>& model, const Image& image, const blend::Tokens& phrase,
                      HeatmapOutput output) {
  const auto& cfg = model.config();
  const Image input = (image.height() == cfg.image_height && image.width() == cfg.image_width)
                          ? image
                          : blend::resize_bilinear(image, cfg.image_height, cfg.image_width);
  switch (output) {
    case HeatmapOutput::kFused: return infer::heatmap_fused(model, input, phrase);
    case HeatmapOutput::kGbs: return infer::heatmap_gbs(model, input, phrase);
    case HeatmapOutput::kI2t: return infer::heatmap_i2t(model, input, phrase);
  }
  return {};
}

eval::HeatmapSource model_source(const net::GbsModel<float>& model, HeatmapOutput output) {
  return [&model, output](const eval::GroundingSample& s) { return model_heatmap(model, s.image, s.phrase, output); };
}

std::string heatmap_file_name(const std::string& id, int phrase_index) {
  return id + "_p" + std::to_string(phrase_index) + ".pfm";
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red ramp.
void colormap(double v, double rgb[3]) {
  static constexpr double stops[4][3] = {{0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
  const double t = std::clamp(v, 0.0, 1.0) * 3.0;
  const int k = std::min(static_cast<int>(t), 2);
  const double f = t - k;
  for (int ch = 0; ch < 3; ++ch) rgb[ch] = (1.0 - f) * stops[k][ch] + f * stops[k + 1][ch];
}

void save_outputs(const eval::GroundingSample& s, const Heatmap& native, const EvalOptions& options) {
  if (options.heatmap_dir) write_pfm(*options.heatmap_dir / heatmap_file_name(s.id, s.phrase_index), native);
  if (options.overlay_dir) {
    const Heatmap full = eval::upsample_heatmap(native, s.image.height(), s.image.width());
    const std::string name = s.id + "_p" + std::to_string(s.phrase_index) + ".png";
    write_image(*options.overlay_dir / name, overlay(s.image, full));
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  GBS_CHECK(!ec, kIo, "cannot create directory " + dir.string());
}

}  // namespace

Image overlay(const Image& image, const Heatmap& heatmap, double opacity) {
  GBS_CHECK(image.height() == heatmap.height() && image.width() == heatmap.width(), kShape,
            "overlay: heatmap and image sizes differ");
  Image out(image.height(), image.width());
  double rgb[3];
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      colormap(heatmap(r, c), rgb);
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r, c) = (1.0 - opacity) * image.at(ch, r, c) + opacity * rgb[ch];
    }
  }
  return out;
}

eval::EvalReport evaluate_model(const net::GbsModel<float>& model, const std::vector<eval::GroundingSample>& samples,
                                const EvalOptions& options) {
  if (options.overlay_dir) make_dir(*options.overlay_dir);
  if (options.heatmap_dir) make_dir(*options.heatmap_dir);
  const bool saving = options.overlay_dir || options.heatmap_dir;
  return eval::evaluate(
      [&](const eval::GroundingSample& s) {
        Heatmap h = model_heatmap(model, s.image, s.phrase, options.output);
        if (saving) save_outputs(s, h, options);
        return h;
      },
      samples);
}

eval::EvalReport evaluate_cmd(const fs::path& checkpoint, const fs::path& manifest_path, const EvalOptions& options) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (options.expected_model) {
    net::ModelConfig expected = *options.expected_model;
    expected.vocabulary = ckpt.model.vocabulary;
    GBS_CHECK(expected == ckpt.model, kCheckpoint,
              "checkpoint model configuration does not match the requested one:\n" + ckpt.model.to_text());
  }
  const auto model = restore_model(ckpt);
  return evaluate_model(model, manifest::load_grounding(manifest_path), options);
}

std::vector<DetectionRecord> read_detections(const fs::path& path) {
  const fs::path resolved = manifest::resolve(path);
  std::ifstream in(resolved);
  GBS_CHECK(in.good(), kIo, "cannot open detections: " + resolved.string());
  std::vector<DetectionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      DetectionRecord d;
      d.image_id = j.at("image_id").get<std::string>();
      d.phrase = j.at("phrase").get<std::string>();
      for (const auto& b : j.at("boxes")) {
        GBS_CHECK(b.size() == 5, kData, "detection box needs 4 coordinates and a score");
        d.boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>(), b[4].get<double>()});
      }
      records.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kData,
                  resolved.string() + ":" + std::to_string(line_no) + ": malformed detection: " + e.what());
    }
  }
  GBS_CHECK(!records.empty(), kData, "empty detection file: " + resolved.string());
  return records;
}

void write_detections(const fs::path& path, const std::vector<DetectionRecord>& records) {
  std::ofstream out(path);
  GBS_CHECK(out.good(), kIo, "cannot write detections: " + path.string());
  for (const auto& d : records) {
    json boxes = json::array();
    for (const auto& b : d.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max, b.score});
    out << json{{"image_id", d.image_id}, {"phrase", d.phrase}, {"boxes", boxes}}.dump() << "\n";
  }
}

EnsembleReports ensemble_cmd(const fs::path& heatmap_dir, const fs::path& detections_path,
                             const fs::path& manifest_path) {
  const auto samples = manifest::load_grounding(manifest_path);
  std::map<std::string, std::map<std::string, std::vector<infer::ScoredBox>>> detections;
  for (auto& d : read_detections(detections_path)) {
    auto& boxes = detections[d.image_id][d.phrase];
    boxes.insert(boxes.end(), d.boxes.begin(), d.boxes.end());
  }

  std::vector<Heatmap> model_maps, detector_maps;
  for (const auto& s : samples) {
    const fs::path file = heatmap_dir / heatmap_file_name(s.id, s.phrase_index);
    GBS_CHECK(fs::exists(file), kData, "missing model heatmap " + file.string());
    model_maps.push_back(eval::upsample_heatmap(read_pfm(file), s.image.height(), s.image.width()));
    auto img = detections.find(s.id);
    GBS_CHECK(img != detections.end(), kData, "detection file has no record for image " + s.id);
    auto phr = img->second.find(blend::join(s.phrase));
    detector_maps.push_back(phr == img->second.end()
                                ? Heatmap(s.image.height(), s.image.width(), 0.0)
                                : infer::boxes_to_heatmap(phr->second, s.image.height(), s.image.width()));
  }

  auto by_index = [&samples](const std::vector<Heatmap>& maps) {
    return [&samples, &maps](const eval::GroundingSample& s) {
      return maps[static_cast<std::size_t>(&s - samples.data())];
    };
  };
  EnsembleReports reports;
  reports.model = eval::evaluate(by_index(model_maps), samples);
  reports.detector = eval::evaluate(by_index(detector_maps), samples);
  std::vector<Heatmap> fused;
  for (std::size_t i = 0; i < samples.size(); ++i) fused.push_back(infer::ensemble(model_maps[i], detector_maps[i]));
  reports.ensemble = eval::evaluate(by_index(fused), samples);
  return reports;
}

int render_cmd(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out_dir,
               HeatmapOutput output, int limit) {
  const auto model = restore_model(load_checkpoint(checkpoint));
  auto samples = manifest::load_grounding(manifest_path);
  if (limit > 0 && static_cast<std::size_t>(limit) < samples.size()) samples.resize(limit);
  make_dir(out_dir);
  EvalOptions options;
  options.output = output;
  options.heatmap_dir = out_dir;
  options.overlay_dir = out_dir;
  for (const auto& s : samples) save_outputs(s, model_heatmap(model, s.image, s.phrase, output), options);
  return static_cast<int>(samples.size());
}

}  // namespace gbs::workbench
