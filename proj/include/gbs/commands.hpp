#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gbs/eval.hpp"
#include "gbs/infer.hpp"
#include "gbs/net.hpp"

// Evaluation, ensembling and rendering entry points shared by the CLI and
// the acceptance runs.
namespace gbs::workbench {

enum class HeatmapOutput { kFused, kGbs, kI2t };

std::string output_name(HeatmapOutput output);
HeatmapOutput parse_output(const std::string& name);

// Heatmap of the selected output at the model's native resolution; images
// of another size are resized to the model input first.
Heatmap model_heatmap(const net::GbsModel<float>& model, const Image& image, const blend::Tokens& phrase,
                      HeatmapOutput output);
eval::HeatmapSource model_source(const net::GbsModel<float>& model, HeatmapOutput output);

// File name of the heatmap of phrase k of image `id`: "<id>_p<k>.pfm".
std::string heatmap_file_name(const std::string& id, int phrase_index);

// Heatmap blended over the image with a fixed blue-to-red colormap.
Image overlay(const Image& image, const Heatmap& heatmap, double opacity = 0.5);

struct EvalOptions {
  HeatmapOutput output = HeatmapOutput::kFused;
  std::optional<std::filesystem::path> overlay_dir;   // PNG overlays when set
  std::optional<std::filesystem::path> heatmap_dir;   // PFM heatmaps when set
  std::optional<net::ModelConfig> expected_model;     // must match the checkpoint
};

eval::EvalReport evaluate_model(const net::GbsModel<float>& model, const std::vector<eval::GroundingSample>& samples,
                                const EvalOptions& options);
eval::EvalReport evaluate_cmd(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                              const EvalOptions& options);

// Detector output, one JSON object per line:
//   {"image_id": "...", "phrase": "...", "boxes": [[x_min, y_min, x_max, y_max, score], ...]}
struct DetectionRecord {
  std::string image_id;
  std::string phrase;
  std::vector<infer::ScoredBox> boxes;
};

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records);

struct EnsembleReports {
  eval::EvalReport model;
  eval::EvalReport detector;
  eval::EvalReport ensemble;
};

// Every image id of the manifest must appear in the detection file; a phrase
// without a record of its own counts as a blind (all-zero) detector map.
EnsembleReports ensemble_cmd(const std::filesystem::path& heatmap_dir, const std::filesystem::path& detections,
                             const std::filesystem::path& manifest);

// Writes the heatmap PFM and the overlay PNG of every (image, phrase) pair,
// at most `limit` pairs when positive. Returns the number written.
int render_cmd(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
               const std::filesystem::path& out_dir, HeatmapOutput output, int limit = 0);

}  // namespace gbs::workbench
