#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gbs/config.hpp"
#include "gbs/net.hpp"

namespace gbs::workbench {

// Checkpoint archive layout (little-endian):
//   "GBSCKPT\0"  u32 format_version
//   u64 n, n bytes   ModelConfig as key=value text
//   u64 n, n bytes   metadata as key=value text (step, seed, ...)
//   u32 array_count, then per array:
//     u32 n, name bytes   u32 rank, i32 dims[rank]   u64 count, f32 data[count]
// Parameter arrays use the model's hierarchical names; Adam moments are
// stored as "optimizer/m/<name>" and "optimizer/v/<name>".
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  net::ModelConfig model;
  KeyValues metadata;
  std::vector<std::pair<std::string, ad::Tensor<float>>> arrays;

  const ad::Tensor<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters of `checkpoint` copied into a freshly built model.
net::GbsModel<float> restore_model(const Checkpoint& checkpoint);

class Adam {
 public:
  Adam(const net::GbsModel<float>& model, double beta1, double beta2, double eps);

  void step(net::GbsModel<float>& model, double learning_rate);
  long steps_taken() const { return t_; }

  void save(Checkpoint& checkpoint, const net::GbsModel<float>& model) const;
  void load(const Checkpoint& checkpoint, const net::GbsModel<float>& model);

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

Checkpoint snapshot(const net::GbsModel<float>& model, const Adam* optimizer, int step, const TrainConfig& config);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  int steps_run = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

// Metrics CSV header; one row per optimizer step.
inline constexpr const char* kMetricsHeader = "step,L_sep,L_adv,L_neg,L_i2t,L_total,lr";

// Runs the training loop into out_dir: metrics.csv, model.gbs and periodic
// checkpoint_<step>.gbs. With `resume`, optimizer state and step counter
// continue from that checkpoint and metrics rows are appended.
TrainResult train(const TrainConfig& config, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt, bool verbose = false);

}  // namespace gbs::workbench
