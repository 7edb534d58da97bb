#include "gbs/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <unordered_set>

#include "gbs/blend.hpp"
#include "gbs/losses.hpp"
#include "gbs/manifest.hpp"
#include "gbs/rng.hpp"

namespace gbs::workbench {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Checkpoint I/O

const ad::Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

namespace {

constexpr char kMagic[8] = {'G', 'B', 'S', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) put<uint64_t>(out, s.size());
  else put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U get(std::istream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  GBS_CHECK(in.good(), kCheckpoint, "truncated checkpoint");
  return value;
}

std::string get_string(std::istream& in, bool wide) {
  const uint64_t n = wide ? get<uint64_t>(in) : get<uint32_t>(in);
  GBS_CHECK(n < (1ULL << 32), kCheckpoint, "corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  GBS_CHECK(in.good() || n == 0, kCheckpoint, "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    GBS_CHECK(out.good(), kIo, "cannot write checkpoint: " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kCheckpointVersion);
    put_string(out, ckpt.model.to_text(), true);
    put_string(out, to_text(ckpt.metadata), true);
    put<uint32_t>(out, static_cast<uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, tensor] : ckpt.arrays) {
      put_string(out, name, false);
      put<uint32_t>(out, static_cast<uint32_t>(tensor.shape.size()));
      for (int d : tensor.shape) put<int32_t>(out, d);
      put<uint64_t>(out, tensor.data.size());
      out.write(reinterpret_cast<const char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
    }
    GBS_CHECK(out.good(), kIo, "checkpoint write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  GBS_CHECK(in.good(), kCheckpoint, "cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  GBS_CHECK(in.good() && std::equal(magic, magic + 8, kMagic), kCheckpoint, "not a checkpoint: " + path.string());
  const auto version = get<uint32_t>(in);
  GBS_CHECK(version == kCheckpointVersion, kCheckpoint,
            "unsupported checkpoint format version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.model = net::ModelConfig::from_text(get_string(in, true));
  ckpt.metadata = parse_key_values(get_string(in, true));
  const auto count = get<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in, false);
    const auto rank = get<uint32_t>(in);
    GBS_CHECK(rank <= 8, kCheckpoint, "corrupt array rank in " + name);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = get<int32_t>(in);
    const auto n = get<uint64_t>(in);
    GBS_CHECK(n == ad::Tensor<float>::count(shape), kCheckpoint, "array size does not match shape: " + name);
    ad::Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    GBS_CHECK(in.good() || n == 0, kCheckpoint, "truncated array " + name);
    ckpt.arrays.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

net::GbsModel<float> restore_model(const Checkpoint& ckpt) {
  net::GbsModel<float> model(ckpt.model, 0);
  for (auto& p : model.parameters()) {
    const auto* t = ckpt.find(p.name);
    GBS_CHECK(t != nullptr, kCheckpoint, "checkpoint lacks parameter " + p.name);
    GBS_CHECK(t->shape == p.value.shape(), kCheckpoint, "shape mismatch for parameter " + p.name);
    p.value.mutable_value().data = t->data;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const net::GbsModel<float>& model, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : model.parameters()) {
    m_.emplace_back(p.value.numel(), 0.0f);
    v_.emplace_back(p.value.numel(), 0.0f);
  }
}

void Adam::step(net::GbsModel<float>& model, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(learning_rate / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& var = params[k].value;
    auto& value = var.mutable_value().data;
    const auto& grad = var.grad().data;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
      value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

void Adam::save(Checkpoint& ckpt, const net::GbsModel<float>& model) const {
  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    ckpt.arrays.emplace_back("optimizer/m/" + params[k].name, ad::Tensor<float>(params[k].value.shape(), m_[k]));
    ckpt.arrays.emplace_back("optimizer/v/" + params[k].name, ad::Tensor<float>(params[k].value.shape(), v_[k]));
  }
  ckpt.metadata["optimizer.t"] = std::to_string(t_);
}

void Adam::load(const Checkpoint& ckpt, const net::GbsModel<float>& model) {
  const auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto* m = ckpt.find("optimizer/m/" + params[k].name);
    const auto* v = ckpt.find("optimizer/v/" + params[k].name);
    GBS_CHECK(m && v, kCheckpoint, "checkpoint lacks optimizer state for " + params[k].name);
    m_[k].assign(m->data.begin(), m->data.end());
    v_[k].assign(v->data.begin(), v->data.end());
  }
  auto it = ckpt.metadata.find("optimizer.t");
  GBS_CHECK(it != ckpt.metadata.end(), kCheckpoint, "checkpoint lacks optimizer step count");
  t_ = std::stol(it->second);
}

Checkpoint snapshot(const net::GbsModel<float>& model, const Adam* optimizer, int step, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  for (const auto& [k, v] : to_key_values(config)) ckpt.metadata["train." + k] = v;
  ckpt.metadata["step"] = std::to_string(step);
  for (const auto& p : model.parameters()) ckpt.arrays.emplace_back(p.name, p.value.value());
  if (optimizer) optimizer->save(ckpt, model);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<std::size_t> choose_batch(std::size_t dataset_size, int batch_size, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> picked;
  std::unordered_set<std::size_t> seen;
  while (static_cast<int>(picked.size()) < batch_size) {
    const std::size_t i = rng.below(dataset_size);
    if (seen.insert(i).second) picked.push_back(i);
  }
  return picked;
}

std::string csv_value(const ad::Var<float>& v) {
  if (!v.defined()) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v.item()));
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const fs::path& manifest_path, const fs::path& out_dir,
                  const std::optional<fs::path>& resume, bool verbose) {
  config.validate();
  const auto records = manifest::read(manifest_path);
  const fs::path base = manifest::resolve(manifest_path).parent_path();
  GBS_CHECK(records.size() >= static_cast<std::size_t>(2 * config.batch_size), kData,
            "manifest needs at least 2 * batch_size records");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  GBS_CHECK(!ec, kIo, "cannot create output directory " + out_dir.string());

  net::ModelConfig model_config = config.model;
  model_config.vocabulary = manifest::vocabulary(records);
  std::optional<net::GbsModel<float>> model;
  int start_step = 0;
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume);
    model.emplace(restore_model(ckpt));
    auto it = ckpt.metadata.find("step");
    GBS_CHECK(it != ckpt.metadata.end(), kCheckpoint, "checkpoint lacks a step counter");
    start_step = std::stoi(it->second);
  } else {
    model.emplace(model_config, derive_seed(config.seed, 0xC0FFEE));
  }
  Adam adam(*model, config.adam_beta1, config.adam_beta2, config.adam_eps);
  if (resume) adam.load(load_checkpoint(*resume), *model);

  TrainResult result;
  result.metrics = out_dir / "metrics.csv";
  std::ofstream csv(result.metrics, resume ? std::ios::app : std::ios::trunc);
  GBS_CHECK(csv.good(), kIo, "cannot write " + result.metrics.string());
  if (!resume) csv << kMetricsHeader << "\n";

  const auto started = std::chrono::steady_clock::now();
  for (int step = start_step; step < config.steps; ++step) {
    const double lr = learning_rate_at(config, step);
    const uint64_t batch_seed = derive_seed(config.seed, static_cast<uint64_t>(step));

    std::vector<blend::ImageTextPair> pairs;
    for (std::size_t i : choose_batch(records.size(), config.batch_size, derive_seed(batch_seed, 7))) {
      blend::ImageTextPair p;
      p.id = records[i].id;
      p.image = read_image(base / records[i].image);
      p.text = blend::tokenize(records[i].caption);
      pairs.push_back(std::move(p));
    }
    const auto batch = blend::make_training_batch(pairs, config.mix, config.augment, batch_seed);

    const auto parts = losses::batch_losses(*model, batch, config.weights);
    const auto total = losses::loss_total(parts, config.weights);
    if (!std::isfinite(total.item())) {
      std::ofstream dump(out_dir / "failure.txt");
      dump << "step=" << step << "\nbatch_seed=" << batch_seed << "\n";
      for (const auto& id : batch.ids) dump << "id=" << id << "\n";
      throw Error(ErrorKind::kNumeric, "non-finite loss at step " + std::to_string(step) + " (batch seed " +
                                           std::to_string(batch_seed) + ")");
    }
    model->zero_grad();
    ad::backward(total);
    adam.step(*model, lr);

    char lr_buf[32];
    std::snprintf(lr_buf, sizeof(lr_buf), "%.9g", lr);
    csv << step << "," << csv_value(parts.sep) << "," << csv_value(parts.adv) << "," << csv_value(parts.neg)
        << "," << csv_value(parts.i2t) << "," << csv_value(total) << "," << lr_buf << "\n";

    if (result.steps_run == 0) result.first_total = total.item();
    result.last_total = total.item();
    ++result.steps_run;

    if (verbose && (step % 100 == 0 || step + 1 == config.steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::cerr << "step " << step << " total " << total.item() << " sep " << parts.sep.item() << " lr " << lr
                << " (" << secs << " s)\n";
    }
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      csv.flush();
      save_checkpoint(out_dir / ("checkpoint_" + std::to_string(step + 1) + ".gbs"),
                      snapshot(*model, &adam, step + 1, config));
    }
  }
  csv.flush();
  result.checkpoint = out_dir / "model.gbs";
  save_checkpoint(result.checkpoint, snapshot(*model, &adam, std::max(config.steps, start_step), config));
  return result;
}

}  // namespace gbs::workbench
