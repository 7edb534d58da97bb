// Command-line front end: gen-toy, train, eval, ensemble, render.
//
// Exit codes: 0 success, 1 usage error, 2 parameter, 3 shape, 4 config,
// 5 data, 6 checkpoint, 7 numeric, 8 io, 9 unexpected failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gbs/commands.hpp"
#include "gbs/config.hpp"
#include "gbs/manifest.hpp"
#include "gbs/toy.hpp"
#include "gbs/trainer.hpp"

namespace fs = std::filesystem;
using namespace gbs;
using namespace gbs::workbench;

namespace {

constexpr int kUsageExit = 1;
constexpr int kUnexpectedExit = 9;

KeyValues gather_config(const std::string& preset, const std::string& config_file,
                        const std::vector<std::string>& overrides) {
  KeyValues kv;
  if (preset == "toy") kv = to_key_values(toy_preset());
  else if (preset != "default") throw Error(ErrorKind::kConfig, "unknown preset '" + preset + "' (default, toy)");
  if (!config_file.empty())
    for (const auto& [k, v] : read_key_values(manifest::resolve(config_file))) kv[k] = v;
  for (const auto& o : overrides) apply_override(kv, o);
  return kv;
}

void print_report(const std::string& label, const eval::EvalReport& report) {
  std::cout << "[" << label << "]\n" << report.to_text();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounding-by-separation workbench"};
  app.require_subcommand(1);

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "Render a synthetic colored-shapes dataset");
  toy::ToyDatasetSpec toy_spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", toy_spec.sample_count, "Number of images");
  gen->add_option("--seed", toy_spec.seed, "Random seed");
  gen->add_option("--name", toy_spec.name, "Manifest stem and image prefix");
  gen->add_option("--image-size", toy_spec.image_size, "Image side in pixels");
  gen->add_option("--shapes-min", toy_spec.shapes_min, "Minimum shapes per image");
  gen->add_option("--shapes-max", toy_spec.shapes_max, "Maximum shapes per image");
  gen->add_option("--size-min", toy_spec.shape_size_min, "Minimum shape side");
  gen->add_option("--size-max", toy_spec.shape_size_max, "Maximum shape side");
  gen->add_option("--num-shapes", toy_spec.num_shapes, "Shape vocabulary size");
  gen->add_option("--num-colors", toy_spec.num_colors, "Color vocabulary size");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a manifest");
  std::string train_manifest, train_out, train_config, train_preset = "default", train_resume;
  std::vector<std::string> train_sets;
  bool train_quiet = false, train_dump = false;
  tr->add_option("--manifest", train_manifest, "Training manifest (relative paths resolve against GBS_DATA_ROOT)")
      ->required();
  tr->add_option("--out", train_out, "Run directory")->required();
  tr->add_option("--config", train_config, "key = value configuration file");
  tr->add_option("--preset", train_preset, "Base configuration: default or toy");
  tr->add_option("--set", train_sets, "Override one key: --set key=value");
  tr->add_option("--resume", train_resume, "Continue from this checkpoint");
  tr->add_flag("--quiet", train_quiet, "No progress output");
  tr->add_flag("--print-config", train_dump, "Print the effective configuration and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "Pointing-game evaluation of a checkpoint");
  std::string ev_ckpt, ev_manifest, ev_output = "fused", ev_overlays, ev_heatmaps, ev_report, ev_config;
  std::string ev_preset = "default";
  std::vector<std::string> ev_sets;
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "Evaluation manifest")->required();
  ev->add_option("--output", ev_output, "Heatmap output: fused, gbs or i2t");
  ev->add_option("--overlays", ev_overlays, "Directory for PNG overlays");
  ev->add_option("--heatmaps", ev_heatmaps, "Directory for PFM heatmaps");
  ev->add_option("--report", ev_report, "Report path stem (.txt and .kv are written)");
  ev->add_option("--config", ev_config, "Require the checkpoint to match this configuration");
  ev->add_option("--preset", ev_preset, "Base configuration for --config/--set checks");
  ev->add_option("--set", ev_sets, "Override one key of the expected configuration");

  // ensemble
  auto* en = app.add_subcommand("ensemble", "Fuse model heatmaps with detector boxes");
  std::string en_heatmaps, en_detections, en_manifest, en_report;
  en->add_option("--heatmaps", en_heatmaps, "Directory of <id>_p<k>.pfm model heatmaps")->required();
  en->add_option("--detections", en_detections, "Detector records (JSON lines)")->required();
  en->add_option("--manifest", en_manifest, "Evaluation manifest")->required();
  en->add_option("--report", en_report, "Report path stem for the ensemble result");

  // render
  auto* rd = app.add_subcommand("render", "Write heatmaps and overlays for a manifest");
  std::string rd_ckpt, rd_manifest, rd_out, rd_output = "fused";
  int rd_limit = 0;
  rd->add_option("--checkpoint", rd_ckpt, "Model checkpoint")->required();
  rd->add_option("--manifest", rd_manifest, "Manifest")->required();
  rd->add_option("--out", rd_out, "Output directory")->required();
  rd->add_option("--output", rd_output, "Heatmap output: fused, gbs or i2t");
  rd->add_option("--limit", rd_limit, "Render at most this many pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    if (*gen) {
      const auto path = toy::generate_toy_dataset(toy_spec, gen_out);
      std::cout << path.string() << "\n";
    } else if (*tr) {
      const TrainConfig config = train_config_from(gather_config(train_preset, train_config, train_sets));
      if (train_dump) {
        std::cout << to_text(to_key_values(config));
        return 0;
      }
      std::optional<fs::path> resume;
      if (!train_resume.empty()) resume = train_resume;
      const auto result = train(config, train_manifest, train_out, resume, !train_quiet);
      std::cout << "checkpoint " << result.checkpoint.string() << "\nmetrics " << result.metrics.string()
                << "\nsteps " << result.steps_run << "\n";
    } else if (*ev) {
      EvalOptions options;
      options.output = parse_output(ev_output);
      if (!ev_overlays.empty()) options.overlay_dir = ev_overlays;
      if (!ev_heatmaps.empty()) options.heatmap_dir = ev_heatmaps;
      if (!ev_config.empty() || !ev_sets.empty())
        options.expected_model = train_config_from(gather_config(ev_preset, ev_config, ev_sets)).model;
      const auto report = evaluate_cmd(ev_ckpt, ev_manifest, options);
      print_report(output_name(options.output), report);
      if (!ev_report.empty()) eval::write_report(ev_report, report);
    } else if (*en) {
      const auto reports = ensemble_cmd(en_heatmaps, en_detections, en_manifest);
      print_report("model", reports.model);
      print_report("detector", reports.detector);
      print_report("ensemble", reports.ensemble);
      if (!en_report.empty()) eval::write_report(en_report, reports.ensemble);
    } else if (*rd) {
      const int n = render_cmd(rd_ckpt, rd_manifest, rd_out, parse_output(rd_output), rd_limit);
      std::cout << "rendered " << n << " heatmaps into " << rd_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error (unexpected): " << e.what() << "\n";
    return kUnexpectedExit;
  }
  return 0;
}
