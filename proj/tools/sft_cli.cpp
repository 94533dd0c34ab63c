#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "sft/data.hpp"
#include "sft/errors.hpp"
#include "sft/eval.hpp"
#include "sft/gradcheck.hpp"
#include "sft/model.hpp"
#include "sft/runner.hpp"
#include "sft/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDiverged = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

sft::ExperimentConfig load(const std::string& path, const Common& common) {
  sft::ExperimentConfig config = sft::parse_config(path);
  if (common.seed) config.seeds = {*common.seed};
  if (common.out_dir) config.out_dir = *common.out_dir;
  return config;
}

int cmd_run(const std::string& path, const Common& common, bool verbose) {
  const sft::ExperimentConfig config = load(path, common);
  sft::RunOptions options;
  options.verbose = verbose;
  const sft::RunReport report = sft::run_experiment(config, options);
  for (const auto& p : sft::emit_csv(report, config.out_dir)) std::cout << "wrote " << p.string() << "\n";

  const std::filesystem::path epochs = std::filesystem::path(config.out_dir) / (config.experiment + "_epochs.csv");
  const auto curves = sft::median_curves(sft::read_csv(epochs), "test_acc");
  const bool any_points =
      std::any_of(curves.begin(), curves.end(), [](const sft::NamedCurve& c) { return !c.curve.empty(); });
  if (any_points) {
    const std::filesystem::path svg = std::filesystem::path(config.out_dir) / (config.experiment + "_test_acc.svg");
    for (const std::string& w : sft::emit_svg_lineplot(curves, svg, "epoch", "target test accuracy")) {
      std::cerr << "warning: " << w << "\n";
    }
    std::cout << "wrote " << svg.string() << "\n";
  }
  for (const sft::SummaryRow& row : report.summary) {
    if (row.metric == "test_acc" || row.metric == "probe_acc" || row.metric == "map" || row.metric == "tar" ||
        row.metric == "lead_epochs" || row.metric == "purity") {
      std::cout << row.arm << " " << row.metric << "@" << sft::format_number(row.level) << " median "
                << sft::format_number(row.median) << " (n=" << row.count << ")\n";
    }
  }
  for (const std::string& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return report.any_failed() ? kExitDiverged : kExitOk;
}

int cmd_gen_data(const std::string& path, const Common& common) {
  const sft::ExperimentConfig config = load(path, common);
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);
  for (const std::uint64_t seed : config.seeds) {
    const sft::RunDatasets d = sft::generate_run_datasets(config, seed);
    const std::string stem = config.experiment + "_s" + std::to_string(seed) + "_";
    auto write = [&](const sft::Dataset& ds, const std::string& name) {
      const auto p = dir / (stem + name + ".sftdata");
      sft::write_dataset(ds, p);
      std::cout << "wrote " << p.string() << " (" << ds.size() << " samples)\n";
    };
    write(d.source, "source");
    write(d.target_restricted, "target");
    write(d.target_full, "target_full");
    write(d.test, "test");
    if (d.target2) write(*d.target2, "target2");
    if (d.verify) write(*d.verify, "verify");
    if (config.source.mode == sft::DataMode::shapes16) {
      const auto preview = dir / (stem + "preview");
      std::filesystem::create_directories(preview);
      std::vector<bool> done(d.source.num_classes(), false);
      for (const sft::Sample& s : d.source.samples) {
        if (done[s.label]) continue;
        done[s.label] = true;
        sft::write_pgm(s.data.values, preview / ("class" + std::to_string(s.label) + ".pgm"));
      }
    }
  }
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& head,
             const std::vector<std::string>& metrics, const Common& common) {
  const sft::DualHeadModel model = sft::load_checkpoint(checkpoint);
  const sft::Dataset ds = sft::read_dataset(dataset);
  if (!model.has_head(head)) throw sft::ConfigError("checkpoint has no head '" + head + "'");
  std::vector<std::size_t> labels;
  for (const sft::Sample& s : ds.samples) labels.push_back(s.label);
  const sft::Tensor features = sft::dataset_features(model, ds);
  for (const std::string& metric : metrics) {
    if (metric == "accuracy") {
      std::cout << "accuracy " << sft::format_number(sft::top1_accuracy(model.logits(head, features), labels)) << "\n";
    } else if (metric == "map") {
      const sft::ApResult ap = sft::mean_average_precision(model.logits(head, features), labels);
      std::cout << "map " << sft::format_number(ap.mean_ap) << " classes_without_positives "
                << ap.classes_without_positives << "\n";
    } else if (metric == "purity") {
      std::cout << "purity "
                << sft::format_number(sft::cluster_purity(features, labels, ds.num_classes(), 10, common.seed.value_or(0)))
                << "\n";
    } else if (metric == "tar") {
      std::vector<double> genuine, impostor;
      sft::pair_scores(features, labels, genuine, impostor);
      const double floor = sft::far_floor(impostor.size());
      std::vector<double> levels;
      for (const double f : {0.0001, 0.001, 0.01, 0.1}) {
        if (f >= floor) levels.push_back(f);
      }
      std::cout << "far_floor " << sft::format_number(floor) << "\n";
      for (const sft::TarAtFar& t : sft::tar_at_far(genuine, impostor, levels)) {
        std::cout << "tar@far=" << sft::format_number(t.far) << " " << sft::format_number(t.tar) << " threshold "
                  << sft::format_number(t.threshold) << "\n";
      }
    } else {
      throw sft::ConfigError("unknown metric '" + metric + "' (accuracy, map, purity, tar)");
    }
  }
  return kExitOk;
}

int cmd_plot(const std::string& csv, const std::string& out, const std::string& column) {
  const auto curves = sft::median_curves(sft::read_csv(csv), column);
  for (const std::string& w : sft::emit_svg_lineplot(curves, out, "epoch", column)) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Common& common) {
  constexpr double kTolerance = 1e-6;
  bool ok = true;
  for (const sft::GradCheckResult& r : sft::gradcheck_suite(common.seed.value_or(0))) {
    const bool pass = r.max_rel_error < kTolerance;
    ok = ok && pass;
    std::printf("%-16s point %zu  max rel error %.3e  %s\n", r.name.c_str(), r.point, r.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitDiverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft fine-tuning transfer-learning lab"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Override the seed list with a single seed");
  app.add_option("--out-dir", common.out_dir, "Override the output directory");

  std::string config_path;
  bool verbose = false;
  auto* run = app.add_subcommand("run", "Run an experiment recipe and write CSV/SVG reports");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_flag("-v,--verbose", verbose, "Progress on stderr");

  auto* gen = app.add_subcommand("gen-data", "Write the datasets of a recipe");
  gen->add_option("config", config_path, "Experiment config file")->required();

  std::string checkpoint, dataset, head = sft::kTargetHead;
  std::vector<std::string> metrics{"accuracy", "map"};
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  eval->add_option("checkpoint", checkpoint)->required();
  eval->add_option("dataset", dataset)->required();
  eval->add_option("--metric", metrics, "accuracy, map, purity, tar");
  eval->add_option("--head", head, "Head used for accuracy and map");

  std::string csv, svg_out, column = "test_acc";
  auto* plot = app.add_subcommand("plot", "Plot per-arm median curves from an epochs CSV");
  plot->add_option("csv", csv)->required();
  plot->add_option("--out", svg_out)->required();
  plot->add_option("--column", column, "CSV column to plot");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op");

  for (CLI::App* sub : {run, gen, eval, plot, grad}) {
    sub->add_option("--seed", common.seed, "Override the seed list with a single seed");
    sub->add_option("--out-dir", common.out_dir, "Override the output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, common, verbose);
    if (*gen) return cmd_gen_data(config_path, common);
    if (*eval) return cmd_eval(checkpoint, dataset, head, metrics, common);
    if (*plot) return cmd_plot(csv, svg_out, column);
    if (*grad) return cmd_gradcheck(common);
  } catch (const sft::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sft::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
