#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sft/data.hpp"
#include "sft/eval.hpp"
#include "sft/model.hpp"
#include "sft/trainer.hpp"

namespace sft {

inline constexpr const char* kArtifactVersion = "sft 1.0.0";

// pretrain and random arms only evaluate a backbone; the others transfer-train.
enum class ArmKind { pretrain, random, finetune, intermediate, soft };
enum class SourceSubsample { none, images, categories };

const char* arm_kind_name(ArmKind kind);
const char* subsample_name(SourceSubsample s);

struct ArmConfig {
  std::string label;
  ArmKind kind = ArmKind::soft;
  // Train on the bias-restricted target range (when a bias is configured).
  bool restricted_target = true;
  SourceSubsample source_subsample = SourceSubsample::none;
  double source_fraction = 1.0;
  // Per-arm schedule; soft arms only.
  Schedule schedule = Schedule::over(20);

  bool operator==(const ArmConfig&) const = default;
};

struct TargetBias {
  TransformField field = TransformField::rotation;
  Range range;

  bool operator==(const TargetBias&) const = default;
};

struct EvalConfig {
  bool map = true;
  bool probe = false;
  std::size_t probe_epochs = 30;
  double probe_lr = 0.1;
  bool purity = false;
  std::size_t purity_restarts = 10;
  std::vector<double> far_levels{0.1, 0.01, 0.001, 0.0001};
  // Convergence lead of the first arm over the second on target test accuracy.
  std::optional<std::pair<std::string, std::string>> lead;
  double lead_threshold = 0.7;

  bool operator==(const EvalConfig&) const = default;
};

// Dataset seeds are not part of the config; every run derives them from its
// run seed. The test set shares the target's classes, mode and dimension.
struct ExperimentConfig {
  std::string experiment;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "out";
  DatasetSpec source;
  DatasetSpec target;
  std::optional<TargetBias> target_bias;
  DatasetSpec test;
  std::optional<DatasetSpec> target2;
  std::optional<DatasetSpec> verify;
  BackboneConfig model;
  TrainConfig pretrain;
  TrainConfig train;
  Schedule schedule = Schedule::over(20);
  std::vector<ArmConfig> arms;
  EvalConfig eval;
  bool save_checkpoints = false;
  // When non-empty, pretrained backbones are saved and reloaded here.
  std::string pretrain_cache;

  ExperimentConfig();
  bool operator==(const ExperimentConfig&) const = default;
};

// Flat `key = value` lines, `#` comments. Throws ParseError carrying the line.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);
// Emits every key, so parse_config_text(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& config);
// Rejects configs whose references cannot be resolved.
void validate_config(const ExperimentConfig& config);

struct MetricRow {
  std::string metric;
  double level = 0.0;
  double value = 0.0;
};

struct RunResult {
  std::string arm;
  std::uint64_t seed = 0;
  TrainRecord record;
  MetricsReport metrics;
  std::vector<MetricRow> extra;  // metrics outside MetricsReport (lead, loss_tar2, ...)
  std::optional<std::string> failure;
};

struct SummaryRow {
  std::string arm;
  std::string metric;
  double level = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

struct RunReport {
  std::string experiment;
  std::vector<RunResult> runs;  // arm config order, then seed order
  std::vector<SummaryRow> summary;
  std::string config_hash;
  std::string version = kArtifactVersion;
  std::vector<std::string> warnings;

  bool any_failed() const;
  const RunResult* find(const std::string& arm, std::uint64_t seed) const;
  // Median of `metric` at `level` for `arm`, from the summary.
  std::optional<double> median_of(const std::string& arm, const std::string& metric, double level = 0.0) const;
};

// Flattened metric rows of one run in emission order.
std::vector<MetricRow> metric_rows(const RunResult& run);
// Medians over finite values, grouped by (arm, metric, level) in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs);

struct RunOptions {
  bool verbose = false;
};

RunReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct RunDatasets {
  Dataset source;
  Dataset target_restricted;
  Dataset target_full;
  Dataset test;
  std::optional<Dataset> target2;
  std::optional<Dataset> verify;
};
RunDatasets generate_run_datasets(const ExperimentConfig& config, std::uint64_t seed);

void write_epochs_csv(const RunReport& report, std::ostream& out);
void write_metrics_csv(const RunReport& report, std::ostream& out);
void write_summary_csv(const RunReport& report, std::ostream& out);
// Writes <experiment>_{epochs,metrics,summary}.csv and provenance.txt into
// `dir`; returns the paths written.
std::vector<std::filesystem::path> emit_csv(const RunReport& report, const std::filesystem::path& dir);

using CsvTable = std::vector<std::vector<std::string>>;
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);
std::string format_number(double v);

struct NamedCurve {
  std::string name;
  Curve curve;
};

struct SvgLayout {
  double width = 640.0;
  double height = 400.0;
  double left = 64.0;
  double right = 496.0;
  double top = 24.0;
  double bottom = 344.0;
};

// One polyline per non-empty curve over a shared affine map; returns warnings
// for skipped curves.
std::vector<std::string> emit_svg_lineplot(const std::vector<NamedCurve>& curves, const std::filesystem::path& path,
                                           const std::string& x_label, const std::string& y_label,
                                           const SvgLayout& layout = {});
std::string svg_lineplot(const std::vector<NamedCurve>& curves, const std::string& x_label,
                         const std::string& y_label, const SvgLayout& layout, std::vector<std::string>& warnings);

// Per-arm median curve of an epochs-CSV column across seeds.
std::vector<NamedCurve> median_curves(const CsvTable& epochs_csv, const std::string& column);

}  // namespace sft
