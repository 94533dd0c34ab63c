#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include "sft/errors.hpp"
#include "sft/rng.hpp"
#include "sft/runner.hpp"

namespace sft {

bool RunReport::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.failure.has_value(); });
}

const RunResult* RunReport::find(const std::string& arm, std::uint64_t seed) const {
  for (const RunResult& r : runs) {
    if (r.arm == arm && r.seed == seed) return &r;
  }
  return nullptr;
}

std::optional<double> RunReport::median_of(const std::string& arm, const std::string& metric, double level) const {
  for (const SummaryRow& s : summary) {
    if (s.arm == arm && s.metric == metric && s.level == level) return s.median;
  }
  return std::nullopt;
}

std::vector<MetricRow> metric_rows(const RunResult& run) {
  std::vector<MetricRow> rows;
  const MetricsReport& m = run.metrics;
  if (m.top1) rows.push_back({"test_acc", 0.0, *m.top1});
  if (m.ap) {
    rows.push_back({"map", 0.0, m.ap->mean_ap});
    for (std::size_t k = 0; k < m.ap->per_class.size(); ++k) {
      if (m.ap->per_class[k]) rows.push_back({"ap_class", static_cast<double>(k), *m.ap->per_class[k]});
    }
    rows.push_back({"classes_without_positives", 0.0, static_cast<double>(m.ap->classes_without_positives)});
  }
  if (m.far_floor) rows.push_back({"far_floor", 0.0, *m.far_floor});
  for (const TarAtFar& t : m.tar) rows.push_back({"tar", t.far, t.tar});
  for (const TarAtFar& t : m.tar) rows.push_back({"threshold", t.far, t.threshold});
  if (m.probe) rows.push_back({"probe_acc", 0.0, *m.probe});
  if (m.purity) rows.push_back({"purity", 0.0, *m.purity});
  rows.insert(rows.end(), run.extra.begin(), run.extra.end());
  if (run.failure) rows.push_back({"diverged", 0.0, 1.0});
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs) {
  struct Group {
    std::string arm, metric;
    double level;
    std::vector<double> values;
  };
  std::vector<Group> groups;
  std::map<std::tuple<std::string, std::string, double>, std::size_t> index;
  for (const RunResult& run : runs) {
    for (const MetricRow& row : metric_rows(run)) {
      const auto key = std::make_tuple(run.arm, row.metric, row.level);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, groups.size()).first;
        groups.push_back({run.arm, row.metric, row.level, {}});
      }
      if (std::isfinite(row.value)) groups[it->second].values.push_back(row.value);
    }
  }
  std::vector<SummaryRow> out;
  for (const Group& g : groups) out.push_back({g.arm, g.metric, g.level, median(g.values), g.values.size()});
  return out;
}

RunDatasets generate_run_datasets(const ExperimentConfig& config, std::uint64_t seed) {
  const std::uint64_t data_seed = derive_seed(seed, "data");
  auto seeded = [&](DatasetSpec spec, const char* tag, Domain domain) {
    spec.seed = derive_seed(data_seed, tag);
    spec.domain = domain;
    return spec;
  };
  RunDatasets d;
  d.source = gen_dataset(seeded(config.source, "source", Domain::source));
  const DatasetSpec target = seeded(config.target, "target", Domain::target);
  d.target_full = gen_dataset(target);
  d.target_restricted = config.target_bias
                            ? gen_dataset(restrict_bias(target, config.target_bias->field, config.target_bias->range))
                            : d.target_full;
  d.test = gen_dataset(seeded(config.test, "test", Domain::target));
  if (config.target2) d.target2 = gen_dataset(seeded(*config.target2, "target2", Domain::target2));
  if (config.verify) d.verify = gen_dataset(seeded(*config.verify, "verify", Domain::target));
  return d;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Pretrained {
  std::shared_ptr<const DualHeadModel> model;
  std::shared_ptr<const Dataset> source;
  std::optional<std::string> failure;
};

class RunContext {
 public:
  RunContext(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options)
      : config_(config), seed_(seed), options_(options), data_(generate_run_datasets(config, seed)) {
    model_config_ = config.model;
    model_config_.input = config.source.sample_shape();
  }

  RunResult run(const ArmConfig& arm, std::vector<std::string>& warnings) {
    RunResult result;
    result.arm = arm.label;
    result.seed = seed_;
    try {
      run_arm(arm, result, warnings);
    } catch (const DivergenceError& e) {
      result.failure = e.what();
      result.record.rows.clear();
      result.metrics = {};
      result.extra.clear();
    }
    return result;
  }

 private:
  void log(const std::string& msg) const {
    if (options_.verbose) std::cerr << "[" << config_.experiment << " seed " << seed_ << "] " << msg << "\n";
  }

  DualHeadModel fresh_model(std::size_t source_classes) const {
    const HeadSpec heads[] = {{kSourceHead, source_classes}};
    return DualHeadModel::build(model_config_, heads, derive_seed(seed_, "model"));
  }

  std::shared_ptr<const Dataset> source_variant(const ArmConfig& arm) const {
    const std::uint64_t s = derive_seed(seed_, "subsample");
    switch (arm.source_subsample) {
      case SourceSubsample::none: return std::make_shared<Dataset>(data_.source);
      case SourceSubsample::images: return std::make_shared<Dataset>(subsample_images(data_.source, arm.source_fraction, s));
      case SourceSubsample::categories:
        return std::make_shared<Dataset>(subsample_categories(data_.source, arm.source_fraction, s));
    }
    throw ContractError("unknown subsample mode");
  }

  std::string cache_key(const ArmConfig& arm) const {
    std::ostringstream k;
    ExperimentConfig c;
    c.experiment = "cache";
    c.source = config_.source;
    c.model = config_.model;
    c.pretrain = config_.pretrain;
    c.arms = {ArmConfig{}};
    const std::string text = emit_config(c);
    k << text << "seed=" << seed_ << "\nsubsample=" << subsample_name(arm.source_subsample) << "\nfraction=";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", arm.source_fraction);
    k << buf << "\n";
    return k.str();
  }

  const Pretrained& pretrained(const ArmConfig& arm) {
    const std::string key = cache_key(arm);
    if (const auto it = pretrained_.find(key); it != pretrained_.end()) return it->second;
    Pretrained p;
    p.source = source_variant(arm);
    std::filesystem::path cache_path;
    if (!config_.pretrain_cache.empty()) {
      cache_path = std::filesystem::path(config_.pretrain_cache) / ("pretrain-" + hex64(fnv1a(key)) + ".sftckpt");
    }
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
      log("loading pretrained backbone " + cache_path.string());
      p.model = std::make_shared<DualHeadModel>(load_checkpoint(cache_path));
    } else {
      log(std::string("pretraining on source (") + subsample_name(arm.source_subsample) + ")");
      DualHeadModel model = fresh_model(p.source->num_classes());
      TrainConfig t = config_.pretrain;
      t.mode = TrainMode::pretrain;
      t.seed = derive_seed(seed_, "pretrain");
      t.evaluate_each_epoch = false;
      TrainData d;
      d.source = p.source.get();
      try {
        train(model, d, t, Schedule::infinite());
        model.set_origin(kSourceHead, HeadOrigin::pretrained);
        if (!cache_path.empty()) {
          std::filesystem::create_directories(cache_path.parent_path());
          save_checkpoint(model, cache_path);
        }
        p.model = std::make_shared<DualHeadModel>(std::move(model));
      } catch (const DivergenceError& e) {
        p.failure = std::string("pretraining: ") + e.what();
      }
    }
    return pretrained_.emplace(key, std::move(p)).first->second;
  }

  void evaluate_backbone(const DualHeadModel& model, const Dataset& target_train, RunResult& result,
                         std::vector<std::string>& warnings) const {
    MetricsReport& m = result.metrics;
    if (config_.eval.probe || config_.eval.purity) {
      const Tensor test_features = dataset_features(model, data_.test);
      std::vector<std::size_t> test_labels;
      for (const Sample& s : data_.test.samples) test_labels.push_back(s.label);
      if (config_.eval.probe) {
        const Tensor train_features = dataset_features(model, target_train);
        std::vector<std::size_t> train_labels;
        for (const Sample& s : target_train.samples) train_labels.push_back(s.label);
        ProbeConfig pc;
        pc.epochs = config_.eval.probe_epochs;
        pc.lr = config_.eval.probe_lr;
        pc.seed = derive_seed(seed_, "probe");
        m.probe = linear_probe(train_features, train_labels, test_features, test_labels, pc);
      }
      if (config_.eval.purity) {
        m.purity = cluster_purity(test_features, test_labels, data_.test.num_classes(), config_.eval.purity_restarts,
                                  derive_seed(seed_, "purity"));
      }
    }
    if (data_.verify) {
      const Tensor emb = dataset_features(model, *data_.verify);
      std::vector<std::size_t> labels;
      for (const Sample& s : data_.verify->samples) labels.push_back(s.label);
      std::vector<double> genuine, impostor;
      pair_scores(emb, labels, genuine, impostor);
      const double floor = far_floor(impostor.size());
      m.far_floor = floor;
      std::vector<double> levels;
      for (const double f : config_.eval.far_levels) {
        if (f >= floor) {
          levels.push_back(f);
        } else if (seed_ == config_.seeds.front() && result.arm == config_.arms.front().label) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "FAR level %g is below the floor %g and was not evaluated", f, floor);
          warnings.emplace_back(buf);
        }
      }
      std::sort(levels.begin(), levels.end());
      if (!levels.empty()) m.tar = tar_at_far(genuine, impostor, levels);
    }
  }

  void run_arm(const ArmConfig& arm, RunResult& result, std::vector<std::string>& warnings) {
    const Dataset& target = arm.restricted_target ? data_.target_restricted : data_.target_full;
    if (arm.kind == ArmKind::random) {
      log("arm " + arm.label + ": random backbone");
      evaluate_backbone(fresh_model(data_.source.num_classes()), target, result, warnings);
      return;
    }
    const Pretrained& pre = pretrained(arm);
    if (pre.failure) {
      result.failure = *pre.failure;
      return;
    }
    if (arm.kind == ArmKind::pretrain) {
      log("arm " + arm.label + ": pretrained backbone");
      evaluate_backbone(*pre.model, target, result, warnings);
      return;
    }

    DualHeadModel model = *pre.model;
    model.add_head(kTargetHead, target.num_classes(), derive_seed(seed_, "target-head"));
    TrainConfig t = config_.train;
    t.seed = derive_seed(seed_, "transfer");
    TrainData d;
    d.target = &target;
    d.target_test = &data_.test;
    Schedule schedule = Schedule::infinite();
    switch (arm.kind) {
      case ArmKind::finetune:
        model.remove_head(kSourceHead);
        t.mode = TrainMode::finetune;
        break;
      case ArmKind::intermediate:
        t.mode = TrainMode::intermediate;
        break;
      case ArmKind::soft:
        t.mode = TrainMode::soft;
        schedule = arm.schedule;
        break;
      default: throw ContractError("not a transfer arm");
    }
    if (arm.kind != ArmKind::finetune) {
      d.source = pre.source.get();
      if (data_.target2) {
        model.add_head(kTarget2Head, data_.target2->num_classes(), derive_seed(seed_, "target2-head"));
        d.target2 = &*data_.target2;
      }
    }
    log("arm " + arm.label + ": " + mode_name(t.mode));
    result.record = train(model, d, t, schedule);

    MetricsReport& m = result.metrics;
    m.top1 = dataset_accuracy(model, kTargetHead, data_.test);
    if (config_.eval.map) {
      std::vector<double> scores;
      std::vector<std::size_t> labels;
      const Tensor features = dataset_features(model, data_.test);
      const Tensor logits = model.logits(kTargetHead, features);
      for (const Sample& s : data_.test.samples) labels.push_back(s.label);
      m.ap = mean_average_precision(logits, labels);
    }
    evaluate_backbone(model, target, result, warnings);
    for (const EpochRow& row : result.record.rows) {
      if (row.loss_tar2) result.extra.push_back({"loss_tar2", static_cast<double>(row.epoch), *row.loss_tar2});
    }
    if (config_.save_checkpoints) {
      const std::filesystem::path path = std::filesystem::path(config_.out_dir) /
                                         (config_.experiment + "_" + arm.label + "_s" + std::to_string(seed_) + ".sftckpt");
      std::filesystem::create_directories(path.parent_path());
      save_checkpoint(model, path);
      result.record.checkpoint = path.string();
    }
  }

  const ExperimentConfig& config_;
  std::uint64_t seed_;
  const RunOptions& options_;
  RunDatasets data_;
  BackboneConfig model_config_;
  std::map<std::string, Pretrained> pretrained_;
};

Curve test_curve(const TrainRecord& record) {
  Curve c;
  for (const EpochRow& row : record.rows) c.push_back({row.epoch, row.test_acc});
  return c;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate_config(config);
  RunReport report;
  report.experiment = config.experiment;
  report.config_hash = hex64(fnv1a(emit_config(config)));

  // Seeds outer so each seed's datasets and pretrained backbones are built once.
  std::map<std::pair<std::size_t, std::size_t>, RunResult> results;
  for (std::size_t si = 0; si < config.seeds.size(); ++si) {
    RunContext ctx(config, config.seeds[si], options);
    for (std::size_t ai = 0; ai < config.arms.size(); ++ai) {
      results.emplace(std::make_pair(ai, si), ctx.run(config.arms[ai], report.warnings));
    }
  }
  for (auto& [key, result] : results) report.runs.push_back(std::move(result));

  if (config.eval.lead) {
    const auto& [a, b] = *config.eval.lead;
    for (const std::uint64_t seed : config.seeds) {
      RunResult* ra = nullptr;
      const RunResult* rb = report.find(b, seed);
      for (RunResult& r : report.runs) {
        if (r.arm == a && r.seed == seed) ra = &r;
      }
      if (ra->failure || rb->failure) continue;
      const Lead lead = convergence_lead(test_curve(ra->record), test_curve(rb->record), config.eval.lead_threshold);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const double thr = config.eval.lead_threshold;
      ra->extra.push_back({"lead_epochs", thr, lead.epochs ? static_cast<double>(*lead.epochs) : nan});
      ra->extra.push_back({"first_epoch_at_threshold", thr, lead.first_a ? static_cast<double>(*lead.first_a) : nan});
      ra->extra.push_back({"other_first_epoch_at_threshold", thr, lead.first_b ? static_cast<double>(*lead.first_b) : nan});
    }
  }
  for (const RunResult& r : report.runs) {
    if (r.failure) report.warnings.push_back("arm " + r.arm + " seed " + std::to_string(r.seed) + " diverged: " + *r.failure);
  }
  report.summary = summarize(report.runs);
  return report;
}

}  // namespace sft
