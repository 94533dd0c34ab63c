#include "sft/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "sft/errors.hpp"
#include "sft/eval.hpp"
#include "sft/rng.hpp"

namespace sft {

double alpha_at(std::size_t epoch, const Schedule& schedule) {
  if (!schedule.horizon) return 0.0;
  if (*schedule.horizon == 0) throw ContractError("schedule horizon E must be at least 1");
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(*schedule.horizon));
}

Var combined_loss(Var loss_src, Var loss_tar, double alpha, std::optional<Var> loss_tar2) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  Var total = add(scale(loss_src, 1.0 - alpha), loss_tar);
  if (loss_tar2) total = add(total, *loss_tar2);
  return total;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: params " + std::to_string(params.size()) + ", grads " +
                         std::to_string(grads.size()) + ", velocity " + std::to_string(velocity.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void sgd_step(Tensor& param, std::vector<double>& velocity, double lr, double momentum) {
  if (!param.has_grad()) param.zero_grad();
  if (velocity.empty()) velocity.assign(param.size(), 0.0);
  sgd_step(param.values, param.grad, velocity, lr, momentum);
}

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::intermediate: return "intermediate";
    case TrainMode::soft: return "soft";
  }
  return "?";
}

std::optional<TrainMode> parse_mode(const std::string& name) {
  for (const TrainMode m : {TrainMode::pretrain, TrainMode::finetune, TrainMode::intermediate, TrainMode::soft}) {
    if (name == mode_name(m)) return m;
  }
  return std::nullopt;
}

namespace {

bool same_double(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

bool operator==(const EpochRow& a, const EpochRow& b) {
  const bool tar2_equal = a.loss_tar2.has_value() == b.loss_tar2.has_value() &&
                          (!a.loss_tar2 || same_double(*a.loss_tar2, *b.loss_tar2));
  return a.epoch == b.epoch && same_double(a.alpha, b.alpha) && same_double(a.loss_src, b.loss_src) &&
         same_double(a.loss_tar, b.loss_tar) && tar2_equal && same_double(a.train_acc, b.train_acc) &&
         same_double(a.test_acc, b.test_acc);
}

bool operator==(const TrainRecord& a, const TrainRecord& b) { return a.rows == b.rows; }

std::size_t default_post_saturation(std::size_t horizon) {
  return std::max<std::size_t>(1, (horizon + 9) / 10);
}

std::size_t stop_epoch(const Schedule& schedule, const TrainConfig& config) {
  if (!schedule.horizon) return config.epochs;
  const std::size_t post = config.post_saturation_epochs.value_or(default_post_saturation(*schedule.horizon));
  return std::min(config.epochs, *schedule.horizon + post);
}

double dataset_accuracy(const DualHeadModel& model, const std::string& head_id, const Dataset& ds) {
  if (ds.empty()) return std::numeric_limits<double>::quiet_NaN();
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    indices.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + kChunk); ++i) indices.push_back(i);
    const auto [batch, labels] = make_batch(ds, indices);
    const Tensor logits = model.logits(head_id, model.features(batch));
    correct += static_cast<std::size_t>(std::lround(top1_accuracy(logits, labels) * double(labels.size())));
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

Tensor dataset_features(const DualHeadModel& model, const Dataset& ds) {
  if (ds.empty()) throw ContractError("features of an empty dataset");
  constexpr std::size_t kChunk = 256;
  std::vector<double> values;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    indices.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + kChunk); ++i) indices.push_back(i);
    const Tensor f = model.features(make_batch(ds, indices).first);
    values.insert(values.end(), f.values.begin(), f.values.end());
  }
  return Tensor({ds.size(), model.feature_dim()}, std::move(values));
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

struct StepLosses {
  double src = 0.0;
  double tar = 0.0;
  double tar2 = 0.0;
  std::size_t correct = 0;
  std::size_t seen = 0;
};

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  return static_cast<std::size_t>(std::lround(top1_accuracy(logits, labels) * double(labels.size())));
}

}  // namespace

TrainRecord train(DualHeadModel& model, const TrainData& data, const TrainConfig& config, const Schedule& schedule,
                  const StepObserver& observer) {
  require(config.lr > 0.0, "learning rate must be positive");
  require(config.momentum >= 0.0 && config.momentum < 1.0, "momentum must lie in [0, 1)");
  require(config.batch > 0, "batch size must be positive");
  if (schedule.horizon) require(*schedule.horizon >= 1, "schedule horizon E must be at least 1");

  const TrainMode mode = config.mode;
  const bool joint = mode == TrainMode::intermediate || mode == TrainMode::soft;
  const bool uses_source = mode == TrainMode::pretrain || joint;
  const bool uses_target = mode != TrainMode::pretrain;
  const bool uses_target2 = joint && data.target2 != nullptr;
  const std::string mode_label = mode_name(mode);
  if (uses_source) {
    require(data.source != nullptr && !data.source->empty(), mode_label + " mode needs a source dataset");
    require(model.has_head(kSourceHead), mode_label + " mode needs a '" + kSourceHead + "' head");
  }
  if (uses_target) {
    require(data.target != nullptr && !data.target->empty(), mode_label + " mode needs a target dataset");
    require(model.has_head(kTargetHead), mode_label + " mode needs a '" + kTargetHead + "' head");
  }
  if (uses_target2) {
    require(!data.target2->empty(), "target2 dataset is empty");
    require(model.has_head(kTarget2Head), "a second target dataset needs a '" + kTarget2Head + "' head");
    require(config.batch <= data.target2->size(), "batch size exceeds the second target dataset");
  }
  if (config.fixed_alpha) {
    require(*config.fixed_alpha >= 0.0 && *config.fixed_alpha <= 1.0, "fixed alpha must lie in [0, 1]");
  }

  // Trainable tensors for this mode; everything else is held constant.
  std::vector<Tensor*> trainable = model.backbone_parameters();
  auto append_head = [&](const std::string& id) {
    for (Tensor* t : model.head_parameters(id)) trainable.push_back(t);
  };
  if (uses_source && !(joint && config.freeze_source_head)) append_head(kSourceHead);
  if (uses_target) append_head(kTargetHead);
  if (uses_target2) append_head(kTarget2Head);

  std::vector<std::pair<Tensor*, bool>> saved_flags;
  for (const std::string& id : model.head_ids()) {
    for (Tensor* t : model.head_parameters(id)) saved_flags.emplace_back(t, t->track_grad);
  }
  for (Tensor* t : model.backbone_parameters()) saved_flags.emplace_back(t, t->track_grad);
  for (auto& [t, flag] : saved_flags) t->track_grad = false;
  for (Tensor* t : trainable) t->track_grad = true;
  std::vector<std::vector<double>> velocity(trainable.size());

  const std::size_t epochs = mode == TrainMode::soft ? stop_epoch(schedule, config) : config.epochs;
  const std::string& primary_head = uses_target ? kTargetHead : kSourceHead;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::optional<DualBatchIterator> dual;
  if (joint && epochs > 0) dual.emplace(*data.source, *data.target, config.batch, config.seed);
  const std::uint64_t target2_seed = derive_seed(config.seed, "target2");

  TrainRecord record;
  try {
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      double alpha = 0.0;
      if (config.fixed_alpha) {
        alpha = *config.fixed_alpha;
      } else if (mode == TrainMode::soft) {
        alpha = alpha_at(epoch, schedule);
      }

      std::vector<DualBatch> steps;
      if (joint) {
        steps = dual->epoch(epoch);
      } else {
        const Dataset& ds = uses_target ? *data.target : *data.source;
        for (Batch& b : epoch_batches(ds, config.batch, config.seed, epoch)) {
          DualBatch db;
          (uses_target ? db.target : db.source) = std::move(b);
          steps.push_back(std::move(db));
        }
      }
      std::vector<Batch> target2_batches;
      if (uses_target2) target2_batches = epoch_batches(*data.target2, config.batch, target2_seed, epoch);

      StepLosses totals;
      for (std::size_t step = 0; step < steps.size(); ++step) {
        for (Tensor* t : trainable) t->zero_grad();
        Graph graph;
        const BoundModel bound = model.bind(graph);

        std::optional<Var> loss_tar, loss_src, loss_tar2;
        if (uses_target) {
          auto [x, labels] = make_batch(*data.target, steps[step].target);
          const Var logits =
              model.forward_head(bound, kTargetHead, model.forward_features(bound, graph.constant(std::move(x))));
          loss_tar = softmax_cross_entropy(logits, labels, config.smoothing);
          totals.correct += count_correct(logits.value(), labels);
          totals.seen += labels.size();
        }
        if (uses_source) {
          auto [x, labels] = make_batch(*data.source, steps[step].source);
          const Var logits =
              model.forward_head(bound, kSourceHead, model.forward_features(bound, graph.constant(std::move(x))));
          loss_src = softmax_cross_entropy(logits, labels, config.smoothing);
          if (!uses_target) {
            totals.correct += count_correct(logits.value(), labels);
            totals.seen += labels.size();
          }
        }
        if (uses_target2) {
          const Batch& b2 = target2_batches[step % target2_batches.size()];
          auto [x, labels] = make_batch(*data.target2, b2);
          const Var logits =
              model.forward_head(bound, kTarget2Head, model.forward_features(bound, graph.constant(std::move(x))));
          loss_tar2 = softmax_cross_entropy(logits, labels, config.smoothing);
        }

        Var loss;
        if (joint) {
          loss = combined_loss(*loss_src, *loss_tar, alpha, loss_tar2);
        } else {
          loss = uses_target ? *loss_tar : *loss_src;
        }
        if (!std::isfinite(loss.item())) throw DivergenceError(epoch, step);
        graph.backward(loss);
        for (std::size_t i = 0; i < trainable.size(); ++i) {
          sgd_step(*trainable[i], velocity[i], config.lr, config.momentum);
        }

        if (loss_src) totals.src += loss_src->item();
        if (loss_tar) totals.tar += loss_tar->item();
        if (loss_tar2) totals.tar2 += loss_tar2->item();
        if (observer) observer(epoch, step, model);
      }

      const double n_steps = static_cast<double>(steps.size());
      EpochRow row;
      row.epoch = epoch;
      row.alpha = alpha;
      row.loss_src = uses_source && !steps.empty() ? totals.src / n_steps : nan;
      row.loss_tar = uses_target && !steps.empty() ? totals.tar / n_steps : nan;
      if (uses_target2) row.loss_tar2 = steps.empty() ? nan : totals.tar2 / n_steps;
      row.train_acc = totals.seen == 0 ? nan : static_cast<double>(totals.correct) / static_cast<double>(totals.seen);
      row.test_acc = data.target_test != nullptr && config.evaluate_each_epoch
                         ? dataset_accuracy(model, primary_head, *data.target_test)
                         : nan;
      record.rows.push_back(row);
    }
  } catch (...) {
    for (auto& [t, flag] : saved_flags) t->track_grad = flag;
    throw;
  }
  for (auto& [t, flag] : saved_flags) t->track_grad = flag;
  for (Tensor* t : trainable) t->grad.clear();
  return record;
}

}  // namespace sft
