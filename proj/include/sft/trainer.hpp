#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sft/autodiff.hpp"
#include "sft/data.hpp"
#include "sft/model.hpp"

namespace sft {

inline const std::string kSourceHead = "source";
inline const std::string kTargetHead = "target";
inline const std::string kTarget2Head = "target2";

// Epoch horizon E over which the source-loss weight decays; nullopt is the
// infinite sentinel (alpha stays 0).
struct Schedule {
  std::optional<std::size_t> horizon;

  static Schedule infinite() { return {}; }
  static Schedule over(std::size_t epochs) { return {epochs}; }
  bool operator==(const Schedule&) const = default;
};

// min(1, epoch / E); 0 for the infinite sentinel.
double alpha_at(std::size_t epoch, const Schedule& schedule);

// (1 - alpha) * loss_src + loss_tar [+ loss_tar2]
Var combined_loss(Var loss_src, Var loss_tar, double alpha, std::optional<Var> loss_tar2 = std::nullopt);

// v <- momentum * v + g;  theta <- theta - lr * v
void sgd_step(Tensor& param, std::vector<double>& velocity, double lr, double momentum);
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum);

enum class TrainMode { pretrain, finetune, intermediate, soft };

const char* mode_name(TrainMode mode);
std::optional<TrainMode> parse_mode(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::soft;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch = 32;
  std::size_t epochs = 30;
  // nullopt -> max(1, ceil(0.1 * E))
  std::optional<std::size_t> post_saturation_epochs;
  double smoothing = 0.0;
  std::uint64_t seed = 0;
  bool freeze_source_head = false;
  // Overrides the schedule for every epoch (used to pin alpha = 1).
  std::optional<double> fixed_alpha;
  // Skip per-epoch test evaluation.
  bool evaluate_each_epoch = true;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainData {
  const Dataset* source = nullptr;
  const Dataset* target = nullptr;
  const Dataset* target2 = nullptr;
  // Evaluated with the target head after every epoch when present.
  const Dataset* target_test = nullptr;
};

struct EpochRow {
  std::size_t epoch = 0;
  double alpha = 0.0;
  double loss_src = 0.0;  // NaN when the mode has no source term
  double loss_tar = 0.0;  // NaN in pretrain mode
  std::optional<double> loss_tar2;
  double train_acc = 0.0;
  double test_acc = 0.0;  // NaN without a test set
};

struct TrainRecord {
  std::vector<EpochRow> rows;
  std::string checkpoint;  // path of the final checkpoint when one was saved
};

bool operator==(const EpochRow& a, const EpochRow& b);  // bitwise on doubles
bool operator==(const TrainRecord& a, const TrainRecord& b);

std::size_t default_post_saturation(std::size_t horizon);
// Number of epochs soft mode trains: min(total, E + post); total for E = inf.
std::size_t stop_epoch(const Schedule& schedule, const TrainConfig& config);

// Optional per-step observer (epoch, step, model after the update).
using StepObserver = std::function<void(std::size_t, std::size_t, const DualHeadModel&)>;

TrainRecord train(DualHeadModel& model, const TrainData& data, const TrainConfig& config, const Schedule& schedule,
                  const StepObserver& observer = nullptr);

// Top-1 accuracy of `head_id` on a dataset, evaluated in chunks.
double dataset_accuracy(const DualHeadModel& model, const std::string& head_id, const Dataset& ds);
// Backbone features for every sample, [N x D].
Tensor dataset_features(const DualHeadModel& model, const Dataset& ds);

}  // namespace sft
