#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sft/tensor.hpp"

namespace sft {

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double top1_accuracy(const Tensor& logits, std::span<const std::size_t> labels);

struct ApResult {
  double mean_ap = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt for classes without positives
  std::size_t classes_without_positives = 0;
};

// Per class: rank samples by score descending (lower sample index first on
// ties); AP is the mean precision at each positive. mAP averages the classes
// that have at least one positive.
ApResult mean_average_precision(const Tensor& scores, std::span<const std::size_t> labels);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct VerificationPair {
  std::vector<double> embedding_a;
  std::vector<double> embedding_b;
  bool genuine = false;
};

struct TarAtFar {
  double far = 0.0;
  double threshold = 0.0;
  double tar = 0.0;
};

// Scores: accept when similarity >= threshold. For each FAR level the
// threshold is the smallest impostor score whose impostor accept rate stays
// within the level; above every impostor score when none qualifies.
std::vector<TarAtFar> tar_at_far(std::span<const double> genuine_scores, std::span<const double> impostor_scores,
                                 std::span<const double> far_levels);
std::vector<TarAtFar> tar_at_far(std::span<const VerificationPair> pairs, std::span<const double> far_levels);

// Smallest FAR level reported with confidence: 10 / #impostor pairs.
double far_floor(std::size_t impostor_pairs);

// All unordered pairs of rows; genuine when the labels match.
void pair_scores(const Tensor& embeddings, std::span<const std::size_t> labels, std::vector<double>& genuine,
                 std::vector<double>& impostor);

struct ProbeConfig {
  std::size_t epochs = 30;
  double lr = 0.1;
  double momentum = 0.9;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

// Softmax linear classifier trained with sgd_step on frozen, standardized
// features; returns test top-1 accuracy.
double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, const ProbeConfig& config);

struct KMeansResult {
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
};

// k-means++ seeding, at most 100 Lloyd iterations per restart, best inertia
// over `restarts` seeded restarts.
KMeansResult kmeans(const Tensor& points, std::size_t k, std::size_t restarts, std::uint64_t seed);

double purity(std::span<const std::size_t> assignment, std::span<const std::size_t> attributes);

double cluster_purity(const Tensor& features, std::span<const std::size_t> attributes, std::size_t k,
                      std::size_t restarts, std::uint64_t seed);

struct CurvePoint {
  std::size_t epoch = 0;
  double value = 0.0;
};

using Curve = std::vector<CurvePoint>;

struct Lead {
  // first epoch of b at threshold minus first epoch of a at threshold
  std::optional<long> epochs;
  std::optional<std::size_t> first_a;
  std::optional<std::size_t> first_b;
};

Lead convergence_lead(const Curve& a, const Curve& b, double threshold);

// NaN when empty.
double median(std::vector<double> values);

// Evaluation bundle of one trained model; absent entries were not requested.
struct MetricsReport {
  std::optional<double> top1;
  std::optional<ApResult> ap;
  std::vector<TarAtFar> tar;
  std::optional<double> far_floor;
  std::optional<double> probe;
  std::optional<double> purity;
};

}  // namespace sft
