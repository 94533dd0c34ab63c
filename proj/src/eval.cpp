#include "sft/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "sft/autodiff.hpp"
#include "sft/errors.hpp"
#include "sft/rng.hpp"
#include "sft/trainer.hpp"

namespace sft {

double top1_accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("top1_accuracy: logits " + shape_str(logits.shape) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &logits.values[r * classes];
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    if (best == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows);
}

ApResult mean_average_precision(const Tensor& scores, std::span<const std::size_t> labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) {
    throw DimensionError("mean_average_precision: scores " + shape_str(scores.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.dim(0), classes = scores.dim(1);
  ApResult result;
  result.per_class.resize(classes);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < classes; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores.values[a * classes + k] > scores.values[b * classes + k];
    });
    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      if (labels[order[rank]] == k) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    if (hits == 0) {
      ++result.classes_without_positives;
      continue;
    }
    const double ap = precision_sum / static_cast<double>(hits);
    result.per_class[k] = ap;
    total += ap;
    ++counted;
  }
  result.mean_ap = counted == 0 ? 0.0 : total / static_cast<double>(counted);
  return result;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: dimensions " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine_similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<TarAtFar> tar_at_far(std::span<const double> genuine_scores, std::span<const double> impostor_scores,
                                 std::span<const double> far_levels) {
  if (genuine_scores.empty() || impostor_scores.empty()) {
    throw ContractError("tar_at_far needs at least one genuine and one impostor pair");
  }
  std::vector<double> impostors(impostor_scores.begin(), impostor_scores.end());
  std::sort(impostors.begin(), impostors.end(), std::greater<>());
  std::vector<double> genuine(genuine_scores.begin(), genuine_scores.end());
  std::sort(genuine.begin(), genuine.end(), std::greater<>());
  const double n_imp = static_cast<double>(impostors.size());

  std::vector<TarAtFar> out;
  for (const double level : far_levels) {
    // Walk distinct impostor scores from the top; accepted(s) = #{imp >= s}
    // grows as s falls, so the qualifying scores form a prefix.
    std::optional<double> threshold;
    std::size_t i = 0;
    while (i < impostors.size()) {
      std::size_t j = i;
      while (j < impostors.size() && impostors[j] == impostors[i]) ++j;
      if (static_cast<double>(j) / n_imp > level) break;
      threshold = impostors[i];
      i = j;
    }
    const double t = threshold ? *threshold
                               : std::nextafter(impostors.front(), std::numeric_limits<double>::infinity());
    const auto accepted = std::upper_bound(genuine.begin(), genuine.end(), t, std::greater<>()) - genuine.begin();
    out.push_back({level, t, static_cast<double>(accepted) / static_cast<double>(genuine.size())});
  }
  return out;
}

std::vector<TarAtFar> tar_at_far(std::span<const VerificationPair> pairs, std::span<const double> far_levels) {
  std::vector<double> genuine, impostor;
  for (const VerificationPair& p : pairs) {
    (p.genuine ? genuine : impostor).push_back(cosine_similarity(p.embedding_a, p.embedding_b));
  }
  return tar_at_far(genuine, impostor, far_levels);
}

double far_floor(std::size_t impostor_pairs) {
  return impostor_pairs == 0 ? 1.0 : 10.0 / static_cast<double>(impostor_pairs);
}

void pair_scores(const Tensor& embeddings, std::span<const std::size_t> labels, std::vector<double>& genuine,
                 std::vector<double>& impostor) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("pair_scores: embeddings " + shape_str(embeddings.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += embeddings.values[i * d + k] * embeddings.values[i * d + k];
    norms[i] = std::sqrt(s);
  }
  genuine.clear();
  impostor.clear();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // an all-zero embedding (dead ReLU features) matches nothing
      double sim = -1.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += embeddings.values[i * d + k] * embeddings.values[j * d + k];
        sim = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      }
      (labels[i] == labels[j] ? genuine : impostor).push_back(sim);
    }
  }
}

double linear_probe(const Tensor& train_features, std::span<const std::size_t> train_labels,
                    const Tensor& test_features, std::span<const std::size_t> test_labels, const ProbeConfig& config) {
  if (train_features.rank() != 2 || test_features.rank() != 2 || train_features.dim(1) != test_features.dim(1)) {
    throw DimensionError("linear_probe: feature shapes " + shape_str(train_features.shape) + " and " +
                         shape_str(test_features.shape) + " disagree");
  }
  if (train_features.dim(0) != train_labels.size() || test_features.dim(0) != test_labels.size()) {
    throw DimensionError("linear_probe: label count does not match features");
  }
  const std::size_t n = train_features.dim(0), d = train_features.dim(1);
  std::size_t classes = 0;
  for (const std::size_t l : train_labels) classes = std::max(classes, l + 1);
  for (const std::size_t l : test_labels) classes = std::max(classes, l + 1);
  if (std::all_of(train_labels.begin(), train_labels.end(), [&](std::size_t l) { return l == train_labels[0]; })) {
    throw ConfigError("linear_probe needs at least two classes in the training set");
  }

  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += train_features.values[i * d + k];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t k = 0; k < d; ++k) {
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = train_features.values[i * d + k] - mean[k];
      var += c * c;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    inv_std[k] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  auto standardize = [&](const Tensor& f) {
    Tensor out(f.shape);
    for (std::size_t i = 0; i < f.dim(0); ++i) {
      for (std::size_t k = 0; k < d; ++k) out.values[i * d + k] = (f.values[i * d + k] - mean[k]) * inv_std[k];
    }
    return out;
  };
  const Tensor train = standardize(train_features);
  const Tensor test = standardize(test_features);

  Tensor weight({d, classes});
  Tensor bias({classes});
  weight.track_grad = bias.track_grad = true;
  std::vector<double> v_weight(weight.size(), 0.0), v_bias(bias.size(), 0.0);
  const std::size_t batch = std::min(config.batch, n);
  std::vector<std::size_t> order(n);
  Rng rng(derive_seed(config.seed, "probe"));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      std::vector<double> rows;
      std::vector<std::size_t> labels;
      rows.reserve(batch * d);
      for (std::size_t b = start; b < start + batch; ++b) {
        rows.insert(rows.end(), train.values.begin() + static_cast<std::ptrdiff_t>(order[b] * d),
                    train.values.begin() + static_cast<std::ptrdiff_t>((order[b] + 1) * d));
        labels.push_back(train_labels[order[b]]);
      }
      weight.zero_grad();
      bias.zero_grad();
      Graph g;
      const Var x = g.constant(Tensor({batch, d}, std::move(rows)));
      const Var loss = softmax_cross_entropy(add_bias(matmul(x, g.parameter(weight)), g.parameter(bias)), labels, 0.0);
      g.backward(loss);
      sgd_step(weight, v_weight, config.lr, config.momentum);
      sgd_step(bias, v_bias, config.lr, config.momentum);
    }
  }

  Graph g;
  const Var logits = add_bias(matmul(g.constant(test), g.constant(Tensor(weight.shape, weight.values))),
                              g.constant(Tensor(bias.shape, bias.values)));
  return top1_accuracy(logits.value(), test_labels);
}

namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

KMeansResult kmeans_once(const Tensor& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  const double* p = points.values.data();
  std::vector<double> centres;
  centres.reserve(k * d);
  const std::size_t first = rng.below(n);
  centres.insert(centres.end(), p + first * d, p + (first + 1) * d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(p + i * d, &centres[(c - 1) * d], d));
      total += nearest[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double running = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        running += nearest[i];
        if (running > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    centres.insert(centres.end(), p + pick * d, p + (pick + 1) * d);
  }

  std::vector<std::size_t> assignment(n, k);
  for (int iteration = 0; iteration < 100; ++iteration) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = squared_distance(p + i * d, &centres[c * d], d);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assignment[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assignment[i] * d + j] += p[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centre
      for (std::size_t j = 0; j < d; ++j) centres[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
    }
  }
  KMeansResult result;
  result.assignment = std::move(assignment);
  for (std::size_t i = 0; i < n; ++i) result.inertia += squared_distance(p + i * d, &centres[result.assignment[i] * d], d);
  return result;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t k, std::size_t restarts, std::uint64_t seed) {
  if (points.rank() != 2) throw DimensionError("kmeans expects [N x D] points, got " + shape_str(points.shape));
  if (k < 2) throw ConfigError("kmeans needs k >= 2");
  if (k > points.dim(0)) throw ConfigError("kmeans: k = " + std::to_string(k) + " exceeds N = " + std::to_string(points.dim(0)));
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    Rng rng(derive_seed(derive_seed(seed, "kmeans"), r));
    KMeansResult run = kmeans_once(points, k, rng);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

double purity(std::span<const std::size_t> assignment, std::span<const std::size_t> attributes) {
  if (assignment.size() != attributes.size() || assignment.empty()) {
    throw DimensionError("purity: assignment and attributes must be non-empty and equally long");
  }
  std::map<std::size_t, std::map<std::size_t, std::size_t>> table;
  for (std::size_t i = 0; i < assignment.size(); ++i) ++table[assignment[i]][attributes[i]];
  std::size_t total = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [attr, c] : counts) best = std::max(best, c);
    total += best;
  }
  return static_cast<double>(total) / static_cast<double>(assignment.size());
}

double cluster_purity(const Tensor& features, std::span<const std::size_t> attributes, std::size_t k,
                      std::size_t restarts, std::uint64_t seed) {
  const KMeansResult result = kmeans(features, k, restarts, seed);
  return purity(result.assignment, attributes);
}

Lead convergence_lead(const Curve& a, const Curve& b, double threshold) {
  auto first = [threshold](const Curve& c) -> std::optional<std::size_t> {
    for (const CurvePoint& p : c) {
      if (p.value >= threshold) return p.epoch;
    }
    return std::nullopt;
  };
  Lead lead;
  lead.first_a = first(a);
  lead.first_b = first(b);
  if (lead.first_a && lead.first_b) lead.epochs = static_cast<long>(*lead.first_b) - static_cast<long>(*lead.first_a);
  return lead;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace sft
