#include "sft/gradcheck.hpp"

#include <cmath>

#include "sft/autodiff.hpp"
#include "sft/model.hpp"
#include "sft/rng.hpp"
#include "sft/trainer.hpp"

namespace sft {
namespace {

Tensor normal_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values) v = rng.normal();
  return t;
}

// Magnitudes in [0.1, 1.5] keep every coordinate a step away from the relu kink.
Tensor off_kink_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.5);
  return t;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = static_cast<std::size_t>(rng.below(classes));
  return labels;
}

// Weighted sum so that every output coordinate carries a distinct adjoint.
Var probe_sum(Graph& g, Var x, const Tensor& weights) { return sum(mul(x, g.constant(weights))); }

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, std::size_t points) {
  std::vector<GradCheckResult> out;
  for (std::size_t point = 0; point < points; ++point) {
    Rng rng(derive_seed(derive_seed(seed, "gradcheck"), point));

    {
      Tensor a = normal_tensor({3, 4}, rng), b = normal_tensor({4, 2}, rng);
      const Tensor w = normal_tensor({3, 2}, rng);
      Tensor* params[] = {&a, &b};
      const double err = finite_diff_check(
          [&](Graph& g) { return probe_sum(g, matmul(g.parameter(a), g.parameter(b)), w); }, params);
      out.push_back({"matmul", point, err});
    }
    {
      Tensor x = normal_tensor({2, 2, 6, 6}, rng), k = normal_tensor({3, 2, 3, 3}, rng), bias = normal_tensor({3}, rng);
      const Tensor w = normal_tensor({2, 3, 2, 2}, rng);
      Tensor* params[] = {&x, &k, &bias};
      const double err = finite_diff_check(
          [&](Graph& g) {
            return probe_sum(g, add_bias(conv2d(g.parameter(x), g.parameter(k), 2), g.parameter(bias)), w);
          },
          params);
      out.push_back({"conv2d", point, err});
    }
    {
      const Tensor x = off_kink_tensor({4, 5}, rng);
      const Tensor w = normal_tensor({4, 5}, rng);
      const double err = finite_diff_check([&](Graph& g, Var theta) { return probe_sum(g, relu(theta), w); }, x);
      out.push_back({"relu", point, err});
    }
    {
      const Tensor logits = normal_tensor({4, 5}, rng);
      const auto labels = random_labels(4, 5, rng);
      const double err = finite_diff_check(
          [&](Graph&, Var theta) { return softmax_cross_entropy(theta, labels, 0.1); }, logits);
      out.push_back({"smoothed_ce", point, err});
    }
    {
      BackboneConfig config{{1, 8, 8}, {LayerSpec::conv(3, 3, 1), LayerSpec::conv(4, 3, 2), LayerSpec::linear(6)}};
      const HeadSpec heads[] = {{kSourceHead, 4}, {kTargetHead, 3}};
      DualHeadModel model = DualHeadModel::build(config, heads, rng.next());
      // Nonzero biases move pre-activations off the exact-zero kink.
      for (Layer& layer : model.layers()) {
        for (double& v : layer.bias.values) v = rng.uniform(0.05, 0.2);
      }
      Tensor xs(Shape{3, 1, 8, 8}), xt(Shape{3, 1, 8, 8});
      for (double& v : xs.values) v = rng.uniform();
      for (double& v : xt.values) v = rng.uniform();
      const auto ls = random_labels(3, 4, rng), lt = random_labels(3, 3, rng);
      std::vector<Tensor*> params = model.backbone_parameters();
      for (const std::string& id : {kSourceHead, kTargetHead}) {
        for (Tensor* t : model.head_parameters(id)) params.push_back(t);
      }
      const double alpha = rng.uniform(0.0, 1.0);
      const double err = finite_diff_check(
          [&](Graph& g) {
            const BoundModel bound = model.bind(g);
            const Var src = softmax_cross_entropy(
                model.forward_head(bound, kSourceHead, model.forward_features(bound, g.constant(xs))), ls, 0.1);
            const Var tar = softmax_cross_entropy(
                model.forward_head(bound, kTargetHead, model.forward_features(bound, g.constant(xt))), lt, 0.1);
            return combined_loss(src, tar, alpha);
          },
          params);
      out.push_back({"dual_head_loss", point, err});
    }
  }
  return out;
}

}  // namespace sft
