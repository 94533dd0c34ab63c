#include "sft/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sft/errors.hpp"

namespace sft {

const Tensor& Var::value() const {
  if (graph_ == nullptr) throw ContractError("use of an unbound Var");
  return graph_->value(id_);
}

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar of shape " + shape_str(v.shape));
  return v.values[0];
}

Var Graph::constant(Tensor value) {
  value.grad.clear();
  value.track_grad = false;
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor& param) {
  Tensor copy(param.shape, param.values);
  nodes_.push_back(Node{std::move(copy), {}, nullptr, &param, param.track_grad});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (const std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr,
                        nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Graph::adjoint(std::size_t id) {
  auto& adj = adjoints_[id];
  if (adj.empty()) adj.assign(nodes_[id].value.size(), 0.0);
  return adj;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("backward on a Var from another graph");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss.id()).shape));
  }
  adjoints_.assign(nodes_.size(), {});
  adjoint(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || adjoints_[i].empty()) continue;
    if (node.backward) node.backward(*this, adjoints_[i]);
    if (node.bound != nullptr && node.bound->track_grad) {
      Tensor& param = *node.bound;
      if (param.grad.size() != param.values.size()) param.zero_grad();
      const auto& adj = adjoints_[i];
      for (std::size_t k = 0; k < adj.size(); ++k) param.grad[k] += adj[k];
    }
  }
  adjoints_.clear();
}

namespace {

void require_same_graph(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw ContractError("operands belong to different graphs");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out.values[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.values[i * k + p];
      const double* yrow = &y.values[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * yrow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, const std::vector<double>& dy) {
    const auto& xv = g.value(ia).values;
    const auto& yv = g.value(ib).values;
    if (g.requires_grad(ia)) {
      auto& dx = g.adjoint(ia);
      // dx = dy * y^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dy[i * n + j] * yv[p * n + j];
          dx[i * k + p] += acc;
        }
      }
    }
    if (g.requires_grad(ib)) {
      auto& dw = g.adjoint(ib);
      // dw = x^T * dy
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double xval = xv[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dw[p * n + j] += xval * dy[i * n + j];
        }
      }
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const Tensor& in = x.value();
  const Tensor& b = bias.value();
  if (in.rank() < 2 || b.size() != in.dim(1)) {
    throw DimensionError("add_bias shape mismatch: " + shape_str(in.shape) + " vs " + shape_str(b.shape));
  }
  const std::size_t outer = in.dim(0), channels = in.dim(1), inner = in.size() / (outer * channels);
  Tensor out = Tensor(in.shape, in.values);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = &out.values[(o * channels + c) * inner];
      for (std::size_t i = 0; i < inner; ++i) p[i] += b.values[c];
    }
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return x.graph().record(std::move(out), {ix, ib},
                          [ix, ib, outer, channels, inner](Graph& g, const std::vector<double>& dy) {
                            if (g.requires_grad(ix)) {
                              auto& dx = g.adjoint(ix);
                              for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                            }
                            if (g.requires_grad(ib)) {
                              auto& db = g.adjoint(ib);
                              for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t c = 0; c < channels; ++c) {
                                  const double* p = &dy[(o * channels + c) * inner];
                                  double acc = 0.0;
                                  for (std::size_t i = 0; i < inner; ++i) acc += p[i];
                                  db[c] += acc;
                                }
                              }
                            }
                          });
}

Var conv2d(Var input, Var kernels, std::size_t stride) {
  require_same_graph(input, kernels);
  const Tensor& in = input.value();
  const Tensor& ker = kernels.value();
  if (stride == 0) throw ContractError("conv2d stride must be positive");
  if ((in.rank() != 3 && in.rank() != 4) || ker.rank() != 4) {
    throw DimensionError("conv2d expects [C x H x W] or [B x C x H x W] input and [O x C x kh x kw] kernels, got " +
                         shape_str(in.shape) + " and " + shape_str(ker.shape));
  }
  const bool batched = in.rank() == 4;
  const std::size_t batch = batched ? in.dim(0) : 1;
  const std::size_t c_in = in.dim(batched ? 1 : 0);
  const std::size_t height = in.dim(batched ? 2 : 1);
  const std::size_t width = in.dim(batched ? 3 : 2);
  const std::size_t c_out = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
  if (ker.dim(1) != c_in) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(in.shape) + " vs kernels " +
                         shape_str(ker.shape));
  }
  if (kh > height || kw > width) {
    throw DimensionError("conv2d kernel " + shape_str(ker.shape) + " larger than input " + shape_str(in.shape));
  }
  const std::size_t out_h = (height - kh) / stride + 1;
  const std::size_t out_w = (width - kw) / stride + 1;
  Shape out_shape = batched ? Shape{batch, c_out, out_h, out_w} : Shape{c_out, out_h, out_w};
  Tensor out(out_shape);

  const std::size_t in_plane = height * width, in_sample = c_in * in_plane;
  const std::size_t out_plane = out_h * out_w, out_sample = c_out * out_plane;
  const std::size_t ker_size = c_in * kh * kw;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* dst = &out.values[b * out_sample + o * out_plane];
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* src = &in.values[b * in_sample + c * in_plane];
        const double* k = &ker.values[o * ker_size + c * kh * kw];
        for (std::size_t y = 0; y < out_h; ++y) {
          for (std::size_t x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < kh; ++dy) {
              const double* row = src + (y * stride + dy) * width + x * stride;
              for (std::size_t dx = 0; dx < kw; ++dx) acc += row[dx] * k[dy * kw + dx];
            }
            dst[y * out_w + x] += acc;
          }
        }
      }
    }
  }

  const std::size_t ii = input.id(), ik = kernels.id();
  return input.graph().record(
      std::move(out), {ii, ik},
      [=](Graph& g, const std::vector<double>& grad_out) {
        const auto& iv = g.value(ii).values;
        const auto& kv = g.value(ik).values;
        const bool want_input = g.requires_grad(ii);
        const bool want_kernel = g.requires_grad(ik);
        std::vector<double>* d_in = want_input ? &g.adjoint(ii) : nullptr;
        std::vector<double>* d_ker = want_kernel ? &g.adjoint(ik) : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const double* go = &grad_out[b * out_sample + o * out_plane];
            for (std::size_t c = 0; c < c_in; ++c) {
              const std::size_t in_off = b * in_sample + c * in_plane;
              const std::size_t k_off = o * ker_size + c * kh * kw;
              for (std::size_t y = 0; y < out_h; ++y) {
                for (std::size_t x = 0; x < out_w; ++x) {
                  const double gv = go[y * out_w + x];
                  if (gv == 0.0) continue;
                  for (std::size_t dy = 0; dy < kh; ++dy) {
                    const std::size_t row = in_off + (y * stride + dy) * width + x * stride;
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                      if (d_ker != nullptr) (*d_ker)[k_off + dy * kw + dx] += gv * iv[row + dx];
                      if (d_in != nullptr) (*d_in)[row + dx] += gv * kv[k_off + dy * kw + dx];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = in.values[i] > 0.0 ? in.values[i] : 0.0;
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph& g, const std::vector<double>& dy) {
    const auto& iv = g.value(ix).values;
    auto& dx = g.adjoint(ix);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (iv[i] > 0.0) dx[i] += dy[i];
    }
  });
}

Var flatten(Var x) {
  const Tensor& in = x.value();
  if (in.rank() < 2) throw DimensionError("flatten needs a batch axis, got " + shape_str(in.shape));
  Tensor out({in.dim(0), in.size() / in.dim(0)}, in.values);
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph& g, const std::vector<double>& dy) {
    auto& dx = g.adjoint(ix);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) throw DimensionError("add shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x.values[i] + y.values[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib](Graph& g, const std::vector<double>& dy) {
    for (const std::size_t id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      auto& d = g.adjoint(id);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) throw DimensionError("mul shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = x.values[i] * y.values[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [ia, ib](Graph& g, const std::vector<double>& dy) {
    if (g.requires_grad(ia)) {
      const auto& yv = g.value(ib).values;
      auto& d = g.adjoint(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * yv[i];
    }
    if (g.requires_grad(ib)) {
      const auto& xv = g.value(ia).values;
      auto& d = g.adjoint(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * xv[i];
    }
  });
}

Var scale(Var x, double factor) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out.values[i] = factor * in.values[i];
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix, factor](Graph& g, const std::vector<double>& dy) {
    auto& dx = g.adjoint(ix);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

Var sum(Var x) {
  const Tensor& in = x.value();
  double total = 0.0;
  for (const double v : in.values) total += v;
  const std::size_t ix = x.id();
  return x.graph().record(Tensor::scalar(total), {ix}, [ix](Graph& g, const std::vector<double>& dy) {
    auto& dx = g.adjoint(ix);
    for (double& d : dx) d += dy[0];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels, double smoothing) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("softmax_cross_entropy expects [B x K] logits, got " + shape_str(z.shape));
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ContractError("label smoothing must lie in [0, 1)");
  for (const std::size_t label : labels) {
    if (label >= classes) {
      throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                       " classes");
    }
  }
  const double off = smoothing / static_cast<double>(classes);
  const double on = 1.0 - smoothing + off;

  // probabilities kept for the backward pass
  std::vector<double> probs(z.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = &z.values[b * classes];
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(row[k] - peak);
    const double log_denom = std::log(denom);
    double loss = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double log_p = row[k] - peak - log_denom;
      probs[b * classes + k] = std::exp(log_p);
      const double target = k == labels[b] ? on : off;
      if (target != 0.0) loss -= target * log_p;
    }
    total += loss;
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::vector<std::size_t> kept(labels.begin(), labels.end());
  const std::size_t iz = logits.id();
  return logits.graph().record(
      Tensor::scalar(total * inv_batch), {iz},
      [iz, probs = std::move(probs), kept = std::move(kept), classes, on, off, inv_batch](
          Graph& g, const std::vector<double>& dy) {
        auto& dz = g.adjoint(iz);
        const double seed = dy[0] * inv_batch;
        for (std::size_t b = 0; b < kept.size(); ++b) {
          for (std::size_t k = 0; k < classes; ++k) {
            const double target = k == kept[b] ? on : off;
            dz[b * classes + k] += seed * (probs[b * classes + k] - target);
          }
        }
      });
}

double finite_diff_check(const std::function<Var(Graph&)>& loss, std::span<Tensor* const> params, double step) {
  if (!(step > 0.0)) throw ContractError("finite difference step must be positive");
  std::vector<bool> tracked;
  std::vector<std::vector<double>> saved_grads;
  for (Tensor* p : params) {
    tracked.push_back(p->track_grad);
    saved_grads.push_back(p->grad);
    p->track_grad = true;
    p->zero_grad();
  }
  {
    Graph g;
    g.backward(loss(g));
  }
  auto evaluate = [&loss]() {
    Graph g;
    return loss(g).item();
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double original = p.values[i];
      p.values[i] = original + step;
      const double plus = evaluate();
      p.values[i] = original - step;
      const double minus = evaluate();
      p.values[i] = original;
      const double central = (plus - minus) / (2.0 * step);
      const double err = std::abs(p.grad[i] - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t]->track_grad = tracked[t];
    params[t]->grad = std::move(saved_grads[t]);
  }
  return worst;
}

double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& theta, double step) {
  Tensor local(theta.shape, theta.values);
  Tensor* handle = &local;
  return finite_diff_check([&](Graph& g) { return f(g, g.parameter(local)); },
                           std::span<Tensor* const>(&handle, 1), step);
}

}  // namespace sft
