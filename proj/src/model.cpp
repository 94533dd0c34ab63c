#include "sft/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "sft/errors.hpp"
#include "sft/rng.hpp"

namespace sft {

std::vector<Shape> BackboneConfig::layer_shapes() const {
  if (input.size() != 1 && input.size() != 3) {
    throw ConfigError("backbone input must be {d} or {C, H, W}, got " + shape_str(input));
  }
  for (const std::size_t d : input) {
    if (d == 0) throw ConfigError("backbone input " + shape_str(input) + " has a zero dimension");
  }
  std::vector<Shape> shapes;
  Shape current = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (layer.out == 0) throw ConfigError(where + ": output size must be positive");
    if (layer.kind == LayerSpec::Kind::conv) {
      if (current.size() != 3) throw ConfigError(where + " (conv): input is not an image, got " + shape_str(current));
      if (layer.kernel == 0 || layer.stride == 0) throw ConfigError(where + " (conv): kernel and stride must be positive");
      if (layer.kernel > current[1] || layer.kernel > current[2]) {
        throw ConfigError(where + " (conv): kernel " + std::to_string(layer.kernel) + " larger than input " +
                          shape_str(current));
      }
      current = {layer.out, (current[1] - layer.kernel) / layer.stride + 1,
                 (current[2] - layer.kernel) / layer.stride + 1};
    } else {
      current = {layer.out};
    }
    shapes.push_back(current);
  }
  return shapes;
}

std::size_t BackboneConfig::feature_dim() const {
  const auto shapes = layer_shapes();
  return numel(shapes.empty() ? input : shapes.back());
}

namespace {

Tensor gaussian(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values) v = std_dev * rng.normal();
  return t;
}

Head init_head(std::size_t feature_dim, std::size_t classes, std::uint64_t seed, const std::string& head_id) {
  if (classes == 0) throw ConfigError("head '" + head_id + "' needs at least one class");
  Rng rng(derive_seed(seed, "head:" + head_id));
  Head head;
  head.weight = gaussian({feature_dim, classes}, feature_dim, rng);
  head.bias = Tensor({classes});
  head.origin = HeadOrigin::fresh;
  return head;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

}  // namespace

DualHeadModel DualHeadModel::build(const BackboneConfig& config, std::span<const HeadSpec> heads, std::uint64_t seed) {
  DualHeadModel model;
  model.config_ = config;
  const auto shapes = config.layer_shapes();
  model.feature_dim_ = numel(shapes.empty() ? config.input : shapes.back());
  Shape current = config.input;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& spec = config.layers[i];
    Rng rng(derive_seed(derive_seed(seed, "layer"), i));
    Layer layer{spec, {}, {}};
    if (spec.kind == LayerSpec::Kind::conv) {
      const std::size_t fan_in = current[0] * spec.kernel * spec.kernel;
      layer.weight = gaussian({spec.out, current[0], spec.kernel, spec.kernel}, fan_in, rng);
    } else {
      const std::size_t fan_in = numel(current);
      layer.weight = gaussian({fan_in, spec.out}, fan_in, rng);
    }
    layer.bias = Tensor({spec.out});
    model.layers_.push_back(std::move(layer));
    current = shapes[i];
  }
  for (const HeadSpec& h : heads) {
    if (model.has_head(h.id)) throw ConflictError("duplicate head id '" + h.id + "'");
    model.heads_.emplace(h.id, init_head(model.feature_dim_, h.classes, seed, h.id));
  }
  if (model.heads_.empty()) throw ConfigError("a model needs at least one head");
  return model;
}

BoundModel DualHeadModel::bind(Graph& graph) {
  BoundModel bound;
  for (Layer& layer : layers_) bound.layers.emplace_back(graph.parameter(layer.weight), graph.parameter(layer.bias));
  for (auto& [id, head] : heads_) bound.heads.emplace(id, std::pair{graph.parameter(head.weight), graph.parameter(head.bias)});
  return bound;
}

BoundModel DualHeadModel::bind_constant(Graph& graph) const {
  BoundModel bound;
  for (const Layer& layer : layers_) {
    bound.layers.emplace_back(graph.constant(Tensor(layer.weight.shape, layer.weight.values)),
                              graph.constant(Tensor(layer.bias.shape, layer.bias.values)));
  }
  for (const auto& [id, head] : heads_) {
    bound.heads.emplace(id, std::pair{graph.constant(Tensor(head.weight.shape, head.weight.values)),
                                      graph.constant(Tensor(head.bias.shape, head.bias.values))});
  }
  return bound;
}

void DualHeadModel::check_batch(const Shape& batch_shape) const {
  const bool ok = batch_shape.size() == config_.input.size() + 1 &&
                  std::equal(config_.input.begin(), config_.input.end(), batch_shape.begin() + 1);
  if (!ok) {
    throw DimensionError("batch " + shape_str(batch_shape) + " does not match model input " + shape_str(config_.input));
  }
}

Var DualHeadModel::forward_features(const BoundModel& bound, Var batch) const {
  check_batch(batch.shape());
  Var x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& [w, b] = bound.layers.at(i);
    if (layers_[i].spec.kind == LayerSpec::Kind::conv) {
      x = relu(add_bias(conv2d(x, w, layers_[i].spec.stride), b));
    } else {
      if (x.shape().size() > 2) x = flatten(x);
      x = relu(add_bias(matmul(x, w), b));
    }
  }
  if (x.shape().size() > 2) x = flatten(x);
  return x;
}

Var DualHeadModel::forward_head(const BoundModel& bound, const std::string& head_id, Var features) const {
  const auto it = bound.heads.find(head_id);
  if (it == bound.heads.end()) throw LookupError("unknown head '" + head_id + "'");
  return add_bias(matmul(features, it->second.first), it->second.second);
}

Tensor DualHeadModel::features(const Tensor& batch) const {
  Graph graph;
  const BoundModel bound = bind_constant(graph);
  const Var out = forward_features(bound, graph.constant(Tensor(batch.shape, batch.values)));
  return Tensor(out.shape(), out.value().values);
}

Tensor DualHeadModel::logits(const std::string& head_id, const Tensor& features) const {
  const Head& h = head(head_id);
  Graph graph;
  const Var w = graph.constant(Tensor(h.weight.shape, h.weight.values));
  const Var b = graph.constant(Tensor(h.bias.shape, h.bias.values));
  const Var out = add_bias(matmul(graph.constant(Tensor(features.shape, features.values)), w), b);
  return Tensor(out.shape(), out.value().values);
}

void DualHeadModel::add_head(const std::string& head_id, std::size_t classes, std::uint64_t seed) {
  if (has_head(head_id)) throw ConflictError("head '" + head_id + "' already exists");
  heads_.emplace(head_id, init_head(feature_dim_, classes, seed, head_id));
}

void DualHeadModel::replace_head(const std::string& head_id, std::size_t classes, std::uint64_t seed) {
  if (!has_head(head_id)) throw LookupError("unknown head '" + head_id + "'");
  heads_[head_id] = init_head(feature_dim_, classes, seed, head_id);
}

void DualHeadModel::remove_head(const std::string& head_id) {
  if (!has_head(head_id)) throw LookupError("unknown head '" + head_id + "'");
  if (heads_.size() == 1) throw ContractError("cannot remove the last head");
  heads_.erase(head_id);
}

void DualHeadModel::set_origin(const std::string& head_id, HeadOrigin origin) { head(head_id).origin = origin; }

const Head& DualHeadModel::head(const std::string& head_id) const {
  const auto it = heads_.find(head_id);
  if (it == heads_.end()) throw LookupError("unknown head '" + head_id + "'");
  return it->second;
}

Head& DualHeadModel::head(const std::string& head_id) {
  const auto it = heads_.find(head_id);
  if (it == heads_.end()) throw LookupError("unknown head '" + head_id + "'");
  return it->second;
}

std::vector<std::string> DualHeadModel::head_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, head] : heads_) ids.push_back(id);
  return ids;
}

std::vector<Tensor*> DualHeadModel::backbone_parameters() {
  std::vector<Tensor*> out;
  for (Layer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<Tensor*> DualHeadModel::head_parameters(const std::string& head_id) {
  Head& h = head(head_id);
  return {&h.weight, &h.bias};
}

namespace {

const char* kind_tag(const LayerSpec& spec) { return spec.kind == LayerSpec::Kind::conv ? "conv" : "linear"; }

std::string layer_prefix(std::size_t index, const LayerSpec& spec) {
  std::string prefix = "backbone." + std::to_string(index) + "." + kind_tag(spec);
  if (spec.kind == LayerSpec::Kind::conv) prefix += ".s" + std::to_string(spec.stride);
  return prefix;
}

}  // namespace

std::vector<std::pair<std::string, const Tensor*>> DualHeadModel::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = layer_prefix(i, layers_[i].spec);
    out.emplace_back(prefix + ".weight", &layers_[i].weight);
    out.emplace_back(prefix + ".bias", &layers_[i].bias);
  }
  for (const auto& [id, head] : heads_) {
    out.emplace_back("head." + id + ".weight", &head.weight);
    out.emplace_back("head." + id + ".bias", &head.bias);
  }
  return out;
}

std::size_t DualHeadModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, tensor] : named_parameters()) n += tensor->size();
  return n;
}

bool same_backbone(const DualHeadModel& a, const DualHeadModel& b) {
  if (a.layers().size() != b.layers().size()) return false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    if (!same_bits(a.layers()[i].weight, b.layers()[i].weight) || !same_bits(a.layers()[i].bias, b.layers()[i].bias)) {
      return false;
    }
  }
  return true;
}

bool same_head(const DualHeadModel& a, const DualHeadModel& b, const std::string& head_id) {
  if (!a.has_head(head_id) || !b.has_head(head_id)) return false;
  return same_bits(a.head(head_id).weight, b.head(head_id).weight) && same_bits(a.head(head_id).bias, b.head(head_id).bias);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

struct Block {
  std::string name;
  Tensor tensor;
};

std::vector<Block> checkpoint_blocks(const DualHeadModel& model) {
  std::vector<Block> blocks;
  const Shape& input = model.config().input;
  blocks.push_back({"meta.input", Tensor({input.size()}, std::vector<double>(input.begin(), input.end()))});
  for (const auto& [name, tensor] : model.named_parameters()) blocks.push_back({name, Tensor(tensor->shape, tensor->values)});
  for (const std::string& id : model.head_ids()) {
    blocks.push_back({"meta.head." + id + ".origin",
                      Tensor::scalar(static_cast<double>(static_cast<std::uint8_t>(model.head(id).origin)))});
  }
  return blocks;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::pair<std::string, Shape>> checkpoint_layout(const DualHeadModel& model) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const Block& b : checkpoint_blocks(model)) out.emplace_back(b.name, b.tensor.shape);
  return out;
}

std::uintmax_t checkpoint_size(std::span<const std::pair<std::string, Shape>> blocks) {
  std::uintmax_t size = sizeof(kCheckpointMagic) + 4 + 4;
  for (const auto& [name, shape] : blocks) size += 4 + name.size() + 4 + 8 * shape.size() + 8 * numel(shape);
  return size;
}

void save_checkpoint(const DualHeadModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const auto blocks = checkpoint_blocks(model);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const Block& b : blocks) {
    detail::put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(b.tensor.rank()));
    for (const std::size_t d : b.tensor.shape) detail::put_u64(out, d);
    for (const double v : b.tensor.values) detail::put_f64(out, v);
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DualHeadModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(magic))) throw IoError("truncated checkpoint header");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = detail::get_u32(in, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(in, "block count");

  std::vector<Block> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(in, "block name length");
    if (name_len > 4096) throw FormatError("implausible block name length");
    Block b;
    b.name = detail::get_bytes(in, name_len, "block name");
    const std::uint32_t rank = detail::get_u32(in, "block rank");
    if (rank == 0 || rank > 8) throw FormatError("block '" + b.name + "' has invalid rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get_u64(in, "block dims"));
    std::size_t n = 1;
    for (const std::size_t d : shape) {
      if (d == 0 || d > (std::size_t{1} << 32)) throw FormatError("block '" + b.name + "' has invalid dims");
      n *= d;
    }
    if (n > (std::size_t{1} << 32)) throw FormatError("block '" + b.name + "' is implausibly large");
    std::vector<double> values(n);
    for (double& v : values) v = detail::get_f64(in, "block values");
    b.tensor = Tensor(std::move(shape), std::move(values));
    blocks.push_back(std::move(b));
  }

  DualHeadModel model;
  std::map<std::string, HeadOrigin> origins;
  bool have_input = false;
  for (Block& b : blocks) {
    if (b.name == "meta.input") {
      for (const double v : b.tensor.values) model.config_.input.push_back(static_cast<std::size_t>(v));
      have_input = true;
    } else if (starts_with(b.name, "meta.head.") && ends_with(b.name, ".origin")) {
      const std::string id = b.name.substr(10, b.name.size() - 10 - 7);
      origins[id] = b.tensor.values.at(0) == 0.0 ? HeadOrigin::pretrained : HeadOrigin::fresh;
    } else if (starts_with(b.name, "head.")) {
      const bool is_weight = ends_with(b.name, ".weight");
      if (!is_weight && !ends_with(b.name, ".bias")) throw FormatError("unexpected block '" + b.name + "'");
      const std::string id = b.name.substr(5, b.name.size() - 5 - (is_weight ? 7 : 5));
      Head& head = model.heads_[id];
      (is_weight ? head.weight : head.bias) = std::move(b.tensor);
    } else if (starts_with(b.name, "backbone.")) {
      const std::size_t dot = b.name.find('.', 9);
      if (dot == std::string::npos) throw FormatError("unexpected block '" + b.name + "'");
      const std::size_t index = std::stoul(b.name.substr(9, dot - 9));
      if (index != model.layers_.size() && index + 1 != model.layers_.size()) {
        throw FormatError("backbone blocks out of order at '" + b.name + "'");
      }
      if (index == model.layers_.size()) {
        Layer layer;
        const std::string rest = b.name.substr(dot + 1);
        if (starts_with(rest, "conv.s")) {
          layer.spec.kind = LayerSpec::Kind::conv;
          layer.spec.stride = std::stoul(rest.substr(6));
        } else if (starts_with(rest, "linear.")) {
          layer.spec.kind = LayerSpec::Kind::linear;
        } else {
          throw FormatError("unknown layer kind in '" + b.name + "'");
        }
        model.layers_.push_back(std::move(layer));
      }
      Layer& layer = model.layers_.back();
      if (ends_with(b.name, ".weight")) {
        const Shape& s = b.tensor.shape;
        if (layer.spec.kind == LayerSpec::Kind::conv) {
          if (s.size() != 4 || s[2] != s[3]) throw FormatError("bad conv kernel block '" + b.name + "'");
          layer.spec.out = s[0];
          layer.spec.kernel = s[2];
        } else {
          if (s.size() != 2) throw FormatError("bad linear weight block '" + b.name + "'");
          layer.spec.out = s[1];
        }
        layer.weight = std::move(b.tensor);
      } else if (ends_with(b.name, ".bias")) {
        layer.bias = std::move(b.tensor);
      } else {
        throw FormatError("unexpected block '" + b.name + "'");
      }
    } else {
      throw FormatError("unexpected block '" + b.name + "'");
    }
  }
  if (!have_input) throw FormatError("checkpoint lacks meta.input");
  for (const Layer& layer : model.layers_) model.config_.layers.push_back(layer.spec);
  try {
    const auto shapes = model.config_.layer_shapes();
    model.feature_dim_ = numel(shapes.empty() ? model.config_.input : shapes.back());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("inconsistent architecture: ") + e.what());
  }
  Shape layer_in = model.config_.input;
  for (std::size_t i = 0; i < model.layers_.size(); ++i) {
    const Layer& layer = model.layers_[i];
    const Shape expected = layer.spec.kind == LayerSpec::Kind::conv
                               ? Shape{layer.spec.out, layer_in.at(0), layer.spec.kernel, layer.spec.kernel}
                               : Shape{numel(layer_in), layer.spec.out};
    if (layer.weight.shape != expected || layer.bias.shape != Shape{layer.spec.out}) {
      throw FormatError("backbone layer " + std::to_string(i) + " parameters do not chain: weight " +
                        shape_str(layer.weight.shape) + ", expected " + shape_str(expected));
    }
    layer_in = model.config_.layer_shapes()[i];
  }
  if (model.heads_.empty()) throw FormatError("checkpoint has no heads");
  for (auto& [id, head] : model.heads_) {
    if (head.weight.rank() != 2 || head.weight.dim(0) != model.feature_dim_ || head.bias.size() != head.weight.dim(1)) {
      throw FormatError("head '" + id + "' does not match feature dimension");
    }
    if (const auto it = origins.find(id); it != origins.end()) head.origin = it->second;
  }
  return model;
}

}  // namespace sft
