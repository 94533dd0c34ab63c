#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sft/autodiff.hpp"
#include "sft/tensor.hpp"

namespace sft {

struct LayerSpec {
  enum class Kind { conv, linear };

  Kind kind = Kind::linear;
  std::size_t out = 0;     // output channels (conv) or output width (linear)
  std::size_t kernel = 0;  // conv only, square
  std::size_t stride = 1;  // conv only

  static LayerSpec conv(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1) {
    return {Kind::conv, out_channels, kernel, stride};
  }
  static LayerSpec linear(std::size_t out_dim) { return {Kind::linear, out_dim, 0, 1}; }

  bool operator==(const LayerSpec&) const = default;
};

// Input is {d} for vectors or {C, H, W} for images. Every layer is followed by
// a ReLU; conv layers must precede linear ones.
struct BackboneConfig {
  Shape input;
  std::vector<LayerSpec> layers;

  // Per-sample output shape of every layer; throws ConfigError naming the
  // first layer that does not chain.
  std::vector<Shape> layer_shapes() const;
  std::size_t feature_dim() const;

  bool operator==(const BackboneConfig&) const = default;
};

struct HeadSpec {
  std::string id;
  std::size_t classes = 0;
};

enum class HeadOrigin : std::uint8_t { pretrained = 0, fresh = 1 };

struct Layer {
  LayerSpec spec;
  Tensor weight;  // [in x out] for linear, [O x C x k x k] for conv
  Tensor bias;
};

struct Head {
  Tensor weight;  // [D x K]
  Tensor bias;    // [K]
  HeadOrigin origin = HeadOrigin::fresh;
};

// Graph handles for one forward/backward pass over a model.
struct BoundModel {
  std::vector<std::pair<Var, Var>> layers;
  std::map<std::string, std::pair<Var, Var>> heads;
};

// Shared backbone plus named linear classifier heads. Weights are Gaussian
// with std sqrt(2 / fan_in); biases start at zero.
class DualHeadModel {
 public:
  static DualHeadModel build(const BackboneConfig& config, std::span<const HeadSpec> heads, std::uint64_t seed);

  const BackboneConfig& config() const noexcept { return config_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  // Binds every tensor as a graph parameter (gradients flow to tensors with
  // track_grad set).
  BoundModel bind(Graph& graph);
  // Binds every tensor as a constant.
  BoundModel bind_constant(Graph& graph) const;

  Var forward_features(const BoundModel& bound, Var batch) const;
  Var forward_head(const BoundModel& bound, const std::string& head_id, Var features) const;

  // Graph-free conveniences for evaluation.
  Tensor features(const Tensor& batch) const;
  Tensor logits(const std::string& head_id, const Tensor& features) const;

  void add_head(const std::string& head_id, std::size_t classes, std::uint64_t seed);
  void replace_head(const std::string& head_id, std::size_t classes, std::uint64_t seed);
  void remove_head(const std::string& head_id);
  void set_origin(const std::string& head_id, HeadOrigin origin);

  bool has_head(const std::string& head_id) const { return heads_.count(head_id) != 0; }
  const Head& head(const std::string& head_id) const;
  Head& head(const std::string& head_id);
  std::vector<std::string> head_ids() const;

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  // Backbone tensors in layer order (weight, bias, weight, bias, ...).
  std::vector<Tensor*> backbone_parameters();
  std::vector<Tensor*> head_parameters(const std::string& head_id);
  // Named blocks in checkpoint order.
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  std::size_t parameter_count() const;

 private:
  friend DualHeadModel load_checkpoint(const std::filesystem::path& path);

  DualHeadModel() = default;
  void check_batch(const Shape& batch_shape) const;

  BackboneConfig config_;
  std::size_t feature_dim_ = 0;
  std::vector<Layer> layers_;
  std::map<std::string, Head> heads_;
};

// Bitwise parameter comparison helpers used by tests and tools.
bool same_backbone(const DualHeadModel& a, const DualHeadModel& b);
bool same_head(const DualHeadModel& a, const DualHeadModel& b, const std::string& head_id);

// Checkpoint layout (all integers and doubles little-endian):
//   "SFTCKPT1" | u32 version = 1 | u32 block count
//   per block: u32 name length | name | u32 rank | u64 dims[rank] | f64 values
// Architecture and head provenance travel as "meta.*" blocks.
inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const DualHeadModel& model, const std::filesystem::path& path);
DualHeadModel load_checkpoint(const std::filesystem::path& path);
// Names and shapes of every block save_checkpoint writes, in file order.
std::vector<std::pair<std::string, Shape>> checkpoint_layout(const DualHeadModel& model);
// Expected file size for the given blocks.
std::uintmax_t checkpoint_size(std::span<const std::pair<std::string, Shape>> blocks);

}  // namespace sft
