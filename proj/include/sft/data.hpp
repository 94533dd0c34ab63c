#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "sft/tensor.hpp"

namespace sft {

enum class DataMode : std::uint8_t { shapes16 = 0, gauss = 1 };
enum class Domain : std::uint8_t { source = 0, target = 1, target2 = 2 };

inline constexpr std::size_t kPrototypeCount = 32;
inline constexpr std::size_t kImageSide = 16;

struct Range {
  double min = 0.0;
  double max = 0.0;

  bool contains(double v) const { return v >= min && v <= max; }
  bool contains(const Range& r) const { return r.min >= min && r.max <= max; }
  bool operator==(const Range&) const = default;
};

// Rotation in degrees, translation in pixels, scale unitless, noise in
// pixel-intensity units.
struct TransformParams {
  double rotation = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
  double noise_std = 0.0;

  bool operator==(const TransformParams&) const = default;
};

enum class TransformField { rotation, dx, dy, scale, noise_std };

struct TransformRanges {
  Range rotation{0.0, 0.0};
  Range dx{0.0, 0.0};
  Range dy{0.0, 0.0};
  Range scale{1.0, 1.0};
  Range noise_std{0.0, 0.0};

  Range& at(TransformField field);
  const Range& at(TransformField field) const;
  bool contains(const TransformParams& p) const;
  bool operator==(const TransformRanges&) const = default;
};

// Classes are prototypes first_class .. first_class + num_classes - 1, so
// disjoint class blocks give disjoint domains drawn from the same world.
struct DatasetSpec {
  DataMode mode = DataMode::shapes16;
  std::size_t num_classes = 2;
  std::size_t samples_per_class = 0;
  std::size_t first_class = 0;
  std::size_t vector_dim = 16;  // gauss mode only
  Domain domain = Domain::source;
  TransformRanges ranges;
  std::uint64_t seed = 0;

  Shape sample_shape() const;
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Sample {
  Tensor data;
  std::uint32_t label = 0;
  Domain domain = Domain::source;
  TransformParams params;
};

struct Dataset {
  DatasetSpec spec;
  // label_origin[new_label] is the label in the generated dataset this one
  // descends from; identity unless categories were subsampled.
  std::vector<std::uint32_t> label_origin;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::size_t num_classes() const noexcept { return label_origin.size(); }
  std::vector<std::size_t> class_counts() const;
};

// 16x16 binary masks built from strokes on a 3x3 anchor grid plus blobs.
const std::array<std::array<double, kImageSide * kImageSide>, kPrototypeCount>& prototypes();
// Deterministic mean vector for a gauss-mode class.
std::vector<double> gauss_class_mean(std::size_t class_id, std::size_t dim);

// Renders prototype `class_id` under `params` (noise excluded) by inverse
// mapping with bilinear interpolation.
std::vector<double> render_shape(std::size_t class_id, const TransformParams& params);

Dataset gen_dataset(const DatasetSpec& spec);
DatasetSpec restrict_bias(const DatasetSpec& spec, TransformField field, Range new_range);
Dataset subsample_categories(const Dataset& ds, double fraction, std::uint64_t seed);
Dataset subsample_images(const Dataset& ds, double fraction, std::uint64_t seed);

// ceil(fraction * n) with a tolerance for products like 0.7 * 10.
std::size_t ceil_fraction(double fraction, std::size_t n);

// Stacks the indexed samples into one batch tensor plus labels.
std::pair<Tensor, std::vector<std::size_t>> make_batch(const Dataset& ds, std::span<const std::size_t> indices);

using Batch = std::vector<std::size_t>;

// One seeded shuffle pass over `ds` in batches of `batch_size`, last partial
// batch dropped. Depends only on (seed, epoch).
std::vector<Batch> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t epoch);

struct DualBatch {
  Batch source;
  Batch target;
};

// Epochs follow the target dataset; each target batch is paired with as many
// source samples taken from a cycling sequence of seeded source shuffles.
class DualBatchIterator {
 public:
  DualBatchIterator(const Dataset& source, const Dataset& target, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }
  std::vector<DualBatch> epoch(std::size_t epoch_index) const;

 private:
  std::vector<std::size_t> source_cycle(std::size_t cycle) const;

  const Dataset* source_;
  const Dataset* target_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t batches_per_epoch_;
};

// Layout (little-endian):
//   "SFTDATA1" | spec block | u32 class count | u32 label_origin[count]
//   | u64 sample count | u32 values per sample
//   | per sample: u32 label | u8 domain | 5 x f64 params | f64 values
// spec block: u8 mode | u32 K | u32 per class | u32 first class | u32 dim
//   | u8 domain | 10 x f64 ranges (min, max per field) | u64 seed
inline constexpr char kDatasetMagic[8] = {'S', 'F', 'T', 'D', 'A', 'T', 'A', '1'};

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
std::uintmax_t dataset_file_size(std::size_t classes, std::size_t samples, std::size_t values_per_sample);

// Binary (P5) grey-map of a 16x16 image with values in [0, 1].
void write_pgm(std::span<const double> pixels, const std::filesystem::path& path);

}  // namespace sft
