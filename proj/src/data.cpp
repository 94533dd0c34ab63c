#include "sft/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "sft/errors.hpp"
#include "sft/rng.hpp"

namespace sft {

Range& TransformRanges::at(TransformField field) {
  switch (field) {
    case TransformField::rotation: return rotation;
    case TransformField::dx: return dx;
    case TransformField::dy: return dy;
    case TransformField::scale: return scale;
    case TransformField::noise_std: return noise_std;
  }
  throw ContractError("unknown transform field");
}

const Range& TransformRanges::at(TransformField field) const {
  return const_cast<TransformRanges*>(this)->at(field);
}

bool TransformRanges::contains(const TransformParams& p) const {
  return rotation.contains(p.rotation) && dx.contains(p.dx) && dy.contains(p.dy) && scale.contains(p.scale) &&
         noise_std.contains(p.noise_std);
}

Shape DatasetSpec::sample_shape() const {
  if (mode == DataMode::shapes16) return {1, kImageSide, kImageSide};
  return {vector_dim};
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("a dataset needs at least 2 classes");
  if (first_class + num_classes > kPrototypeCount) {
    throw ConfigError("classes " + std::to_string(first_class) + ".." + std::to_string(first_class + num_classes - 1) +
                      " exceed the " + std::to_string(kPrototypeCount) + " available prototypes");
  }
  if (mode == DataMode::gauss && vector_dim < 2) throw ConfigError("gauss mode needs vector_dim >= 2");
  for (const TransformField f : {TransformField::rotation, TransformField::dx, TransformField::dy, TransformField::scale,
                                 TransformField::noise_std}) {
    const Range& r = ranges.at(f);
    if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max)) {
      throw ConfigError("transform range has min > max or is not finite");
    }
  }
  if (ranges.scale.min <= 0.0) throw ConfigError("scale range must be positive");
  if (ranges.noise_std.min < 0.0) throw ConfigError("noise range must be non-negative");
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (const Sample& s : samples) ++counts.at(s.label);
  return counts;
}

// ---------------------------------------------------------------------------
// Prototypes

namespace {

using Image = std::array<double, kImageSide * kImageSide>;

struct Segment {
  double x0, y0, x1, y1;
};

constexpr double kAnchor[3] = {3.5, 7.5, 11.5};

// 12 grid edges plus 4 centre-to-corner diagonals.
std::vector<Segment> stroke_table() {
  std::vector<Segment> strokes;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) strokes.push_back({kAnchor[c], kAnchor[r], kAnchor[c + 1], kAnchor[r]});
  }
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 2; ++r) strokes.push_back({kAnchor[c], kAnchor[r], kAnchor[c], kAnchor[r + 1]});
  }
  for (const int cx : {0, 2}) {
    for (const int cy : {0, 2}) strokes.push_back({kAnchor[1], kAnchor[1], kAnchor[cx], kAnchor[cy]});
  }
  return strokes;
}

double segment_distance(double px, double py, const Segment& s) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double t = std::clamp(((px - s.x0) * vx + (py - s.y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double ex = s.x0 + t * vx - px, ey = s.y0 + t * vy - py;
  return std::sqrt(ex * ex + ey * ey);
}

std::array<Image, kPrototypeCount> build_prototypes() {
  const auto strokes = stroke_table();
  const std::uint32_t stroke_count = static_cast<std::uint32_t>(strokes.size());
  // Greedy pick of stroke sets with 3..6 strokes that differ pairwise in at
  // least 4 strokes, visiting masks in a fixed scrambled order.
  std::vector<std::uint32_t> chosen;
  const std::uint32_t total = 1u << stroke_count;
  for (std::uint32_t k = 0; k < total && chosen.size() < kPrototypeCount; ++k) {
    const std::uint32_t mask = (k * 40503u + 12345u) & (total - 1);
    const int bits = std::popcount(mask);
    if (bits < 3 || bits > 6) continue;
    const bool far = std::all_of(chosen.begin(), chosen.end(),
                                 [mask](std::uint32_t other) { return std::popcount(mask ^ other) >= 4; });
    if (far) chosen.push_back(mask);
  }
  if (chosen.size() != kPrototypeCount) throw ContractError("prototype construction failed");

  std::array<Image, kPrototypeCount> out{};
  for (std::size_t p = 0; p < kPrototypeCount; ++p) {
    Image& img = out[p];
    for (std::size_t y = 0; y < kImageSide; ++y) {
      for (std::size_t x = 0; x < kImageSide; ++x) {
        bool on = false;
        for (std::uint32_t s = 0; s < stroke_count && !on; ++s) {
          if ((chosen[p] >> s) & 1u) on = segment_distance(double(x), double(y), strokes[s]) <= 1.0;
        }
        img[y * kImageSide + x] = on ? 1.0 : 0.0;
      }
    }
    // blob marker on every fourth prototype: a filled 3x3 block at a corner
    if (p % 4 == 3) {
      const std::size_t bx = (p / 4) % 2 == 0 ? 1 : 12, by = (p / 8) % 2 == 0 ? 1 : 12;
      for (std::size_t y = by; y < by + 3; ++y) {
        for (std::size_t x = bx; x < bx + 3; ++x) img[y * kImageSide + x] = 1.0;
      }
    }
  }
  return out;
}

double bilinear(const Image& img, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  auto at = [&img](long xi, long yi) {
    if (xi < 0 || yi < 0 || xi >= long(kImageSide) || yi >= long(kImageSide)) return 0.0;
    return img[static_cast<std::size_t>(yi) * kImageSide + static_cast<std::size_t>(xi)];
  };
  return (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
         fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
}

}  // namespace

const std::array<std::array<double, kImageSide * kImageSide>, kPrototypeCount>& prototypes() {
  static const auto table = build_prototypes();
  return table;
}

std::vector<double> gauss_class_mean(std::size_t class_id, std::size_t dim) {
  Rng rng(derive_seed(derive_seed(0x5F7E11ULL, "gauss-mean"), class_id));
  std::vector<double> mean(dim);
  for (double& v : mean) v = 2.0 * rng.normal();
  return mean;
}

std::vector<double> render_shape(std::size_t class_id, const TransformParams& p) {
  const Image& proto = prototypes().at(class_id);
  const double theta = p.rotation * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double centre = (kImageSide - 1) / 2.0;
  std::vector<double> out(kImageSide * kImageSide);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double u = (double(x) - centre - p.dx) / p.scale;
      const double v = (double(y) - centre - p.dy) / p.scale;
      // inverse rotation
      const double sx = c * u + s * v + centre;
      const double sy = -s * u + c * v + centre;
      out[y * kImageSide + x] = bilinear(proto, sx, sy);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

TransformParams draw_params(const TransformRanges& r, Rng& rng) {
  TransformParams p;
  p.rotation = rng.uniform(r.rotation.min, r.rotation.max);
  p.dx = rng.uniform(r.dx.min, r.dx.max);
  p.dy = rng.uniform(r.dy.min, r.dy.max);
  p.scale = rng.uniform(r.scale.min, r.scale.max);
  p.noise_std = rng.uniform(r.noise_std.min, r.noise_std.max);
  return p;
}

Tensor render_sample(const DatasetSpec& spec, std::size_t class_id, const TransformParams& p, Rng& rng) {
  if (spec.mode == DataMode::shapes16) {
    std::vector<double> pixels = render_shape(class_id, p);
    for (double& v : pixels) {
      if (p.noise_std > 0.0) v += p.noise_std * rng.normal();
      v = std::clamp(v, 0.0, 1.0);
    }
    return Tensor({1, kImageSide, kImageSide}, std::move(pixels));
  }
  std::vector<double> x = gauss_class_mean(class_id, spec.vector_dim);
  const double theta = p.rotation * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double x0 = x[0], x1 = x[1];
  x[0] = c * x0 - s * x1;
  x[1] = s * x0 + c * x1;
  for (double& v : x) v *= p.scale;
  x[0] += p.dx;
  x[1] += p.dy;
  if (p.noise_std > 0.0) {
    for (double& v : x) v += p.noise_std * rng.normal();
  }
  return Tensor({spec.vector_dim}, std::move(x));
}

}  // namespace

Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  for (std::size_t k = 0; k < spec.num_classes; ++k) ds.label_origin.push_back(static_cast<std::uint32_t>(k));
  ds.samples.reserve(spec.num_classes * spec.samples_per_class);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const std::size_t class_id = spec.first_class + k;
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      // counter-based sub-seed: independent of generation order
      Rng rng(derive_seed(spec.seed, class_id, i));
      Sample sample;
      sample.params = draw_params(spec.ranges, rng);
      sample.data = render_sample(spec, class_id, sample.params, rng);
      sample.label = static_cast<std::uint32_t>(k);
      sample.domain = spec.domain;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

DatasetSpec restrict_bias(const DatasetSpec& spec, TransformField field, Range new_range) {
  const Range& current = spec.ranges.at(field);
  if (!(new_range.min <= new_range.max) || !current.contains(new_range)) {
    throw RangeError("restricted range [" + std::to_string(new_range.min) + ", " + std::to_string(new_range.max) +
                     "] is not inside [" + std::to_string(current.min) + ", " + std::to_string(current.max) + "]");
  }
  DatasetSpec out = spec;
  out.ranges.at(field) = new_range;
  return out;
}

std::size_t ceil_fraction(double fraction, std::size_t n) {
  const double product = fraction * static_cast<double>(n);
  return static_cast<std::size_t>(std::ceil(product - 1e-9 * std::max(1.0, product)));
}

Dataset subsample_categories(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("category fraction must lie in (0, 1]");
  const std::size_t classes = ds.num_classes();
  const std::size_t keep = ceil_fraction(fraction, classes);
  if (keep < 2) throw ConfigError("category subsampling would leave fewer than 2 classes");
  std::vector<std::size_t> order(classes);
  for (std::size_t i = 0; i < classes; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "subsample-categories"));
  shuffle(order, rng);
  std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(kept.begin(), kept.end());

  std::vector<long> remap(classes, -1);
  Dataset out;
  out.spec = ds.spec;
  out.spec.num_classes = keep;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    remap[kept[i]] = static_cast<long>(i);
    out.label_origin.push_back(ds.label_origin[kept[i]]);
  }
  for (const Sample& s : ds.samples) {
    if (remap[s.label] < 0) continue;
    Sample copy = s;
    copy.label = static_cast<std::uint32_t>(remap[s.label]);
    out.samples.push_back(std::move(copy));
  }
  return out;
}

Dataset subsample_images(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("image fraction must lie in (0, 1]");
  const std::size_t classes = ds.num_classes();
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) members[ds.samples[i].label].push_back(i);

  std::vector<std::size_t> selected;
  std::size_t per_class = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t keep = ceil_fraction(fraction, members[k].size());
    if (keep < 1) throw ConfigError("image subsampling would leave a class empty");
    // nested draws: a smaller fraction keeps a prefix of the same permutation
    std::vector<std::size_t> order(members[k].size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(seed, "subsample-images"), ds.label_origin[k]));
    shuffle(order, rng);
    for (std::size_t i = 0; i < keep; ++i) selected.push_back(members[k][order[i]]);
    per_class = keep;
  }
  std::sort(selected.begin(), selected.end());
  Dataset out;
  out.spec = ds.spec;
  out.spec.samples_per_class = per_class;
  out.label_origin = ds.label_origin;
  for (const std::size_t i : selected) out.samples.push_back(ds.samples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Batching

std::pair<Tensor, std::vector<std::size_t>> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape& sample_shape = ds.samples.at(indices[0]).data.shape;
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<double> values;
  values.reserve(numel(shape));
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (const std::size_t i : indices) {
    const Sample& s = ds.samples.at(i);
    values.insert(values.end(), s.data.values.begin(), s.data.values.end());
    labels.push_back(s.label);
  }
  return {Tensor(std::move(shape), std::move(values)), std::move(labels)};
}

std::vector<Batch> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
  if (ds.empty()) throw ConfigError("cannot iterate an empty dataset");
  if (batch_size == 0 || batch_size > ds.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " invalid for dataset of " +
                      std::to_string(ds.size()));
  }
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed, "epoch"), epoch));
  shuffle(order, rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

DualBatchIterator::DualBatchIterator(const Dataset& source, const Dataset& target, std::size_t batch_size,
                                     std::uint64_t seed)
    : source_(&source), target_(&target), batch_size_(batch_size), seed_(seed) {
  if (source.empty() || target.empty()) throw ConfigError("dual batching needs non-empty source and target");
  if (batch_size == 0 || batch_size > target.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " invalid for target of " +
                      std::to_string(target.size()));
  }
  batches_per_epoch_ = target.size() / batch_size;
}

std::vector<std::size_t> DualBatchIterator::source_cycle(std::size_t cycle) const {
  std::vector<std::size_t> order(source_->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed_, "source-cycle"), cycle));
  shuffle(order, rng);
  return order;
}

std::vector<DualBatch> DualBatchIterator::epoch(std::size_t epoch_index) const {
  const std::vector<Batch> target_batches = epoch_batches(*target_, batch_size_, seed_, epoch_index);
  const std::size_t n_src = source_->size();
  std::size_t position = epoch_index * batches_per_epoch_ * batch_size_;
  std::size_t cycle = position / n_src;
  std::vector<std::size_t> order = source_cycle(cycle);

  std::vector<DualBatch> out;
  out.reserve(target_batches.size());
  for (const Batch& tb : target_batches) {
    DualBatch db;
    db.target = tb;
    db.source.reserve(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i, ++position) {
      if (position / n_src != cycle) {
        cycle = position / n_src;
        order = source_cycle(cycle);
      }
      db.source.push_back(order[position % n_src]);
    }
    out.push_back(std::move(db));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::uintmax_t dataset_file_size(std::size_t classes, std::size_t samples, std::size_t values_per_sample) {
  const std::uintmax_t spec_block = 1 + 4 + 4 + 4 + 4 + 1 + 10 * 8 + 8;
  return sizeof(kDatasetMagic) + spec_block + 4 + 4 * classes + 8 + 4 +
         samples * (4 + 1 + 5 * 8 + 8 * values_per_sample);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const DatasetSpec& s = ds.spec;
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  detail::put_u8(out, static_cast<std::uint8_t>(s.mode));
  detail::put_u32(out, static_cast<std::uint32_t>(s.num_classes));
  detail::put_u32(out, static_cast<std::uint32_t>(s.samples_per_class));
  detail::put_u32(out, static_cast<std::uint32_t>(s.first_class));
  detail::put_u32(out, static_cast<std::uint32_t>(s.vector_dim));
  detail::put_u8(out, static_cast<std::uint8_t>(s.domain));
  for (const TransformField f : {TransformField::rotation, TransformField::dx, TransformField::dy, TransformField::scale,
                                 TransformField::noise_std}) {
    detail::put_f64(out, s.ranges.at(f).min);
    detail::put_f64(out, s.ranges.at(f).max);
  }
  detail::put_u64(out, s.seed);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.label_origin.size()));
  for (const std::uint32_t o : ds.label_origin) detail::put_u32(out, o);
  detail::put_u64(out, ds.samples.size());
  const std::size_t per_sample = numel(s.sample_shape());
  detail::put_u32(out, static_cast<std::uint32_t>(per_sample));
  for (const Sample& sample : ds.samples) {
    if (sample.data.size() != per_sample) throw ContractError("sample size does not match dataset spec");
    detail::put_u32(out, sample.label);
    detail::put_u8(out, static_cast<std::uint8_t>(sample.domain));
    const TransformParams& p = sample.params;
    for (const double v : {p.rotation, p.dx, p.dy, p.scale, p.noise_std}) detail::put_f64(out, v);
    for (const double v : sample.data.values) detail::put_f64(out, v);
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[sizeof(kDatasetMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(magic))) throw IoError("truncated dataset header");
  if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) throw FormatError("not a dataset file (bad magic)");
  Dataset ds;
  DatasetSpec& s = ds.spec;
  const std::uint8_t mode = detail::get_u8(in, "mode");
  if (mode > 1) throw FormatError("unknown dataset mode " + std::to_string(mode));
  s.mode = static_cast<DataMode>(mode);
  s.num_classes = detail::get_u32(in, "class count");
  s.samples_per_class = detail::get_u32(in, "samples per class");
  s.first_class = detail::get_u32(in, "first class");
  s.vector_dim = detail::get_u32(in, "vector dim");
  const std::uint8_t domain = detail::get_u8(in, "domain");
  if (domain > 2) throw FormatError("unknown domain tag " + std::to_string(domain));
  s.domain = static_cast<Domain>(domain);
  for (const TransformField f : {TransformField::rotation, TransformField::dx, TransformField::dy, TransformField::scale,
                                 TransformField::noise_std}) {
    s.ranges.at(f).min = detail::get_f64(in, "range");
    s.ranges.at(f).max = detail::get_f64(in, "range");
  }
  s.seed = detail::get_u64(in, "seed");
  const std::uint32_t classes = detail::get_u32(in, "label map size");
  if (classes > kPrototypeCount) throw FormatError("label map too large");
  for (std::uint32_t i = 0; i < classes; ++i) ds.label_origin.push_back(detail::get_u32(in, "label map"));
  const std::uint64_t count = detail::get_u64(in, "sample count");
  const std::uint32_t per_sample = detail::get_u32(in, "values per sample");
  const Shape shape = s.sample_shape();
  if (per_sample != numel(shape)) throw FormatError("values per sample does not match the dataset mode");
  if (count > (std::uint64_t{1} << 32)) throw FormatError("implausible sample count");
  ds.samples.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample sample;
    sample.label = detail::get_u32(in, "label");
    if (sample.label >= classes) throw FormatError("sample label out of range");
    const std::uint8_t tag = detail::get_u8(in, "domain tag");
    if (tag > 2) throw FormatError("unknown domain tag " + std::to_string(tag));
    sample.domain = static_cast<Domain>(tag);
    TransformParams& p = sample.params;
    p.rotation = detail::get_f64(in, "params");
    p.dx = detail::get_f64(in, "params");
    p.dy = detail::get_f64(in, "params");
    p.scale = detail::get_f64(in, "params");
    p.noise_std = detail::get_f64(in, "params");
    std::vector<double> values(per_sample);
    for (double& v : values) v = detail::get_f64(in, "sample values");
    sample.data = Tensor(shape, std::move(values));
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

void write_pgm(std::span<const double> pixels, const std::filesystem::path& path) {
  if (pixels.size() != kImageSide * kImageSide) throw DimensionError("write_pgm expects a 16x16 image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << kImageSide << " " << kImageSide << "\n255\n";
  for (const double v : pixels) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace sft
