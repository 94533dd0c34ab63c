#include "sft/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gtest/gtest.h"
#include "sft/errors.hpp"

namespace sft {
namespace {

DatasetSpec shapes_spec(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1) {
  DatasetSpec s;
  s.num_classes = classes;
  s.samples_per_class = per_class;
  s.seed = seed;
  s.ranges.rotation = {-40, 40};
  s.ranges.dx = {-1.5, 1.5};
  s.ranges.dy = {-1.5, 1.5};
  s.ranges.scale = {0.9, 1.1};
  s.ranges.noise_std = {0.0, 0.1};
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sft_data_test_" + name);
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(DataTest, PrototypesAreBinaryAndPairwiseDistinct) {
  const auto& protos = prototypes();
  for (std::size_t a = 0; a < kPrototypeCount; ++a) {
    const auto lit = std::count(protos[a].begin(), protos[a].end(), 1.0);
    EXPECT_EQ(lit + std::count(protos[a].begin(), protos[a].end(), 0.0), long(kImageSide * kImageSide));
    EXPECT_GT(lit, 20) << "prototype " << a;
    for (std::size_t b = a + 1; b < kPrototypeCount; ++b) {
      std::size_t differing = 0;
      for (std::size_t i = 0; i < protos[a].size(); ++i) differing += protos[a][i] != protos[b][i];
      // At least one 2px stroke separates any two prototypes.
      EXPECT_GE(differing, 8u) << a << " vs " << b;
    }
  }
}

TEST(DataTest, IdentityTransformReproducesPrototype) {
  for (std::size_t k = 0; k < kPrototypeCount; ++k) {
    const auto img = render_shape(k, TransformParams{});
    EXPECT_TRUE(std::equal(img.begin(), img.end(), prototypes()[k].begin())) << k;
  }
}

TEST(DataTest, FullTurnIsNearIdentityAndQuarterTurnPermutesPixels) {
  TransformParams full;
  full.rotation = 360.0;
  const auto img = render_shape(5, full);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(img[i], prototypes()[5][i], 1e-9);
  // A quarter turn about the image centre maps pixel (x, y) to (15 - y, x).
  TransformParams quarter;
  quarter.rotation = 90.0;
  const auto rot = render_shape(5, quarter);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      EXPECT_NEAR(rot[x * kImageSide + (kImageSide - 1 - y)], prototypes()[5][y * kImageSide + x], 1e-9);
    }
  }
}

TEST(DataTest, GeneratedDatasetLayout) {
  const Dataset ds = gen_dataset(shapes_spec(4, 6));
  ASSERT_EQ(ds.size(), 24u);
  EXPECT_EQ(ds.num_classes(), 4u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    EXPECT_EQ(s.label, i / 6);
    EXPECT_EQ(s.data.shape, (Shape{1, 16, 16}));
    EXPECT_EQ(s.domain, Domain::source);
    for (const double v : s.data.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{6, 6, 6, 6}));
}

TEST(DataTest, GenerationIsDeterministicAndSeedSensitive) {
  const Dataset a = gen_dataset(shapes_spec(3, 5, 9));
  const Dataset b = gen_dataset(shapes_spec(3, 5, 9));
  const Dataset c = gen_dataset(shapes_spec(3, 5, 10));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].data.values, b.samples[i].data.values);
    EXPECT_EQ(a.samples[i].params, b.samples[i].params);
  }
  EXPECT_NE(a.samples[0].params, c.samples[0].params);
}

TEST(DataTest, SampleDependsOnlyOnItsClassAndIndex) {
  // Growing the per-class count keeps every existing sample unchanged.
  const Dataset small = gen_dataset(shapes_spec(2, 3));
  const Dataset large = gen_dataset(shapes_spec(2, 5));
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(small.samples[k * 3 + i].data.values, large.samples[k * 5 + i].data.values);
    }
  }
}

TEST(DataTest, ParametersCoverTheirRanges) {
  const DatasetSpec spec = shapes_spec(2, 500);
  const Dataset ds = gen_dataset(spec);
  for (const TransformField f :
       {TransformField::rotation, TransformField::dx, TransformField::dy, TransformField::scale, TransformField::noise_std}) {
    const Range r = spec.ranges.at(f);
    double lo = INFINITY, hi = -INFINITY;
    for (const Sample& s : ds.samples) {
      ASSERT_TRUE(spec.ranges.contains(s.params));
      TransformRanges probe;
      const double v = f == TransformField::rotation ? s.params.rotation
                       : f == TransformField::dx     ? s.params.dx
                       : f == TransformField::dy     ? s.params.dy
                       : f == TransformField::scale  ? s.params.scale
                                                     : s.params.noise_std;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double width = r.max - r.min;
    EXPECT_LT(lo - r.min, 0.02 * width);
    EXPECT_LT(r.max - hi, 0.02 * width);
  }
}

TEST(DataTest, RestrictBias) {
  const DatasetSpec spec = shapes_spec(2, 200);
  const DatasetSpec narrow = restrict_bias(spec, TransformField::rotation, {-10, 10});
  EXPECT_EQ(narrow.ranges.rotation, (Range{-10, 10}));
  EXPECT_EQ(narrow.ranges.dx, spec.ranges.dx);
  for (const Sample& s : gen_dataset(narrow).samples) {
    EXPECT_GE(s.params.rotation, -10.0);
    EXPECT_LE(s.params.rotation, 10.0);
  }
  EXPECT_THROW(restrict_bias(spec, TransformField::rotation, {-50, 10}), RangeError);
  EXPECT_THROW(restrict_bias(spec, TransformField::rotation, {5, -5}), RangeError);
}

TEST(DataTest, ValidateRejectsBadSpecs) {
  DatasetSpec s = shapes_spec(1, 5);
  EXPECT_THROW(s.validate(), ConfigError);
  s = shapes_spec(4, 5);
  s.first_class = 30;
  EXPECT_THROW(s.validate(), ConfigError);
  s = shapes_spec(4, 5);
  s.ranges.scale = {0.0, 1.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = shapes_spec(4, 5);
  s.ranges.noise_std = {-0.1, 0.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = shapes_spec(4, 5);
  s.ranges.dx = {1.0, -1.0};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(DataTest, GaussModeRotatesTheFirstTwoCoordinates) {
  DatasetSpec spec;
  spec.mode = DataMode::gauss;
  spec.num_classes = 3;
  spec.samples_per_class = 2;
  spec.vector_dim = 6;
  spec.ranges.rotation = {90, 90};
  const Dataset ds = gen_dataset(spec);
  EXPECT_EQ(ds.samples[0].data.shape, (Shape{6}));
  const auto mean = gauss_class_mean(1, 6);
  const auto& x = ds.samples[2].data.values;
  EXPECT_NEAR(x[0], -mean[1], 1e-12);
  EXPECT_NEAR(x[1], mean[0], 1e-12);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(x[i], mean[i]);
}

TEST(DataTest, CeilFractionToleratesRounding) {
  EXPECT_EQ(ceil_fraction(0.7, 10), 7u);
  EXPECT_EQ(ceil_fraction(0.1, 30), 3u);
  EXPECT_EQ(ceil_fraction(0.25, 10), 3u);
  EXPECT_EQ(ceil_fraction(1.0, 7), 7u);
}

TEST(DataTest, SubsampleCategoriesKeepsWholeClasses) {
  const Dataset ds = gen_dataset(shapes_spec(10, 4));
  const Dataset sub = subsample_categories(ds, 0.3, 5);
  ASSERT_EQ(sub.num_classes(), 3u);
  EXPECT_EQ(sub.spec.num_classes, 3u);
  EXPECT_TRUE(std::is_sorted(sub.label_origin.begin(), sub.label_origin.end()));
  EXPECT_EQ(sub.size(), 12u);
  for (const Sample& s : sub.samples) {
    ASSERT_LT(s.label, 3u);
    // Same pixels as the original sample of the origin class.
    const std::uint32_t origin = sub.label_origin[s.label];
    const bool found = std::any_of(ds.samples.begin(), ds.samples.end(), [&](const Sample& o) {
      return o.label == origin && o.data.values == s.data.values;
    });
    EXPECT_TRUE(found);
  }
  EXPECT_THROW(subsample_categories(ds, 0.1, 5), ConfigError);
  EXPECT_THROW(subsample_categories(ds, 0.0, 5), ConfigError);
}

TEST(DataTest, SubsampleImagesIsPerClassAndNested) {
  const Dataset ds = gen_dataset(shapes_spec(4, 20));
  const Dataset half = subsample_images(ds, 0.5, 3);
  const Dataset quarter = subsample_images(ds, 0.25, 3);
  EXPECT_EQ(half.class_counts(), (std::vector<std::size_t>{10, 10, 10, 10}));
  EXPECT_EQ(quarter.class_counts(), (std::vector<std::size_t>{5, 5, 5, 5}));
  EXPECT_EQ(half.label_origin, ds.label_origin);
  for (const Sample& q : quarter.samples) {
    const bool in_half = std::any_of(half.samples.begin(), half.samples.end(),
                                     [&](const Sample& h) { return h.data.values == q.data.values; });
    EXPECT_TRUE(in_half);
  }
}

TEST(DataTest, EpochBatchesPartitionAndDropTheTail) {
  const Dataset ds = gen_dataset(shapes_spec(3, 7));
  const auto batches = epoch_batches(ds, 4, 11, 0);
  ASSERT_EQ(batches.size(), 5u);
  std::set<std::size_t> seen;
  for (const Batch& b : batches) {
    EXPECT_EQ(b.size(), 4u);
    seen.insert(b.begin(), b.end());
  }
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(epoch_batches(ds, 4, 11, 0), batches);
  EXPECT_NE(epoch_batches(ds, 4, 11, 1), batches);
  EXPECT_THROW(epoch_batches(ds, 0, 11, 0), ConfigError);
  EXPECT_THROW(epoch_batches(ds, 22, 11, 0), ConfigError);
}

TEST(DataTest, DualIteratorPairsTargetOrderWithCyclingSource) {
  const Dataset src = gen_dataset(shapes_spec(2, 7));
  DatasetSpec ts = shapes_spec(2, 5);
  ts.first_class = 10;
  const Dataset tar = gen_dataset(ts);
  const DualBatchIterator it(src, tar, 3, 21);
  EXPECT_EQ(it.batches_per_epoch(), 3u);
  std::vector<std::size_t> source_stream;
  for (std::size_t e = 0; e < 4; ++e) {
    const auto batches = it.epoch(e);
    const auto target = epoch_batches(tar, 3, 21, e);
    ASSERT_EQ(batches.size(), target.size());
    for (std::size_t i = 0; i < batches.size(); ++i) {
      EXPECT_EQ(batches[i].target, target[i]);
      source_stream.insert(source_stream.end(), batches[i].source.begin(), batches[i].source.end());
    }
    EXPECT_EQ(it.epoch(e).front().source, batches.front().source);
  }
  // 36 draws over a 14-sample source: each full cycle is a permutation.
  for (std::size_t c = 0; c + 14 <= source_stream.size(); c += 14) {
    std::set<std::size_t> cycle(source_stream.begin() + long(c), source_stream.begin() + long(c + 14));
    EXPECT_EQ(cycle.size(), 14u);
  }
}

TEST(DataTest, DatasetFileRoundTripIsBitExact) {
  DatasetSpec spec = shapes_spec(3, 4);
  spec.domain = Domain::target;
  spec.first_class = 7;
  const Dataset ds = subsample_categories(gen_dataset(spec), 0.7, 2);
  const auto path = temp_path("rt.sftdata");
  write_dataset(ds, path);
  EXPECT_EQ(std::filesystem::file_size(path), dataset_file_size(ds.num_classes(), ds.size(), 256));
  // magic, spec (mode, 4 x u32, domain, 5 ranges, seed), label origins, counts, samples
  const std::uintmax_t spec_bytes = 1 + 4 * 4 + 1 + 10 * 8 + 8;
  EXPECT_EQ(dataset_file_size(3, 12, 256), 8u + spec_bytes + 4u + 12u + 8u + 4u + 12u * (4u + 1u + 40u + 2048u));
  const Dataset back = read_dataset(path);
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.label_origin, ds.label_origin);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    EXPECT_EQ(back.samples[i].domain, ds.samples[i].domain);
    EXPECT_EQ(back.samples[i].params, ds.samples[i].params);
    EXPECT_EQ(back.samples[i].data.shape, ds.samples[i].data.shape);
    EXPECT_EQ(back.samples[i].data.values, ds.samples[i].data.values);
  }
  const auto path2 = temp_path("rt2.sftdata");
  write_dataset(back, path2);
  EXPECT_EQ(file_bytes(path), file_bytes(path2));
}

TEST(DataTest, DatasetFileRejectsCorruption) {
  const Dataset ds = gen_dataset(shapes_spec(2, 2));
  const auto path = temp_path("bad.sftdata");
  write_dataset(ds, path);
  auto bytes = file_bytes(path);
  bytes[3] = '?';
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), long(bytes.size()));
  }
  EXPECT_THROW(read_dataset(path), FormatError);
  bytes[3] = 'D';
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), long(bytes.size() - 9));
  }
  EXPECT_THROW(read_dataset(path), IoError);
}

TEST(DataTest, PgmHeaderAndPayload) {
  const auto path = temp_path("img.pgm");
  write_pgm(prototypes()[0], path);
  const auto bytes = file_bytes(path);
  const std::string header = "P5\n16 16\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 256);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + long(header.size())), header);
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + i]), prototypes()[0][i] == 1.0 ? 255 : 0);
  }
}

}  // namespace
}  // namespace sft
