#include "sft/runner.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "gtest/gtest.h"
#include "sft/errors.hpp"

namespace sft {
namespace {

namespace fs = std::filesystem;

const char* kSmallConfig = R"(experiment = small
seeds = 3
source.mode = gauss
source.classes = 4
source.per_class = 20
source.dim = 8
source.noise = 0.5, 1
target.mode = gauss
target.classes = 3
target.first_class = 10
target.per_class = 6
target.dim = 8
target.noise = 0.5, 1
test.per_class = 6
test.noise = 0.5, 1
model.layers = linear:12, linear:8
pretrain.epochs = 2
pretrain.batch = 8
train.epochs = 3
train.batch = 4
arms = finetune
)";

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sft_runner_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(ConfigTest, MinimalConfigGetsDefaults) {
  const ExperimentConfig c = parse_config_text("experiment = x\narms = soft\n");
  EXPECT_EQ(c.experiment, "x");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0}));
  ASSERT_EQ(c.arms.size(), 1u);
  EXPECT_EQ(c.arms[0].kind, ArmKind::soft);
  EXPECT_EQ(c.source.num_classes, 20u);
  EXPECT_EQ(c.target.first_class, 20u);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.schedule, Schedule::over(20));
}

TEST(ConfigTest, ErrorsCarryTheLine) {
  try {
    parse_config_text("experiment = x\n# comment\ntrain.lrr = 0.1\narms = soft\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("train.lrr"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("experiment = x\narms = soft\narms = finetune\n"), ParseError);
  EXPECT_THROW(parse_config_text("experiment = x\n"), ParseError);
  EXPECT_THROW(parse_config_text("experiment = x\narms = soft\ntrain.lr = abc\n"), ParseError);
  EXPECT_THROW(parse_config_text("experiment = x\narms = soft\narm.other.E = 3\n"), ParseError);
  EXPECT_THROW(parse_config_text("experiment = x\narms = soft\ntarget.bias_field = rotation\n"), ParseError);
}

TEST(ConfigTest, InfiniteHorizonAndArmOverrides) {
  const ExperimentConfig c = parse_config_text(
      "experiment = x\narms = soft, slow, intermediate\ntrain.E = inf\narm.slow.mode = soft\narm.slow.E = 40\n"
      "arm.slow.source_subsample = categories\narm.slow.source_fraction = 0.25\n");
  EXPECT_EQ(c.schedule, Schedule::infinite());
  EXPECT_EQ(c.arms[0].schedule, Schedule::infinite());
  EXPECT_EQ(c.arms[1].schedule, Schedule::over(40));
  EXPECT_EQ(c.arms[1].source_subsample, SourceSubsample::categories);
  EXPECT_EQ(c.arms[1].source_fraction, 0.25);
  EXPECT_EQ(c.arms[2].kind, ArmKind::intermediate);
}

TEST(ConfigTest, EmitParseRoundTrip) {
  ExperimentConfig c = parse_config_text(kSmallConfig);
  c.train.lr = 0.1 + 0.2;  // not representable in short decimal
  c.target_bias = TargetBias{TransformField::rotation, {-10, 10}};
  c.target.ranges.rotation = {-30, 30};
  c.eval.lead = std::make_pair(std::string("finetune"), std::string("finetune"));
  const ExperimentConfig back = parse_config_text(emit_config(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(emit_config(back), emit_config(c));
  const fs::path recipes = SFT_RECIPE_DIR;
  for (const auto& entry : fs::directory_iterator(recipes)) {
    const ExperimentConfig r = parse_config(entry.path());
    EXPECT_EQ(parse_config_text(emit_config(r)), r) << entry.path();
  }
}

TEST(RunnerTest, SmallRunProducesRowsAndMetrics) {
  const ExperimentConfig c = parse_config_text(kSmallConfig);
  const RunReport report = run_experiment(c);
  ASSERT_EQ(report.runs.size(), 1u);
  EXPECT_FALSE(report.any_failed());
  const RunResult* run = report.find("finetune", 3);
  ASSERT_NE(run, nullptr);
  EXPECT_EQ(run->record.rows.size(), 3u);
  ASSERT_TRUE(run->metrics.top1.has_value());
  EXPECT_GE(*run->metrics.top1, 0.0);
  EXPECT_LE(*run->metrics.top1, 1.0);
  EXPECT_EQ(report.median_of("finetune", "test_acc"), run->metrics.top1);
  EXPECT_FALSE(report.config_hash.empty());
}

TEST(RunnerTest, RepeatedRunsEmitIdenticalBytes) {
  ExperimentConfig c = parse_config_text(kSmallConfig);
  c.arms.push_back(ArmConfig{"soft", ArmKind::soft});
  c.seeds = {1, 2};
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  const auto pa = emit_csv(run_experiment(c), a);
  const auto pb = emit_csv(run_experiment(c), b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].filename(), pb[i].filename());
    EXPECT_EQ(slurp(pa[i]), slurp(pb[i])) << pa[i];
  }
}

TEST(RunnerTest, SummaryMediansMatchRows) {
  ExperimentConfig c = parse_config_text(kSmallConfig);
  c.seeds = {0, 1, 2};
  const RunReport report = run_experiment(c);
  std::map<std::pair<std::string, double>, std::vector<double>> grouped;
  for (const RunResult& run : report.runs) {
    for (const MetricRow& row : metric_rows(run)) {
      if (std::isfinite(row.value)) grouped[{row.metric, row.level}].push_back(row.value);
    }
  }
  ASSERT_FALSE(report.summary.empty());
  for (const SummaryRow& s : report.summary) {
    const auto& values = grouped.at({s.metric, s.level});
    EXPECT_EQ(s.count, values.size());
    EXPECT_EQ(s.median, median(values)) << s.metric;
  }
}

TEST(CsvTest, EmptyReportGivesHeadersOnly) {
  RunReport report;
  report.experiment = "empty";
  std::ostringstream e, m, s;
  write_epochs_csv(report, e);
  write_metrics_csv(report, m);
  write_summary_csv(report, s);
  EXPECT_EQ(e.str(), "experiment,arm,seed,epoch,alpha,loss_src,loss_tar,train_acc,test_acc\n");
  EXPECT_EQ(m.str(), "experiment,arm,seed,metric,level,value\n");
  EXPECT_EQ(s.str(), "experiment,arm,metric,level,median,count\n");
}

TEST(CsvTest, OneRowRoundTrips) {
  RunReport report;
  report.experiment = "one";
  RunResult run;
  run.arm = "soft";
  run.seed = 4;
  EpochRow row;
  row.epoch = 0;
  row.alpha = 0.0;
  row.loss_src = 1.0 / 3.0;
  row.loss_tar = std::numeric_limits<double>::quiet_NaN();
  row.train_acc = 0.5;
  row.test_acc = 0.25;
  run.record.rows.push_back(row);
  report.runs.push_back(run);
  std::ostringstream out;
  write_epochs_csv(report, out);
  const CsvTable t = parse_csv(out.str());
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[1][1], "soft");
  EXPECT_EQ(t[1][2], "4");
  EXPECT_NEAR(std::stod(t[1][5]), 1.0 / 3.0, 1e-9);
  EXPECT_EQ(t[1][6], "nan");
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(CsvTest, MedianCurvesAcrossSeeds) {
  const CsvTable t = parse_csv(
      "experiment,arm,seed,epoch,alpha,loss_src,loss_tar,train_acc,test_acc\n"
      "x,soft,0,0,0,1,1,0.1,0.2\nx,soft,1,0,0,1,1,0.1,0.4\nx,soft,2,0,0,1,1,0.1,0.9\n"
      "x,soft,0,1,0,1,1,0.1,0.5\nx,fine,0,0,0,1,1,0.1,0.3\n");
  const auto curves = median_curves(t, "test_acc");
  ASSERT_EQ(curves.size(), 2u);
  EXPECT_EQ(curves[0].name, "soft");
  ASSERT_EQ(curves[0].curve.size(), 2u);
  EXPECT_DOUBLE_EQ(curves[0].curve[0].value, 0.4);
  EXPECT_DOUBLE_EQ(curves[0].curve[1].value, 0.5);
  EXPECT_EQ(curves[1].name, "fine");
  EXPECT_THROW(median_curves(t, "nope"), FormatError);
}

std::vector<std::pair<double, double>> polyline_points(const std::string& svg, const std::string& name) {
  const std::regex re("data-name=\"" + name + "\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  if (!std::regex_search(svg, m, re)) return {};
  std::vector<std::pair<double, double>> out;
  std::istringstream in(m[1].str());
  std::string pair;
  while (in >> pair) {
    const auto comma = pair.find(',');
    out.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
  }
  return out;
}

TEST(SvgTest, TwoPointCurveMapsToPlotCorners) {
  const SvgLayout layout;
  std::vector<std::string> warnings;
  const std::string svg =
      svg_lineplot({{"only", {{0, 0.2}, {10, 0.8}}}}, "epoch", "accuracy", layout, warnings);
  EXPECT_TRUE(warnings.empty());
  const auto pts = polyline_points(svg, "only");
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_NEAR(pts[0].first, layout.left, 0.5);
  EXPECT_NEAR(pts[0].second, layout.bottom, 0.5);
  EXPECT_NEAR(pts[1].first, layout.right, 0.5);
  EXPECT_NEAR(pts[1].second, layout.top, 0.5);
  std::ptrdiff_t n = 0;
  for (auto it = svg.find("<polyline"); it != std::string::npos; it = svg.find("<polyline", it + 1)) ++n;
  EXPECT_EQ(n, 1);
}

TEST(SvgTest, LegendOrderAndSkippedCurves) {
  std::vector<std::string> warnings;
  const std::string svg = svg_lineplot({{"b", {{0, 1}, {1, 2}}}, {"empty", {}}, {"a", {{0, 0}, {2, 1}}}}, "x", "y",
                                       SvgLayout{}, warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_LT(svg.find(">b</text>"), svg.find(">a</text>"));
  EXPECT_EQ(svg.find(">empty</text>"), std::string::npos);
  // affine map: interior point lands proportionally
  const auto a = polyline_points(svg, "a");
  const SvgLayout l;
  ASSERT_EQ(a.size(), 2u);
  EXPECT_NEAR(a[0].first, l.left, 0.5);
  EXPECT_NEAR(a[1].second, l.top + (l.bottom - l.top) * 0.5, 0.5);
  std::vector<std::string> w2;
  EXPECT_THROW(svg_lineplot({{"e", {}}}, "x", "y", SvgLayout{}, w2), ContractError);
  EXPECT_THROW(svg_lineplot({}, "x", "y", SvgLayout{}, w2), ContractError);
}

TEST(SvgTest, WritesFile) {
  const fs::path dir = temp_dir("svg");
  const auto warnings = emit_svg_lineplot({{"c", {{0, 0.5}}}}, dir / "p.svg", "epoch", "acc");
  EXPECT_TRUE(warnings.empty());
  const std::string text = slurp(dir / "p.svg");
  EXPECT_EQ(text.rfind("<svg", 0), 0u);
  EXPECT_NE(text.find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace sft
