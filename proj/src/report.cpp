#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "sft/errors.hpp"
#include "sft/runner.hpp"

namespace sft {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_epochs_csv(const RunReport& report, std::ostream& out) {
  out << "experiment,arm,seed,epoch,alpha,loss_src,loss_tar,train_acc,test_acc\n";
  for (const RunResult& run : report.runs) {
    for (const EpochRow& row : run.record.rows) {
      out << report.experiment << ',' << run.arm << ',' << run.seed << ',' << row.epoch << ',' << format_number(row.alpha)
          << ',' << format_number(row.loss_src) << ',' << format_number(row.loss_tar) << ','
          << format_number(row.train_acc) << ',' << format_number(row.test_acc) << '\n';
    }
  }
}

void write_metrics_csv(const RunReport& report, std::ostream& out) {
  out << "experiment,arm,seed,metric,level,value\n";
  for (const RunResult& run : report.runs) {
    for (const MetricRow& row : metric_rows(run)) {
      out << report.experiment << ',' << run.arm << ',' << run.seed << ',' << row.metric << ','
          << format_number(row.level) << ',' << format_number(row.value) << '\n';
    }
  }
}

void write_summary_csv(const RunReport& report, std::ostream& out) {
  out << "experiment,arm,metric,level,median,count\n";
  for (const SummaryRow& row : report.summary) {
    out << report.experiment << ',' << row.arm << ',' << row.metric << ',' << format_number(row.level) << ','
        << format_number(row.median) << ',' << row.count << '\n';
  }
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> emit_csv(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> paths;
  auto emit = [&](const std::string& name, auto writer) {
    std::ostringstream text;
    writer(report, text);
    paths.push_back(dir / name);
    write_file(paths.back(), text.str());
  };
  emit(report.experiment + "_epochs.csv", write_epochs_csv);
  emit(report.experiment + "_metrics.csv", write_metrics_csv);
  emit(report.experiment + "_summary.csv", write_summary_csv);
  std::ostringstream prov;
  prov << "experiment: " << report.experiment << "\n";
  prov << "version: " << report.version << "\n";
  prov << "config_hash: " << report.config_hash << "\n";
  prov << "runs: " << report.runs.size() << "\n";
  for (const std::string& w : report.warnings) prov << "warning: " << w << "\n";
  paths.push_back(dir / "provenance.txt");
  write_file(paths.back(), prov.str());
  return paths;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    table.push_back(std::move(cells));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_csv(text.str());
}

std::vector<NamedCurve> median_curves(const CsvTable& csv, const std::string& column) {
  if (csv.empty()) throw FormatError("empty CSV");
  const auto& header = csv.front();
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t arm_col = col("arm"), epoch_col = col("epoch"), value_col = col(column);
  std::vector<std::string> order;
  std::map<std::string, std::map<std::size_t, std::vector<double>>> values;
  for (std::size_t r = 1; r < csv.size(); ++r) {
    const auto& row = csv[r];
    if (row.size() != header.size()) throw FormatError("CSV row " + std::to_string(r + 1) + " has the wrong width");
    if (!values.count(row[arm_col])) order.push_back(row[arm_col]);
    const double v = std::strtod(row[value_col].c_str(), nullptr);
    auto& bucket = values[row[arm_col]][std::stoul(row[epoch_col])];
    if (std::isfinite(v)) bucket.push_back(v);
  }
  std::vector<NamedCurve> curves;
  for (const std::string& arm : order) {
    NamedCurve c{arm, {}};
    for (const auto& [epoch, vs] : values[arm]) {
      if (!vs.empty()) c.curve.push_back({epoch, median(vs)});
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string svg_lineplot(const std::vector<NamedCurve>& curves, const std::string& x_label,
                         const std::string& y_label, const SvgLayout& layout, std::vector<std::string>& warnings) {
  if (curves.empty()) throw ContractError("line plot needs at least one curve");
  std::vector<const NamedCurve*> drawn;
  for (const NamedCurve& c : curves) {
    const bool finite = std::all_of(c.curve.begin(), c.curve.end(), [](const CurvePoint& p) { return std::isfinite(p.value); });
    if (c.curve.empty()) {
      warnings.push_back("curve '" + c.name + "' is empty and was skipped");
    } else if (!finite) {
      warnings.push_back("curve '" + c.name + "' has non-finite values and was skipped");
    } else {
      drawn.push_back(&c);
    }
  }
  if (drawn.empty()) throw ContractError("every curve is empty");

  double x_min = INFINITY, x_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
  for (const NamedCurve* c : drawn) {
    for (const CurvePoint& p : c->curve) {
      x_min = std::min(x_min, double(p.epoch));
      x_max = std::max(x_max, double(p.epoch));
      y_min = std::min(y_min, p.value);
      y_max = std::max(y_max, p.value);
    }
  }
  // Degenerate extents widen symmetrically so the map stays affine.
  if (x_max == x_min) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (y_max == y_min) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const double pw = layout.right - layout.left, ph = layout.bottom - layout.top;
  auto px = [&](double x) { return layout.left + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return layout.bottom - (y - y_min) / (y_max - y_min) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(layout.width) << "\" height=\""
    << coord(layout.height) << "\" viewBox=\"0 0 " << coord(layout.width) << ' ' << coord(layout.height) << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << coord(layout.width) << "\" height=\"" << coord(layout.height)
    << "\" fill=\"white\"/>\n";
  s << "<rect class=\"plot-area\" x=\"" << coord(layout.left) << "\" y=\"" << coord(layout.top) << "\" width=\""
    << coord(pw) << "\" height=\"" << coord(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  s << "<g class=\"data-extent\" data-x-min=\"" << format_number(x_min) << "\" data-x-max=\"" << format_number(x_max)
    << "\" data-y-min=\"" << format_number(y_min) << "\" data-y-max=\"" << format_number(y_max) << "\"/>\n";
  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double fx = x_min + (x_max - x_min) * i / kTicks, fy = y_min + (y_max - y_min) * i / kTicks;
    s << "<text class=\"tick\" x=\"" << coord(px(fx)) << "\" y=\"" << coord(layout.bottom + 16)
      << "\" font-size=\"11\" text-anchor=\"middle\">" << format_number(fx) << "</text>\n";
    s << "<text class=\"tick\" x=\"" << coord(layout.left - 6) << "\" y=\"" << coord(py(fy) + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << format_number(fy) << "</text>\n";
  }
  s << "<text class=\"axis-label\" x=\"" << coord(layout.left + pw / 2) << "\" y=\"" << coord(layout.bottom + 36)
    << "\" font-size=\"13\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  s << "<text class=\"axis-label\" x=\"16\" y=\"" << coord(layout.top + ph / 2) << "\" font-size=\"13\" "
    << "text-anchor=\"middle\" transform=\"rotate(-90 16 " << coord(layout.top + ph / 2) << ")\">" << escape(y_label)
    << "</text>\n";
  for (std::size_t i = 0; i < drawn.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    s << "<polyline class=\"series\" data-name=\"" << escape(drawn[i]->name) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < drawn[i]->curve.size(); ++j) {
      const CurvePoint& p = drawn[i]->curve[j];
      s << (j ? " " : "") << coord(px(double(p.epoch))) << ',' << coord(py(p.value));
    }
    s << "\"/>\n";
  }
  for (std::size_t i = 0; i < drawn.size(); ++i) {
    const double y = layout.top + 14 + 18.0 * double(i);
    s << "<line x1=\"" << coord(layout.right + 12) << "\" y1=\"" << coord(y - 4) << "\" x2=\"" << coord(layout.right + 32)
      << "\" y2=\"" << coord(y - 4) << "\" stroke=\"" << kPalette[i % std::size(kPalette)] << "\" stroke-width=\"2\"/>\n";
    s << "<text class=\"legend\" x=\"" << coord(layout.right + 38) << "\" y=\"" << coord(y) << "\" font-size=\"12\">"
      << escape(drawn[i]->name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::string> emit_svg_lineplot(const std::vector<NamedCurve>& curves, const std::filesystem::path& path,
                                           const std::string& x_label, const std::string& y_label,
                                           const SvgLayout& layout) {
  std::vector<std::string> warnings;
  const std::string svg = svg_lineplot(curves, x_label, y_label, layout, warnings);
  write_file(path, svg);
  return warnings;
}

}  // namespace sft
