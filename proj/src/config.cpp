#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sft/errors.hpp"
#include "sft/runner.hpp"

namespace sft {

const char* arm_kind_name(ArmKind kind) {
  switch (kind) {
    case ArmKind::pretrain: return "pretrain";
    case ArmKind::random: return "random";
    case ArmKind::finetune: return "finetune";
    case ArmKind::intermediate: return "intermediate";
    case ArmKind::soft: return "soft";
  }
  return "?";
}

const char* subsample_name(SourceSubsample s) {
  switch (s) {
    case SourceSubsample::none: return "none";
    case SourceSubsample::images: return "images";
    case SourceSubsample::categories: return "categories";
  }
  return "?";
}

ExperimentConfig::ExperimentConfig() {
  source.num_classes = 20;
  source.samples_per_class = 200;
  source.first_class = 0;
  source.domain = Domain::source;

  target.num_classes = 5;
  target.samples_per_class = 20;
  target.first_class = 20;
  target.domain = Domain::target;

  test = target;
  test.samples_per_class = 40;

  model.input = source.sample_shape();
  model.layers = {LayerSpec::conv(8, 3, 1), LayerSpec::conv(16, 3, 2), LayerSpec::linear(64)};

  pretrain.mode = TrainMode::pretrain;
  pretrain.lr = 0.05;
  pretrain.batch = 32;
  pretrain.epochs = 10;

  train.mode = TrainMode::soft;
  train.lr = 0.01;
  train.batch = 10;
  train.epochs = 30;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct Value {
  std::string text;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw ParseError(line, "key '" + key + "': expected " + expected + ", got '" + text + "'");
  }
};

double to_double(const Value& v, const std::string& key) {
  const std::string t = trim(v.text);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(d)) v.fail(key, "a number");
  return d;
}

std::uint64_t to_uint(const Value& v, const std::string& key, const std::string& t_in) {
  const std::string t = trim(t_in);
  if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) v.fail(key, "a non-negative integer");
  char* end = nullptr;
  errno = 0;
  const unsigned long long u = std::strtoull(t.c_str(), &end, 10);
  if (errno == ERANGE) v.fail(key, "an integer in range");
  return u;
}

std::uint64_t to_uint(const Value& v, const std::string& key) { return to_uint(v, key, v.text); }

std::size_t to_size(const Value& v, const std::string& key) { return static_cast<std::size_t>(to_uint(v, key)); }

bool to_bool(const Value& v, const std::string& key) {
  const std::string t = trim(v.text);
  if (t == "true") return true;
  if (t == "false") return false;
  v.fail(key, "true or false");
}

Range to_range(const Value& v, const std::string& key) {
  const auto parts = split_list(v.text);
  if (parts.size() != 2) v.fail(key, "'min, max'");
  return {to_double(Value{parts[0], v.line}, key), to_double(Value{parts[1], v.line}, key)};
}

Schedule to_schedule(const Value& v, const std::string& key) {
  if (trim(v.text) == "inf") return Schedule::infinite();
  const std::size_t e = to_size(v, key);
  if (e == 0) v.fail(key, "'inf' or an integer >= 1");
  return Schedule::over(e);
}

const std::map<std::string, TransformField>& field_names() {
  static const std::map<std::string, TransformField> names{{"rotation", TransformField::rotation},
                                                           {"dx", TransformField::dx},
                                                           {"dy", TransformField::dy},
                                                           {"scale", TransformField::scale},
                                                           {"noise", TransformField::noise_std}};
  return names;
}

const char* field_key(TransformField f) {
  switch (f) {
    case TransformField::rotation: return "rotation";
    case TransformField::dx: return "dx";
    case TransformField::dy: return "dy";
    case TransformField::scale: return "scale";
    case TransformField::noise_std: return "noise";
  }
  return "?";
}

constexpr TransformField kFields[] = {TransformField::rotation, TransformField::dx, TransformField::dy,
                                      TransformField::scale, TransformField::noise_std};

std::vector<LayerSpec> to_layers(const Value& v, const std::string& key) {
  std::vector<LayerSpec> layers;
  for (const std::string& item : split_list(v.text)) {
    std::vector<std::string> parts;
    std::stringstream ss(item);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(trim(p));
    if (parts.size() == 2 && parts[0] == "linear") {
      layers.push_back(LayerSpec::linear(to_uint(v, key, parts[1])));
    } else if (parts.size() == 4 && parts[0] == "conv") {
      layers.push_back(LayerSpec::conv(to_uint(v, key, parts[1]), to_uint(v, key, parts[2]), to_uint(v, key, parts[3])));
    } else {
      v.fail(key, "a list of conv:out:kernel:stride or linear:out");
    }
  }
  if (layers.empty()) v.fail(key, "at least one layer");
  return layers;
}

bool valid_label(const std::string& s) {
  if (s.empty()) return false;
  for (const char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

// Section keys; `full` sections also own their class block and mode.
bool apply_dataset_key(DatasetSpec& spec, const std::string& name, const Value& v, const std::string& key, bool full) {
  if (const auto it = field_names().find(name); it != field_names().end()) {
    spec.ranges.at(it->second) = to_range(v, key);
    return true;
  }
  if (name == "per_class") {
    spec.samples_per_class = to_size(v, key);
    return true;
  }
  if (!full) return false;
  if (name == "mode") {
    const std::string t = trim(v.text);
    if (t == "shapes16") {
      spec.mode = DataMode::shapes16;
    } else if (t == "gauss") {
      spec.mode = DataMode::gauss;
    } else {
      v.fail(key, "shapes16 or gauss");
    }
    return true;
  }
  if (name == "classes") {
    spec.num_classes = to_size(v, key);
    return true;
  }
  if (name == "first_class") {
    spec.first_class = to_size(v, key);
    return true;
  }
  if (name == "dim") {
    spec.vector_dim = to_size(v, key);
    return true;
  }
  return false;
}

bool apply_train_key(TrainConfig& c, const std::string& name, const Value& v, const std::string& key) {
  if (name == "epochs") {
    c.epochs = to_size(v, key);
  } else if (name == "lr") {
    c.lr = to_double(v, key);
  } else if (name == "momentum") {
    c.momentum = to_double(v, key);
  } else if (name == "batch") {
    c.batch = to_size(v, key);
  } else if (name == "smoothing") {
    c.smoothing = to_double(v, key);
  } else {
    return false;
  }
  return true;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string range_text(const Range& r) { return num(r.min) + ", " + num(r.max); }

std::string schedule_text(const Schedule& s) { return s.horizon ? std::to_string(*s.horizon) : "inf"; }

void emit_dataset(std::ostringstream& out, const std::string& section, const DatasetSpec& spec, bool full) {
  if (full) {
    out << section << ".mode = " << (spec.mode == DataMode::gauss ? "gauss" : "shapes16") << "\n";
    out << section << ".classes = " << spec.num_classes << "\n";
    out << section << ".first_class = " << spec.first_class << "\n";
    out << section << ".dim = " << spec.vector_dim << "\n";
  }
  out << section << ".per_class = " << spec.samples_per_class << "\n";
  for (const TransformField f : kFields) out << section << "." << field_key(f) << " = " << range_text(spec.ranges.at(f)) << "\n";
}

void emit_train(std::ostringstream& out, const std::string& section, const TrainConfig& c) {
  out << section << ".epochs = " << c.epochs << "\n";
  out << section << ".lr = " << num(c.lr) << "\n";
  out << section << ".momentum = " << num(c.momentum) << "\n";
  out << section << ".batch = " << c.batch << "\n";
  out << section << ".smoothing = " << num(c.smoothing) << "\n";
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
  return s;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::map<std::string, Value> seen;
  std::map<std::string, std::map<std::string, Value>> arm_keys;
  std::optional<Value> arms_value, bias_field, bias_range;
  bool has_target2 = false, has_verify = false;
  DatasetSpec target2 = c.target, verify = c.target;
  target2.domain = Domain::target2;
  verify.first_class = 25;
  verify.num_classes = 7;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const Value v{trim(line.substr(eq + 1)), line_no};
    if (key.empty()) throw ParseError(line_no, "empty key");
    if (v.text.empty()) throw ParseError(line_no, "key '" + key + "' has no value");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ParseError(line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(prev->second.line) + ")");
    }
    seen.emplace(key, v);

    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    bool ok = true;
    if (key == "experiment") {
      if (!valid_label(v.text)) v.fail(key, "a name of letters, digits, '_' or '-'");
      c.experiment = v.text;
    } else if (key == "seeds") {
      c.seeds.clear();
      for (const std::string& s : split_list(v.text)) c.seeds.push_back(to_uint(v, key, s));
    } else if (key == "out_dir") {
      c.out_dir = v.text;
    } else if (key == "arms") {
      arms_value = v;
    } else if (key == "save_checkpoints") {
      c.save_checkpoints = to_bool(v, key);
    } else if (section == "source") {
      ok = apply_dataset_key(c.source, name, v, key, true);
    } else if (section == "target" && name == "bias_field") {
      if (!field_names().count(v.text)) v.fail(key, "one of rotation, dx, dy, scale, noise");
      bias_field = v;
    } else if (section == "target" && name == "bias_range") {
      bias_range = v;
    } else if (section == "target") {
      ok = apply_dataset_key(c.target, name, v, key, true);
    } else if (section == "test") {
      ok = apply_dataset_key(c.test, name, v, key, false);
    } else if (section == "target2") {
      ok = apply_dataset_key(target2, name, v, key, true);
      has_target2 = true;
    } else if (section == "verify") {
      ok = apply_dataset_key(verify, name, v, key, true);
      has_verify = true;
    } else if (key == "model.layers") {
      c.model.layers = to_layers(v, key);
    } else if (section == "pretrain") {
      if (name == "cache") {
        c.pretrain_cache = v.text;
      } else {
        ok = apply_train_key(c.pretrain, name, v, key);
      }
    } else if (section == "train") {
      if (name == "freeze_source_head") {
        c.train.freeze_source_head = to_bool(v, key);
      } else if (name == "E") {
        c.schedule = to_schedule(v, key);
      } else if (name == "post_saturation") {
        if (v.text == "auto") {
          c.train.post_saturation_epochs.reset();
        } else {
          c.train.post_saturation_epochs = to_size(v, key);
        }
      } else {
        ok = apply_train_key(c.train, name, v, key);
      }
    } else if (section == "arm") {
      const auto dot2 = name.rfind('.');
      if (dot2 == std::string::npos || dot2 == 0) throw ParseError(line_no, "unknown key '" + key + "'");
      arm_keys[name.substr(0, dot2)][name.substr(dot2 + 1)] = v;
    } else if (section == "eval") {
      if (name == "map") {
        c.eval.map = to_bool(v, key);
      } else if (name == "probe") {
        c.eval.probe = to_bool(v, key);
      } else if (name == "probe_epochs") {
        c.eval.probe_epochs = to_size(v, key);
      } else if (name == "probe_lr") {
        c.eval.probe_lr = to_double(v, key);
      } else if (name == "purity") {
        c.eval.purity = to_bool(v, key);
      } else if (name == "purity_restarts") {
        c.eval.purity_restarts = to_size(v, key);
      } else if (name == "far_levels") {
        c.eval.far_levels.clear();
        for (const std::string& s : split_list(v.text)) c.eval.far_levels.push_back(to_double(Value{s, line_no}, key));
      } else if (name == "lead") {
        if (v.text == "none") {
          c.eval.lead.reset();
        } else {
          const auto parts = split_list(v.text);
          if (parts.size() != 2) v.fail(key, "'arm_a, arm_b' or none");
          c.eval.lead = std::make_pair(parts[0], parts[1]);
        }
      } else if (name == "lead_threshold") {
        c.eval.lead_threshold = to_double(v, key);
      } else {
        ok = false;
      }
    } else {
      ok = false;
    }
    if (!ok) throw ParseError(line_no, "unknown key '" + key + "'");
  }
  const std::size_t end_line = line_no + 1;

  if (c.experiment.empty()) throw ParseError(end_line, "missing required key 'experiment'");
  if (!arms_value) throw ParseError(end_line, "missing required key 'arms'");
  if (bias_field.has_value() != bias_range.has_value()) {
    const Value& present = bias_field ? *bias_field : *bias_range;
    throw ParseError(present.line, "target.bias_field and target.bias_range must be set together");
  }
  if (bias_field) c.target_bias = TargetBias{field_names().at(bias_field->text), to_range(*bias_range, "target.bias_range")};

  std::set<std::string> labels;
  for (const std::string& label : split_list(arms_value->text)) {
    if (!valid_label(label)) arms_value->fail("arms", "arm labels of letters, digits, '_' or '-'");
    if (!labels.insert(label).second) throw ParseError(arms_value->line, "duplicate arm '" + label + "'");
    ArmConfig arm;
    arm.label = label;
    arm.schedule = c.schedule;
    std::optional<ArmKind> kind;
    for (const ArmKind k : {ArmKind::pretrain, ArmKind::random, ArmKind::finetune, ArmKind::intermediate, ArmKind::soft}) {
      if (label == arm_kind_name(k)) kind = k;
    }
    const auto keys = arm_keys.find(label);
    if (keys != arm_keys.end()) {
      for (const auto& [name, v] : keys->second) {
        const std::string key = "arm." + label + "." + name;
        if (name == "mode") {
          kind.reset();
          for (const ArmKind k :
               {ArmKind::pretrain, ArmKind::random, ArmKind::finetune, ArmKind::intermediate, ArmKind::soft}) {
            if (v.text == arm_kind_name(k)) kind = k;
          }
          if (!kind) v.fail(key, "one of pretrain, random, finetune, intermediate, soft");
        } else if (name == "target_range") {
          if (v.text != "restricted" && v.text != "full") v.fail(key, "restricted or full");
          arm.restricted_target = v.text == "restricted";
        } else if (name == "source_subsample") {
          if (v.text == "none") {
            arm.source_subsample = SourceSubsample::none;
          } else if (v.text == "images") {
            arm.source_subsample = SourceSubsample::images;
          } else if (v.text == "categories") {
            arm.source_subsample = SourceSubsample::categories;
          } else {
            v.fail(key, "none, images or categories");
          }
        } else if (name == "source_fraction") {
          arm.source_fraction = to_double(v, key);
        } else if (name == "E") {
          arm.schedule = to_schedule(v, key);
        } else {
          throw ParseError(v.line, "unknown key '" + key + "'");
        }
      }
    }
    if (!kind) throw ParseError(arms_value->line, "arm '" + label + "' needs arm." + label + ".mode");
    arm.kind = *kind;
    c.arms.push_back(arm);
  }
  for (const auto& [label, keys] : arm_keys) {
    if (!labels.count(label)) {
      throw ParseError(keys.begin()->second.line, "arm '" + label + "' is configured but not listed in 'arms'");
    }
  }

  // Test inherits the target's class block.
  c.test.mode = c.target.mode;
  c.test.num_classes = c.target.num_classes;
  c.test.first_class = c.target.first_class;
  c.test.vector_dim = c.target.vector_dim;
  if (has_target2) c.target2 = target2;
  if (has_verify) c.verify = verify;
  c.model.input = c.source.sample_shape();

  try {
    validate_config(c);
  } catch (const ConfigError& e) {
    throw ParseError(end_line, e.what());
  } catch (const RangeError& e) {
    throw ParseError(end_line, e.what());
  }
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

void validate_config(const ExperimentConfig& c) {
  if (!valid_label(c.experiment)) throw ConfigError("experiment name '" + c.experiment + "' is invalid");
  if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (c.arms.empty()) throw ConfigError("arms must be non-empty");
  c.source.validate();
  c.target.validate();
  c.test.validate();
  if (c.target2) c.target2->validate();
  if (c.verify) c.verify->validate();
  if (c.source.samples_per_class == 0) throw ConfigError("source.per_class must be positive");
  if (c.target.samples_per_class == 0) throw ConfigError("target.per_class must be positive");
  if (c.test.samples_per_class == 0) throw ConfigError("test.per_class must be positive");
  if (c.target.mode != c.source.mode || c.target.sample_shape() != c.source.sample_shape()) {
    throw ConfigError("source and target must share mode and sample shape");
  }
  if (c.target2 && c.target2->sample_shape() != c.source.sample_shape()) {
    throw ConfigError("target2 must share the source sample shape");
  }
  if (c.verify && c.verify->sample_shape() != c.source.sample_shape()) {
    throw ConfigError("verify must share the source sample shape");
  }
  if (c.target_bias) restrict_bias(c.target, c.target_bias->field, c.target_bias->range);
  BackboneConfig model = c.model;
  model.input = c.source.sample_shape();
  model.layer_shapes();
  for (const TrainConfig* t : {&c.pretrain, &c.train}) {
    if (!(t->lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(t->momentum >= 0.0 && t->momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (t->batch == 0) throw ConfigError("batch size must be positive");
    if (!(t->smoothing >= 0.0 && t->smoothing < 1.0)) throw ConfigError("smoothing must lie in [0, 1)");
  }
  if (c.pretrain.epochs == 0) throw ConfigError("pretrain.epochs must be at least 1");
  if (c.train.epochs == 0) throw ConfigError("train.epochs must be at least 1");
  std::set<std::string> labels;
  for (const ArmConfig& arm : c.arms) {
    if (!valid_label(arm.label)) throw ConfigError("arm label '" + arm.label + "' is invalid");
    if (!labels.insert(arm.label).second) throw ConfigError("duplicate arm '" + arm.label + "'");
    if (!(arm.source_fraction > 0.0 && arm.source_fraction <= 1.0)) {
      throw ConfigError("arm '" + arm.label + "': source_fraction must lie in (0, 1]");
    }
    if (arm.source_subsample == SourceSubsample::none && arm.source_fraction != 1.0) {
      throw ConfigError("arm '" + arm.label + "': source_fraction needs a source_subsample mode");
    }
    if (arm.schedule.horizon && *arm.schedule.horizon == 0) throw ConfigError("arm '" + arm.label + "': E must be >= 1");
  }
  for (const double f : c.eval.far_levels) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("far levels must lie in (0, 1]");
  }
  if (c.eval.lead) {
    for (const std::string& label : {c.eval.lead->first, c.eval.lead->second}) {
      const auto it = std::find_if(c.arms.begin(), c.arms.end(), [&](const ArmConfig& a) { return a.label == label; });
      if (it == c.arms.end()) throw ConfigError("eval.lead names unknown arm '" + label + "'");
      if (it->kind == ArmKind::pretrain || it->kind == ArmKind::random) {
        throw ConfigError("eval.lead arm '" + label + "' has no training curve");
      }
    }
  }
  if (c.eval.purity && c.eval.purity_restarts == 0) throw ConfigError("eval.purity_restarts must be positive");
  if (c.eval.probe && c.eval.probe_epochs == 0) throw ConfigError("eval.probe_epochs must be positive");
}

std::string emit_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "experiment = " << c.experiment << "\n";
  std::vector<std::string> seeds, labels;
  for (const std::uint64_t s : c.seeds) seeds.push_back(std::to_string(s));
  for (const ArmConfig& a : c.arms) labels.push_back(a.label);
  out << "seeds = " << join(seeds) << "\n";
  out << "out_dir = " << c.out_dir << "\n";
  out << "save_checkpoints = " << (c.save_checkpoints ? "true" : "false") << "\n";
  out << "\n";
  emit_dataset(out, "source", c.source, true);
  emit_dataset(out, "target", c.target, true);
  if (c.target_bias) {
    out << "target.bias_field = " << field_key(c.target_bias->field) << "\n";
    out << "target.bias_range = " << range_text(c.target_bias->range) << "\n";
  }
  emit_dataset(out, "test", c.test, false);
  if (c.target2) emit_dataset(out, "target2", *c.target2, true);
  if (c.verify) emit_dataset(out, "verify", *c.verify, true);
  out << "\n";
  std::vector<std::string> layers;
  for (const LayerSpec& l : c.model.layers) {
    layers.push_back(l.kind == LayerSpec::Kind::linear
                         ? "linear:" + std::to_string(l.out)
                         : "conv:" + std::to_string(l.out) + ":" + std::to_string(l.kernel) + ":" + std::to_string(l.stride));
  }
  out << "model.layers = " << join(layers) << "\n";
  emit_train(out, "pretrain", c.pretrain);
  if (!c.pretrain_cache.empty()) out << "pretrain.cache = " << c.pretrain_cache << "\n";
  emit_train(out, "train", c.train);
  out << "train.freeze_source_head = " << (c.train.freeze_source_head ? "true" : "false") << "\n";
  out << "train.E = " << schedule_text(c.schedule) << "\n";
  out << "train.post_saturation = "
      << (c.train.post_saturation_epochs ? std::to_string(*c.train.post_saturation_epochs) : "auto") << "\n";
  out << "\n";
  out << "arms = " << join(labels) << "\n";
  for (const ArmConfig& a : c.arms) {
    const std::string p = "arm." + a.label + ".";
    out << p << "mode = " << arm_kind_name(a.kind) << "\n";
    out << p << "target_range = " << (a.restricted_target ? "restricted" : "full") << "\n";
    out << p << "source_subsample = " << subsample_name(a.source_subsample) << "\n";
    out << p << "source_fraction = " << num(a.source_fraction) << "\n";
    out << p << "E = " << schedule_text(a.schedule) << "\n";
  }
  out << "\n";
  std::vector<std::string> levels;
  for (const double f : c.eval.far_levels) levels.push_back(num(f));
  out << "eval.map = " << (c.eval.map ? "true" : "false") << "\n";
  out << "eval.probe = " << (c.eval.probe ? "true" : "false") << "\n";
  out << "eval.probe_epochs = " << c.eval.probe_epochs << "\n";
  out << "eval.probe_lr = " << num(c.eval.probe_lr) << "\n";
  out << "eval.purity = " << (c.eval.purity ? "true" : "false") << "\n";
  out << "eval.purity_restarts = " << c.eval.purity_restarts << "\n";
  out << "eval.far_levels = " << join(levels) << "\n";
  out << "eval.lead = " << (c.eval.lead ? c.eval.lead->first + ", " + c.eval.lead->second : std::string("none")) << "\n";
  out << "eval.lead_threshold = " << num(c.eval.lead_threshold) << "\n";
  return out.str();
}

}  // namespace sft
