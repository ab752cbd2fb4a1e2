#include "fqat/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fqat/csv.hpp"

namespace fqat::cli {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct ParseCursor {
  const std::string& source;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  }
};

double to_double(const ParseCursor& at, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) at.fail("trailing characters in number '" + v + "'");
    if (!std::isfinite(d)) at.fail("number must be finite, got '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    at.fail("expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const ParseCursor& at, const std::string& v) {
  try {
    if (!v.empty() && v[0] == '-') at.fail("expected a non-negative integer");
    std::size_t used = 0;
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) at.fail("trailing characters in integer '" + v + "'");
    return u;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    at.fail("expected an integer, got '" + v + "'");
  }
}

nlohmann::json to_json_array(const ParseCursor& at, const std::string& v) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(v);
  } catch (const std::exception& e) {
    at.fail(std::string("invalid list value: ") + e.what());
  }
  if (!j.is_array()) at.fail("expected a JSON-style list, got '" + v + "'");
  return j;
}

std::vector<schedule::Stage> to_stages(const ParseCursor& at, const std::string& v) {
  std::vector<schedule::Stage> stages;
  for (const auto& item : to_json_array(at, v)) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number() ||
        !item[1].is_number_unsigned() || item[1].get<std::uint64_t>() == 0) {
      at.fail("each stage must be [bits, epochs] with positive integer epochs");
    }
    stages.push_back({item[0].get<double>(), item[1].get<std::size_t>()});
  }
  return stages;
}

std::vector<double> to_double_list(const ParseCursor& at, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : to_json_array(at, v)) {
    if (!item.is_number()) at.fail("expected a list of numbers");
    out.push_back(item.get<double>());
  }
  return out;
}

quant::Mode to_act_mode(const ParseCursor& at, const std::string& v) {
  if (v == "dynamic") return quant::Mode::Dynamic;
  if (v == "static") return quant::Mode::Static;
  at.fail("act_mode must be dynamic|static, got '" + v + "'");
}

bool to_timing(const ParseCursor& at, const std::string& v) {
  if (v == "none") return false;
  if (v == "measured") return true;
  at.fail("timing must be none|measured, got '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  ParseCursor at{source, 0};
  std::string section;
  std::set<std::string> seen;
  bool saw_stages = false;

  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++at.line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) {
      raw.resize(hash);
    }
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') at.fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> kSections = {
          "task", "quant", "schedule", "trainer", "sweep", "output"};
      if (!kSections.count(section)) at.fail("unknown section [" + section + "]");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) at.fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) at.fail("empty key");
    if (value.empty()) at.fail("empty value for key '" + key + "'");
    if (section.empty()) at.fail("key '" + key + "' appears before any section");
    if (!seen.insert(section + "." + key).second) {
      at.fail("duplicate key '" + key + "' in section [" + section + "]");
    }

    if (section == "task") {
      if (key == "seed") cfg.task.seed = to_uint(at, value);
      else if (key == "samples") cfg.task.n_samples = std::size_t(to_uint(at, value));
      else if (key == "width") cfg.task.model.width = std::size_t(to_uint(at, value));
      else if (key == "blocks") cfg.task.model.blocks = std::size_t(to_uint(at, value));
      else if (key == "ff_mult") cfg.task.model.ff_mult = std::size_t(to_uint(at, value));
      else if (key == "outlier_prob") cfg.task.outlier_prob = to_double(at, value);
      else if (key == "outlier_scale") cfg.task.outlier_scale = to_double(at, value);
      else if (key == "validation_fraction")
        cfg.task.validation_fraction = to_double(at, value);
      else at.fail("unknown key '" + key + "' in section [task]");
    } else if (section == "quant") {
      if (key == "act_bits") cfg.act_bits = to_double(at, value);
      else if (key == "act_mode") cfg.act_mode = to_act_mode(at, value);
      else if (key == "k_sigma") cfg.k_sigma = to_double(at, value);
      else if (key == "calibration_samples")
        cfg.calibration_samples = std::size_t(to_uint(at, value));
      else if (key == "head_act_bits_static")
        cfg.head_act_bits_static = to_double(at, value);
      else at.fail("unknown key '" + key + "' in section [quant]");
    } else if (section == "schedule") {
      if (key == "name") cfg.schedule_name = value;
      else if (key == "epochs") cfg.budget = std::size_t(to_uint(at, value));
      else if (key == "stages") {
        cfg.custom_stages = to_stages(at, value);
        saw_stages = true;
      } else at.fail("unknown key '" + key + "' in section [schedule]");
    } else if (section == "trainer") {
      if (key == "learning_rate") cfg.learning_rate = to_double(at, value);
      else if (key == "batch_size") cfg.batch_size = std::size_t(to_uint(at, value));
      else if (key == "selection")
        cfg.selection = [&] {
          try {
            return layers::selection_from_name(value);
          } catch (const std::invalid_argument& e) {
            at.fail(e.what());
          }
        }();
      else if (key == "weight_decay") cfg.weight_decay = to_double(at, value);
      else if (key == "beta1") cfg.beta1 = to_double(at, value);
      else if (key == "beta2") cfg.beta2 = to_double(at, value);
      else if (key == "adam_eps") cfg.adam_eps = to_double(at, value);
      else if (key == "num_seeds") cfg.num_seeds = std::size_t(to_uint(at, value));
      else if (key == "timing") cfg.measure_wall_time = to_timing(at, value);
      else at.fail("unknown key '" + key + "' in section [trainer]");
    } else if (section == "sweep") {
      if (key == "bits") cfg.sweep_bits = to_double_list(at, value);
      else at.fail("unknown key '" + key + "' in section [sweep]");
    } else if (section == "output") {
      if (key == "directory") cfg.out_dir = value;
      else at.fail("unknown key '" + key + "' in section [output]");
    }
  }

  // Cross-key checks that need the whole file.
  at.line = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError(source + ": " + msg); };
  if (cfg.schedule_name == "custom" && !saw_stages) {
    fail("schedule name 'custom' requires a stages list");
  }
  if (cfg.schedule_name != "custom" && saw_stages) {
    fail("stages are only allowed with schedule name 'custom'");
  }
  static const std::set<std::string> kNames = {"fractional", "integer", "simple",
                                               "custom"};
  if (!kNames.count(cfg.schedule_name)) {
    fail("unknown schedule name '" + cfg.schedule_name + "'");
  }
  if (cfg.batch_size == 0) fail("batch_size must be positive");
  if (cfg.num_seeds == 0) fail("num_seeds must be positive");
  if (!(cfg.learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(cfg.act_bits >= 1.0 && cfg.act_bits <= 32.0)) {
    fail("act_bits must lie in [1, 32]");
  }
  if (!(cfg.head_act_bits_static >= 1.0 && cfg.head_act_bits_static <= 32.0)) {
    fail("head_act_bits_static must lie in [1, 32]");
  }
  if (!(cfg.k_sigma > 0.0)) fail("k_sigma must be positive");
  if (cfg.calibration_samples == 0) fail("calibration_samples must be positive");
  if (!(cfg.task.outlier_prob >= 0.0 && cfg.task.outlier_prob <= 1.0)) {
    fail("outlier_prob must lie in [0, 1]");
  }
  if (!(cfg.task.outlier_scale > 0.0)) fail("outlier_scale must be positive");
  if (!(cfg.task.validation_fraction > 0.0 && cfg.task.validation_fraction < 1.0)) {
    fail("validation_fraction must lie in (0, 1)");
  }
  if (cfg.sweep_bits.empty()) fail("sweep bits list must not be empty");
  for (double b : cfg.sweep_bits) {
    if (!(b >= 1.0 && b <= 32.0)) fail("sweep bits must lie in [1, 32]");
  }
  if (cfg.out_dir.empty()) fail("output directory must not be empty");

  // Schedule shape errors should surface at config time, not mid-run.
  try {
    schedule::validate(cfg.resolve_schedule());
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

schedule::PrecisionSchedule ExperimentConfig::resolve_schedule() const {
  if (schedule_name == "fractional") {
    auto s = schedule::builtin_fractional();
    if (budget != s.total_epochs()) {
      throw std::invalid_argument(
          "the fractional schedule has a fixed " +
          std::to_string(s.total_epochs()) + "-epoch budget; set epochs = " +
          std::to_string(s.total_epochs()));
    }
    return s;
  }
  if (schedule_name == "integer") return schedule::builtin_integer(budget);
  if (schedule_name == "simple") return schedule::builtin_simple(budget);
  if (schedule_name == "custom") {
    schedule::PrecisionSchedule s{"custom", custom_stages};
    schedule::validate(s);
    if (budget != s.total_epochs()) {
      throw std::invalid_argument("custom stages sum to " +
                                  std::to_string(s.total_epochs()) +
                                  " epochs but epochs = " + std::to_string(budget));
    }
    return s;
  }
  throw std::invalid_argument("unknown schedule name '" + schedule_name + "'");
}

trainer::TrainerConfig ExperimentConfig::trainer_config() const {
  trainer::TrainerConfig t;
  t.learning_rate = learning_rate;
  t.batch_size = batch_size;
  t.sched = resolve_schedule();
  t.selection = selection;
  t.weight_decay = weight_decay;
  t.beta1 = beta1;
  t.beta2 = beta2;
  t.adam_eps = adam_eps;
  t.act_bits = act_bits;
  t.calibration_samples = calibration_samples;
  t.k_sigma = k_sigma;
  t.head_act_bits_static = head_act_bits_static;
  t.measure_wall_time = measure_wall_time;
  return t;
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const auto d = [](double v) { return format_double(v); };

  out << "[task]\n";
  out << "seed = " << cfg.task.seed << "\n";
  out << "samples = " << cfg.task.n_samples << "\n";
  out << "width = " << cfg.task.model.width << "\n";
  out << "blocks = " << cfg.task.model.blocks << "\n";
  out << "ff_mult = " << cfg.task.model.ff_mult << "\n";
  out << "outlier_prob = " << d(cfg.task.outlier_prob) << "\n";
  out << "outlier_scale = " << d(cfg.task.outlier_scale) << "\n";
  out << "validation_fraction = " << d(cfg.task.validation_fraction) << "\n";
  out << "\n[quant]\n";
  out << "act_bits = " << d(cfg.act_bits) << "\n";
  out << "act_mode = " << (cfg.act_mode == quant::Mode::Static ? "static" : "dynamic")
      << "\n";
  out << "k_sigma = " << d(cfg.k_sigma) << "\n";
  out << "calibration_samples = " << cfg.calibration_samples << "\n";
  out << "head_act_bits_static = " << d(cfg.head_act_bits_static) << "\n";
  out << "\n[schedule]\n";
  out << "name = " << cfg.schedule_name << "\n";
  out << "epochs = " << cfg.budget << "\n";
  if (cfg.schedule_name == "custom") {
    out << "stages = [";
    for (std::size_t i = 0; i < cfg.custom_stages.size(); ++i) {
      if (i) out << ", ";
      out << "[" << d(cfg.custom_stages[i].bits) << ", "
          << cfg.custom_stages[i].epochs << "]";
    }
    out << "]\n";
  }
  out << "\n[trainer]\n";
  out << "learning_rate = " << d(cfg.learning_rate) << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "selection = " << layers::selection_name(cfg.selection) << "\n";
  out << "weight_decay = " << d(cfg.weight_decay) << "\n";
  out << "beta1 = " << d(cfg.beta1) << "\n";
  out << "beta2 = " << d(cfg.beta2) << "\n";
  out << "adam_eps = " << d(cfg.adam_eps) << "\n";
  out << "num_seeds = " << cfg.num_seeds << "\n";
  out << "timing = " << (cfg.measure_wall_time ? "measured" : "none") << "\n";
  out << "\n[sweep]\n";
  out << "bits = [";
  for (std::size_t i = 0; i < cfg.sweep_bits.size(); ++i) {
    if (i) out << ", ";
    out << d(cfg.sweep_bits[i]);
  }
  out << "]\n";
  out << "\n[output]\n";
  out << "directory = " << cfg.out_dir << "\n";
  return out.str();
}

}  // namespace fqat::cli
