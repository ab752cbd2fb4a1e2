#pragma once

// Experiment configuration: a strict INI-style format with typed sections.
// Unknown sections/keys, duplicate keys, and malformed values are errors that
// carry file:line positions. List-valued keys (schedule stages, sweep bits)
// are JSON arrays. A canonical writer re-emits every effective key so runs
// can archive their fully resolved configuration.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fqat/layers.hpp"
#include "fqat/quant.hpp"
#include "fqat/schedule.hpp"
#include "fqat/trainer.hpp"

namespace fqat::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  trainer::TaskConfig task;

  // [quant]
  double act_bits = 8.0;
  quant::Mode act_mode = quant::Mode::Dynamic;
  double k_sigma = 3.0;
  std::size_t calibration_samples = 100;
  double head_act_bits_static = 16.0;

  // [schedule] — name is fractional|integer|simple|custom
  std::string schedule_name = "fractional";
  std::size_t budget = 25;
  std::vector<schedule::Stage> custom_stages;

  // [trainer]
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  layers::SelectionMode selection = layers::SelectionMode::All;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t num_seeds = 5;  // for multi-seed commands
  bool measure_wall_time = false;

  // [sweep]
  std::vector<double> sweep_bits = {32.0, 16.0, 8.0, 7.0,  6.0, 5.5,
                                    5.0,  4.75, 4.5, 4.25, 4.0};

  // [output]
  std::string out_dir = "runs/out";

  // Resolved schedule per the name/budget/stages settings.
  schedule::PrecisionSchedule resolve_schedule() const;
  trainer::TrainerConfig trainer_config() const;
};

// Throws ConfigError with "<source>:<line>: ..." positions.
ExperimentConfig parse_config(const std::string& text, const std::string& source);
ExperimentConfig load_config(const std::string& path);

// Canonical full rendering (stable key order, every key explicit).
std::string render_config(const ExperimentConfig& cfg);

}  // namespace fqat::cli
