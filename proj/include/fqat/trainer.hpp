#pragma once

// Teacher-student distillation under a precision schedule: a frozen
// full-precision teacher generates regression targets for a quantization-aware
// student bootstrapped from the teacher's own weights. Also hosts the
// no-training bit sweep, schedule comparison, and static-calibration runs.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fqat/layers.hpp"
#include "fqat/schedule.hpp"
#include "fqat/tensor.hpp"

namespace fqat::trainer {

// Raised when training hits a non-finite loss; carries where it happened.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& msg, std::size_t epoch)
      : std::runtime_error(msg), epoch(epoch) {}
  std::size_t epoch = 0;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled from the moment estimates
};

// Adam with double-precision moments; deterministic given the same gradient
// sequence. State is keyed by parameter identity.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<engine::Tensor>& params);
  void zero_grad(const std::vector<engine::Tensor>& params);
  const AdamConfig& config() const { return cfg_; }

 private:
  struct State {
    std::vector<double> m, v;
    std::int64_t t = 0;  // per-parameter so late joiners start unbiased
  };
  AdamConfig cfg_;
  std::unordered_map<const engine::Node*, State> state_;
};

struct TaskConfig {
  std::uint64_t seed = 1234;
  layers::ModelConfig model;
  std::size_t n_samples = 2560;
  double validation_fraction = 0.025;
  // Teacher weight heavy-tailedness: each weight entry is scaled by
  // outlier_scale with probability outlier_prob.
  double outlier_prob = 0.01;
  double outlier_scale = 8.0;
};

// Deterministic synthetic distillation task: standard-normal input rows and a
// randomly initialized teacher with injected weight outliers. The last
// validation_fraction of rows forms a fixed held-out split.
class SyntheticTask {
 public:
  explicit SyntheticTask(TaskConfig cfg);

  // Frozen (no parameter requires grad).
  layers::ToyModel make_teacher() const;

  std::vector<engine::Tensor> train_batches(std::size_t batch_size) const;
  std::vector<engine::Tensor> val_batches(std::size_t batch_size) const;
  // Seeded draw without replacement from the training split.
  std::vector<engine::Tensor> calibration_batches(std::size_t n_rows,
                                                  std::size_t batch_size) const;

  const TaskConfig& config() const { return cfg_; }
  std::size_t train_rows() const { return val_start_; }
  std::size_t val_rows() const { return n_rows_ - val_start_; }

 private:
  TaskConfig cfg_;
  std::vector<float> rows_;  // n_rows x width, row-major
  std::size_t n_rows_ = 0;
  std::size_t val_start_ = 0;

  std::vector<engine::Tensor> slice_batches(std::size_t begin, std::size_t end,
                                            std::size_t batch_size) const;
};

struct TrainerConfig {
  double learning_rate = 1e-3;  // tuned for batches of 64 rows
  std::size_t batch_size = 64;
  schedule::PrecisionSchedule sched;
  layers::SelectionMode selection = layers::SelectionMode::All;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double act_bits = 8.0;  // constant across stages
  // Static-calibration knobs (used by calibrate_then_train_static).
  std::size_t calibration_samples = 100;
  double k_sigma = 3.0;
  double head_act_bits_static = 16.0;  // Other-tagged layers calibrate wider
  // wall_time_s is recorded as 0.0 unless enabled, keeping metrics files
  // byte-identical across repeated runs.
  bool measure_wall_time = false;
  // When non-empty, a divergence abort saves the last finite state here.
  std::string abort_checkpoint_path;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, global across stages
  double stage_bits = 0.0;
  double train_loss = 0.0;  // mean step loss over the epoch
  double val_loss = 0.0;
  double wall_time_s = 0.0;
  std::vector<double> layer_outlier_fraction;  // aligned with layer_names
};

struct RunMetrics {
  std::vector<std::string> layer_names;
  std::vector<EpochRecord> epochs;

  double final_val_loss() const;
};

struct RunResult {
  layers::ToyModel student;
  RunMetrics metrics;
};

// One optimization step: full-precision teacher target (gradient-stopped),
// quantized student prediction, MSE, backward, Adam update. Returns the step
// loss (pre-update).
double distill_step(const layers::ToyModel& teacher, layers::ToyModel& student,
                    const engine::Tensor& x, Adam& opt);

// Pooled MSE between the quantized student and the full-precision teacher
// over a batch list.
double evaluate(const layers::ToyModel& teacher, const layers::ToyModel& student,
                const std::vector<engine::Tensor>& batches);

// Per-layer activation outlier fraction (3-sigma) of the student on one batch.
std::vector<double> outlier_snapshot(layers::ToyModel& student,
                                     const engine::Tensor& batch);

// Full schedule-driven distillation run (dynamic activation quantization).
RunResult run_qat(const SyntheticTask& task, const TrainerConfig& cfg);

struct SweepRow {
  double bits = 0.0;
  double val_loss = 0.0;
};

// Weight-only sensitivity: no training, activations left in float, one row
// per bit-width, sorted by descending bits.
std::vector<SweepRow> bit_sweep(const SyntheticTask& task,
                                std::vector<double> bits_list,
                                std::size_t batch_size);

struct ScheduleRun {
  std::string schedule;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

// Runs fractional / integer / simple over the same per-seed task (same
// teacher, same data) under one epoch budget.
std::vector<ScheduleRun> compare_schedules(const TaskConfig& base_task,
                                           const TrainerConfig& base_cfg,
                                           std::span<const std::uint64_t> seeds,
                                           std::size_t budget);

struct CalibrationOutcome {
  std::vector<layers::ToyModel::Observation> per_layer;
  std::vector<layers::ToyModel::Observation> per_tag;
  RunResult run;
};

// Observation pass on calibration samples, freeze activation quantizers to
// the derived affine parameters, then train with those parameters held fixed.
CalibrationOutcome calibrate_then_train_static(const SyntheticTask& task,
                                               const TrainerConfig& cfg);

// Observation-only variant (no training) for reporting.
struct CalibrationReport {
  std::vector<layers::ToyModel::Observation> per_layer;
  std::vector<layers::ToyModel::Observation> per_tag;
  std::vector<quant::StaticParams> frozen_params;  // aligned with per_layer
};
CalibrationReport calibrate_only(const SyntheticTask& task,
                                 const TrainerConfig& cfg);

}  // namespace fqat::trainer
