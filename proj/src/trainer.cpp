#include "fqat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fqat/checkpoint.hpp"

namespace fqat::trainer {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent deterministic RNG streams derived from one task seed.
enum class Stream : std::uint64_t { Data = 1, Teacher = 2, Outliers = 3, Calib = 4 };

std::uint64_t substream(std::uint64_t seed, Stream s) {
  return splitmix64(seed ^ splitmix64(std::uint64_t(s)));
}

void freeze(layers::ToyModel& m) {
  for (auto& p : m.all_params()) p.set_requires_grad(false);
}

}  // namespace

void Adam::step(const std::vector<engine::Tensor>& params) {
  for (const auto& p : params) {
    auto node = p.node();
    const auto& g = p.grad();  // throws when no gradient was computed
    auto& st = state_[node.get()];
    if (st.m.size() != g.size()) {
      st.m.assign(g.size(), 0.0);
      st.v.assign(g.size(), 0.0);
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(st.t));
    auto& w = node->values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = st.m[i] / bc1;
      const double v_hat = st.v[i] / bc2;
      const double update = m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                            cfg_.weight_decay * double(w[i]);
      w[i] = float(double(w[i]) - cfg_.learning_rate * update);
    }
  }
}

void Adam::zero_grad(const std::vector<engine::Tensor>& params) {
  for (const auto& p : params) p.zero_grad();
}

SyntheticTask::SyntheticTask(TaskConfig cfg) : cfg_(cfg) {
  if (cfg_.n_samples == 0) throw std::invalid_argument("task needs samples");
  if (!(cfg_.validation_fraction > 0.0 && cfg_.validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must lie in (0, 1)");
  }
  n_rows_ = cfg_.n_samples;
  const std::size_t width = cfg_.model.width;
  rows_.resize(n_rows_ * width);
  std::mt19937_64 rng(substream(cfg_.seed, Stream::Data));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : rows_) v = float(dist(rng));

  auto val_rows = std::size_t(std::llround(cfg_.validation_fraction * double(n_rows_)));
  val_rows = std::clamp<std::size_t>(val_rows, 1, n_rows_ - 1);
  val_start_ = n_rows_ - val_rows;
}

layers::ToyModel SyntheticTask::make_teacher() const {
  layers::ToyModel teacher =
      layers::ToyModel::random(cfg_.model, substream(cfg_.seed, Stream::Teacher));
  std::mt19937_64 rng(substream(cfg_.seed, Stream::Outliers));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto* lin : teacher.linears()) {
    for (auto& w : lin->weight().values_mut()) {
      if (u(rng) < cfg_.outlier_prob) w = float(double(w) * cfg_.outlier_scale);
    }
  }
  freeze(teacher);
  return teacher;
}

std::vector<engine::Tensor> SyntheticTask::slice_batches(
    std::size_t begin, std::size_t end, std::size_t batch_size) const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const std::size_t width = cfg_.model.width;
  std::vector<engine::Tensor> out;
  for (std::size_t r = begin; r < end; r += batch_size) {
    const std::size_t take = std::min(batch_size, end - r);
    std::vector<float> chunk(rows_.begin() + std::ptrdiff_t(r * width),
                             rows_.begin() + std::ptrdiff_t((r + take) * width));
    out.push_back(engine::Tensor::from_data(std::move(chunk), {take, width}));
  }
  return out;
}

std::vector<engine::Tensor> SyntheticTask::train_batches(
    std::size_t batch_size) const {
  return slice_batches(0, val_start_, batch_size);
}

std::vector<engine::Tensor> SyntheticTask::val_batches(
    std::size_t batch_size) const {
  return slice_batches(val_start_, n_rows_, batch_size);
}

std::vector<engine::Tensor> SyntheticTask::calibration_batches(
    std::size_t n_rows, std::size_t batch_size) const {
  if (n_rows == 0 || n_rows > val_start_) {
    throw std::invalid_argument("calibration sample count must lie in [1, train rows]");
  }
  std::vector<std::size_t> idx(val_start_);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(substream(cfg_.seed, Stream::Calib));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n_rows);

  const std::size_t width = cfg_.model.width;
  std::vector<engine::Tensor> out;
  for (std::size_t r = 0; r < n_rows; r += batch_size) {
    const std::size_t take = std::min(batch_size, n_rows - r);
    std::vector<float> chunk(take * width);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t src = idx[r + i] * width;
      std::copy(rows_.begin() + std::ptrdiff_t(src),
                rows_.begin() + std::ptrdiff_t(src + width),
                chunk.begin() + std::ptrdiff_t(i * width));
    }
    out.push_back(engine::Tensor::from_data(std::move(chunk), {take, width}));
  }
  return out;
}

double RunMetrics::final_val_loss() const {
  if (epochs.empty()) throw std::invalid_argument("run recorded no epochs");
  return epochs.back().val_loss;
}

double distill_step(const layers::ToyModel& teacher, layers::ToyModel& student,
                    const engine::Tensor& x, Adam& opt) {
  const engine::Tensor target =
      engine::stop_grad(teacher.forward(x, layers::ForwardMode::Full));
  const engine::Tensor pred = student.forward(x, layers::ForwardMode::Quantized);
  const engine::Tensor loss = engine::mse_loss(pred, target);
  const double loss_value = loss.scalar();

  auto params = student.trainable_params();
  engine::backward(loss);
  opt.step(params);
  opt.zero_grad(params);
  return loss_value;
}

double evaluate(const layers::ToyModel& teacher, const layers::ToyModel& student,
                const std::vector<engine::Tensor>& batches) {
  if (batches.empty()) throw std::invalid_argument("evaluate needs batches");
  double sq_sum = 0.0;
  std::size_t count = 0;
  for (const auto& x : batches) {
    const engine::Tensor target = teacher.forward(x, layers::ForwardMode::Full);
    const engine::Tensor pred = student.forward(x, layers::ForwardMode::Quantized);
    const engine::Tensor loss = engine::mse_loss(pred, target);
    sq_sum += loss.scalar() * double(pred.size());
    count += pred.size();
  }
  return sq_sum / double(count);
}

std::vector<double> outlier_snapshot(layers::ToyModel& student,
                                     const engine::Tensor& batch) {
  student.enable_observers();
  student.observe(batch);
  const auto obs = student.collect_observations(3.0);
  student.clear_observers();
  std::vector<double> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(o.stats.outlier_fraction);
  return out;
}

namespace {

RunMetrics train_loop(const layers::ToyModel& teacher, layers::ToyModel& student,
                      const SyntheticTask& task, const TrainerConfig& cfg) {
  schedule::validate(cfg.sched);
  const auto train = task.train_batches(cfg.batch_size);
  const auto val = task.val_batches(cfg.batch_size);
  if (train.empty() || val.empty()) {
    throw std::invalid_argument("task split produced no batches");
  }

  Adam adam({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps,
             cfg.weight_decay});
  RunMetrics metrics;
  for (const auto* lin : std::as_const(student).linears()) {
    metrics.layer_names.push_back(lin->name());
  }

  std::size_t epoch = 0;
  for (const auto& stage : cfg.sched.stages) {
    student.set_weight_bits(stage.bits);
    for (std::size_t i = 0; i < stage.epochs; ++i) {
      ++epoch;
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = epoch;
      rec.stage_bits = stage.bits;
      try {
        double acc = 0.0;
        for (const auto& x : train) {
          acc += distill_step(teacher, student, x, adam);
        }
        rec.train_loss = acc / double(train.size());
        rec.val_loss = evaluate(teacher, student, val);
        rec.layer_outlier_fraction = outlier_snapshot(student, val.front());
      } catch (const NumericError& e) {
        if (!cfg.abort_checkpoint_path.empty()) {
          layers::save_checkpoint(student, cfg.abort_checkpoint_path);
        }
        throw TrainingAborted("training diverged at epoch " +
                                  std::to_string(epoch) + ": " + e.what(),
                              epoch);
      }
      if (cfg.measure_wall_time) {
        rec.wall_time_s = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
      }
      metrics.epochs.push_back(std::move(rec));
    }
  }
  return metrics;
}

// Shared setup: student bootstrapped from the teacher's weights at the
// configured activation width.
layers::ToyModel make_student(const layers::ToyModel& teacher,
                              const TrainerConfig& cfg) {
  layers::ToyModel student = teacher.clone();
  student.set_act_bits(cfg.act_bits);
  return student;
}

}  // namespace

RunResult run_qat(const SyntheticTask& task, const TrainerConfig& cfg) {
  const layers::ToyModel teacher = task.make_teacher();
  layers::ToyModel student = make_student(teacher, cfg);
  student.select_trainable(cfg.selection);
  RunMetrics metrics = train_loop(teacher, student, task, cfg);
  return {std::move(student), std::move(metrics)};
}

std::vector<SweepRow> bit_sweep(const SyntheticTask& task,
                                std::vector<double> bits_list,
                                std::size_t batch_size) {
  if (bits_list.empty()) throw std::invalid_argument("bit sweep needs bit-widths");
  std::sort(bits_list.begin(), bits_list.end(), std::greater<>());
  const layers::ToyModel teacher = task.make_teacher();
  layers::ToyModel student = teacher.clone();
  student.set_act_quant_enabled(false);  // isolate weight precision
  const auto val = task.val_batches(batch_size);

  std::vector<SweepRow> rows;
  for (double bits : bits_list) {
    student.set_weight_bits(bits);
    rows.push_back({bits, evaluate(teacher, student, val)});
  }
  return rows;
}

std::vector<ScheduleRun> compare_schedules(const TaskConfig& base_task,
                                           const TrainerConfig& base_cfg,
                                           std::span<const std::uint64_t> seeds,
                                           std::size_t budget) {
  if (seeds.empty()) throw std::invalid_argument("schedule comparison needs seeds");
  const auto fractional = schedule::builtin_fractional();
  if (budget != fractional.total_epochs()) {
    throw std::invalid_argument(
        "schedule comparison budget must match the fractional schedule (" +
        std::to_string(fractional.total_epochs()) + " epochs)");
  }
  const std::vector<schedule::PrecisionSchedule> contenders = {
      fractional, schedule::builtin_integer(budget),
      schedule::builtin_simple(budget)};

  std::vector<ScheduleRun> runs;
  for (const auto& sched : contenders) {
    for (std::uint64_t seed : seeds) {
      TaskConfig tc = base_task;
      tc.seed = seed;
      SyntheticTask task(tc);
      TrainerConfig cfg = base_cfg;
      cfg.sched = sched;
      runs.push_back({sched.name, seed, run_qat(task, cfg).metrics});
    }
  }
  return runs;
}

namespace {

struct CalibratedStudent {
  layers::ToyModel student;
  std::vector<layers::ToyModel::Observation> per_layer;
  std::vector<layers::ToyModel::Observation> per_tag;
};

CalibratedStudent calibrate_student(const layers::ToyModel& teacher,
                                    const SyntheticTask& task,
                                    const TrainerConfig& cfg) {
  layers::ToyModel student = teacher.clone();
  student.set_act_bits(cfg.act_bits);
  // The output head keeps a wider activation range when frozen.
  student.set_act_bits(layers::LayerTag::Other, cfg.head_act_bits_static);

  student.enable_observers();
  for (const auto& x :
       task.calibration_batches(cfg.calibration_samples, cfg.batch_size)) {
    student.observe(x);
  }
  CalibratedStudent out{std::move(student),
                        {},
                        {}};
  out.per_layer = out.student.collect_observations(cfg.k_sigma);
  out.per_tag = out.student.collect_tag_observations(cfg.k_sigma);
  out.student.install_static_activations(out.per_layer);
  out.student.clear_observers();
  return out;
}

}  // namespace

CalibrationOutcome calibrate_then_train_static(const SyntheticTask& task,
                                               const TrainerConfig& cfg) {
  const layers::ToyModel teacher = task.make_teacher();
  CalibratedStudent cs = calibrate_student(teacher, task, cfg);
  cs.student.select_trainable(cfg.selection);
  RunMetrics metrics = train_loop(teacher, cs.student, task, cfg);
  return {std::move(cs.per_layer),
          std::move(cs.per_tag),
          {std::move(cs.student), std::move(metrics)}};
}

CalibrationReport calibrate_only(const SyntheticTask& task,
                                 const TrainerConfig& cfg) {
  const layers::ToyModel teacher = task.make_teacher();
  CalibratedStudent cs = calibrate_student(teacher, task, cfg);
  CalibrationReport rep;
  rep.per_layer = std::move(cs.per_layer);
  rep.per_tag = std::move(cs.per_tag);
  for (const auto* lin : std::as_const(cs.student).linears()) {
    rep.frozen_params.push_back(*lin->act_spec.static_params);
  }
  return rep;
}

}  // namespace fqat::trainer
