#include "fqat/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fqat/checkpoint.hpp"
#include "fqat/config.hpp"
#include "fqat/csv.hpp"

namespace fqat::cli {

namespace {

namespace fs = std::filesystem;

ExperimentConfig resolve(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts.config_path);
  if (opts.seed) cfg.task.seed = *opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return cfg;
}

std::string schedule_summary(const schedule::PrecisionSchedule& s) {
  std::ostringstream out;
  out << s.name << " [";
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    if (i) out << " ";
    out << format_double(s.stages[i].bits) << "b x" << s.stages[i].epochs;
  }
  out << "] = " << s.total_epochs() << " epochs";
  return out.str();
}

void print_plan(const std::string& command, const ExperimentConfig& cfg,
                const std::vector<std::string>& artifacts) {
  std::cout << "command: " << command << "\n";
  std::cout << "seed: " << cfg.task.seed << "\n";
  std::cout << "task: " << cfg.task.n_samples << " samples, width "
            << cfg.task.model.width << ", " << cfg.task.model.blocks
            << " blocks\n";
  std::cout << "schedule: " << schedule_summary(cfg.resolve_schedule()) << "\n";
  std::cout << "activations: " << format_double(cfg.act_bits) << "-bit "
            << (cfg.act_mode == quant::Mode::Static ? "static" : "dynamic")
            << "\n";
  std::cout << "output: " << cfg.out_dir << "\n";
  for (const auto& a : artifacts) std::cout << "  would write " << a << "\n";
}

void write_status_ok(const ExperimentConfig& cfg, const std::string& command) {
  atomic_write_file(cfg.out_dir + "/status.txt",
                    "status = ok\ncommand = " + command + "\n");
}

void write_status_aborted(const ExperimentConfig& cfg, const std::string& command,
                          const std::string& error) {
  atomic_write_file(cfg.out_dir + "/status.txt", "status = aborted\ncommand = " +
                                                     command + "\nerror = " +
                                                     error + "\n");
}

void save_checkpoint_atomic(const layers::ToyModel& model, const std::string& path) {
  const std::string tmp = path + ".tmp";
  layers::save_checkpoint(model, tmp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw std::runtime_error("rename '" + tmp + "' -> '" + path +
                             "' failed: " + ec.message());
  }
}

void archive_config(const ExperimentConfig& cfg) {
  atomic_write_file(cfg.out_dir + "/resolved.cfg", render_config(cfg));
}

std::string observation_table(
    const std::vector<layers::ToyModel::Observation>& obs, const char* id_column) {
  CsvBuilder csv({id_column, "tag", "count", "mean", "std", "inlier_lo",
                  "inlier_hi", "outlier_fraction"});
  for (const auto& o : obs) {
    csv.cell(o.name)
        .cell(layers::tag_name(o.tag))
        .cell(std::uint64_t(o.stats.count))
        .cell(o.stats.mean)
        .cell(o.stats.std_dev)
        .cell(o.stats.inlier_lo)
        .cell(o.stats.inlier_hi)
        .cell(o.stats.outlier_fraction);
    csv.end_row();
  }
  return csv.str();
}

}  // namespace

int cmd_train(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve(opts);
  trainer::TrainerConfig tcfg = cfg.trainer_config();
  if (opts.dry_run) {
    std::vector<std::string> artifacts = {"resolved.cfg", "metrics.csv",
                                          "student.fqat"};
    if (cfg.act_mode == quant::Mode::Static) {
      artifacts.push_back("calibration_layers.csv");
      artifacts.push_back("calibration_tags.csv");
    }
    artifacts.push_back("status.txt");
    print_plan("train", cfg, artifacts);
    return kExitOk;
  }
  archive_config(cfg);
  tcfg.abort_checkpoint_path = cfg.out_dir + "/student.aborted.fqat";

  trainer::SyntheticTask task(cfg.task);
  try {
    trainer::RunResult result;
    if (cfg.act_mode == quant::Mode::Static) {
      auto outcome = trainer::calibrate_then_train_static(task, tcfg);
      atomic_write_file(cfg.out_dir + "/calibration_layers.csv",
                        observation_table(outcome.per_layer, "layer"));
      atomic_write_file(cfg.out_dir + "/calibration_tags.csv",
                        observation_table(outcome.per_tag, "tag"));
      result = std::move(outcome.run);
    } else {
      result = trainer::run_qat(task, tcfg);
    }
    atomic_write_file(cfg.out_dir + "/metrics.csv",
                      metrics_to_csv(result.metrics));
    save_checkpoint_atomic(result.student, cfg.out_dir + "/student.fqat");
    write_status_ok(cfg, "train");
    std::cout << "train: " << result.metrics.epochs.size()
              << " epochs, final val loss = "
              << format_double(result.metrics.final_val_loss()) << "\n";
    return kExitOk;
  } catch (const trainer::TrainingAborted& e) {
    write_status_aborted(cfg, "train", e.what());
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_sweep_bits(const CommonOpts& opts, const std::vector<double>& bits_override) {
  ExperimentConfig cfg = resolve(opts);
  if (!bits_override.empty()) {
    cfg.sweep_bits = bits_override;
    for (double b : cfg.sweep_bits) {
      if (!(b >= 1.0 && b <= 32.0)) {
        throw ConfigError("--bits values must lie in [1, 32]");
      }
    }
  }
  if (opts.dry_run) {
    print_plan("sweep-bits", cfg, {"resolved.cfg", "sweep.csv", "status.txt"});
    return kExitOk;
  }
  archive_config(cfg);

  trainer::SyntheticTask task(cfg.task);
  const auto rows = trainer::bit_sweep(task, cfg.sweep_bits, cfg.batch_size);
  CsvBuilder csv({"bits", "val_loss"});
  for (const auto& r : rows) {
    csv.cell(r.bits).cell(r.val_loss);
    csv.end_row();
  }
  atomic_write_file(cfg.out_dir + "/sweep.csv", csv.str());
  write_status_ok(cfg, "sweep-bits");
  std::cout << "sweep-bits: " << rows.size() << " bit-widths, val loss "
            << format_double(rows.front().val_loss) << " ("
            << format_double(rows.front().bits) << "b) ... "
            << format_double(rows.back().val_loss) << " ("
            << format_double(rows.back().bits) << "b)\n";
  return kExitOk;
}

int cmd_compare_schedules(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve(opts);
  if (opts.dry_run) {
    print_plan("compare-schedules", cfg,
               {"resolved.cfg", "summary.csv", "curves.csv", "status.txt"});
    std::cout << "contenders: fractional, integer, simple x " << cfg.num_seeds
              << " seeds\n";
    return kExitOk;
  }
  archive_config(cfg);

  std::vector<std::uint64_t> seeds(cfg.num_seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = cfg.task.seed + i;
  const auto runs = trainer::compare_schedules(cfg.task, cfg.trainer_config(),
                                               seeds, cfg.budget);

  CsvBuilder summary({"schedule", "seed", "final_val_loss"});
  CsvBuilder curves(
      {"schedule", "seed", "epoch", "stage_bits", "train_loss", "val_loss"});
  for (const auto& run : runs) {
    summary.cell(run.schedule)
        .cell(std::uint64_t(run.seed))
        .cell(run.metrics.final_val_loss());
    summary.end_row();
    for (const auto& e : run.metrics.epochs) {
      curves.cell(run.schedule)
          .cell(std::uint64_t(run.seed))
          .cell(std::uint64_t(e.epoch))
          .cell(e.stage_bits)
          .cell(e.train_loss)
          .cell(e.val_loss);
      curves.end_row();
    }
  }
  atomic_write_file(cfg.out_dir + "/summary.csv", summary.str());
  atomic_write_file(cfg.out_dir + "/curves.csv", curves.str());
  write_status_ok(cfg, "compare-schedules");

  for (const auto* name : {"fractional", "integer", "simple"}) {
    std::vector<double> finals;
    for (const auto& run : runs) {
      if (run.schedule == name) finals.push_back(run.metrics.final_val_loss());
    }
    std::sort(finals.begin(), finals.end());
    const double median = finals[finals.size() / 2];
    std::cout << "compare-schedules: " << name << " median final val loss = "
              << format_double(median) << " over " << finals.size() << " seeds\n";
  }
  return kExitOk;
}

int cmd_calibrate(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve(opts);
  if (opts.dry_run) {
    print_plan("calibrate", cfg,
               {"resolved.cfg", "calibration_layers.csv", "calibration_tags.csv",
                "status.txt"});
    return kExitOk;
  }
  archive_config(cfg);

  trainer::SyntheticTask task(cfg.task);
  const auto rep = trainer::calibrate_only(task, cfg.trainer_config());

  // Per-layer table with the frozen affine parameters appended.
  CsvBuilder csv({"layer", "tag", "count", "mean", "std", "inlier_lo",
                  "inlier_hi", "outlier_fraction", "scale", "offset"});
  for (std::size_t i = 0; i < rep.per_layer.size(); ++i) {
    const auto& o = rep.per_layer[i];
    csv.cell(o.name)
        .cell(layers::tag_name(o.tag))
        .cell(std::uint64_t(o.stats.count))
        .cell(o.stats.mean)
        .cell(o.stats.std_dev)
        .cell(o.stats.inlier_lo)
        .cell(o.stats.inlier_hi)
        .cell(o.stats.outlier_fraction)
        .cell(rep.frozen_params[i].scale)
        .cell(rep.frozen_params[i].offset);
    csv.end_row();
  }
  atomic_write_file(cfg.out_dir + "/calibration_layers.csv", csv.str());
  atomic_write_file(cfg.out_dir + "/calibration_tags.csv",
                    observation_table(rep.per_tag, "tag"));
  write_status_ok(cfg, "calibrate");
  std::cout << "calibrate: froze activation ranges for " << rep.per_layer.size()
            << " layers from " << cfg.calibration_samples << " samples\n";
  return kExitOk;
}

int cmd_outlier_report(const CommonOpts& opts, const std::string& checkpoint_path) {
  ExperimentConfig cfg = resolve(opts);
  if (opts.dry_run) {
    print_plan("outlier-report", cfg,
               {"resolved.cfg", "outliers_layers.csv", "outliers_tags.csv",
                "status.txt"});
    std::cout << "checkpoint: " << checkpoint_path << "\n";
    return kExitOk;
  }
  archive_config(cfg);

  layers::ToyModel model = layers::load_checkpoint(checkpoint_path);
  if (model.config().width != cfg.task.model.width) {
    throw std::invalid_argument("checkpoint width " +
                                std::to_string(model.config().width) +
                                " does not match task width " +
                                std::to_string(cfg.task.model.width));
  }
  trainer::SyntheticTask task(cfg.task);
  model.enable_observers();
  for (const auto& x : task.val_batches(cfg.batch_size)) model.observe(x);
  const auto per_layer = model.collect_observations(cfg.k_sigma);
  const auto per_tag = model.collect_tag_observations(cfg.k_sigma);

  atomic_write_file(cfg.out_dir + "/outliers_layers.csv",
                    observation_table(per_layer, "layer"));
  atomic_write_file(cfg.out_dir + "/outliers_tags.csv",
                    observation_table(per_tag, "tag"));
  write_status_ok(cfg, "outlier-report");
  std::cout << "outlier-report: " << per_layer.size() << " layers over "
            << task.val_rows() << " validation rows\n";
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"fractional-bit quantization-aware training workbench"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::vector<double> sweep_bits;
  std::string checkpoint_path;

  auto add_common = [&opts](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "experiment config file")
        ->required();
    sub->add_option("--out", opts.out_dir,
                    "output directory (overrides [output] directory)");
    sub->add_option("--seed", opts.seed, "override the task seed");
    sub->add_flag("--dry-run", opts.dry_run,
                  "validate, print the effective plan, write nothing");
  };

  CLI::App* train = app.add_subcommand(
      "train", "distill a quantized student under a precision schedule");
  add_common(train);
  CLI::App* sweep = app.add_subcommand(
      "sweep-bits", "weight-only quantization sensitivity sweep (no training)");
  add_common(sweep);
  sweep->add_option("--bits", sweep_bits, "bit-widths to sweep")->delimiter(',');
  CLI::App* compare = app.add_subcommand(
      "compare-schedules",
      "fractional vs integer vs simple schedules over multiple seeds");
  add_common(compare);
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "freeze static activation ranges from calibration samples");
  add_common(calibrate);
  CLI::App* outlier = app.add_subcommand(
      "outlier-report", "activation outlier statistics of a saved model");
  add_common(outlier);
  outlier->add_option("--checkpoint", checkpoint_path, "model checkpoint to inspect")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(opts);
    if (*sweep) return cmd_sweep_bits(opts, sweep_bits);
    if (*compare) return cmd_compare_schedules(opts);
    if (*calibrate) return cmd_calibrate(opts);
    if (*outlier) return cmd_outlier_report(opts, checkpoint_path);
    std::cerr << "error: no command selected\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace fqat::cli
