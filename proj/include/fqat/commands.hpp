#pragma once

// Command implementations behind the CLI: each loads + validates the
// experiment config, honors --out/--seed overrides and --dry-run, writes its
// artifacts atomically into the run directory, and finishes with a status
// sidecar. Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fqat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;  // empty = take from config
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

int cmd_train(const CommonOpts& opts);
int cmd_sweep_bits(const CommonOpts& opts, const std::vector<double>& bits_override);
int cmd_compare_schedules(const CommonOpts& opts);
int cmd_calibrate(const CommonOpts& opts);
int cmd_outlier_report(const CommonOpts& opts, const std::string& checkpoint_path);

// Full argv entry point (CLI11 wiring + exit-code policy).
int run_cli(int argc, const char* const* argv);

}  // namespace fqat::cli
