#pragma once

// CSV serialization for run artifacts. Numbers are rendered with %.17g in the
// C locale so doubles round-trip exactly and repeated runs produce
// byte-identical files. The reader is strict: consistent column counts,
// fully-consumed numeric cells, and no NaN/Inf.

#include <cstdint>
#include <string>
#include <vector>

#include "fqat/trainer.hpp"

namespace fqat::cli {

std::string format_double(double v);  // %.17g, C locale

class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header);

  CsvBuilder& cell(const std::string& v);
  CsvBuilder& cell(double v);
  CsvBuilder& cell(std::uint64_t v);
  void end_row();  // throws if the row width differs from the header

  const std::string& str() const { return out_; }

 private:
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
  std::string out_;
};

// Throws std::runtime_error on ragged rows or an empty document.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// Strict double: full consumption, finite. Throws std::runtime_error.
double parse_double_cell(const std::string& cell);
std::uint64_t parse_uint_cell(const std::string& cell);

// Per-epoch metrics table: epoch, stage_bits, train_loss, val_loss,
// wall_time_s, then one outlier_<layer> column per layer.
std::string metrics_to_csv(const trainer::RunMetrics& m);
trainer::RunMetrics metrics_from_csv(const std::string& text);

// Writes content to <path>.tmp then renames over path (single-filesystem
// atomicity); throws std::runtime_error on I/O failure.
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace fqat::cli
