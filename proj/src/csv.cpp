#include "fqat/csv.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fqat::cli {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvBuilder::CsvBuilder(std::vector<std::string> header) : columns_(header.size()) {
  if (header.empty()) throw std::invalid_argument("CSV needs at least one column");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out_ += ',';
    out_ += header[i];
  }
  out_ += '\n';
}

CsvBuilder& CsvBuilder::cell(const std::string& v) {
  if (v.find_first_of(",\n\"") != std::string::npos) {
    throw std::invalid_argument("CSV cell may not contain separators: '" + v + "'");
  }
  if (in_row_ >= columns_) throw std::invalid_argument("CSV row too wide");
  if (in_row_) out_ += ',';
  out_ += v;
  ++in_row_;
  return *this;
}

CsvBuilder& CsvBuilder::cell(double v) { return cell(format_double(v)); }

CsvBuilder& CsvBuilder::cell(std::uint64_t v) { return cell(std::to_string(v)); }

void CsvBuilder::end_row() {
  if (in_row_ != columns_) {
    throw std::invalid_argument("CSV row has " + std::to_string(in_row_) +
                                " cells, header has " + std::to_string(columns_));
  }
  out_ += '\n';
  in_row_ = 0;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) {
      throw std::runtime_error("CSV is missing a trailing newline");
    }
    std::vector<std::string> cells;
    std::size_t cell_start = line_start;
    for (std::size_t i = line_start; i <= line_end; ++i) {
      if (i == line_end || text[i] == ',') {
        cells.emplace_back(text, cell_start, i - cell_start);
        cell_start = i + 1;
      }
    }
    if (!rows.empty() && cells.size() != rows.front().size()) {
      throw std::runtime_error("CSV row " + std::to_string(rows.size() + 1) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " +
                               std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(cells));
    line_start = line_end + 1;
  }
  if (rows.empty()) throw std::runtime_error("CSV document is empty");
  return rows;
}

double parse_double_cell(const std::string& cell) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("malformed number in CSV cell '" + cell + "'");
  }
  if (used != cell.size()) {
    throw std::runtime_error("trailing characters in CSV cell '" + cell + "'");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite number in CSV cell '" + cell + "'");
  }
  return v;
}

std::uint64_t parse_uint_cell(const std::string& cell) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!cell.empty() && cell[0] == '-') throw std::runtime_error("negative");
    v = std::stoull(cell, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("malformed integer in CSV cell '" + cell + "'");
  }
  if (used != cell.size()) {
    throw std::runtime_error("trailing characters in CSV cell '" + cell + "'");
  }
  return v;
}

namespace {
constexpr const char* kOutlierPrefix = "outlier_";
}

std::string metrics_to_csv(const trainer::RunMetrics& m) {
  std::vector<std::string> header = {"epoch", "stage_bits", "train_loss",
                                     "val_loss", "wall_time_s"};
  for (const auto& name : m.layer_names) header.push_back(kOutlierPrefix + name);
  CsvBuilder csv(std::move(header));
  for (const auto& e : m.epochs) {
    if (e.layer_outlier_fraction.size() != m.layer_names.size()) {
      throw std::invalid_argument("epoch record outlier count mismatch");
    }
    csv.cell(std::uint64_t(e.epoch))
        .cell(e.stage_bits)
        .cell(e.train_loss)
        .cell(e.val_loss)
        .cell(e.wall_time_s);
    for (double f : e.layer_outlier_fraction) csv.cell(f);
    csv.end_row();
  }
  return csv.str();
}

trainer::RunMetrics metrics_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  const auto& header = rows.front();
  const std::vector<std::string> fixed = {"epoch", "stage_bits", "train_loss",
                                          "val_loss", "wall_time_s"};
  if (header.size() < fixed.size()) {
    throw std::runtime_error("metrics CSV header too short");
  }
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (header[i] != fixed[i]) {
      throw std::runtime_error("metrics CSV header mismatch at column " +
                               std::to_string(i) + ": '" + header[i] + "'");
    }
  }
  trainer::RunMetrics m;
  for (std::size_t i = fixed.size(); i < header.size(); ++i) {
    const auto& h = header[i];
    if (h.rfind(kOutlierPrefix, 0) != 0) {
      throw std::runtime_error("unexpected metrics CSV column '" + h + "'");
    }
    m.layer_names.push_back(h.substr(std::string(kOutlierPrefix).size()));
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    trainer::EpochRecord e;
    e.epoch = std::size_t(parse_uint_cell(row[0]));
    e.stage_bits = parse_double_cell(row[1]);
    e.train_loss = parse_double_cell(row[2]);
    e.val_loss = parse_double_cell(row[3]);
    e.wall_time_s = parse_double_cell(row[4]);
    for (std::size_t i = fixed.size(); i < row.size(); ++i) {
      e.layer_outlier_fraction.push_back(parse_double_cell(row[i]));
    }
    m.epochs.push_back(std::move(e));
  }
  return m;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    throw std::runtime_error("rename '" + tmp.string() + "' -> '" +
                             target.string() + "' failed: " + ec.message());
  }
}

}  // namespace fqat::cli
