#include "fqat/schedule.hpp"

#include <stdexcept>

namespace fqat::schedule {

std::size_t PrecisionSchedule::total_epochs() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.epochs;
  return n;
}

double PrecisionSchedule::final_bits() const {
  if (stages.empty()) throw std::invalid_argument("schedule has no stages");
  return stages.back().bits;
}

void validate(const PrecisionSchedule& s) {
  if (s.stages.empty()) {
    throw std::invalid_argument("schedule '" + s.name + "' has no stages");
  }
  double prev_bits = 0.0;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    const auto& st = s.stages[i];
    if (st.epochs < 1) {
      throw std::invalid_argument("schedule '" + s.name +
                                  "': every stage needs at least one epoch");
    }
    if (!(st.bits >= 1.0 && st.bits <= 32.0)) {
      throw std::invalid_argument("schedule '" + s.name +
                                  "': stage bits must lie in [1, 32]");
    }
    if (i > 0 && !(st.bits < prev_bits)) {
      throw std::invalid_argument("schedule '" + s.name +
                                  "': bit-widths must strictly decrease");
    }
    prev_bits = st.bits;
  }
}

namespace {

// Distributes `total` epochs over a fixed descent: one epoch per stage except
// the last, which absorbs the remainder.
PrecisionSchedule tail_heavy(std::string name, std::vector<double> bits,
                             std::size_t total) {
  if (total < bits.size()) {
    throw std::invalid_argument("schedule '" + name + "' needs at least " +
                                std::to_string(bits.size()) + " epochs");
  }
  PrecisionSchedule s;
  s.name = std::move(name);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const bool last = i + 1 == bits.size();
    s.stages.push_back({bits[i], last ? total - (bits.size() - 1) : 1});
  }
  return s;
}

}  // namespace

PrecisionSchedule builtin_fractional() {
  PrecisionSchedule s;
  s.name = "fractional";
  s.stages = {{8.0, 1},  {7.0, 1},  {6.0, 1},  {5.5, 1},  {5.0, 1},
              {4.75, 2}, {4.5, 2},  {4.25, 2}, {4.0, 14}};
  return s;
}

PrecisionSchedule builtin_integer(std::size_t total_epochs) {
  return tail_heavy("integer", {8.0, 7.0, 6.0, 5.0, 4.0}, total_epochs);
}

PrecisionSchedule builtin_simple(std::size_t total_epochs) {
  return tail_heavy("simple", {16.0, 8.0, 4.0}, total_epochs);
}

}  // namespace fqat::schedule
