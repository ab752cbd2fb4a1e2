#pragma once

// Precision schedules: ordered stages of (weight bit-width, epoch count)
// that a training run steps through from high to low precision.

#include <cstddef>
#include <string>
#include <vector>

namespace fqat::schedule {

struct Stage {
  double bits = 8.0;
  std::size_t epochs = 1;

  bool operator==(const Stage&) const = default;
};

struct PrecisionSchedule {
  std::string name;
  std::vector<Stage> stages;

  std::size_t total_epochs() const;
  double final_bits() const;

  bool operator==(const PrecisionSchedule&) const = default;
};

// Throws std::invalid_argument unless: at least one stage, every stage has
// epochs >= 1 and bits in [1, 32], and bit-widths strictly decrease.
void validate(const PrecisionSchedule& s);

// Fractional descent 8 -> 4 passing through half- and quarter-bit widths;
// 25 epochs total with a long final stage at 4 bits.
PrecisionSchedule builtin_fractional();

// Integer-only descent 8 -> 7 -> 6 -> 5 -> 4, one epoch per intermediate
// stage, remainder of the budget at 4 bits.
PrecisionSchedule builtin_integer(std::size_t total_epochs);

// Coarse descent 16 -> 8 -> 4 under the same budget rule.
PrecisionSchedule builtin_simple(std::size_t total_epochs);

}  // namespace fqat::schedule
