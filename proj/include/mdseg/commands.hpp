#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdseg/gradcheck.hpp"
#include "mdseg/model.hpp"

namespace mdseg {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // runtime, data, config or filesystem error; failed check
inline constexpr int kExitUsage = 2;

/// Every layer of `preset` (head output fixed to 2 classes) checked with seeds
/// seed, seed+1, ..., seed+n_seeds-1.
std::vector<GradCheckReport> grad_check_suite(const ArchPreset& preset, std::uint64_t seed, int n_seeds,
                                              double tolerance);

/// Entry point of the mdseg tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdseg
