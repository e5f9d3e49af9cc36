#pragma once

// Finite-difference verification of every differentiable op, run on small
// 64-bit inputs. Shared by the `gradcheck` command and the test suites.

#include <cstdint>
#include <string>
#include <vector>

namespace rcan {

inline constexpr double kGradTolerance = 1e-4;

struct GradSuiteEntry {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;

  bool passed() const { return max_rel_error < kGradTolerance; }
};

// Inputs are drawn from seed; the largest is 1x4x4x4x4.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace rcan
