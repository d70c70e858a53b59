#pragma once

// Central finite-difference verification of every differentiable op, the
// three sub-layers, attention and the full tagger, in 64-bit arithmetic.

#include <cstdint>
#include <string>
#include <vector>

namespace deepatt {

struct GradCheckOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error of near-zero derivatives.
  double floor = 1e-3;
  // Name of a registered check whose analytic gradient is perturbed on
  // purpose (negative control); empty for none.
  std::string corrupt;
};

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  std::size_t seeds = 0;
  bool pass = false;
};

// Registered check names, in report order.
std::vector<std::string> gradcheck_ops();

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options = {});

// "op=<name> max_rel_err=<e> PASS|FAIL"
std::string format_gradcheck_line(const GradCheckResult& result);

}  // namespace deepatt
