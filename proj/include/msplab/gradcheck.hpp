#pragma once

// Library-level finite-difference gradient audit. Central differences against
// the analytic backward pass for every differentiable operation, the prompt
// cosine penalty, and the full model forward with respect to prompts.

#include <cstdint>
#include <string>
#include <vector>

namespace msplab {

struct GradCheckEntry {
  std::string op;
  int instances = 0;
  double max_rel_err = 0.0;
  bool ok = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool all_ok() const;
  double worst() const;  // max over entries
};

// `instances` random instances per operation, deterministic in seed.
// Relative error uses a small denominator floor so near-zero gradients are
// judged on the finite-difference noise scale rather than blowing up.
GradCheckReport run_gradient_suite(int instances = 20, uint64_t seed = 12345,
                                   double tol = 1e-4);

std::string format_gradcheck(const GradCheckReport& report);  // one line per op

}  // namespace msplab
