#pragma once

// Shared helpers for the test binaries: finite-difference gradient checking
// and deterministic random tensor construction.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "msplab/rng.hpp"
#include "msplab/tensor.hpp"

namespace msplab::testutil {

inline TensorPtr random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                               double sigma = 1.0) {
  auto t = Tensor::create(std::move(shape), requires_grad);
  for (auto& v : t->data) v = rng.gaussian(sigma);
  return t;
}

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string detail;  // first offending entry, empty when ok
};

// Central differences against the analytic gradient of a scalar function of
// the given inputs. Relative error uses max(|analytic|, |numeric|, 1e-2) as
// the denominator so near-zero gradients do not blow the ratio up.
inline GradCheckResult check_gradients(const std::vector<TensorPtr>& inputs,
                                       const std::function<TensorPtr()>& make_loss,
                                       double h = 1e-5, double tol = 1e-4) {
  GradCheckResult res;
  for (const auto& in : inputs) in->zero_grad();
  auto loss = make_loss();
  backward(loss);

  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    for (size_t i = 0; i < in->numel(); ++i) {
      const double orig = in->data[i];
      in->data[i] = orig + h;
      const double up = make_loss()->item();
      in->data[i] = orig - h;
      const double down = make_loss()->item();
      in->data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = in->grad[i];
      const double rel =
          std::fabs(analytic - numeric) /
          std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
      if (rel > res.max_rel_err) res.max_rel_err = rel;
      if (rel > tol && res.ok) {
        res.ok = false;
        res.detail = "input " + std::to_string(t) + " element " + std::to_string(i) +
                     ": analytic " + std::to_string(analytic) + " vs numeric " +
                     std::to_string(numeric) + " (rel " + std::to_string(rel) + ")";
      }
    }
  }
  return res;
}

}  // namespace msplab::testutil
