#pragma once

// Central finite-difference verification of recorded gradients. Runs in
// double precision only; the forward closure is re-evaluated with perturbed
// leaf values, so it must rebuild its graph on every call.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hsimamba/tensor.hpp"

namespace hsi {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;

  bool passed(double tol) const { return max_rel_err <= tol; }
};

/// Relative error with a small floor so finite-difference noise on
/// near-zero entries is not amplified into spurious failures.
inline double gradcheck_rel_err(double analytic, double numeric) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
  return std::fabs(analytic - numeric) / denom;
}

/// Checks d(loss)/d(param) for every element of every named parameter.
/// `loss_fn` must be a pure function of the current parameter values.
inline GradCheckReport finite_difference_check(
    const std::function<Tensor<double>()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor<double>>>& params, double step = 1e-5) {
  // Analytic pass.
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape<double> tape;
    for (auto& [name, p] : params) {
      Tensor<double>(p).zero_grad();
    }
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i].second;
      if (p.has_grad()) {
        analytic[i].assign(p.grad().begin(), p.grad().end());
      } else {
        analytic[i].assign(p.numel(), 0.0);
      }
    }
  }

  // Numeric pass: no tape active, forward only.
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<double> p = params[i].second;
    auto vals = p.mutable_values();
    GradCheckEntry entry{params[i].first, 0.0};
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + step;
      const double up = loss_fn().item();
      vals[j] = saved - step;
      const double down = loss_fn().item();
      vals[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      entry.max_rel_err = std::max(entry.max_rel_err, gradcheck_rel_err(analytic[i][j], numeric));
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hsi
