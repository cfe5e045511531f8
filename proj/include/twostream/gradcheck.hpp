#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "twostream/optim.hpp"

namespace twostream {

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.rel_error);
    return m;
  }
  const GradCheckEntry* worst() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& e : entries)
      if (!w || e.rel_error > w->rel_error) w = &e;
    return w;
  }
};

/// Compares reverse-mode gradients of `loss` against central differences
/// with step h, one tensor at a time. `loss` must rebuild the graph from the
/// current parameter values on every call.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& loss,
                                  std::vector<ParamRef<double>> params, double h = 1e-5,
                                  double norm_floor = 1e-8) {
  for (auto& p : params) p.tensor.zero_grad();
  loss().backward();
  GradCheckReport report;
  for (auto& p : params) {
    auto w = p.tensor.data();
    std::vector<double> analytic(w.size(), 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      analytic.assign(g.begin(), g.end());
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss().item();
      w[i] = saved - h;
      const double down = loss().item();
      w[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    GradCheckEntry e{p.name, 0.0, std::sqrt(a2), std::sqrt(n2)};
    e.rel_error = std::sqrt(diff2) / std::max({e.analytic_norm, e.numeric_norm, norm_floor});
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace twostream
