#pragma once

// Central finite-difference oracle for reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gcm/autodiff.hpp"
#include "gcm/nn.hpp"

namespace gcm::ad {

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from reporting roundoff as a relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against (L(x+h) - L(x-h)) / 2h for every scalar of
/// every named parameter. `loss_fn` must rebuild the graph on each call and
/// be deterministic (reseed any rng inside it).
inline GradCheckReport check_gradients(const std::function<Value()>& loss_fn,
                                       nn::ParameterStore& params, double h = 1e-5,
                                       double floor = 1e-6) {
  params.zero_grad();
  backward(loss_fn());

  GradCheckReport report;
  for (auto& [name, param] : params.all()) {
    GradCheckEntry entry{name};
    std::vector<double> analytic(param.grad().begin(), param.grad().end());
    auto theta = param.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      double up, down;
      {
        NoGradGuard guard;
        theta[i] = saved + h;
        up = loss_fn().item();
        theta[i] = saved - h;
        down = loss_fn().item();
      }
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      if (err > entry.max_rel_error || entry.checked == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.worst_analytic = analytic[i];
        entry.worst_numeric = numeric;
      }
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.checked += entry.checked;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace gcm::ad
