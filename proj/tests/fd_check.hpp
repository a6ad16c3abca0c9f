// Central finite-difference gradient oracle shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uvfield/autodiff.hpp"

namespace uvtest {

struct FdReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;  // entries skipped because the function is not differentiable there
  double worst_rel = 0.0;  // over entries with |gradient| above 1e3 * abs_tol, plus failures
};

// Builds a scalar on a fresh 64-bit graph from the current parameter values.
using ScalarBuilder = std::function<uvfield::ad::NodeId(uvfield::ad::Graph<double>&)>;

inline double evaluate(const ScalarBuilder& build) {
  uvfield::ad::Graph<double> g;
  return g.scalar(build(g));
}

/// Compares reverse-mode gradients of every entry of `params` against central
/// differences. Parameters are 32-bit, so the step actually realized in storage
/// is used as the denominator. An entry passes when
/// |g - fd| <= rel_tol * max(|g|, |fd|) + abs_tol. A failing entry whose analytic
/// value matches one of the one-sided slopes sits on a kink (ReLU switch,
/// nearest-neighbour switch, clamp edge) and is counted separately.
inline FdReport fd_check(const std::vector<uvfield::ad::Parameter*>& params, const ScalarBuilder& build,
                         double h = 1e-5, double rel_tol = 1e-3, double abs_tol = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    uvfield::ad::Graph<double> g;
    g.backward(build(g));
  }
  std::vector<Eigen::MatrixXd> analytic;
  for (auto* p : params) analytic.push_back(p->gradient);

  const double f0 = evaluate(build);
  FdReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    for (Eigen::Index i = 0; i < p->values.size(); ++i) {
      const float original = p->values.data()[i];
      const float up = static_cast<float>(original + h);
      const float down = static_cast<float>(original - h);
      p->values.data()[i] = up;
      const double fp = evaluate(build);
      p->values.data()[i] = down;
      const double fm = evaluate(build);
      p->values.data()[i] = original;
      const double d_up = static_cast<double>(up) - original;
      const double d_down = static_cast<double>(original) - down;
      const double fd = (fp - fm) / (d_up + d_down);
      const double right = (fp - f0) / d_up;
      const double left = (f0 - fm) / d_down;
      const double g = analytic[k].data()[i];
      const double scale = std::max(std::abs(g), std::abs(fd));
      ++report.checked;
      const double err = std::abs(g - fd);
      if (err <= rel_tol * scale + abs_tol) {
        // Entries passing on the absolute floor say nothing about relative error.
        if (scale > 1e3 * abs_tol) report.worst_rel = std::max(report.worst_rel, err / scale);
        continue;
      }
      // Across a kink the central difference mixes two pieces, while the
      // analytic gradient still equals the slope of the piece it was taken on.
      auto near = [&](double slope) {
        return std::abs(g - slope) <= 1e-2 * std::max(std::abs(g), std::abs(slope)) + 10.0 * abs_tol;
      };
      if (std::abs(right - left) > err && (near(right) || near(left))) {
        ++report.kinks;
        continue;
      }
      report.worst_rel = std::max(report.worst_rel, err / std::max(scale, 1e-300));
      ++report.failed;
    }
  }
  return report;
}

}  // namespace uvtest
