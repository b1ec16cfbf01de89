#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "graph.hpp"

namespace snds::test {

// Central finite-difference oracle for gradients. Stays independent of the
// reverse-mode path it checks: it only perturbs parameter values and reruns
// the caller-supplied forward function.
//
// eval(true)  must record a fresh graph, run backward, and leave gradients
//             accumulated in the parameters (harness zeroes them first).
// eval(false) must return the loss value without touching gradients.
struct GradCheck {
  std::vector<ad::Parameter*> params;
  std::function<double(bool with_grad)> eval;
  double step = 1e-5;

  static double rel_err(double analytic, double fd) {
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
    return std::abs(analytic - fd) / denom;
  }

  // Returns the max relative error over every element of every parameter.
  double max_rel_err() const {
    for (ad::Parameter* p : params) p->zero_grad();
    eval(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (ad::Parameter* p : params) {
      analytic.emplace_back(p->grad().data(), p->grad().data() + p->grad().size());
    }

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
      ad::Tensor& value = params[pi]->value();
      for (int64_t i = 0; i < value.size(); ++i) {
        const double saved = value[i];
        value[i] = saved + step;
        const double plus = eval(false);
        value[i] = saved - step;
        const double minus = eval(false);
        value[i] = saved;
        const double fd = (plus - minus) / (2.0 * step);
        worst = std::max(worst, rel_err(analytic[pi][static_cast<size_t>(i)], fd));
      }
    }
    return worst;
  }
};

}  // namespace snds::test
