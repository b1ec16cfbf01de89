#pragma once

#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace snds {

// Smallest k with Poisson(lambda) CDF(k) >= delta, clamped below at d_min.
// Monotone non-decreasing in lambda.
int compute_d_max(double lambda, double delta = 0.95, int d_min = 1);

// Poisson(lambda) restricted and renormalized to [d_min, d_max].
std::vector<double> truncated_poisson_pmf(double lambda, int d_min, int d_max);

// Depth prior: same functional form as the posterior, fixed rate, evaluated
// on whatever support the posterior currently has.
struct DepthPrior {
  double lambda = 1.0;
  std::vector<double> pmf_on(int d_min, int d_max) const { return truncated_poisson_pmf(lambda, d_min, d_max); }
};

// Variational distribution over network depth. The rate is a trainable
// Parameter; the support upper bound follows the delta-quantile rule and is
// refreshed explicitly by the caller so support changes are visible events.
class TruncatedPoissonPosterior {
 public:
  TruncatedPoissonPosterior(double lambda_init, int d_min = 1, double delta = 0.95);

  double lambda() const { return lambda_.value()[0]; }
  ad::Parameter& lambda_param() { return lambda_; }
  const ad::Parameter& lambda_param() const { return lambda_; }

  int d_min() const { return d_min_; }
  int d_max() const { return d_max_; }
  double delta() const { return delta_; }
  int support_size() const { return d_max_ - d_min_ + 1; }

  // Re-derive d_max from the current rate. Returns the new value.
  int refresh_support();
  // Pin the support explicitly (fixed-depth mode, tests).
  void set_support(int d_min, int d_max);

  double pmf(int d) const;
  std::vector<double> pmf_vector() const { return truncated_poisson_pmf(lambda(), d_min_, d_max_); }
  int mode_depth() const;  // smallest argmax

  // Keeps the rate strictly positive after an optimizer step.
  void clamp_lambda(double min_value = 1e-3);

  // Differentiable pmf over the support as a graph node of shape
  // (support_size). Gradient flows to the rate parameter.
  ad::NodeId pmf_node(ad::Graph& g) const;

  int sample_depth(Rng& rng) const;  // inverse-CDF draw from the pmf

 private:
  mutable ad::Parameter lambda_;  // leaf registration mutates graph-side state only
  int d_min_;
  int d_max_;
  double delta_;
};

// Exact KL(q || p) by finite sum over the shared support.
double kl_depth(const TruncatedPoissonPosterior& q, const DepthPrior& p);

// Monte Carlo estimate of the same KL; retained for fidelity experiments.
// Returns {estimate, standard_error}.
std::pair<double, double> kl_depth_mc(const TruncatedPoissonPosterior& q, const DepthPrior& p, int num_samples,
                                      Rng& rng);

// KL(q || p) as a differentiable scalar node built from the pmf node.
ad::NodeId kl_depth_node(ad::Graph& g, const TruncatedPoissonPosterior& q, const DepthPrior& p);

}  // namespace snds
