#include "depth_posterior.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace snds {

namespace {

double log_poisson_pmf(double lambda, int d) {
  return d * std::log(lambda) - lambda - std::lgamma(static_cast<double>(d) + 1.0);
}

void check_support(int d_min, int d_max) {
  if (d_min < 1 || d_min > d_max) {
    throw DomainError("depth posterior: invalid support [" + std::to_string(d_min) + ", " +
                      std::to_string(d_max) + "]");
  }
}

}  // namespace

int compute_d_max(double lambda, double delta, int d_min) {
  if (lambda <= 0.0) throw DomainError("compute_d_max: lambda must be positive, got " + std::to_string(lambda));
  if (delta <= 0.0 || delta >= 1.0) {
    throw DomainError("compute_d_max: delta must lie in (0,1), got " + std::to_string(delta));
  }
  if (d_min < 1) throw DomainError("compute_d_max: d_min must be >= 1");
  // CDF accumulated in linear space from log masses; the quantile of a
  // Poisson with any practical rate is reached long before the loop cap.
  const int cap = static_cast<int>(lambda + 20.0 * std::sqrt(lambda) + 50.0);
  double cdf = 0.0;
  for (int k = 0; k <= cap; ++k) {
    cdf += std::exp(log_poisson_pmf(lambda, k));
    if (cdf >= delta) return std::max(k, d_min);
  }
  return std::max(cap, d_min);
}

std::vector<double> truncated_poisson_pmf(double lambda, int d_min, int d_max) {
  check_support(d_min, d_max);
  if (lambda <= 0.0) {
    throw DomainError("truncated_poisson_pmf: lambda must be positive, got " + std::to_string(lambda));
  }
  std::vector<double> mass(static_cast<size_t>(d_max - d_min + 1));
  // Shift by the max log mass before exponentiating so extreme rates stay
  // inside double range.
  double max_log = -std::numeric_limits<double>::infinity();
  for (int d = d_min; d <= d_max; ++d) {
    max_log = std::max(max_log, log_poisson_pmf(lambda, d));
  }
  double z = 0.0;
  for (int d = d_min; d <= d_max; ++d) {
    double m = std::exp(log_poisson_pmf(lambda, d) - max_log);
    mass[static_cast<size_t>(d - d_min)] = m;
    z += m;
  }
  for (double& m : mass) m /= z;
  return mass;
}

TruncatedPoissonPosterior::TruncatedPoissonPosterior(double lambda_init, int d_min, double delta)
    : lambda_("depth.lambda", ad::Tensor::scalar(lambda_init)), d_min_(d_min), delta_(delta) {
  if (lambda_init <= 0.0) {
    throw DomainError("depth posterior: initial lambda must be positive, got " + std::to_string(lambda_init));
  }
  if (delta <= 0.0 || delta >= 1.0) {
    throw DomainError("depth posterior: delta must lie in (0,1), got " + std::to_string(delta));
  }
  d_max_ = compute_d_max(lambda_init, delta_, d_min_);
}

int TruncatedPoissonPosterior::refresh_support() {
  d_max_ = compute_d_max(lambda(), delta_, d_min_);
  return d_max_;
}

void TruncatedPoissonPosterior::set_support(int d_min, int d_max) {
  check_support(d_min, d_max);
  d_min_ = d_min;
  d_max_ = d_max;
}

double TruncatedPoissonPosterior::pmf(int d) const {
  if (d < d_min_ || d > d_max_) {
    throw DomainError("pmf: depth " + std::to_string(d) + " outside support [" + std::to_string(d_min_) + ", " +
                      std::to_string(d_max_) + "]");
  }
  return pmf_vector()[static_cast<size_t>(d - d_min_)];
}

int TruncatedPoissonPosterior::mode_depth() const {
  const std::vector<double> q = pmf_vector();
  size_t best = 0;
  for (size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return d_min_ + static_cast<int>(best);
}

void TruncatedPoissonPosterior::clamp_lambda(double min_value) {
  double& v = lambda_.value()[0];
  if (v < min_value) v = min_value;
}

ad::NodeId TruncatedPoissonPosterior::pmf_node(ad::Graph& g) const {
  const ad::NodeId lam_node = g.leaf(lambda_);
  const double lam = lambda();
  std::vector<double> q = pmf_vector();
  const int d_min = d_min_;
  // d(q_d)/d(lambda) = q_d * (d - mean) / lambda with mean = sum_d d*q_d;
  // follows from the log-derivative of the normalized mass.
  double mean = 0.0;
  for (size_t i = 0; i < q.size(); ++i) mean += (d_min + static_cast<int>(i)) * q[i];
  ad::Tensor value({static_cast<int>(q.size())}, q);
  return g.custom(std::move(value), {lam_node},
                  [lam_node, q = std::move(q), mean, lam, d_min](ad::Graph& gg, ad::NodeId self) {
                    const ad::Tensor& go = gg.grad(self);
                    double acc = 0.0;
                    for (size_t i = 0; i < q.size(); ++i) {
                      const double dq = q[i] * ((d_min + static_cast<int>(i)) - mean) / lam;
                      acc += go[static_cast<int64_t>(i)] * dq;
                    }
                    gg.grad(lam_node)[0] += acc;
                  },
                  "truncated_poisson_pmf");
}

int TruncatedPoissonPosterior::sample_depth(Rng& rng) const {
  const std::vector<double> q = pmf_vector();
  const double u = rng.uniform();
  double cdf = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    cdf += q[i];
    if (u < cdf) return d_min_ + static_cast<int>(i);
  }
  return d_max_;
}

double kl_depth(const TruncatedPoissonPosterior& q, const DepthPrior& p) {
  const std::vector<double> qv = q.pmf_vector();
  const std::vector<double> pv = p.pmf_on(q.d_min(), q.d_max());
  double kl = 0.0;
  for (size_t i = 0; i < qv.size(); ++i) {
    if (qv[i] <= 0.0) continue;
    if (pv[i] <= 0.0) {
      throw NumericError("kl_depth: prior mass zero at depth " + std::to_string(q.d_min() + static_cast<int>(i)) +
                         " where posterior mass is positive");
    }
    kl += qv[i] * std::log(qv[i] / pv[i]);
  }
  return kl;
}

std::pair<double, double> kl_depth_mc(const TruncatedPoissonPosterior& q, const DepthPrior& p, int num_samples,
                                      Rng& rng) {
  const std::vector<double> qv = q.pmf_vector();
  const std::vector<double> pv = p.pmf_on(q.d_min(), q.d_max());
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    const int d = q.sample_depth(rng);
    const size_t i = static_cast<size_t>(d - q.d_min());
    const double v = std::log(qv[i] / pv[i]);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / num_samples;
  const double var = std::max(0.0, sum_sq / num_samples - mean * mean);
  return {mean, std::sqrt(var / num_samples)};
}

ad::NodeId kl_depth_node(ad::Graph& g, const TruncatedPoissonPosterior& q, const DepthPrior& p) {
  const ad::NodeId qn = q.pmf_node(g);
  std::vector<double> pv = p.pmf_on(q.d_min(), q.d_max());
  std::vector<double> log_pv(pv.size());
  for (size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] <= 0.0) {
      throw NumericError("kl_depth: prior mass zero at depth " + std::to_string(q.d_min() + static_cast<int>(i)));
    }
    log_pv[i] = std::log(pv[i]);
  }
  const int support = static_cast<int>(log_pv.size());
  const ad::NodeId log_prior = g.input(ad::Tensor({support}, std::move(log_pv)));
  return g.sum(g.mul(qn, g.sub(g.log(qn), log_prior)));
}

}  // namespace snds
