#pragma once

// Priors that let each input dimension jump to the limiting linear model:
// a two-population gamma mixture on the range, a logistic jump probability
// that grows with the range, and an exponential nugget prior.

#include "gpllm/kernel.hpp"
#include "gpllm/random.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gpllm {

struct GammaComponent {
  double shape = 1.0;
  double rate = 1.0;
  double weight = 0.5;
};

struct LLMPriorParams {
  double gamma = 10.0;
  double theta1 = 0.2;
  double theta2 = 0.95;
  std::array<GammaComponent, 2> d_mix{{{1.0, 20.0, 0.5}, {10.0, 10.0, 0.5}}};
  double g_rate = 10.0;

  void validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("LLMPriorParams: gamma must be positive");
    if (!(theta1 >= 0.0 && theta1 <= theta2 && theta2 < 1.0))
      throw std::invalid_argument("LLMPriorParams: need 0 <= theta1 <= theta2 < 1");
    double w = 0.0;
    for (const auto &c : d_mix) {
      if (!(c.shape > 0.0 && c.rate > 0.0 && c.weight >= 0.0))
        throw std::invalid_argument("LLMPriorParams: bad gamma component");
      w += c.weight;
    }
    if (std::abs(w - 1.0) > 1e-12)
      throw std::invalid_argument("LLMPriorParams: mixture weights must sum to 1");
    if (!(g_rate > 0.0)) throw std::invalid_argument("LLMPriorParams: g_rate must be positive");
  }
};

inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

inline double log_prior_d(double d, const LLMPriorParams &pp = {}) {
  if (!(d > 0.0)) throw std::domain_error("log_prior_d: d must be positive");
  double terms[2];
  for (std::size_t k = 0; k < 2; ++k) {
    const auto &c = pp.d_mix[k];
    terms[k] = c.weight > 0.0 ? std::log(c.weight) + log_gamma_pdf(d, c.shape, c.rate)
                              : -std::numeric_limits<double>::infinity();
  }
  const double hi = std::max(terms[0], terms[1]);
  return hi + std::log(std::exp(terms[0] - hi) + std::exp(terms[1] - hi));
}

inline double sample_range(const LLMPriorParams &pp, Rng &rng) {
  const std::size_t k = draw_uniform(rng) < pp.d_mix[0].weight ? 0 : 1;
  return draw_gamma(pp.d_mix[k].shape, pp.d_mix[k].rate, rng);
}

/// p(b_i = 0 | d_i): theta1 + (theta2 - theta1) / (1 + exp(-gamma (d - 1/2))).
inline double prob_b0_given_d(double d, const LLMPriorParams &pp) {
  return pp.theta1 + (pp.theta2 - pp.theta1) / (1.0 + std::exp(-pp.gamma * (d - 0.5)));
}

/// Log prior probability that every dimension jumps to the linear model.
inline double log_prior_linear_model(const Eigen::VectorXd &d,
                                     const LLMPriorParams &pp) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0.0)) throw std::domain_error("log_prior_linear_model: d must be positive");
    sum += std::log(prob_b0_given_d(d(i), pp));
  }
  return sum;
}

inline std::vector<bool> sample_booleans(const Eigen::VectorXd &d,
                                         const LLMPriorParams &pp, Rng &rng) {
  std::vector<bool> b(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i)
    b[static_cast<std::size_t>(i)] = !(draw_uniform(rng) < prob_b0_given_d(d(i), pp));
  return b;
}

inline double log_prob_boolean(bool active, double d, const LLMPriorParams &pp) {
  const double p0 = prob_b0_given_d(d, pp);
  return active ? std::log1p(-p0) : std::log(p0);
}

inline double log_prior_g(double g, const LLMPriorParams &pp) {
  if (!(g > 0.0)) throw std::domain_error("log_prior_g: g must be positive");
  return std::log(pp.g_rate) - pp.g_rate * g;
}

inline double sample_nugget(const LLMPriorParams &pp, Rng &rng) {
  return std::exponential_distribution<double>(pp.g_rate)(rng);
}

/// How the indicators b are treated by a model variant.
enum class BooleanMode {
  Free,        // GP LLM: b sampled
  AllActive,   // plain GP: b fixed at ones
  AllLinear,   // linear model: b fixed at zeros
};

/// log p(d, g, b) for one correlation state; indicators fixed by the model
/// variant contribute nothing.
inline double log_prior_corr(const CorrelationState &cs, const LLMPriorParams &pp,
                             BooleanMode mode) {
  double lp = log_prior_g(cs.nugget, pp);
  for (Eigen::Index i = 0; i < cs.dims(); ++i) {
    lp += log_prior_d(cs.range(i), pp);
    if (mode == BooleanMode::Free)
      lp += log_prob_boolean(cs.active[static_cast<std::size_t>(i)], cs.range(i), pp);
  }
  return lp;
}

/// Fresh correlation parameters drawn from their prior.
inline CorrelationState sample_corr_prior(Eigen::Index dims, const LLMPriorParams &pp,
                                          BooleanMode mode, Rng &rng) {
  CorrelationState cs = CorrelationState::make(dims);
  for (Eigen::Index i = 0; i < dims; ++i) cs.range(i) = sample_range(pp, rng);
  cs.nugget = sample_nugget(pp, rng);
  // Guard against an exact zero from the exponential sampler.
  if (!(cs.nugget > 0.0)) cs.nugget = std::numeric_limits<double>::min();
  switch (mode) {
  case BooleanMode::Free: cs.active = sample_booleans(cs.range, pp, rng); break;
  case BooleanMode::AllActive: cs.active.assign(static_cast<std::size_t>(dims), true); break;
  case BooleanMode::AllLinear: cs.active.assign(static_cast<std::size_t>(dims), false); break;
  }
  return cs;
}

} // namespace gpllm
