#pragma once

#include <cmath>
#include <string>

#include "hsbnn/autodiff.hpp"
#include "hsbnn/errors.hpp"
#include "hsbnn/rng.hpp"
#include "hsbnn/special_functions.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

// Variational factor families. Scale posteriors are log-Normal over the
// positive scale itself; auxiliary posteriors are inverse-Gamma with a
// rate-like second parameter (density ~ v^{-c-1} exp(-d/v)).

struct LogNormalQ {
  double mu = 0.0;
  double sigma2 = 1.0;
  LogNormalQ() = default;
  LogNormalQ(double mu_, double sigma2_) : mu(mu_), sigma2(sigma2_) {
    if (!(sigma2 > 0.0)) {
      throw DomainError("LogNormalQ requires sigma2 > 0, got " + std::to_string(sigma2));
    }
  }
};

struct InvGammaQ {
  double c = 1.0;
  double d = 1.0;
  InvGammaQ() = default;
  InvGammaQ(double c_, double d_) : c(c_), d(d_) {
    if (!(c > 0.0) || !(d > 0.0)) throw DomainError("InvGammaQ requires c, d > 0");
  }
};

struct GammaQ {
  double alpha = 1.0;
  double beta = 1.0;
  GammaQ() = default;
  GammaQ(double alpha_, double beta_) : alpha(alpha_), beta(beta_) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("GammaQ requires alpha, beta > 0");
  }
};

inline double half_cauchy_logpdf(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("half_cauchy_logpdf requires a, b > 0");
  return std::log(2.0) - kLnPi - std::log(b) - std::log1p((a / b) * (a / b));
}

inline double inv_gamma_logpdf(double v, double a, double b) {
  if (!(v > 0.0) || !(a > 0.0) || !(b > 0.0)) {
    throw DomainError("inv_gamma_logpdf requires v, a, b > 0");
  }
  return a * std::log(b) - log_gamma(a) - (a + 1.0) * std::log(v) - b / v;
}

inline double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0) || !(shape > 0.0) || !(rate > 0.0)) {
    throw DomainError("gamma_logpdf requires x, shape, rate > 0");
  }
  return shape * std::log(rate) - log_gamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

struct LogNormalMoments {
  double mean;        // E[x]
  double recip_mean;  // E[1/x]
  double log_mean;    // E[ln x]
};

inline LogNormalMoments lognormal_moments(const LogNormalQ& q) {
  return {std::exp(q.mu + 0.5 * q.sigma2), std::exp(-q.mu + 0.5 * q.sigma2), q.mu};
}

struct GammaExpectations {
  double mean;      // E[x]
  double log_mean;  // E[ln x]
};

inline GammaExpectations gamma_expectations(const GammaQ& q) {
  return {q.alpha / q.beta, digamma(q.alpha) - std::log(q.beta)};
}

// E[1/v] and E[ln v] under InvGamma(c, d).
inline double inv_gamma_recip_mean(const InvGammaQ& q) { return q.c / q.d; }
inline double inv_gamma_log_mean(const InvGammaQ& q) { return std::log(q.d) - digamma(q.c); }

inline double gaussian_entropy(double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("gaussian_entropy requires sigma2 > 0");
  return 0.5 * (kLn2PiE + std::log(sigma2));
}

inline double lognormal_entropy(const LogNormalQ& q) {
  return q.mu + 0.5 * (kLn2PiE + std::log(q.sigma2));
}

inline double inv_gamma_entropy(const InvGammaQ& q) {
  return q.c + std::log(q.d) + log_gamma(q.c) - (1.0 + q.c) * digamma(q.c);
}

inline double gamma_entropy(const GammaQ& q) {
  return q.alpha - std::log(q.beta) + log_gamma(q.alpha) + (1.0 - q.alpha) * digamma(q.alpha);
}

// E_q[ln IG(tau | 1/2, 1/lambda)] + E_q[ln IG(lambda | 1/2, 1/b^2)] for one
// scale/auxiliary pair under q(tau) log-Normal and q(lambda) inverse-Gamma.
// Expanded with E[ln(1/lambda)] = psi(c) - ln d, E[1/lambda] = c/d,
// E[ln tau] = mu, E[1/tau] = exp(-mu + sigma2/2), lnGamma(1/2) = ln(pi)/2.
inline double expected_log_hs_scale_terms(const LogNormalQ& q_scale, const InvGammaQ& q_aux,
                                          double b) {
  if (!(b > 0.0)) throw DomainError("hyper-scale b must be > 0");
  const double e_recip_lambda = q_aux.c / q_aux.d;
  const double e_log_lambda = std::log(q_aux.d) - digamma(q_aux.c);
  const double e_recip_tau = std::exp(-q_scale.mu + 0.5 * q_scale.sigma2);
  const double term_tau = 0.5 * (-e_log_lambda) - 0.5 * kLnPi - 1.5 * q_scale.mu -
                          e_recip_lambda * e_recip_tau;
  const double term_lambda =
      -std::log(b) - 0.5 * kLnPi - 1.5 * e_log_lambda - (1.0 / (b * b)) * e_recip_lambda;
  return term_tau + term_lambda;
}

// ---- tape-side builders for the gradient path ----
// Scale posterior parameters enter as rank-0 Vars; auxiliary posteriors are
// held fixed between fixed-point sweeps, so they enter as plain numbers.

inline Var lognormal_entropy_t(Var mu, Var sigma2) {
  return mu + 0.5 * (kLn2PiE + log(sigma2));
}

inline Var gaussian_entropy_sum_t(Var sigma2_tensor) {
  Var n = sigma2_tensor.tape->constant(static_cast<double>(
      sigma2_tensor.tape->value(sigma2_tensor).size()));
  return 0.5 * (n * kLn2PiE + sum(log(sigma2_tensor)));
}

inline Var expected_log_hs_scale_terms_t(Var mu, Var sigma2, const InvGammaQ& q_aux, double b) {
  if (!(b > 0.0)) throw DomainError("hyper-scale b must be > 0");
  const double e_recip_lambda = q_aux.c / q_aux.d;
  const double e_log_lambda = std::log(q_aux.d) - digamma(q_aux.c);
  Var e_recip_tau = exp(-mu + 0.5 * sigma2);
  Var term_tau = (-0.5 * e_log_lambda - 0.5 * kLnPi) + (-1.5) * mu +
                 (-e_recip_lambda) * e_recip_tau;
  const double term_lambda =
      -std::log(b) - 0.5 * kLnPi - 1.5 * e_log_lambda - (1.0 / (b * b)) * e_recip_lambda;
  return term_tau + term_lambda;
}

inline Var gamma_entropy_t(Var alpha, Var beta) {
  return alpha - log(beta) + lgamma(alpha) + (1.0 - alpha) * digamma(alpha);
}

// E_q[ln Gamma(x | a0, b0)] with q = Gamma(alpha, beta).
inline Var gamma_expected_log_prior_t(Var alpha, Var beta, double a0, double b0) {
  Var e_x = alpha / beta;
  Var e_log_x = digamma(alpha) - log(beta);
  return (a0 * std::log(b0) - log_gamma(a0)) + (a0 - 1.0) * e_log_x - b0 * e_x;
}

// mu + sigma * eps with a fresh standard-normal eps held constant on the tape;
// the returned draw is differentiable w.r.t. mu and sigma. The eps tensor is
// written to *eps_out when a caller wants to replay it.
inline Var sample_reparam_gaussian(Var mu, Var sigma, RngStream& rng, Tensor* eps_out = nullptr) {
  const Tensor& vm = mu.tape->value(mu);
  const Tensor& vs = sigma.tape->value(sigma);
  if (!vm.same_shape(vs)) {
    throw DimensionError("sample_reparam_gaussian shape mismatch: " + vm.shape_string() + " vs " +
                         vs.shape_string());
  }
  for (int64_t i = 0; i < vs.size(); ++i) {
    if (vs[i] < 0.0) throw DomainError("sample_reparam_gaussian requires sigma >= 0");
  }
  Tensor eps = rng.normal_tensor(vm.shape());
  if (eps_out != nullptr) *eps_out = eps;
  return mu + sigma * mu.tape->constant(std::move(eps));
}

// Same draw with a caller-supplied eps (frozen-noise gradient checks).
inline Var reparam_gaussian_with_eps(Var mu, Var sigma, const Tensor& eps) {
  const Tensor& vm = mu.tape->value(mu);
  if (!vm.same_shape(eps)) throw DimensionError("eps shape mismatch");
  return mu + sigma * mu.tape->constant(eps);
}

}  // namespace hsbnn
