#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsbnn/autodiff.hpp"
#include "hsbnn/distributions.hpp"
#include "hsbnn/errors.hpp"
#include "hsbnn/rng.hpp"
#include "hsbnn/special_functions.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

enum class Likelihood { gaussian_regression, categorical };
enum class PriorMode { hs_noncentered, hs_centered, gaussian_baseline };
enum class ForwardVariant { expected_scales, sampled_scales };

struct NetworkConfig {
  std::vector<int64_t> widths;  // input dim, hidden widths..., output dim
  Likelihood likelihood = Likelihood::gaussian_regression;

  void validate() const {
    if (widths.size() < 2) throw ConfigError("network needs at least input and output widths");
    for (int64_t w : widths) {
      if (w < 1) throw ConfigError("all layer widths must be >= 1");
    }
  }
  int64_t input_dim() const { return widths.front(); }
  int64_t output_dim() const { return widths.back(); }
  size_t num_layers() const { return widths.size() - 1; }  // weight layers incl. output
};

struct PriorConfig {
  PriorMode mode = PriorMode::hs_noncentered;
  double b0 = 1.0;      // unit scale hyper
  double bg = 1.0;      // layer scale hyper
  double bkappa = 5.0;  // output scale hyper
  ForwardVariant variant = ForwardVariant::expected_scales;
  // false: output weights ~ N(0, kappa^2 I), kappa is a standard deviation.
  // true: N(0, kappa I), kappa is a variance.
  bool kappa_is_variance = false;

  void validate() const {
    if (!(b0 > 0.0) || !(bg > 0.0) || !(bkappa > 0.0)) {
      throw ConfigError("prior hyper-scales must be > 0");
    }
  }
  bool is_hs() const { return mode != PriorMode::gaussian_baseline; }
};

// One weight layer. mu_w/u_sigma2_w parameterize q(beta) in the non-centered
// mode and q(w) directly in the centered and baseline modes; sigma2 lives
// behind softplus of the unconstrained u_ tensor. Scale and auxiliary
// posteriors are only populated in the horseshoe modes.
struct LayerParams {
  Tensor mu_w, u_sigma2_w;              // [(fanin+1) x K]
  Tensor mu_tau, u_sigma2_tau;          // [K]
  Tensor mu_upsilon, u_sigma2_upsilon;  // rank-0
  Tensor c_lambda, d_lambda;            // [K] aux per unit
  double c_theta = 1.0, d_theta = 1.0;  // layer aux

  int64_t fanin_plus_bias() const { return mu_w.rows(); }
  int64_t units() const { return mu_w.cols(); }
  LogNormalQ tau_q(int64_t k) const {
    return LogNormalQ(mu_tau[k], softplus(u_sigma2_tau[k]));
  }
  LogNormalQ upsilon_q() const {
    return LogNormalQ(mu_upsilon.item(), softplus(u_sigma2_upsilon.item()));
  }
  InvGammaQ lambda_q(int64_t k) const { return InvGammaQ(c_lambda[k], d_lambda[k]); }
  InvGammaQ theta_q() const { return InvGammaQ(c_theta, d_theta); }
};

struct OutputParams {
  Tensor mu_w, u_sigma2_w;           // [(fanin+1) x K_L]
  Tensor mu_kappa, u_sigma2_kappa;   // rank-0
  double c_rho = 1.0, d_rho = 1.0;   // aux for kappa

  LogNormalQ kappa_q() const {
    return LogNormalQ(mu_kappa.item(), softplus(u_sigma2_kappa.item()));
  }
  InvGammaQ rho_q() const { return InvGammaQ(c_rho, d_rho); }
};

struct Model {
  NetworkConfig net;
  PriorConfig prior;
  std::vector<LayerParams> hidden;       // one per hidden layer
  OutputParams output;
  Tensor u_noise_alpha, u_noise_beta;    // rank-0; gaussian likelihood only
  static constexpr double kNoisePriorShape = 6.0;
  static constexpr double kNoisePriorRate = 6.0;

  GammaQ noise_q() const {
    return GammaQ(softplus(u_noise_alpha.item()), softplus(u_noise_beta.item()));
  }

  // Tensors updated by gradient ascent, in a fixed order shared with AdamState
  // and the checkpoint format.
  std::vector<Tensor*> grad_params() {
    std::vector<Tensor*> out;
    for (LayerParams& l : hidden) {
      out.push_back(&l.mu_w);
      out.push_back(&l.u_sigma2_w);
      if (prior.is_hs()) {
        out.push_back(&l.mu_tau);
        out.push_back(&l.u_sigma2_tau);
        out.push_back(&l.mu_upsilon);
        out.push_back(&l.u_sigma2_upsilon);
      }
    }
    out.push_back(&output.mu_w);
    out.push_back(&output.u_sigma2_w);
    if (prior.is_hs()) {
      out.push_back(&output.mu_kappa);
      out.push_back(&output.u_sigma2_kappa);
    }
    if (net.likelihood == Likelihood::gaussian_regression) {
      out.push_back(&u_noise_alpha);
      out.push_back(&u_noise_beta);
    }
    return out;
  }

  std::vector<std::string> grad_param_names() const {
    std::vector<std::string> out;
    for (size_t l = 0; l < hidden.size(); ++l) {
      const std::string p = "hidden" + std::to_string(l) + ".";
      out.push_back(p + "mu_w");
      out.push_back(p + "u_sigma2_w");
      if (prior.is_hs()) {
        out.push_back(p + "mu_tau");
        out.push_back(p + "u_sigma2_tau");
        out.push_back(p + "mu_upsilon");
        out.push_back(p + "u_sigma2_upsilon");
      }
    }
    out.push_back("output.mu_w");
    out.push_back("output.u_sigma2_w");
    if (prior.is_hs()) {
      out.push_back("output.mu_kappa");
      out.push_back("output.u_sigma2_kappa");
    }
    if (net.likelihood == Likelihood::gaussian_regression) {
      out.push_back("u_noise_alpha");
      out.push_back("u_noise_beta");
    }
    return out;
  }
};

inline double initial_aux_d(double mu, double sigma2, double b) {
  return std::exp(-mu + 0.5 * sigma2) + 1.0 / (b * b);
}

inline Model init_params(const NetworkConfig& net, const PriorConfig& prior, RngStream& rng) {
  net.validate();
  prior.validate();
  Model m;
  m.net = net;
  m.prior = prior;

  const double sigma2_w0 = 1e-4;
  const double u_w0 = softplus_inv(sigma2_w0);
  const double mu_scale0 = -3.0, sigma2_scale0 = 1e-2;
  const double u_scale0 = softplus_inv(sigma2_scale0);
  const double mu_kappa0 = 0.0;

  const size_t n_hidden = net.num_layers() - 1;
  for (size_t l = 0; l < n_hidden; ++l) {
    const int64_t fanin = net.widths[l] + 1;
    const int64_t units = net.widths[l + 1];
    LayerParams p;
    p.mu_w = rng.normal_tensor({fanin, units}, 0.0, 1.0 / std::sqrt(static_cast<double>(fanin)));
    p.u_sigma2_w = Tensor::full({fanin, units}, u_w0);
    if (prior.is_hs()) {
      p.mu_tau = Tensor::full({units}, mu_scale0);
      p.u_sigma2_tau = Tensor::full({units}, u_scale0);
      p.mu_upsilon = Tensor::scalar(mu_scale0);
      p.u_sigma2_upsilon = Tensor::scalar(u_scale0);
      p.c_lambda = Tensor::full({units}, 1.0);
      p.d_lambda = Tensor::full({units}, initial_aux_d(mu_scale0, sigma2_scale0, prior.b0));
      p.c_theta = 1.0;
      p.d_theta = initial_aux_d(mu_scale0, sigma2_scale0, prior.bg);
    }
    m.hidden.push_back(std::move(p));
  }

  const int64_t fanin_out = net.widths[net.widths.size() - 2] + 1;
  m.output.mu_w = rng.normal_tensor({fanin_out, net.output_dim()}, 0.0,
                                    1.0 / std::sqrt(static_cast<double>(fanin_out)));
  m.output.u_sigma2_w = Tensor::full({fanin_out, net.output_dim()}, u_w0);
  if (prior.is_hs()) {
    m.output.mu_kappa = Tensor::scalar(mu_kappa0);
    m.output.u_sigma2_kappa = Tensor::scalar(u_scale0);
    m.output.c_rho = 1.0;
    m.output.d_rho = initial_aux_d(mu_kappa0, sigma2_scale0, prior.bkappa);
  }
  if (net.likelihood == Likelihood::gaussian_regression) {
    m.u_noise_alpha = Tensor::scalar(softplus_inv(Model::kNoisePriorShape));
    m.u_noise_beta = Tensor::scalar(softplus_inv(Model::kNoisePriorRate));
  }
  return m;
}

// ---- tape binding ----

struct BoundLayer {
  Var mu_w, u_sigma2_w, sigma2_w;
  Var mu_tau, u_sigma2_tau, sigma2_tau;
  Var mu_upsilon, u_sigma2_upsilon, sigma2_upsilon;
};

struct BoundOutput {
  Var mu_w, u_sigma2_w, sigma2_w;
  Var mu_kappa, u_sigma2_kappa, sigma2_kappa;
};

// All variational parameters leafed onto one tape, softplus applied to the
// unconstrained variance parameters. `leaves` pairs each parameter tensor with
// its leaf Var in grad_params() order.
struct BoundModel {
  Tape* tape = nullptr;
  Model* model = nullptr;
  std::vector<BoundLayer> hidden;
  BoundOutput output;
  Var noise_alpha, noise_beta;
  std::vector<std::pair<Tensor*, Var>> leaves;

  Var leaf_of(Tensor& t, bool grad) {
    Var v = tape->leaf(t, grad);
    if (grad) leaves.emplace_back(&t, v);
    return v;
  }
};

inline BoundModel bind_model(Model& m, Tape& tape, bool with_grads = true) {
  BoundModel b;
  b.tape = &tape;
  b.model = &m;
  for (LayerParams& l : m.hidden) {
    BoundLayer bl;
    bl.mu_w = b.leaf_of(l.mu_w, with_grads);
    bl.u_sigma2_w = b.leaf_of(l.u_sigma2_w, with_grads);
    bl.sigma2_w = softplus(bl.u_sigma2_w);
    if (m.prior.is_hs()) {
      bl.mu_tau = b.leaf_of(l.mu_tau, with_grads);
      bl.u_sigma2_tau = b.leaf_of(l.u_sigma2_tau, with_grads);
      bl.sigma2_tau = softplus(bl.u_sigma2_tau);
      bl.mu_upsilon = b.leaf_of(l.mu_upsilon, with_grads);
      bl.u_sigma2_upsilon = b.leaf_of(l.u_sigma2_upsilon, with_grads);
      bl.sigma2_upsilon = softplus(bl.u_sigma2_upsilon);
    }
    b.hidden.push_back(bl);
  }
  b.output.mu_w = b.leaf_of(m.output.mu_w, with_grads);
  b.output.u_sigma2_w = b.leaf_of(m.output.u_sigma2_w, with_grads);
  b.output.sigma2_w = softplus(b.output.u_sigma2_w);
  if (m.prior.is_hs()) {
    b.output.mu_kappa = b.leaf_of(m.output.mu_kappa, with_grads);
    b.output.u_sigma2_kappa = b.leaf_of(m.output.u_sigma2_kappa, with_grads);
    b.output.sigma2_kappa = softplus(b.output.u_sigma2_kappa);
  }
  if (m.net.likelihood == Likelihood::gaussian_regression) {
    Var ua = b.leaf_of(m.u_noise_alpha, with_grads);
    Var ub = b.leaf_of(m.u_noise_beta, with_grads);
    b.noise_alpha = softplus(ua);
    b.noise_beta = softplus(ub);
  }
  return b;
}

// ---- forward passes ----

// Pre-activations for one horseshoe layer given activations with the bias
// column already appended. Both variants sample u ~ N(mu_u, var_u) through a
// reparameterized draw; they differ in where the scales enter.
inline Var forward_hs_layer(const BoundLayer& l, Var a, ForwardVariant variant, RngStream& rng) {
  Var mu_lin = matmul(a, l.mu_w);
  Var var_lin = matmul(square(a), l.sigma2_w);
  Var mu_u{-1, nullptr}, var_u{-1, nullptr};
  if (variant == ForwardVariant::expected_scales) {
    // scales enter only the variance, through their first moments
    Var e_tau = exp(l.mu_tau + 0.5 * l.sigma2_tau);
    Var e_ups = exp(l.mu_upsilon + 0.5 * l.sigma2_upsilon);
    mu_u = mu_lin;
    var_u = mul_rowvec(var_lin, e_tau * e_ups);
  } else {
    Var ln_tau = sample_reparam_gaussian(l.mu_tau, sqrt(l.sigma2_tau), rng);
    Var ln_ups = sample_reparam_gaussian(l.mu_upsilon, sqrt(l.sigma2_upsilon), rng);
    Var scale = exp(ln_tau) * exp(ln_ups);
    mu_u = mul_rowvec(mu_lin, scale);
    var_u = mul_rowvec(var_lin, square(scale));
  }
  Tensor eps = rng.normal_tensor(a.tape->value(mu_u).shape());
  return mu_u + sqrt(var_u) * a.tape->constant(std::move(eps));
}

// Direct local reparameterization on q(w): centered horseshoe and the
// gaussian baseline share this forward.
inline Var forward_direct_layer(Var mu_w, Var sigma2_w, Var a, RngStream& rng) {
  Var mu_u = matmul(a, mu_w);
  Var var_u = matmul(square(a), sigma2_w);
  Tensor eps = rng.normal_tensor(a.tape->value(mu_u).shape());
  return mu_u + sqrt(var_u) * a.tape->constant(std::move(eps));
}

// Output layer under the non-centered horseshoe: w = kappa * beta (or
// sqrt(kappa) * beta when kappa is a variance), mirroring the hidden-layer
// treatment of the two variants.
inline Var forward_hs_output(const BoundOutput& o, Var a, const PriorConfig& prior,
                             RngStream& rng) {
  Var mu_lin = matmul(a, o.mu_w);
  Var var_lin = matmul(square(a), o.sigma2_w);
  Var mu_u{-1, nullptr}, var_u{-1, nullptr};
  if (prior.variant == ForwardVariant::expected_scales) {
    Var e_scale = prior.kappa_is_variance
                      ? exp(0.5 * o.mu_kappa + 0.125 * o.sigma2_kappa)  // E[sqrt(kappa)]
                      : exp(o.mu_kappa + 0.5 * o.sigma2_kappa);         // E[kappa]
    mu_u = mu_lin;
    var_u = var_lin * e_scale;
  } else {
    Var ln_kappa = sample_reparam_gaussian(o.mu_kappa, sqrt(o.sigma2_kappa), rng);
    Var scale = prior.kappa_is_variance ? exp(0.5 * ln_kappa) : exp(ln_kappa);
    mu_u = mu_lin * scale;
    var_u = var_lin * square(scale);
  }
  Tensor eps = rng.normal_tensor(a.tape->value(mu_u).shape());
  return mu_u + sqrt(var_u) * a.tape->constant(std::move(eps));
}

// Full network pass: x -> logits / regression means, one MC draw of every
// pre-activation. x arrives without the bias column.
inline Var network_forward(BoundModel& b, const Tensor& x, RngStream& rng) {
  if (!x.all_finite()) throw DomainError("network input contains non-finite values");
  if (x.cols() != b.model->net.input_dim()) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(b.model->net.input_dim()));
  }
  Tape& tape = *b.tape;
  const PriorConfig& prior = b.model->prior;
  Var a = append_ones_column(tape.constant(x));
  for (const BoundLayer& l : b.hidden) {
    Var u = prior.mode == PriorMode::hs_noncentered
                ? forward_hs_layer(l, a, prior.variant, rng)
                : forward_direct_layer(l.mu_w, l.sigma2_w, a, rng);
    a = append_ones_column(relu(u));
  }
  if (prior.mode == PriorMode::hs_noncentered) {
    return forward_hs_output(b.output, a, prior, rng);
  }
  return forward_direct_layer(b.output.mu_w, b.output.sigma2_w, a, rng);
}

// ---- likelihoods ----

inline Var gaussian_ell_t(Var f, const Tensor& y, Var e_gamma, Var e_log_gamma) {
  Tape& tape = *f.tape;
  const Tensor& fv = tape.value(f);
  if (fv.cols() != 1) throw DimensionError("gaussian likelihood expects a single output column");
  if (fv.rows() != y.size()) throw DimensionError("target count does not match batch");
  Tensor y_col({fv.rows(), 1});
  for (int64_t i = 0; i < y.size(); ++i) y_col(i, 0) = y[i];
  const double n = static_cast<double>(fv.rows());
  Var resid = sum(square(tape.constant(std::move(y_col)) - f));
  return 0.5 * n * e_log_gamma - 0.5 * n * kLn2Pi - 0.5 * e_gamma * resid;
}

inline Var categorical_ell_t(Var f, const std::vector<int64_t>& labels) {
  return sum(pick_columns(f, labels) - logsumexp(f));
}

// ---- ELBO ----

struct Batch {
  Tensor x;                     // [n x D]
  Tensor y;                     // regression targets [n]
  std::vector<int64_t> labels;  // classification labels
  int64_t size() const { return x.rows(); }
};

struct ElboParts {
  Var likelihood;  // (N/|batch|) * mean over S of the expected log-likelihood
  Var log_prior;   // all expected-log-prior terms (weights, scales, aux, noise)
  Var entropy;     // all entropies
  Var total;
};

// sum over units of E[ln IG(tau_k | 1/2, 1/lambda_k)] + E[ln IG(lambda_k | 1/2, 1/b^2)]
// with vector mu/sigma2 on the tape and the auxiliary posterior held constant.
inline Var hs_scale_terms_vec_t(Var mu, Var sigma2, const Tensor& c, const Tensor& d, double b) {
  Tape& tape = *mu.tape;
  Tensor e_recip_lambda(c.shape());
  double const_part = 0.0;
  for (int64_t i = 0; i < c.size(); ++i) {
    e_recip_lambda[i] = c[i] / d[i];
    const double e_log_lambda = std::log(d[i]) - digamma(c[i]);
    const_part += -2.0 * e_log_lambda - kLnPi - std::log(b) -
                  (1.0 / (b * b)) * e_recip_lambda[i];
  }
  Var e_recip_tau = exp(-mu + 0.5 * sigma2);
  Var varying = sum((-1.5) * mu - tape.constant(e_recip_lambda) * e_recip_tau);
  return varying + tape.constant(const_part);
}

inline Var lognormal_entropy_vec_t(Var mu, Var sigma2) {
  Tape& tape = *mu.tape;
  const double k = static_cast<double>(tape.value(mu).size());
  return sum(mu) + 0.5 * (k * kLn2PiE + sum(log(sigma2)));
}

// E[ln N(w | 0, tau^2 ups^2 I)] summed over a centered layer, with
// E[1/tau^2] = exp(-2 mu + 2 sigma2).
inline Var centered_weight_prior_t(const BoundLayer& l) {
  Tape& tape = *l.mu_w.tape;
  const int64_t rows = tape.value(l.mu_w).rows();
  const double k = static_cast<double>(tape.value(l.mu_tau).size());
  Var e_recip_tau2 = exp(-2.0 * l.mu_tau + 2.0 * l.sigma2_tau);
  Var e_recip_ups2 = exp(-2.0 * l.mu_upsilon + 2.0 * l.sigma2_upsilon);
  Var col_ss = sum_rows(square(l.mu_w) + l.sigma2_w);  // per-unit sum of mu^2 + sigma^2
  Var quad = -0.5 * e_recip_ups2 * sum(e_recip_tau2 * col_ss);
  Var logdet = -0.5 * static_cast<double>(rows) *
               (2.0 * sum(l.mu_tau) + k * (2.0 * l.mu_upsilon + kLn2Pi));
  return quad + logdet;
}

// E[ln N(w | 0, kappa^2 I)] (or N(0, kappa I)) for the centered output layer.
inline Var centered_output_prior_t(const BoundOutput& o, bool kappa_is_variance) {
  Tape& tape = *o.mu_w.tape;
  const double n = static_cast<double>(tape.value(o.mu_w).size());
  Var ss = sum(square(o.mu_w) + o.sigma2_w);
  if (kappa_is_variance) {
    Var e_recip = exp(-o.mu_kappa + 0.5 * o.sigma2_kappa);
    return -0.5 * e_recip * ss - 0.5 * n * (o.mu_kappa + kLn2Pi);
  }
  Var e_recip2 = exp(-2.0 * o.mu_kappa + 2.0 * o.sigma2_kappa);
  return -0.5 * e_recip2 * ss - 0.5 * n * (2.0 * o.mu_kappa + kLn2Pi);
}

// E[ln N(z | 0, I)] for a Gaussian posterior block: -0.5 sum(mu^2 + sigma^2)
// - 0.5 n ln(2 pi).
inline Var std_normal_prior_t(Var mu, Var sigma2) {
  Tape& tape = *mu.tape;
  const double n = static_cast<double>(tape.value(mu).size());
  return -0.5 * sum(square(mu) + sigma2) - 0.5 * n * kLn2Pi;
}

inline Var elbo_likelihood_term(BoundModel& b, const Batch& batch, int64_t dataset_size, int S,
                                RngStream& rng) {
  if (S < 1) throw ContractError("elbo requires S >= 1");
  if (batch.size() < 1) throw ContractError("elbo requires a non-empty minibatch");
  const Likelihood kind = b.model->net.likelihood;
  Var acc{-1, nullptr};
  for (int s = 0; s < S; ++s) {
    Var f = network_forward(b, batch.x, rng);
    Var ell{-1, nullptr};
    if (kind == Likelihood::gaussian_regression) {
      Var e_gamma = b.noise_alpha / b.noise_beta;
      Var e_log_gamma = digamma(b.noise_alpha) - log(b.noise_beta);
      ell = gaussian_ell_t(f, batch.y, e_gamma, e_log_gamma);
    } else {
      ell = categorical_ell_t(f, batch.labels);
    }
    acc = s == 0 ? ell : acc + ell;
  }
  const double scale = static_cast<double>(dataset_size) / static_cast<double>(batch.size());
  return acc * (scale / static_cast<double>(S));
}

inline ElboParts elbo(BoundModel& b, const Batch& batch, int64_t dataset_size, int S,
                      RngStream& rng) {
  Tape& tape = *b.tape;
  Model& m = *b.model;
  Var likelihood = elbo_likelihood_term(b, batch, dataset_size, S, rng);

  Var log_prior = tape.constant(0.0);
  Var entropy = tape.constant(0.0);

  for (size_t li = 0; li < b.hidden.size(); ++li) {
    const BoundLayer& bl = b.hidden[li];
    const LayerParams& lp = m.hidden[li];
    // weight block
    if (m.prior.mode == PriorMode::hs_centered) {
      log_prior = log_prior + centered_weight_prior_t(bl);
    } else {
      log_prior = log_prior + std_normal_prior_t(bl.mu_w, bl.sigma2_w);
    }
    entropy = entropy + gaussian_entropy_sum_t(bl.sigma2_w);
    // scale and auxiliary blocks
    if (m.prior.is_hs()) {
      log_prior = log_prior + hs_scale_terms_vec_t(bl.mu_tau, bl.sigma2_tau, lp.c_lambda,
                                                   lp.d_lambda, m.prior.b0);
      log_prior = log_prior + expected_log_hs_scale_terms_t(bl.mu_upsilon, bl.sigma2_upsilon,
                                                            lp.theta_q(), m.prior.bg);
      entropy = entropy + lognormal_entropy_vec_t(bl.mu_tau, bl.sigma2_tau);
      entropy = entropy + lognormal_entropy_t(bl.mu_upsilon, bl.sigma2_upsilon);
      double aux_entropy = inv_gamma_entropy(lp.theta_q());
      for (int64_t k = 0; k < lp.units(); ++k) aux_entropy += inv_gamma_entropy(lp.lambda_q(k));
      entropy = entropy + tape.constant(aux_entropy);
    }
  }

  if (m.prior.mode == PriorMode::hs_centered) {
    log_prior = log_prior + centered_output_prior_t(b.output, m.prior.kappa_is_variance);
  } else {
    log_prior = log_prior + std_normal_prior_t(b.output.mu_w, b.output.sigma2_w);
  }
  entropy = entropy + gaussian_entropy_sum_t(b.output.sigma2_w);
  if (m.prior.is_hs()) {
    log_prior = log_prior + expected_log_hs_scale_terms_t(b.output.mu_kappa,
                                                          b.output.sigma2_kappa, m.output.rho_q(),
                                                          m.prior.bkappa);
    entropy = entropy + lognormal_entropy_t(b.output.mu_kappa, b.output.sigma2_kappa);
    entropy = entropy + tape.constant(inv_gamma_entropy(m.output.rho_q()));
  }

  if (m.net.likelihood == Likelihood::gaussian_regression) {
    log_prior = log_prior + gamma_expected_log_prior_t(b.noise_alpha, b.noise_beta,
                                                       Model::kNoisePriorShape,
                                                       Model::kNoisePriorRate);
    entropy = entropy + gamma_entropy_t(b.noise_alpha, b.noise_beta);
  }

  ElboParts parts;
  parts.likelihood = likelihood;
  parts.log_prior = log_prior;
  parts.entropy = entropy;
  parts.total = likelihood + log_prior + entropy;
  return parts;
}

// ---- diagnostics and prediction ----

// E[w] for layer `index` (hidden layers first, then the output layer).
// Non-centered: E[tau] E[ups] mu_beta per unit (E[kappa] mu_beta for the
// output); centered and baseline: mu_w.
inline Tensor expected_node_weights(const Model& m, size_t index) {
  const size_t n_hidden = m.hidden.size();
  if (index > n_hidden) throw ContractError("layer index out of range");
  if (index < n_hidden) {
    const LayerParams& l = m.hidden[index];
    if (m.prior.mode != PriorMode::hs_noncentered) return l.mu_w;
    Tensor out(l.mu_w.shape());
    const LogNormalMoments ups = lognormal_moments(l.upsilon_q());
    for (int64_t k = 0; k < l.units(); ++k) {
      const double scale = lognormal_moments(l.tau_q(k)).mean * ups.mean;
      for (int64_t i = 0; i < l.fanin_plus_bias(); ++i) {
        out(i, k) = scale * l.mu_w(i, k);
      }
    }
    return out;
  }
  if (m.prior.mode != PriorMode::hs_noncentered) return m.output.mu_w;
  const LogNormalQ kq = m.output.kappa_q();
  const double scale = m.prior.kappa_is_variance
                           ? std::exp(0.5 * kq.mu + 0.125 * kq.sigma2)
                           : std::exp(kq.mu + 0.5 * kq.sigma2);
  Tensor out(m.output.mu_w.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = scale * m.output.mu_w[i];
  return out;
}

struct PredictiveSummary {
  Tensor mean;                            // regression mean [n] or class probs [n x C]
  Tensor variance;                        // regression only, [n]
  Tensor log_density;                     // per-point log predictive density (targets given)
  std::vector<int64_t> predicted_labels;  // classification only
};

inline PredictiveSummary predict(Model& m, const Batch& batch, int M, RngStream& rng) {
  if (M < 1) throw ContractError("predict requires M >= 1");
  const int64_t n = batch.size();
  const bool regression = m.net.likelihood == Likelihood::gaussian_regression;
  const bool have_targets = regression ? batch.y.size() == n
                                       : static_cast<int64_t>(batch.labels.size()) == n;
  const int64_t c = m.net.output_dim();

  PredictiveSummary out;
  if (regression) {
    out.mean = Tensor::zeros({n});
    out.variance = Tensor::zeros({n});
  } else {
    out.mean = Tensor::zeros({n, c});
  }
  // per-point accumulators across samples
  Tensor sum_f = Tensor::zeros({n});
  Tensor sum_f2 = Tensor::zeros({n});
  Tensor sum_recip_gamma = Tensor::zeros({1});
  std::vector<std::vector<double>> log_terms(static_cast<size_t>(n));

  const GammaQ noise = regression ? m.noise_q() : GammaQ(1.0, 1.0);
  for (int s = 0; s < M; ++s) {
    Tape tape;
    BoundModel b = bind_model(m, tape, false);
    Var f = network_forward(b, batch.x, rng);
    const Tensor& fv = tape.value(f);
    if (regression) {
      const double gamma_draw = rng.gamma(noise.alpha, noise.beta);
      sum_recip_gamma[0] += 1.0 / gamma_draw;
      for (int64_t i = 0; i < n; ++i) {
        const double fi = fv(i, 0);
        sum_f[i] += fi;
        sum_f2[i] += fi * fi;
        if (have_targets) {
          const double r = batch.y[i] - fi;
          log_terms[static_cast<size_t>(i)].push_back(
              0.5 * std::log(gamma_draw) - 0.5 * kLn2Pi - 0.5 * gamma_draw * r * r);
        }
      }
    } else {
      for (int64_t i = 0; i < n; ++i) {
        double mx = fv(i, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, fv(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(fv(i, j) - mx);
        const double lse = mx + std::log(z);
        for (int64_t j = 0; j < c; ++j) out.mean(i, j) += std::exp(fv(i, j) - lse);
      }
    }
  }

  if (regression) {
    for (int64_t i = 0; i < n; ++i) {
      const double mean = sum_f[i] / M;
      out.mean[i] = mean;
      out.variance[i] = sum_f2[i] / M - mean * mean + sum_recip_gamma[0] / M;
    }
    if (have_targets) {
      out.log_density = Tensor::zeros({n});
      for (int64_t i = 0; i < n; ++i) {
        const auto& terms = log_terms[static_cast<size_t>(i)];
        double mx = terms[0];
        for (double t : terms) mx = std::max(mx, t);
        double z = 0.0;
        for (double t : terms) z += std::exp(t - mx);
        out.log_density[i] = mx + std::log(z) - std::log(static_cast<double>(M));
      }
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < c; ++j) out.mean(i, j) /= static_cast<double>(M);
    }
    out.predicted_labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      int64_t arg = 0;
      for (int64_t j = 1; j < c; ++j) {
        if (out.mean(i, j) > out.mean(i, arg)) arg = j;
      }
      out.predicted_labels[static_cast<size_t>(i)] = arg;
    }
    if (have_targets) {
      out.log_density = Tensor::zeros({n});
      for (int64_t i = 0; i < n; ++i) {
        out.log_density[i] = std::log(out.mean(i, batch.labels[static_cast<size_t>(i)]));
      }
    }
  }
  return out;
}

}  // namespace hsbnn
