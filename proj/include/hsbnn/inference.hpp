#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hsbnn/distributions.hpp"
#include "hsbnn/errors.hpp"
#include "hsbnn/model.hpp"
#include "hsbnn/rng.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

// Stream salts: parameter init, epoch shuffling, and reparameterization noise
// draw from independent child streams of the run seed.
inline constexpr uint64_t kInitStreamSalt = 0x696e6974;     // "init"
inline constexpr uint64_t kShuffleStreamSalt = 0x73687566;  // "shuf"
inline constexpr uint64_t kReparamStreamSalt = 0x72657061;  // "repa"

struct TrainConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t batch_size = 512;
  int64_t epochs = 1;
  int mc_samples = 1;  // forward draws per ELBO estimate
  uint64_t seed = 0;
  int64_t fixed_point_every = 1;   // 0 disables the auxiliary sweeps
  double clip_global_norm = 0.0;   // 0 disables clipping

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
    if (fixed_point_every < 0) throw ConfigError("fixed_point_every must be non-negative");
    if (clip_global_norm < 0.0) throw ConfigError("clip_global_norm must be non-negative");
  }
};

// Adam in ascent form: parameters move along +grad of the ELBO.
struct AdamState {
  int64_t t = 0;
  std::vector<Tensor> m, v;

  explicit AdamState(const std::vector<Tensor*>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros(p->shape()));
      v.push_back(Tensor::zeros(p->shape()));
    }
  }
};

// Scales grads in place to global norm `max_norm` when they exceed it.
inline double apply_global_norm_clip(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (int64_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads) {
      for (int64_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

inline void adam_step(AdamState& state, const std::vector<Tensor*>& params,
                      const std::vector<Tensor>& grads, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractError("adam_step: parameter/gradient/state count mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t j = 0; j < params.size(); ++j) {
    Tensor& p = *params[j];
    const Tensor& g = grads[j];
    if (!p.same_shape(g)) throw ContractError("adam_step: gradient shape mismatch");
    Tensor& mj = state.m[j];
    Tensor& vj = state.v[j];
    for (int64_t i = 0; i < p.size(); ++i) {
      mj[i] = cfg.beta1 * mj[i] + (1.0 - cfg.beta1) * g[i];
      vj[i] = cfg.beta2 * vj[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = mj[i] / bc1;
      const double vhat = vj[i] / bc2;
      p[i] += cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Closed-form coordinate update for every inverse-Gamma auxiliary posterior:
// q(aux) = IG(1, E[1/scale] + 1/b^2), with E[1/scale] under the current
// log-normal scale posterior. Exact ascent on the bound; no gradients flow
// through these parameters.
inline void fixed_point_update(Model& m) {
  if (!m.prior.is_hs()) return;
  for (LayerParams& l : m.hidden) {
    for (int64_t k = 0; k < l.units(); ++k) {
      const LogNormalQ q = l.tau_q(k);
      l.c_lambda[k] = 1.0;
      l.d_lambda[k] = lognormal_moments(q).recip_mean + 1.0 / (m.prior.b0 * m.prior.b0);
    }
    const LogNormalQ uq = l.upsilon_q();
    l.c_theta = 1.0;
    l.d_theta = lognormal_moments(uq).recip_mean + 1.0 / (m.prior.bg * m.prior.bg);
  }
  const LogNormalQ kq = m.output.kappa_q();
  m.output.c_rho = 1.0;
  m.output.d_rho = lognormal_moments(kq).recip_mean + 1.0 / (m.prior.bkappa * m.prior.bkappa);
}

struct StepRecord {
  int64_t step;
  double elbo;
};

using ProgressFn = std::function<void(int64_t step, double elbo)>;

namespace detail {

inline Batch gather_batch(const Batch& data, const std::vector<int64_t>& order, int64_t lo,
                          int64_t hi) {
  const int64_t n = hi - lo;
  Batch out;
  out.x = Tensor({n, data.x.cols()});
  for (int64_t r = 0; r < n; ++r) {
    const int64_t src = order[static_cast<size_t>(lo + r)];
    for (int64_t c = 0; c < data.x.cols(); ++c) out.x(r, c) = data.x(src, c);
  }
  if (!data.y.empty()) {
    out.y = Tensor({n});
    for (int64_t r = 0; r < n; ++r) out.y[r] = data.y[order[static_cast<size_t>(lo + r)]];
  }
  if (!data.labels.empty()) {
    out.labels.resize(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
      out.labels[static_cast<size_t>(r)] = data.labels[static_cast<size_t>(
          order[static_cast<size_t>(lo + r)])];
    }
  }
  return out;
}

inline void check_finite_parts(const Tape& tape, const ElboParts& parts, int64_t step) {
  const struct {
    const char* name;
    Var v;
  } terms[] = {{"likelihood", parts.likelihood},
               {"log-prior", parts.log_prior},
               {"entropy", parts.entropy}};
  for (const auto& t : terms) {
    if (!std::isfinite(tape.value(t.v).item())) {
      throw NumericalError("ELBO " + std::string(t.name) + " term became non-finite at step " +
                           std::to_string(step));
    }
  }
}

}  // namespace detail

// One stochastic variational step: build a fresh tape, estimate the ELBO on
// `batch`, backpropagate, Adam-update the variational parameters. Returns the
// ELBO estimate. Auxiliary sweeps are the caller's job (see fit).
inline double train_step(Model& m, const Batch& batch, int64_t dataset_size, AdamState& adam,
                         const TrainConfig& cfg, RngStream& draw_rng, int64_t step) {
  Tape tape;
  BoundModel b = bind_model(m, tape);
  ElboParts parts = elbo(b, batch, dataset_size, cfg.mc_samples, draw_rng);
  detail::check_finite_parts(tape, parts, step);
  tape.backward(parts.total);

  std::vector<Tensor*> params = m.grad_params();
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    Var leaf{-1, nullptr};
    for (const auto& [ptr, var] : b.leaves) {
      if (ptr == p) {
        leaf = var;
        break;
      }
    }
    if (!leaf.valid()) throw ContractError("trainable parameter missing from bound leaves");
    Tensor g = tape.adjoint(leaf);
    if (g.empty()) g = Tensor::zeros(p->shape());
    grads.push_back(std::move(g));
  }
  if (cfg.clip_global_norm > 0.0) apply_global_norm_clip(grads, cfg.clip_global_norm);
  adam_step(adam, params, grads, cfg);
  return tape.value(parts.total).item();
}

// Mutable optimizer/stream state, split out so sessions can be persisted and
// resumed mid-run.
struct TrainState {
  AdamState adam;
  RngStream shuffle_rng, draw_rng;
  int64_t step = 0;

  TrainState(Model& m, const TrainConfig& cfg)
      : adam(m.grad_params()),
        shuffle_rng(derive_seed(cfg.seed, kShuffleStreamSalt)),
        draw_rng(derive_seed(cfg.seed, kReparamStreamSalt)) {}
};

// Full training loop. Epoch order comes from a dedicated shuffle stream so the
// reparameterization noise sequence is identical across batch-size choices.
// Returns the records produced by this call (appends to state.step).
inline std::vector<StepRecord> fit(Model& m, const Batch& data, const TrainConfig& cfg,
                                   TrainState& state, const ProgressFn& progress = nullptr) {
  cfg.validate();
  if (data.size() < 1) throw ContractError("fit requires a non-empty dataset");
  if (m.net.likelihood == Likelihood::gaussian_regression && data.y.empty()) {
    throw ContractError("regression training data has no targets");
  }
  if (m.net.likelihood == Likelihood::categorical && data.labels.empty()) {
    throw ContractError("classification training data has no labels");
  }

  const int64_t n = data.size();
  std::vector<int64_t> order(static_cast<size_t>(n));

  std::vector<StepRecord> history;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // identity re-seeded every epoch so the permutation depends only on the
    // stream state, letting resumed sessions replay the schedule exactly
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    state.shuffle_rng.shuffle(order);
    for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
      const int64_t hi = std::min(lo + cfg.batch_size, n);
      Batch batch = detail::gather_batch(data, order, lo, hi);
      state.step += 1;
      const double value =
          train_step(m, batch, n, state.adam, cfg, state.draw_rng, state.step);
      if (cfg.fixed_point_every > 0 && state.step % cfg.fixed_point_every == 0) {
        fixed_point_update(m);
      }
      history.push_back({state.step, value});
      if (progress) progress(state.step, value);
    }
  }
  return history;
}

inline std::vector<StepRecord> fit(Model& m, const Batch& data, const TrainConfig& cfg,
                                   const ProgressFn& progress = nullptr) {
  TrainState state(m, cfg);
  return fit(m, data, cfg, state, progress);
}

// Deterministic ELBO evaluation (no parameter updates) for diagnostics.
inline double evaluate_elbo(Model& m, const Batch& data, int S, uint64_t seed) {
  Tape tape;
  BoundModel b = bind_model(m, tape, false);
  RngStream rng(seed);
  return tape.value(elbo(b, data, data.size(), S, rng).total).item();
}

}  // namespace hsbnn
