#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hsbnn/data.hpp"
#include "hsbnn/errors.hpp"
#include "hsbnn/inference.hpp"
#include "hsbnn/model.hpp"

namespace hsbnn {

using json = nlohmann::json;

// ---- enum <-> string ----

inline std::string to_string(Likelihood l) {
  return l == Likelihood::gaussian_regression ? "gaussian-regression" : "categorical";
}
inline std::string to_string(PriorMode m) {
  switch (m) {
    case PriorMode::hs_noncentered: return "hs-noncentered";
    case PriorMode::hs_centered: return "hs-centered";
    case PriorMode::gaussian_baseline: return "gaussian-baseline";
  }
  throw ContractError("unknown prior mode");
}
inline std::string to_string(ForwardVariant v) {
  return v == ForwardVariant::expected_scales ? "expected-scales" : "sampled-scales";
}

inline Likelihood likelihood_from_string(const std::string& s) {
  if (s == "gaussian-regression") return Likelihood::gaussian_regression;
  if (s == "categorical") return Likelihood::categorical;
  throw ConfigError("unknown likelihood \"" + s + "\"");
}
inline PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "hs-noncentered") return PriorMode::hs_noncentered;
  if (s == "hs-centered") return PriorMode::hs_centered;
  if (s == "gaussian-baseline") return PriorMode::gaussian_baseline;
  throw ConfigError("unknown prior mode \"" + s + "\"");
}
inline ForwardVariant forward_variant_from_string(const std::string& s) {
  if (s == "expected-scales") return ForwardVariant::expected_scales;
  if (s == "sampled-scales") return ForwardVariant::sampled_scales;
  throw ConfigError("unknown forward variant \"" + s + "\"");
}

// ---- flat config schema (shared by config files and checkpoint headers) ----

namespace detail {

inline const json& require_key(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing config field \"") + key + "\"");
  return *it;
}

template <typename T>
T get_field(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
  }
}

}  // namespace detail

inline json configs_to_json(const NetworkConfig& net, const PriorConfig& prior,
                            const TrainConfig& train) {
  json j;
  j["widths"] = net.widths;
  j["likelihood"] = to_string(net.likelihood);
  j["mode"] = to_string(prior.mode);
  j["b0"] = prior.b0;
  j["bg"] = prior.bg;
  j["bkappa"] = prior.bkappa;
  j["variant"] = to_string(prior.variant);
  j["kappa-is-variance"] = prior.kappa_is_variance;
  j["lr"] = train.lr;
  j["beta1"] = train.beta1;
  j["beta2"] = train.beta2;
  j["eps"] = train.eps;
  j["batch-size"] = train.batch_size;
  j["epochs"] = train.epochs;
  j["mc-samples"] = train.mc_samples;
  j["seed"] = train.seed;
  j["fixed-point-every"] = train.fixed_point_every;
  j["clip-global-norm"] = train.clip_global_norm;
  return j;
}

inline const char* kKnownConfigKeys[] = {
    "widths", "likelihood", "mode",   "b0",         "bg",         "bkappa",
    "variant", "kappa-is-variance",   "lr",         "beta1",      "beta2",
    "eps",     "batch-size", "epochs", "mc-samples", "seed",      "fixed-point-every",
    "clip-global-norm"};

inline void reject_unknown_config_keys(const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kKnownConfigKeys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config field \"" + it.key() + "\"");
  }
}

inline NetworkConfig network_from_json(const json& j) {
  NetworkConfig net;
  try {
    net.widths = detail::require_key(j, "widths").get<std::vector<int64_t>>();
  } catch (const json::exception&) {
    throw ConfigError("config field \"widths\" must be an array of integers");
  }
  net.likelihood = likelihood_from_string(
      detail::get_field<std::string>(j, "likelihood", "gaussian-regression"));
  net.validate();
  return net;
}

inline PriorConfig prior_from_json(const json& j) {
  PriorConfig p;
  p.mode = prior_mode_from_string(detail::get_field<std::string>(j, "mode", "hs-noncentered"));
  p.b0 = detail::get_field<double>(j, "b0", p.b0);
  p.bg = detail::get_field<double>(j, "bg", p.bg);
  p.bkappa = detail::get_field<double>(j, "bkappa", p.bkappa);
  p.variant =
      forward_variant_from_string(detail::get_field<std::string>(j, "variant", "expected-scales"));
  p.kappa_is_variance = detail::get_field<bool>(j, "kappa-is-variance", false);
  p.validate();
  return p;
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.lr = detail::get_field<double>(j, "lr", t.lr);
  t.beta1 = detail::get_field<double>(j, "beta1", t.beta1);
  t.beta2 = detail::get_field<double>(j, "beta2", t.beta2);
  t.eps = detail::get_field<double>(j, "eps", t.eps);
  t.batch_size = detail::get_field<int64_t>(j, "batch-size", t.batch_size);
  t.epochs = detail::get_field<int64_t>(j, "epochs", t.epochs);
  t.mc_samples = detail::get_field<int>(j, "mc-samples", t.mc_samples);
  t.seed = detail::get_field<uint64_t>(j, "seed", t.seed);
  t.fixed_point_every = detail::get_field<int64_t>(j, "fixed-point-every", t.fixed_point_every);
  t.clip_global_norm = detail::get_field<double>(j, "clip-global-norm", t.clip_global_norm);
  t.validate();
  return t;
}

// ---- checkpoint format ----
//
// 8-byte magic, little-endian u64 header length, JSON header, then a binary
// payload of little-endian float-64 tensors at the offsets the header's
// manifest records.

inline constexpr char kCheckpointMagic[8] = {'H', 'S', 'B', 'N', 'N', 'C', 'P', '1'};
inline constexpr int64_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  TrainConfig train;
  std::vector<StepRecord> history;
  std::optional<TrainState> state;
  StandardizationRecord standardization;  // applied=false when absent
};

namespace detail {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};
struct NamedScalar {
  std::string name;
  double* value;
};

// Every float-64 degree of freedom in the model, in a fixed order.
inline void model_entries(Model& m, std::vector<NamedTensor>& tensors,
                          std::vector<NamedScalar>& scalars) {
  for (size_t i = 0; i < m.hidden.size(); ++i) {
    const std::string p = "hidden." + std::to_string(i) + ".";
    LayerParams& l = m.hidden[i];
    tensors.push_back({p + "mu_w", &l.mu_w});
    tensors.push_back({p + "u_sigma2_w", &l.u_sigma2_w});
    if (m.prior.is_hs()) {
      tensors.push_back({p + "mu_tau", &l.mu_tau});
      tensors.push_back({p + "u_sigma2_tau", &l.u_sigma2_tau});
      tensors.push_back({p + "mu_upsilon", &l.mu_upsilon});
      tensors.push_back({p + "u_sigma2_upsilon", &l.u_sigma2_upsilon});
      tensors.push_back({p + "c_lambda", &l.c_lambda});
      tensors.push_back({p + "d_lambda", &l.d_lambda});
      scalars.push_back({p + "c_theta", &l.c_theta});
      scalars.push_back({p + "d_theta", &l.d_theta});
    }
  }
  tensors.push_back({"output.mu_w", &m.output.mu_w});
  tensors.push_back({"output.u_sigma2_w", &m.output.u_sigma2_w});
  if (m.prior.is_hs()) {
    tensors.push_back({"output.mu_kappa", &m.output.mu_kappa});
    tensors.push_back({"output.u_sigma2_kappa", &m.output.u_sigma2_kappa});
    scalars.push_back({"output.c_rho", &m.output.c_rho});
    scalars.push_back({"output.d_rho", &m.output.d_rho});
  }
  tensors.push_back({"noise.u_alpha", &m.u_noise_alpha});
  tensors.push_back({"noise.u_beta", &m.u_noise_beta});
}

inline void append_le_doubles(std::string& out, const Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

inline void read_le_doubles(const std::string& payload, size_t offset_doubles, Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) {
    const size_t base = (offset_doubles + static_cast<size_t>(i)) * 8;
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(payload[base + b])) << (8 * b);
    }
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    t[i] = v;
  }
}

}  // namespace detail

inline void checkpoint_save(const std::string& path, const Model& model_in,
                            const TrainConfig& train, const TrainState* state,
                            const std::vector<StepRecord>& history,
                            const StandardizationRecord* standardization = nullptr) {
  Model& model = const_cast<Model&>(model_in);  // entries are read-only here
  std::vector<detail::NamedTensor> tensors;
  std::vector<detail::NamedScalar> scalars;
  detail::model_entries(model, tensors, scalars);

  json header;
  header["format-version"] = kCheckpointVersion;
  header["config"] = configs_to_json(model.net, model.prior, train);

  json scalar_block = json::object();
  for (const auto& s : scalars) scalar_block[s.name] = *s.value;
  header["scalars"] = scalar_block;

  json manifest = json::array();
  std::string payload;
  size_t offset = 0;
  auto add_tensor = [&](const std::string& name, const Tensor& t) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    manifest.push_back(e);
    detail::append_le_doubles(payload, t);
    offset += static_cast<size_t>(t.size());
  };
  for (const auto& nt : tensors) add_tensor(nt.name, *nt.tensor);

  if (state != nullptr) {
    json st;
    st["step"] = state->step;
    st["adam-t"] = state->adam.t;
    st["shuffle-rng"] = state->shuffle_rng.serialize();
    st["draw-rng"] = state->draw_rng.serialize();
    header["train-state"] = st;
    for (size_t i = 0; i < state->adam.m.size(); ++i) {
      add_tensor("adam.m." + std::to_string(i), state->adam.m[i]);
      add_tensor("adam.v." + std::to_string(i), state->adam.v[i]);
    }
  }

  if (standardization != nullptr && standardization->applied) {
    json sd;
    sd["y-mean"] = standardization->y_mean;
    sd["y-scale"] = standardization->y_scale;
    header["standardization"] = sd;
    // feature stats ride in the payload manifest like any tensor
    add_tensor("standardization.x_mean", standardization->x_mean);
    add_tensor("standardization.x_scale", standardization->x_scale);
  }

  json hist = json::array();
  for (const StepRecord& r : history) hist.push_back(json::array({r.step, r.elbo}));
  header["history"] = hist;
  header["tensors"] = manifest;
  header["payload-doubles"] = offset;

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataFormatError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  uint64_t hlen = header_text.size();
  char hbuf[8];
  for (int b = 0; b < 8; ++b) hbuf[b] = static_cast<char>((hlen >> (8 * b)) & 0xff);
  out.write(hbuf, 8);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataFormatError("write failed for checkpoint: " + path);
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataFormatError("not a checkpoint file (bad magic): " + path);
  }
  char hbuf[8];
  if (!in.read(hbuf, 8)) throw DataFormatError("truncated checkpoint header length: " + path);
  uint64_t hlen = 0;
  for (int b = 0; b < 8; ++b) {
    hlen |= static_cast<uint64_t>(static_cast<unsigned char>(hbuf[b])) << (8 * b);
  }
  std::string header_text(hlen, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(hlen))) {
    throw DataFormatError("truncated checkpoint header: " + path);
  }
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw DataFormatError("corrupt checkpoint header in " + path + ": " + e.what());
  }

  const int64_t version = detail::get_field<int64_t>(header, "format-version", -1);
  if (version != kCheckpointVersion) {
    throw DataFormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ") in " + path);
  }
  const json& cfg = detail::require_key(header, "config");
  NetworkConfig net = network_from_json(cfg);
  PriorConfig prior = prior_from_json(cfg);
  TrainConfig train = train_from_json(cfg);

  // payload
  const size_t expected_doubles = detail::get_field<size_t>(header, "payload-doubles", 0);
  std::string payload(expected_doubles * 8, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  const size_t got = static_cast<size_t>(in.gcount());
  if (got != payload.size()) {
    throw DataFormatError("truncated checkpoint payload in " + path + ": expected " +
                          std::to_string(payload.size()) + " bytes, found " +
                          std::to_string(got));
  }

  Checkpoint ck;
  RngStream skeleton_rng(0);
  ck.model = init_params(net, prior, skeleton_rng);
  ck.train = train;

  std::vector<detail::NamedTensor> tensors;
  std::vector<detail::NamedScalar> scalars;
  detail::model_entries(ck.model, tensors, scalars);

  if (header.contains("train-state")) {
    const json& st = header["train-state"];
    ck.state.emplace(ck.model, train);
    ck.state->step = detail::get_field<int64_t>(st, "step", 0);
    ck.state->adam.t = detail::get_field<int64_t>(st, "adam-t", 0);
    ck.state->shuffle_rng =
        RngStream::deserialize(detail::require_key(st, "shuffle-rng").get<std::string>());
    ck.state->draw_rng =
        RngStream::deserialize(detail::require_key(st, "draw-rng").get<std::string>());
    for (size_t i = 0; i < ck.state->adam.m.size(); ++i) {
      tensors.push_back({"adam.m." + std::to_string(i), &ck.state->adam.m[i]});
      tensors.push_back({"adam.v." + std::to_string(i), &ck.state->adam.v[i]});
    }
  }
  if (header.contains("standardization")) {
    const json& sd = header["standardization"];
    ck.standardization.applied = true;
    ck.standardization.y_mean = detail::require_key(sd, "y-mean").get<double>();
    ck.standardization.y_scale = detail::require_key(sd, "y-scale").get<double>();
    ck.standardization.x_mean = Tensor::zeros({net.input_dim()});
    ck.standardization.x_scale = Tensor::zeros({net.input_dim()});
    tensors.push_back({"standardization.x_mean", &ck.standardization.x_mean});
    tensors.push_back({"standardization.x_scale", &ck.standardization.x_scale});
  }

  const json& manifest = detail::require_key(header, "tensors");
  if (manifest.size() != tensors.size()) {
    throw DataFormatError("checkpoint manifest lists " + std::to_string(manifest.size()) +
                          " tensors, expected " + std::to_string(tensors.size()));
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const json& e = manifest[i];
    const std::string name = detail::require_key(e, "name").get<std::string>();
    if (name != tensors[i].name) {
      throw DataFormatError("checkpoint tensor \"" + name + "\" where \"" + tensors[i].name +
                            "\" was expected");
    }
    const std::vector<int64_t> shape = detail::require_key(e, "shape").get<std::vector<int64_t>>();
    if (shape != tensors[i].tensor->shape()) {
      throw DataFormatError("checkpoint tensor \"" + name + "\" has inconsistent shape");
    }
    const size_t offset = detail::require_key(e, "offset").get<size_t>();
    if (offset + static_cast<size_t>(tensors[i].tensor->size()) > expected_doubles) {
      throw DataFormatError("checkpoint tensor \"" + name + "\" overruns the payload");
    }
    detail::read_le_doubles(payload, offset, *tensors[i].tensor);
  }
  const json& scalar_block = detail::require_key(header, "scalars");
  for (const auto& s : scalars) {
    *s.value = detail::require_key(scalar_block, s.name.c_str()).get<double>();
  }

  for (const json& r : detail::require_key(header, "history")) {
    ck.history.push_back({r.at(0).get<int64_t>(), r.at(1).get<double>()});
  }
  return ck;
}

}  // namespace hsbnn
