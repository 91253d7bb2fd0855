#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hsbnn/checkpoint.hpp"

using namespace hsbnn;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/hsbnn_ckpt_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Batch toy_data(uint64_t seed) {
  RngStream rng(seed);
  Batch b;
  b.x = Tensor({12, 1});
  b.y = Tensor({12});
  for (int64_t i = 0; i < 12; ++i) {
    const double x = rng.normal();
    b.x(i, 0) = x;
    b.y[i] = 0.5 * x + rng.normal(0.0, 0.1);
  }
  return b;
}

}  // namespace

TEST_CASE("config json round-trips and rejects unknown or ill-typed fields") {
  NetworkConfig net;
  net.widths = {3, 7, 2};
  net.likelihood = Likelihood::categorical;
  PriorConfig prior;
  prior.mode = PriorMode::hs_centered;
  prior.b0 = 0.7;
  prior.variant = ForwardVariant::sampled_scales;
  prior.kappa_is_variance = true;
  TrainConfig train;
  train.lr = 0.01;
  train.batch_size = 64;
  train.seed = 12345;

  json j = configs_to_json(net, prior, train);
  REQUIRE_NOTHROW(reject_unknown_config_keys(j));
  NetworkConfig net2 = network_from_json(j);
  PriorConfig prior2 = prior_from_json(j);
  TrainConfig train2 = train_from_json(j);
  REQUIRE(net2.widths == net.widths);
  REQUIRE(net2.likelihood == net.likelihood);
  REQUIRE(prior2.mode == prior.mode);
  REQUIRE(prior2.b0 == prior.b0);
  REQUIRE(prior2.variant == prior.variant);
  REQUIRE(prior2.kappa_is_variance == true);
  REQUIRE(train2.lr == train.lr);
  REQUIRE(train2.batch_size == 64);
  REQUIRE(train2.seed == 12345);

  json bad = j;
  bad["learning_rate"] = 0.1;
  REQUIRE_THROWS_AS(reject_unknown_config_keys(bad), ConfigError);

  json wrong_type = j;
  wrong_type["lr"] = "fast";
  REQUIRE_THROWS_AS(train_from_json(wrong_type), ConfigError);

  json no_widths = j;
  no_widths.erase("widths");
  REQUIRE_THROWS_AS(network_from_json(no_widths), ConfigError);

  REQUIRE_THROWS_AS(prior_mode_from_string("horseshoe"), ConfigError);
  REQUIRE_THROWS_AS(forward_variant_from_string(""), ConfigError);
}

TEST_CASE("checkpoint round-trips every degree of freedom bitwise") {
  NetworkConfig net;
  net.widths = {1, 4, 1};
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 6;
  cfg.seed = 200;

  RngStream init(derive_seed(cfg.seed, kInitStreamSalt));
  Model m = init_params(net, PriorConfig{}, init);
  Batch data = toy_data(201);
  TrainState state(m, cfg);
  std::vector<StepRecord> hist = fit(m, data, cfg, state);

  TempFile f("roundtrip.ckpt");
  checkpoint_save(f.path, m, cfg, &state, hist);
  Checkpoint ck = checkpoint_load(f.path);

  REQUIRE(ck.model.hidden[0].mu_w == m.hidden[0].mu_w);
  REQUIRE(ck.model.hidden[0].u_sigma2_w == m.hidden[0].u_sigma2_w);
  REQUIRE(ck.model.hidden[0].mu_tau == m.hidden[0].mu_tau);
  REQUIRE(ck.model.hidden[0].c_lambda == m.hidden[0].c_lambda);
  REQUIRE(ck.model.hidden[0].d_lambda == m.hidden[0].d_lambda);
  REQUIRE(ck.model.hidden[0].d_theta == m.hidden[0].d_theta);
  REQUIRE(ck.model.output.mu_w == m.output.mu_w);
  REQUIRE(ck.model.output.mu_kappa == m.output.mu_kappa);
  REQUIRE(ck.model.output.d_rho == m.output.d_rho);
  REQUIRE(ck.model.u_noise_alpha == m.u_noise_alpha);
  REQUIRE(ck.model.u_noise_beta == m.u_noise_beta);
  REQUIRE(ck.model.prior.mode == PriorMode::hs_noncentered);
  REQUIRE(ck.train.seed == 200);

  REQUIRE(ck.state.has_value());
  REQUIRE(ck.state->step == state.step);
  REQUIRE(ck.state->adam.t == state.adam.t);
  for (size_t i = 0; i < state.adam.m.size(); ++i) {
    REQUIRE(ck.state->adam.m[i] == state.adam.m[i]);
    REQUIRE(ck.state->adam.v[i] == state.adam.v[i]);
  }
  REQUIRE(ck.state->draw_rng.serialize() == state.draw_rng.serialize());
  REQUIRE(ck.state->shuffle_rng.serialize() == state.shuffle_rng.serialize());

  REQUIRE(ck.history.size() == hist.size());
  for (size_t i = 0; i < hist.size(); ++i) {
    REQUIRE(ck.history[i].step == hist[i].step);
    REQUIRE(ck.history[i].elbo == hist[i].elbo);  // bitwise
  }
}

TEST_CASE("save, load, save again is byte-identical") {
  NetworkConfig net;
  net.widths = {2, 3, 1};
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 12;
  cfg.seed = 202;
  RngStream init(derive_seed(cfg.seed, kInitStreamSalt));
  Model m = init_params(net, PriorConfig{}, init);
  Batch data = toy_data(203);
  data.x = Tensor({12, 2});
  RngStream xr(204);
  for (int64_t i = 0; i < data.x.size(); ++i) data.x[i] = xr.normal();
  TrainState state(m, cfg);
  std::vector<StepRecord> hist = fit(m, data, cfg, state);

  TempFile a("bytes_a.ckpt"), b("bytes_b.ckpt");
  checkpoint_save(a.path, m, cfg, &state, hist);
  Checkpoint ck = checkpoint_load(a.path);
  checkpoint_save(b.path, ck.model, ck.train, &*ck.state, ck.history);
  REQUIRE(slurp(a.path) == slurp(b.path));
}

TEST_CASE("resumed training matches an uninterrupted run bitwise") {
  NetworkConfig net;
  net.widths = {1, 3, 1};
  Batch data = toy_data(205);

  TrainConfig full;
  full.epochs = 8;
  full.batch_size = 4;
  full.seed = 206;
  RngStream init_a(derive_seed(full.seed, kInitStreamSalt));
  Model uninterrupted = init_params(net, PriorConfig{}, init_a);
  TrainState sa(uninterrupted, full);
  std::vector<StepRecord> ha = fit(uninterrupted, data, full, sa);

  TrainConfig half = full;
  half.epochs = 4;
  RngStream init_b(derive_seed(full.seed, kInitStreamSalt));
  Model part = init_params(net, PriorConfig{}, init_b);
  TrainState sb(part, half);
  std::vector<StepRecord> hb = fit(part, data, half, sb);

  TempFile f("resume.ckpt");
  checkpoint_save(f.path, part, half, &sb, hb);
  Checkpoint ck = checkpoint_load(f.path);
  std::vector<StepRecord> hc = fit(ck.model, data, half, *ck.state);

  REQUIRE(ck.model.hidden[0].mu_w == uninterrupted.hidden[0].mu_w);
  REQUIRE(ck.model.output.mu_w == uninterrupted.output.mu_w);
  REQUIRE(ck.model.hidden[0].d_lambda == uninterrupted.hidden[0].d_lambda);
  REQUIRE(hc.back().step == ha.back().step);
  REQUIRE(hc.back().elbo == ha.back().elbo);
}

TEST_CASE("baseline-mode checkpoints carry no shrinkage blocks") {
  NetworkConfig net;
  net.widths = {2, 5, 2};
  net.likelihood = Likelihood::categorical;
  PriorConfig prior;
  prior.mode = PriorMode::gaussian_baseline;
  RngStream init(207);
  Model m = init_params(net, prior, init);

  TempFile f("baseline.ckpt");
  checkpoint_save(f.path, m, TrainConfig{}, nullptr, {});
  Checkpoint ck = checkpoint_load(f.path);
  REQUIRE(ck.model.prior.mode == PriorMode::gaussian_baseline);
  REQUIRE(ck.model.hidden[0].mu_tau.empty());
  REQUIRE(ck.model.hidden[0].mu_w == m.hidden[0].mu_w);
  REQUIRE_FALSE(ck.state.has_value());
  REQUIRE(ck.history.empty());
}

TEST_CASE("standardization record rides along") {
  Dataset train = gen_cubic(30, 208);
  StandardizationRecord rec = standardize(train);
  NetworkConfig net;
  net.widths = {1, 2, 1};
  RngStream init(209);
  Model m = init_params(net, PriorConfig{}, init);

  TempFile f("standardized.ckpt");
  checkpoint_save(f.path, m, TrainConfig{}, nullptr, {}, &rec);
  Checkpoint ck = checkpoint_load(f.path);
  REQUIRE(ck.standardization.applied);
  REQUIRE(ck.standardization.y_mean == rec.y_mean);
  REQUIRE(ck.standardization.y_scale == rec.y_scale);
  REQUIRE(ck.standardization.x_mean == rec.x_mean);
  REQUIRE(ck.standardization.x_scale == rec.x_scale);
}

TEST_CASE("corrupt checkpoints are rejected with located errors") {
  NetworkConfig net;
  net.widths = {1, 2, 1};
  RngStream init(210);
  Model m = init_params(net, PriorConfig{}, init);
  TempFile f("corrupt.ckpt");
  checkpoint_save(f.path, m, TrainConfig{}, nullptr, {});
  const std::string good = slurp(f.path);

  SECTION("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    dump(f.path, bad);
    REQUIRE_THROWS_AS(checkpoint_load(f.path), DataFormatError);
  }
  SECTION("unsupported version") {
    std::string bad = good;
    const size_t pos = bad.find("\"format-version\":1");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 18, "\"format-version\":9");
    dump(f.path, bad);
    try {
      checkpoint_load(f.path);
      FAIL("expected DataFormatError");
    } catch (const DataFormatError& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("version 9") != std::string::npos);
    }
  }
  SECTION("truncated payload names byte counts") {
    std::string bad = good.substr(0, good.size() - 5);
    dump(f.path, bad);
    try {
      checkpoint_load(f.path);
      FAIL("expected DataFormatError");
    } catch (const DataFormatError& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("expected") != std::string::npos);
      REQUIRE(msg.find("found") != std::string::npos);
    }
  }
  SECTION("nonexistent file") {
    REQUIRE_THROWS_AS(checkpoint_load("/nonexistent/x.ckpt"), DataFormatError);
  }
}
