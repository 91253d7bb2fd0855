#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hsbnn/data.hpp"
#include "hsbnn/diagnostics.hpp"
#include "hsbnn/experiments.hpp"

using namespace hsbnn;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/hsbnn_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write_text(const std::string& body) const {
    std::ofstream out(path);
    out << body;
  }
  void write_bytes(const std::vector<unsigned char>& body) const {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
  }
};

void push_u32_be(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

Model make_model(std::vector<int64_t> widths, Likelihood lik, PriorMode mode, uint64_t seed) {
  NetworkConfig net;
  net.widths = std::move(widths);
  net.likelihood = lik;
  PriorConfig prior;
  prior.mode = mode;
  RngStream rng(seed);
  return init_params(net, prior, rng);
}

void fill(Tensor& t, double v) {
  for (int64_t i = 0; i < t.size(); ++i) t[i] = v;
}

// Baseline net computing f(x) = x + bias via a relu pair: relu(x) - relu(-x).
Model identity_regressor(double output_bias) {
  Model m = make_model({1, 2, 1}, Likelihood::gaussian_regression,
                       PriorMode::gaussian_baseline, 3);
  fill(m.hidden[0].mu_w, 0.0);
  m.hidden[0].mu_w(0, 0) = 1.0;
  m.hidden[0].mu_w(0, 1) = -1.0;
  fill(m.hidden[0].u_sigma2_w, -40.0);
  fill(m.output.mu_w, 0.0);
  m.output.mu_w(0, 0) = 1.0;
  m.output.mu_w(1, 0) = -1.0;
  m.output.mu_w(2, 0) = output_bias;
  fill(m.output.u_sigma2_w, -40.0);
  return m;
}

Dataset line_dataset(const std::vector<double>& xs) {
  Dataset d;
  d.kind = DatasetKind::regression;
  d.x = Tensor({static_cast<int64_t>(xs.size()), 1});
  d.y = Tensor({static_cast<int64_t>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) {
    d.x(static_cast<int64_t>(i), 0) = xs[i];
    d.y[static_cast<int64_t>(i)] = xs[i];
  }
  return d;
}

}  // namespace

TEST_CASE("sparsity report isolates the single loaded unit") {
  Model m = make_model({3, 4, 2}, Likelihood::gaussian_regression,
                       PriorMode::gaussian_baseline, 11);
  fill(m.hidden[0].mu_w, 0.0);
  m.hidden[0].mu_w(0, 2) = 1.0;
  m.hidden[0].mu_w(1, 2) = 2.0;
  m.hidden[0].mu_w(2, 2) = 2.0;

  SparsityReport rep = sparsity_report(m, 0);
  REQUIRE(rep.layer == 0);
  REQUIRE(rep.sorted_norms.size() == 4);
  REQUIRE(rep.sorted_norms[0] == Catch::Approx(3.0));
  REQUIRE(rep.sorted_norms[1] == 0.0);
  REQUIRE(rep.sorted_norms[3] == 0.0);
  REQUIRE(rep.threshold == Catch::Approx(0.3));
  REQUIRE(rep.active_units == 1);

  SparsityReport strict = sparsity_report(m, 0, 0.5);
  REQUIRE(strict.threshold == Catch::Approx(1.5));
  REQUIRE(strict.active_units == 1);

  REQUIRE_THROWS_AS(sparsity_report(m, 0, -0.1), DomainError);
  REQUIRE_THROWS_AS(sparsity_report(m, 0, 0.1, 0), DomainError);
  REQUIRE_THROWS_AS(sparsity_report(m, 5), ContractError);
}

TEST_CASE("sparsity report folds shared scales into noncentered norms") {
  Model m = make_model({2, 3, 1}, Likelihood::gaussian_regression,
                       PriorMode::hs_noncentered, 13);
  LayerParams& l = m.hidden[0];
  fill(l.mu_w, 0.0);
  l.mu_w(0, 0) = 3.0;
  l.mu_w(1, 1) = 4.0;
  l.mu_w(2, 2) = 5.0;
  l.mu_tau[0] = 0.2;
  l.mu_tau[1] = -0.5;
  l.mu_tau[2] = 0.0;
  fill(l.u_sigma2_tau, -40.0);
  l.mu_upsilon[0] = 0.3;
  fill(l.u_sigma2_upsilon, -40.0);

  // with point-mass q a unit's norm is exp(mu_tau) * exp(mu_upsilon) * |mu|
  const double ups = std::exp(0.3);
  std::vector<double> expect = {3.0 * std::exp(0.2) * ups, 4.0 * std::exp(-0.5) * ups,
                                5.0 * ups};
  std::sort(expect.begin(), expect.end(), std::greater<double>());

  SparsityReport rep = sparsity_report(m, 0);
  REQUIRE(rep.sorted_norms.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(rep.sorted_norms[i] == Catch::Approx(expect[i]).epsilon(1e-9));
  }
}

TEST_CASE("fresh initialization keeps unit norms within 10x the median") {
  for (PriorMode mode : {PriorMode::hs_noncentered, PriorMode::hs_centered,
                         PriorMode::gaussian_baseline}) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      Model m = make_model({5, 31, 3}, Likelihood::gaussian_regression, mode, seed);
      SparsityReport rep = sparsity_report(m, 0);
      REQUIRE(rep.sorted_norms.size() == 31);
      const double median = rep.sorted_norms[15];
      REQUIRE(median > 0.0);
      REQUIRE(rep.sorted_norms.front() <= 10.0 * median);
      for (size_t i = 1; i < rep.sorted_norms.size(); ++i) {
        REQUIRE(rep.sorted_norms[i] <= rep.sorted_norms[i - 1]);
        REQUIRE(rep.sorted_norms[i] >= 0.0);
      }
    }
  }
}

TEST_CASE("histogram covers the least loaded unit's incoming weights") {
  Model m = make_model({3, 5, 1}, Likelihood::gaussian_regression,
                       PriorMode::gaussian_baseline, 17);
  fill(m.hidden[0].mu_w, 1.0);
  // unit 3 gets the smallest norm, with weights spanning [-2, 2]
  m.hidden[0].mu_w(0, 3) = -2.0;
  m.hidden[0].mu_w(1, 3) = -1.0;
  m.hidden[0].mu_w(2, 3) = 0.5;
  m.hidden[0].mu_w(3, 3) = 2.0;
  for (int64_t k : {0, 1, 2, 4}) {
    for (int64_t i = 0; i < 4; ++i) m.hidden[0].mu_w(i, k) = 10.0 + static_cast<double>(k);
  }

  SparsityReport rep = sparsity_report(m, 0, 0.1, 4);
  REQUIRE(rep.histogram_edges.size() == 5);
  REQUIRE(rep.histogram_counts.size() == 4);
  REQUIRE(rep.histogram_edges.front() == Catch::Approx(-2.0));
  REQUIRE(rep.histogram_edges.back() == Catch::Approx(2.0));
  const int64_t total =
      std::accumulate(rep.histogram_counts.begin(), rep.histogram_counts.end(), int64_t(0));
  REQUIRE(total == 4);
  REQUIRE(rep.histogram_counts.front() >= 1);  // -2 lands in the first bin
  REQUIRE(rep.histogram_counts.back() >= 1);   // +2 clamps into the last bin
  for (size_t i = 1; i < rep.histogram_edges.size(); ++i) {
    REQUIRE(rep.histogram_edges[i] > rep.histogram_edges[i - 1]);
  }
}

TEST_CASE("regression metrics match the rigged predictor and rescale exactly") {
  Dataset test = line_dataset({-1.5, -0.3, 0.2, 0.8, 1.7});

  Model exact = identity_regressor(0.0);
  RegressionMetrics m0 = evaluate_regression(exact, test, 16, 5);
  REQUIRE(m0.rmse < 1e-6);
  REQUIRE(std::isfinite(m0.mean_log_density));
  REQUIRE(m0.mean_log_density < 0.0);
  REQUIRE(m0.mean_log_density > -3.0);

  Model biased = identity_regressor(0.5);
  RegressionMetrics m1 = evaluate_regression(biased, test, 16, 5);
  REQUIRE(m1.rmse == Catch::Approx(0.5).margin(1e-6));

  // marking the targets as standardized rescales both metrics analytically
  Dataset scaled = test;
  scaled.standardization.applied = true;
  scaled.standardization.y_mean = 3.0;
  scaled.standardization.y_scale = 2.0;
  RegressionMetrics m2 = evaluate_regression(biased, scaled, 16, 5);
  REQUIRE(m2.rmse == Catch::Approx(2.0 * m1.rmse).epsilon(1e-12));
  REQUIRE(m2.mean_log_density ==
          Catch::Approx(m1.mean_log_density - std::log(2.0)).epsilon(1e-12));

  Model wrong = make_model({1, 2, 2}, Likelihood::categorical, PriorMode::gaussian_baseline, 1);
  REQUIRE_THROWS_AS(evaluate_regression(wrong, test, 4, 1), ContractError);
}

TEST_CASE("classification metrics count rigged argmax errors exactly") {
  Model m = make_model({2, 3, 3}, Likelihood::categorical, PriorMode::gaussian_baseline, 19);
  fill(m.hidden[0].mu_w, 0.0);
  fill(m.hidden[0].u_sigma2_w, -40.0);
  fill(m.output.mu_w, 0.0);
  fill(m.output.u_sigma2_w, -40.0);
  m.output.mu_w(3, 0) = 5.0;  // bias row: logits are (5, 0, 0) for every input

  Dataset d;
  d.kind = DatasetKind::classification;
  d.num_classes = 3;
  d.x = Tensor({10, 2});
  RngStream rng(23);
  for (int64_t i = 0; i < d.x.size(); ++i) d.x[i] = rng.normal(0.0, 1.0);
  d.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};

  ClassificationMetrics cm = evaluate_classification(m, d, 8, 29);
  REQUIRE(cm.error_rate == Catch::Approx(0.6));

  const double lse = std::log(std::exp(5.0) + 2.0);
  const double lp_hit = 5.0 - lse;
  const double lp_miss = -lse;
  const double expected = (4.0 * lp_hit + 6.0 * lp_miss) / 10.0;
  REQUIRE(cm.mean_log_prob == Catch::Approx(expected).margin(1e-6));

  Model narrow =
      make_model({2, 3, 2}, Likelihood::categorical, PriorMode::gaussian_baseline, 19);
  REQUIRE_THROWS_AS(evaluate_classification(narrow, d, 4, 1), DimensionError);
  Model reg = identity_regressor(0.0);
  REQUIRE_THROWS_AS(evaluate_classification(reg, d, 4, 1), ContractError);
}

TEST_CASE("cubic recipe bundles are deterministic and thread independent") {
  CubicOptions opt;
  opt.widths = {4};
  opt.modes = {PriorMode::gaussian_baseline, PriorMode::hs_noncentered};
  opt.replicates = 2;
  opt.seed = 9;
  opt.train_points = 12;
  opt.test_points = 16;
  opt.epochs = 3;
  opt.batch_size = 12;
  opt.eval_samples = 8;

  opt.threads = 1;
  json a = run_cubic_robustness(opt);
  opt.threads = 3;
  json b = run_cubic_robustness(opt);
  REQUIRE(a.dump() == b.dump());

  REQUIRE(a["experiment"] == "cubic-robustness");
  REQUIRE(a["rows"].size() == 4);
  for (const json& row : a["rows"]) {
    REQUIRE(row["width"] == 4);
    REQUIRE(std::isfinite(row["rmse"].get<double>()));
    REQUIRE(std::isfinite(row["mean-log-density"].get<double>()));
  }
  // paired data: both modes of replicate 0 saw the same training set,
  // so their rows differ only through the model
  REQUIRE(a["rows"][0]["mode"] != a["rows"][2]["mode"]);
  REQUIRE(a["rows"][0]["replicate"] == a["rows"][2]["replicate"]);
}

TEST_CASE("planted recipe reports per-unit norms and active counts") {
  PlantedOptions opt;
  opt.widths = {5};
  opt.modes = {PriorMode::hs_noncentered};
  opt.replicates = 2;
  opt.seed = 4;
  opt.train_points = 60;
  opt.epochs = 2;
  opt.batch_size = 32;
  opt.threads = 2;

  json out = run_planted_pruning(opt);
  REQUIRE(out["experiment"] == "planted-pruning");
  REQUIRE(out["rows"].size() == 2);
  for (const json& row : out["rows"]) {
    REQUIRE(row["sorted-norms"].size() == 5);
    const int64_t active = row["active-units"].get<int64_t>();
    REQUIRE(active >= 1);
    REQUIRE(active <= 5);
    const double err = row["train-error"].get<double>();
    REQUIRE(err >= 0.0);
    REQUIRE(err <= 1.0);
  }

  opt.threads = 1;
  json again = run_planted_pruning(opt);
  REQUIRE(out.dump() == again.dump());
}

TEST_CASE("uci recipe aggregates replicate metrics from a csv") {
  std::ostringstream csv;
  csv << "a;b;target\n";
  RngStream rng(31);
  for (int i = 0; i < 40; ++i) {
    const double a = rng.normal(0.0, 1.0), b = rng.normal(0.0, 1.0);
    csv << a << ";" << b << ";" << (2.0 * a - b + rng.normal(0.0, 0.1)) << "\n";
  }
  TempFile f("uci_recipe.csv");
  f.write_text(csv.str());

  UciOptions opt;
  opt.csv_path = f.path;
  opt.hidden_units = 4;
  opt.seed = 2;
  opt.epochs = 2;
  opt.batch_size = 16;
  opt.threads = 4;

  json out = run_uci(opt);
  REQUIRE(out["experiment"] == "uci");
  REQUIRE(out["rows"].size() == protocol_replicates(SplitProtocol::uci_small));
  REQUIRE(std::isfinite(out["rmse-mean"].get<double>()));
  REQUIRE(out["rmse-std"].get<double>() >= 0.0);
  REQUIRE(std::isfinite(out["log-density-mean"].get<double>()));

  double mean = 0.0;
  for (const json& row : out["rows"]) mean += row["rmse"].get<double>();
  mean /= static_cast<double>(out["rows"].size());
  REQUIRE(out["rmse-mean"].get<double>() == Catch::Approx(mean).epsilon(1e-12));
}

TEST_CASE("mnist recipe trains on synthetic idx fixtures") {
  std::vector<unsigned char> pix;
  std::vector<unsigned char> labs;
  RngStream rng(37);
  for (int i = 0; i < 30; ++i) {
    for (int p = 0; p < 16; ++p)
      pix.push_back(static_cast<unsigned char>(rng.uniform() * 255.0));
    labs.push_back(static_cast<unsigned char>(i % 10));
  }
  std::vector<unsigned char> img_bytes, lab_bytes;
  push_u32_be(img_bytes, 0x00000803u);
  push_u32_be(img_bytes, 30);
  push_u32_be(img_bytes, 4);
  push_u32_be(img_bytes, 4);
  img_bytes.insert(img_bytes.end(), pix.begin(), pix.end());
  push_u32_be(lab_bytes, 0x00000801u);
  push_u32_be(lab_bytes, 30);
  lab_bytes.insert(lab_bytes.end(), labs.begin(), labs.end());

  TempFile img("mnist_recipe_img.idx"), lab("mnist_recipe_lab.idx");
  img.write_bytes(img_bytes);
  lab.write_bytes(lab_bytes);

  MnistOptions opt;
  opt.train_images = img.path;
  opt.train_labels = lab.path;
  opt.test_images = img.path;
  opt.test_labels = lab.path;
  opt.hidden_widths = {{3}, {5}};
  opt.modes = {PriorMode::hs_noncentered, PriorMode::gaussian_baseline};
  opt.subset = 20;
  opt.seed = 6;
  opt.epochs = 2;
  opt.batch_size = 8;
  opt.eval_samples = 2;
  opt.threads = 2;

  json out = run_mnist_subset(opt);
  REQUIRE(out["experiment"] == "mnist-subset");
  REQUIRE(out["subset"] == 20);
  REQUIRE(out["rows"].size() == 4);
  REQUIRE(out["rows"][0]["layer1-norms"].size() == 3);
  REQUIRE(out["rows"][2]["layer1-norms"].size() == 5);
  for (const json& row : out["rows"]) {
    const double err = row["test-error"].get<double>();
    REQUIRE(err >= 0.0);
    REQUIRE(err <= 1.0);
    REQUIRE(row["layer1-below-threshold"].get<int64_t>() >= 0);
  }
}
