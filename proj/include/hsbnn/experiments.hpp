#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hsbnn/checkpoint.hpp"
#include "hsbnn/data.hpp"
#include "hsbnn/diagnostics.hpp"
#include "hsbnn/inference.hpp"
#include "hsbnn/model.hpp"

namespace hsbnn {

// Seed salts for the independent random choices inside a replicate.
inline constexpr uint64_t kTrainDataSalt = 0x74726e64;  // "trnd"
inline constexpr uint64_t kTestDataSalt = 0x74737464;   // "tstd"
inline constexpr uint64_t kEvalSalt = 0x6576616c;       // "eval"
inline constexpr uint64_t kJobSalt = 0x6a6f6200;        // "job"

// Runs fn(0..count-1) across a worker pool; each job must touch only its own
// slot so results merge deterministically by index.
inline void run_jobs(int64_t count, int threads, const std::function<void(int64_t)>& fn) {
  if (count <= 0) return;
  int64_t workers = threads > 0 ? threads : static_cast<int64_t>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers > count) workers = count;
  if (workers == 1) {
    for (int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next(0);
  std::exception_ptr failure = nullptr;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int64_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline Model make_model(const std::vector<int64_t>& widths, Likelihood lik, PriorMode mode,
                        ForwardVariant variant, uint64_t seed) {
  NetworkConfig net;
  net.widths = widths;
  net.likelihood = lik;
  PriorConfig prior;
  prior.mode = mode;
  prior.variant = variant;
  RngStream rng(derive_seed(seed, kInitStreamSalt));
  return init_params(net, prior, rng);
}

}  // namespace detail

// ---- cubic regression: capacity robustness ----

struct CubicOptions {
  std::vector<int64_t> widths = {50, 100, 1000};
  std::vector<PriorMode> modes = {PriorMode::gaussian_baseline, PriorMode::hs_noncentered};
  int64_t replicates = 5;
  uint64_t seed = 1;
  int64_t train_points = 20;
  int64_t test_points = 200;
  int64_t epochs = 3000;
  int64_t batch_size = 20;
  double lr = 0.005;
  // averaging a few forward draws per step tames gradient noise at width 1000
  int mc_samples = 3;
  ForwardVariant variant = ForwardVariant::sampled_scales;
  int eval_samples = 100;
  int threads = 0;
};

// Held-out grid in x with targets drawn from the same noisy generator.
inline Dataset cubic_test_grid(int64_t points, uint64_t seed) {
  RngStream rng(seed);
  Dataset d;
  d.kind = DatasetKind::regression;
  d.x = Tensor({points, 1});
  d.y = Tensor({points});
  for (int64_t i = 0; i < points; ++i) {
    const double x =
        points == 1 ? 0.0 : -4.0 + 8.0 * static_cast<double>(i) / static_cast<double>(points - 1);
    d.x(i, 0) = x;
    d.y[i] = x * x * x + rng.normal(0.0, 3.0);
  }
  return d;
}

inline json run_cubic_robustness(const CubicOptions& opt) {
  struct Row {
    int64_t width;
    PriorMode mode;
    int64_t replicate;
    double rmse, mean_log_density;
  };
  std::vector<Row> rows;
  for (int64_t w : opt.widths) {
    for (PriorMode mode : opt.modes) {
      for (int64_t r = 0; r < opt.replicates; ++r) rows.push_back({w, mode, r, 0.0, 0.0});
    }
  }

  run_jobs(static_cast<int64_t>(rows.size()), opt.threads, [&](int64_t i) {
    Row& row = rows[static_cast<size_t>(i)];
    const uint64_t rep_seed = derive_seed(opt.seed, static_cast<uint64_t>(row.replicate));
    // data depends only on the replicate: widths and modes see identical sets.
    // trained on natural units; the vague noise prior is only vague on that
    // scale, and z-scoring the targets would turn it informative
    Dataset train = gen_cubic(opt.train_points, derive_seed(rep_seed, kTrainDataSalt));
    Dataset test = cubic_test_grid(opt.test_points, derive_seed(rep_seed, kTestDataSalt));

    const uint64_t job_seed =
        derive_seed(rep_seed, kJobSalt + static_cast<uint64_t>(row.width) * 8 +
                                  static_cast<uint64_t>(row.mode));
    Model m = detail::make_model({1, row.width, 1}, Likelihood::gaussian_regression, row.mode,
                                 opt.variant, job_seed);
    TrainConfig cfg;
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = std::min(opt.batch_size, train.size());
    cfg.mc_samples = opt.mc_samples;
    cfg.seed = job_seed;
    fit(m, as_batch(train), cfg);

    RegressionMetrics metrics =
        evaluate_regression(m, test, opt.eval_samples, derive_seed(job_seed, kEvalSalt));
    row.rmse = metrics.rmse;
    row.mean_log_density = metrics.mean_log_density;
  });

  json out;
  out["experiment"] = "cubic-robustness";
  out["seed"] = opt.seed;
  out["epochs"] = opt.epochs;
  out["replicates"] = opt.replicates;
  out["variant"] = to_string(opt.variant);
  json jrows = json::array();
  for (const Row& r : rows) {
    json e;
    e["width"] = r.width;
    e["mode"] = to_string(r.mode);
    e["replicate"] = r.replicate;
    e["rmse"] = r.rmse;
    e["mean-log-density"] = r.mean_log_density;
    jrows.push_back(e);
  }
  out["rows"] = jrows;
  return out;
}

// ---- planted 2-2-1 classification: node pruning ----

struct PlantedOptions {
  std::vector<int64_t> widths = {15, 100};
  std::vector<PriorMode> modes = {PriorMode::hs_noncentered, PriorMode::hs_centered,
                                  PriorMode::gaussian_baseline};
  int64_t replicates = 5;
  uint64_t seed = 1;
  int64_t train_points = 500;
  int64_t epochs = 1500;
  int64_t batch_size = 128;
  // at finer rates some inits settle into stable optima that keep a redundant
  // third unit; this much step noise reliably leaves them early
  double lr = 0.01;
  int mc_samples = 1;
  // the sampled-scales path puts the shrinkage scales in the likelihood mean,
  // which is what lets unused units prune away in the expected node weights
  ForwardVariant variant = ForwardVariant::sampled_scales;
  double threshold_fraction = 0.1;
  int threads = 0;
};

inline json run_planted_pruning(const PlantedOptions& opt) {
  struct Row {
    int64_t width;
    PriorMode mode;
    int64_t replicate;
    int64_t active_units = 0;
    double train_error = 0.0;
    std::vector<double> norms;
  };
  std::vector<Row> rows;
  for (int64_t w : opt.widths) {
    for (PriorMode mode : opt.modes) {
      for (int64_t r = 0; r < opt.replicates; ++r) rows.push_back({w, mode, r});
    }
  }

  run_jobs(static_cast<int64_t>(rows.size()), opt.threads, [&](int64_t i) {
    Row& row = rows[static_cast<size_t>(i)];
    const uint64_t rep_seed = derive_seed(opt.seed, static_cast<uint64_t>(row.replicate));
    Dataset train = gen_planted_network(opt.train_points, derive_seed(rep_seed, kTrainDataSalt));

    const uint64_t job_seed =
        derive_seed(rep_seed, kJobSalt + static_cast<uint64_t>(row.width) * 8 +
                                  static_cast<uint64_t>(row.mode));
    Model m = detail::make_model({2, row.width, 2}, Likelihood::categorical, row.mode,
                                 opt.variant, job_seed);
    TrainConfig cfg;
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = std::min(opt.batch_size, train.size());
    cfg.mc_samples = opt.mc_samples;
    cfg.seed = job_seed;
    fit(m, as_batch(train), cfg);

    SparsityReport rep = sparsity_report(m, 0, opt.threshold_fraction);
    row.active_units = rep.active_units;
    row.norms = rep.sorted_norms;
    ClassificationMetrics cm =
        evaluate_classification(m, train, 32, derive_seed(job_seed, kEvalSalt));
    row.train_error = cm.error_rate;
  });

  json out;
  out["experiment"] = "planted-pruning";
  out["seed"] = opt.seed;
  out["epochs"] = opt.epochs;
  out["replicates"] = opt.replicates;
  out["threshold-fraction"] = opt.threshold_fraction;
  out["variant"] = to_string(opt.variant);
  json jrows = json::array();
  for (const Row& r : rows) {
    json e;
    e["width"] = r.width;
    e["mode"] = to_string(r.mode);
    e["replicate"] = r.replicate;
    e["active-units"] = r.active_units;
    e["train-error"] = r.train_error;
    e["sorted-norms"] = r.norms;
    jrows.push_back(e);
  }
  out["rows"] = jrows;
  return out;
}

// ---- UCI regression protocol ----

struct UciOptions {
  std::string csv_path;
  int64_t target_column = -1;
  SplitProtocol protocol = SplitProtocol::uci_small;
  int64_t hidden_units = 50;
  uint64_t seed = 1;
  int64_t epochs = 400;
  int64_t batch_size = 512;
  double lr = 0.005;
  int mc_samples = 1;
  PriorMode mode = PriorMode::hs_noncentered;
  ForwardVariant variant = ForwardVariant::sampled_scales;
  int eval_samples = 100;
  int threads = 0;
};

inline json run_uci(const UciOptions& opt) {
  Dataset full = read_csv_regression(opt.csv_path, opt.target_column);
  std::vector<std::pair<Dataset, Dataset>> splits =
      protocol_splits(full, opt.protocol, derive_seed(opt.seed, kTrainDataSalt));

  struct Row {
    double rmse = 0.0, mean_log_density = 0.0;
  };
  std::vector<Row> rows(splits.size());

  run_jobs(static_cast<int64_t>(splits.size()), opt.threads, [&](int64_t i) {
    Dataset train = splits[static_cast<size_t>(i)].first;
    Dataset test = splits[static_cast<size_t>(i)].second;
    standardize(train, {&test});

    const uint64_t job_seed =
        derive_seed(derive_seed(opt.seed, static_cast<uint64_t>(i)), kJobSalt);
    Model m = detail::make_model({train.dim(), opt.hidden_units, 1},
                                 Likelihood::gaussian_regression, opt.mode, opt.variant, job_seed);
    TrainConfig cfg;
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = std::min(opt.batch_size, train.size());
    cfg.mc_samples = opt.mc_samples;
    cfg.seed = job_seed;
    fit(m, as_batch(train), cfg);

    RegressionMetrics metrics =
        evaluate_regression(m, test, opt.eval_samples, derive_seed(job_seed, kEvalSalt));
    rows[static_cast<size_t>(i)] = {metrics.rmse, metrics.mean_log_density};
  });

  double rmse_mean = 0.0, ld_mean = 0.0;
  for (const Row& r : rows) {
    rmse_mean += r.rmse;
    ld_mean += r.mean_log_density;
  }
  rmse_mean /= static_cast<double>(rows.size());
  ld_mean /= static_cast<double>(rows.size());
  double rmse_var = 0.0, ld_var = 0.0;
  for (const Row& r : rows) {
    rmse_var += (r.rmse - rmse_mean) * (r.rmse - rmse_mean);
    ld_var += (r.mean_log_density - ld_mean) * (r.mean_log_density - ld_mean);
  }
  rmse_var /= static_cast<double>(rows.size());
  ld_var /= static_cast<double>(rows.size());

  json out;
  out["experiment"] = "uci";
  out["dataset"] = opt.csv_path;
  out["seed"] = opt.seed;
  out["epochs"] = opt.epochs;
  out["hidden-units"] = opt.hidden_units;
  out["mode"] = to_string(opt.mode);
  out["variant"] = to_string(opt.variant);
  json jrows = json::array();
  for (size_t i = 0; i < rows.size(); ++i) {
    json e;
    e["replicate"] = i;
    e["rmse"] = rows[i].rmse;
    e["mean-log-density"] = rows[i].mean_log_density;
    jrows.push_back(e);
  }
  out["rows"] = jrows;
  out["rmse-mean"] = rmse_mean;
  out["rmse-std"] = std::sqrt(rmse_var);
  out["log-density-mean"] = ld_mean;
  out["log-density-std"] = std::sqrt(ld_var);
  return out;
}

// ---- MNIST subset: sparsity diagnostics at scale ----

struct MnistOptions {
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::vector<int64_t>> hidden_widths = {{400, 400}, {800, 800}, {1200, 1200}};
  std::vector<PriorMode> modes = {PriorMode::hs_noncentered, PriorMode::gaussian_baseline};
  int64_t subset = 10000;
  uint64_t seed = 1;
  int64_t epochs = 100;  // budgeted; raise toward 500 for full convergence
  int64_t batch_size = 512;
  double lr = 0.005;
  int mc_samples = 1;
  ForwardVariant variant = ForwardVariant::sampled_scales;
  double threshold_fraction = 0.1;
  int eval_samples = 20;
  int threads = 0;
};

inline json run_mnist_subset(const MnistOptions& opt) {
  Dataset train_full = read_mnist_idx(opt.train_images, opt.train_labels);
  Dataset test = read_mnist_idx(opt.test_images, opt.test_labels);
  const int64_t subset = std::min(opt.subset, train_full.size());
  RngStream sub_rng(derive_seed(opt.seed, kTrainDataSalt));
  std::vector<int64_t> order(static_cast<size_t>(train_full.size()));
  for (int64_t i = 0; i < train_full.size(); ++i) order[static_cast<size_t>(i)] = i;
  sub_rng.shuffle(order);
  Dataset train = detail::take_rows(train_full, order, 0, subset);

  struct Row {
    std::vector<int64_t> widths;
    PriorMode mode;
    double test_error = 0.0, test_log_prob = 0.0;
    int64_t layer1_below_threshold = 0;
    std::vector<double> layer1_norms;
  };
  std::vector<Row> rows;
  for (const std::vector<int64_t>& w : opt.hidden_widths) {
    for (PriorMode mode : opt.modes) rows.push_back({w, mode});
  }

  run_jobs(static_cast<int64_t>(rows.size()), opt.threads, [&](int64_t i) {
    Row& row = rows[static_cast<size_t>(i)];
    std::vector<int64_t> widths;
    widths.push_back(train.dim());
    widths.insert(widths.end(), row.widths.begin(), row.widths.end());
    widths.push_back(10);
    const uint64_t job_seed = derive_seed(
        derive_seed(opt.seed, kJobSalt + static_cast<uint64_t>(i)), kJobSalt);
    Model m = detail::make_model(widths, Likelihood::categorical, row.mode, opt.variant,
                                 job_seed);
    TrainConfig cfg;
    cfg.lr = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = std::min(opt.batch_size, train.size());
    cfg.mc_samples = opt.mc_samples;
    cfg.seed = job_seed;
    fit(m, as_batch(train), cfg);

    ClassificationMetrics cm =
        evaluate_classification(m, test, opt.eval_samples, derive_seed(job_seed, kEvalSalt));
    row.test_error = cm.error_rate;
    row.test_log_prob = cm.mean_log_prob;
    SparsityReport rep = sparsity_report(m, 0, opt.threshold_fraction);
    row.layer1_norms = rep.sorted_norms;
    for (double n0 : rep.sorted_norms) {
      if (n0 <= rep.threshold) row.layer1_below_threshold += 1;
    }
  });

  json out;
  out["experiment"] = "mnist-subset";
  out["seed"] = opt.seed;
  out["subset"] = subset;
  out["epochs"] = opt.epochs;
  out["threshold-fraction"] = opt.threshold_fraction;
  out["variant"] = to_string(opt.variant);
  json jrows = json::array();
  for (const Row& r : rows) {
    json e;
    e["hidden-widths"] = r.widths;
    e["mode"] = to_string(r.mode);
    e["test-error"] = r.test_error;
    e["test-log-prob"] = r.test_log_prob;
    e["layer1-below-threshold"] = r.layer1_below_threshold;
    e["layer1-norms"] = r.layer1_norms;
    jrows.push_back(e);
  }
  out["rows"] = jrows;
  return out;
}

}  // namespace hsbnn
