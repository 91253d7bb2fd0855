// Command-line surface: training, evaluation, sparsity inspection, experiment
// recipes, and synthetic data generation. Emits machine-readable JSON/CSV.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsbnn/checkpoint.hpp"
#include "hsbnn/data.hpp"
#include "hsbnn/diagnostics.hpp"
#include "hsbnn/experiments.hpp"
#include "hsbnn/inference.hpp"
#include "hsbnn/model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hsbnn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitDataFormat = 2;
constexpr int kExitNumerical = 3;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open for writing: " + path);
  out << body;
  if (!out) throw DataFormatError("write failed: " + path);
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown_config_keys(cfg);
  return cfg;
}

// CSV holds regression targets; for classification the last column must be
// integral class ids.
Dataset csv_as_classification(Dataset d) {
  d.kind = DatasetKind::classification;
  d.labels.reserve(static_cast<size_t>(d.y.size()));
  int64_t max_label = 0;
  for (int64_t i = 0; i < d.y.size(); ++i) {
    const double v = d.y[i];
    const int64_t l = std::llround(v);
    if (std::abs(v - static_cast<double>(l)) > 1e-9 || l < 0) {
      throw DataFormatError("class column entry " + format_double(v) +
                            " is not a non-negative integer");
    }
    d.labels.push_back(l);
    max_label = std::max(max_label, l);
  }
  d.y = Tensor();
  d.num_classes = std::max<int64_t>(max_label + 1, 2);
  d.validate();
  return d;
}

// One path: CSV (last column = target). Two paths: IDX images + labels.
Dataset load_dataset(const std::vector<std::string>& paths, Likelihood lik) {
  if (paths.size() == 1) {
    Dataset d = read_csv_regression(paths[0]);
    if (lik == Likelihood::categorical) return csv_as_classification(std::move(d));
    return d;
  }
  if (paths.size() == 2) {
    if (lik != Likelihood::categorical) {
      throw DataFormatError("image/label file pairs are classification data");
    }
    return read_mnist_idx(paths[0], paths[1]);
  }
  throw DataFormatError("expected --data <csv> or --data <images> --data <labels>, got " +
                        std::to_string(paths.size()) + " paths");
}

void check_dims(const NetworkConfig& net, const Dataset& d) {
  if (net.widths.front() != d.dim()) {
    throw ConfigError("config widths start at " + std::to_string(net.widths.front()) +
                      " but data has " + std::to_string(d.dim()) + " features");
  }
  if (d.kind == DatasetKind::classification && net.widths.back() < d.num_classes) {
    throw ConfigError("config has " + std::to_string(net.widths.back()) +
                      " outputs but data has " + std::to_string(d.num_classes) + " classes");
  }
  if (d.kind == DatasetKind::regression && net.widths.back() != 1) {
    throw ConfigError("regression config must end with 1 output");
  }
}

json sparsity_to_json(const SparsityReport& rep) {
  json j;
  j["layer"] = rep.layer;
  j["threshold-fraction"] = rep.threshold_fraction;
  j["threshold"] = rep.threshold;
  j["active-units"] = rep.active_units;
  j["sorted-norms"] = rep.sorted_norms;
  j["histogram-edges"] = rep.histogram_edges;
  j["histogram-counts"] = rep.histogram_counts;
  return j;
}

std::string norms_csv(const SparsityReport& rep) {
  std::ostringstream out;
  out << "rank,norm\n";
  for (size_t i = 0; i < rep.sorted_norms.size(); ++i) {
    out << i << "," << format_double(rep.sorted_norms[i]) << "\n";
  }
  return out.str();
}

std::string histogram_csv(const SparsityReport& rep) {
  std::ostringstream out;
  out << "bin-lo,bin-hi,count\n";
  for (size_t b = 0; b < rep.histogram_counts.size(); ++b) {
    out << format_double(rep.histogram_edges[b]) << ","
        << format_double(rep.histogram_edges[b + 1]) << "," << rep.histogram_counts[b]
        << "\n";
  }
  return out.str();
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& data_paths,
              const std::string& out_dir, bool seed_given, uint64_t seed,
              double threshold) {
  json cfg = load_config(config_path);
  NetworkConfig net = network_from_json(cfg);
  PriorConfig prior = prior_from_json(cfg);
  TrainConfig train = train_from_json(cfg);
  if (seed_given) train.seed = seed;

  Dataset data = load_dataset(data_paths, net.likelihood);
  StandardizationRecord rec;
  if (data.kind == DatasetKind::regression) rec = standardize(data);
  check_dims(net, data);

  RngStream init_rng(derive_seed(train.seed, kInitStreamSalt));
  Model model = init_params(net, prior, init_rng);
  TrainState state(model, train);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StepRecord> history;
  try {
    history = fit(model, as_batch(data), train, state);
  } catch (const DomainError& e) {
    // parameters left the representable region (e.g. a positivity map
    // underflowed after divergence): a numerical failure, not bad input
    throw NumericalError(std::string("training diverged: ") + e.what());
  }
  const auto t1 = std::chrono::steady_clock::now();
  const int64_t wall_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  checkpoint_save((out / "checkpoint.bin").string(), model, train, &state, history,
                  rec.applied ? &rec : nullptr);

  std::ostringstream hist;
  for (const StepRecord& r : history) {
    json line;
    line["step"] = r.step;
    line["elbo"] = r.elbo;
    hist << line.dump() << "\n";
  }
  write_file((out / "history.jsonl").string(), hist.str());

  // wall time lives in a sidecar so history files stay reproducible
  json timing;
  timing["steps"] = static_cast<int64_t>(history.size());
  timing["wall-ms"] = wall_ms;
  write_file((out / "timing.json").string(), timing.dump(2) + "\n");

  json reports = json::array();
  for (size_t l = 0; l < model.hidden.size(); ++l) {
    reports.push_back(sparsity_to_json(sparsity_report(model, l, threshold)));
  }
  write_file((out / "sparsity.json").string(), reports.dump(2) + "\n");

  std::cout << "trained " << history.size() << " steps; final elbo "
            << (history.empty() ? 0.0 : history.back().elbo) << "; wrote "
            << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& data_paths,
             const std::string& out_path, int samples, uint64_t seed) {
  Checkpoint ck = checkpoint_load(ckpt_path);
  Dataset data = load_dataset(data_paths, ck.model.net.likelihood);

  json metrics;
  metrics["samples"] = samples;
  metrics["seed"] = seed;
  if (ck.model.net.likelihood == Likelihood::gaussian_regression) {
    if (ck.standardization.applied) apply_standardization(data, ck.standardization);
    RegressionMetrics m =
        evaluate_regression(ck.model, data, samples, derive_seed(seed, kEvalSalt));
    metrics["rmse"] = m.rmse;
    metrics["mean-log-density"] = m.mean_log_density;
  } else {
    ClassificationMetrics m =
        evaluate_classification(ck.model, data, samples, derive_seed(seed, kEvalSalt));
    metrics["error-rate"] = m.error_rate;
    metrics["mean-log-prob"] = m.mean_log_prob;
  }
  const std::string body = metrics.dump(2) + "\n";
  write_file(out_path, body);
  std::cout << body;
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, int64_t layer, double threshold,
                const std::string& out_dir) {
  Checkpoint ck = checkpoint_load(ckpt_path);
  SparsityReport rep = sparsity_report(ck.model, static_cast<size_t>(layer), threshold);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_file((out / "sparsity.json").string(), sparsity_to_json(rep).dump(2) + "\n");
  write_file((out / "norms.csv").string(), norms_csv(rep));
  write_file((out / "histogram.csv").string(), histogram_csv(rep));

  std::cout << "layer " << layer << ": " << rep.active_units << " of "
            << rep.sorted_norms.size() << " units above " << rep.threshold << "\n";
  return 0;
}

std::string cubic_rows_csv(const json& bundle) {
  std::ostringstream out;
  out << "width,mode,replicate,rmse,mean-log-density\n";
  for (const json& r : bundle.at("rows")) {
    out << r.at("width").get<int64_t>() << "," << r.at("mode").get<std::string>() << ","
        << r.at("replicate").get<int64_t>() << "," << format_double(r.at("rmse").get<double>())
        << "," << format_double(r.at("mean-log-density").get<double>()) << "\n";
  }
  return out.str();
}

std::string planted_rows_csv(const json& bundle) {
  std::ostringstream out;
  out << "width,mode,replicate,active-units,train-error\n";
  for (const json& r : bundle.at("rows")) {
    out << r.at("width").get<int64_t>() << "," << r.at("mode").get<std::string>() << ","
        << r.at("replicate").get<int64_t>() << "," << r.at("active-units").get<int64_t>()
        << "," << format_double(r.at("train-error").get<double>()) << "\n";
  }
  return out.str();
}

std::string planted_norms_csv(const json& bundle) {
  std::ostringstream out;
  out << "width,mode,replicate,rank,norm\n";
  for (const json& r : bundle.at("rows")) {
    const auto& norms = r.at("sorted-norms");
    for (size_t i = 0; i < norms.size(); ++i) {
      out << r.at("width").get<int64_t>() << "," << r.at("mode").get<std::string>() << ","
          << r.at("replicate").get<int64_t>() << "," << i << ","
          << format_double(norms[i].get<double>()) << "\n";
    }
  }
  return out.str();
}

std::string uci_rows_csv(const json& bundle) {
  std::ostringstream out;
  out << "replicate,rmse,mean-log-density\n";
  for (const json& r : bundle.at("rows")) {
    out << r.at("replicate").get<int64_t>() << "," << format_double(r.at("rmse").get<double>())
        << "," << format_double(r.at("mean-log-density").get<double>()) << "\n";
  }
  return out.str();
}

std::string mnist_rows_csv(const json& bundle) {
  std::ostringstream out;
  out << "hidden-widths,mode,test-error,test-log-prob,layer1-below-threshold\n";
  for (const json& r : bundle.at("rows")) {
    std::string widths;
    for (const json& w : r.at("hidden-widths")) {
      if (!widths.empty()) widths += "x";
      widths += std::to_string(w.get<int64_t>());
    }
    out << widths << "," << r.at("mode").get<std::string>() << ","
        << format_double(r.at("test-error").get<double>()) << ","
        << format_double(r.at("test-log-prob").get<double>()) << ","
        << r.at("layer1-below-threshold").get<int64_t>() << "\n";
  }
  return out.str();
}

std::string mnist_norms_csv(const json& bundle) {
  std::ostringstream out;
  out << "hidden-widths,mode,rank,norm\n";
  for (const json& r : bundle.at("rows")) {
    std::string widths;
    for (const json& w : r.at("hidden-widths")) {
      if (!widths.empty()) widths += "x";
      widths += std::to_string(w.get<int64_t>());
    }
    const auto& norms = r.at("layer1-norms");
    for (size_t i = 0; i < norms.size(); ++i) {
      out << widths << "," << r.at("mode").get<std::string>() << "," << i << ","
          << format_double(norms[i].get<double>()) << "\n";
    }
  }
  return out.str();
}

int cmd_experiment(const std::string& name, const std::vector<std::string>& data_paths,
                   const std::string& out_dir, uint64_t seed, int samples) {
  json bundle;
  std::vector<std::pair<std::string, std::string>> extra_files;

  if (name == "cubic-robustness") {
    CubicOptions opt;
    opt.seed = seed;
    if (samples > 0) opt.eval_samples = samples;
    bundle = run_cubic_robustness(opt);
    extra_files.emplace_back("rows.csv", cubic_rows_csv(bundle));
  } else if (name == "planted-pruning") {
    PlantedOptions opt;
    opt.seed = seed;
    bundle = run_planted_pruning(opt);
    extra_files.emplace_back("rows.csv", planted_rows_csv(bundle));
    extra_files.emplace_back("norms.csv", planted_norms_csv(bundle));
  } else if (name == "uci") {
    if (data_paths.size() != 1) {
      throw DataFormatError("uci recipe needs --data <csv>");
    }
    UciOptions opt;
    opt.csv_path = data_paths[0];
    opt.seed = seed;
    if (samples > 0) opt.eval_samples = samples;
    // the one large benchmark uses the 5-replicate protocol and a wider layer
    Dataset probe = read_csv_regression(opt.csv_path);
    if (probe.size() > 10000) {
      opt.protocol = SplitProtocol::protein;
      opt.hidden_units = 100;
    }
    bundle = run_uci(opt);
    extra_files.emplace_back("rows.csv", uci_rows_csv(bundle));
  } else if (name == "mnist-subset") {
    if (data_paths.size() != 4) {
      throw DataFormatError(
          "mnist-subset recipe needs --data <train-images> --data <train-labels> "
          "--data <test-images> --data <test-labels>");
    }
    MnistOptions opt;
    opt.train_images = data_paths[0];
    opt.train_labels = data_paths[1];
    opt.test_images = data_paths[2];
    opt.test_labels = data_paths[3];
    opt.seed = seed;
    if (samples > 0) opt.eval_samples = samples;
    bundle = run_mnist_subset(opt);
    extra_files.emplace_back("rows.csv", mnist_rows_csv(bundle));
    extra_files.emplace_back("norms.csv", mnist_norms_csv(bundle));
  } else {
    throw ConfigError("unknown experiment: " + name);
  }

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_file((out / "bundle.json").string(), bundle.dump(2) + "\n");
  for (const auto& [fname, body] : extra_files) {
    write_file((out / fname).string(), body);
  }
  std::cout << "wrote " << (out / "bundle.json").string() << " with "
            << bundle.at("rows").size() << " rows\n";
  return 0;
}

int cmd_gen_data(const std::string& name, int64_t n, uint64_t seed,
                 const std::string& out_path) {
  std::ostringstream csv;
  if (name == "cubic") {
    Dataset d = gen_cubic(n > 0 ? n : 20, seed);
    csv << "x,y\n";
    for (int64_t i = 0; i < d.size(); ++i) {
      csv << format_double(d.x(i, 0)) << "," << format_double(d.y[i]) << "\n";
    }
  } else if (name == "planted") {
    Dataset d = gen_planted_network(n > 0 ? n : 500, seed);
    csv << "x1,x2,label\n";
    for (int64_t i = 0; i < d.size(); ++i) {
      csv << format_double(d.x(i, 0)) << "," << format_double(d.x(i, 1)) << ","
          << d.labels[static_cast<size_t>(i)] << "\n";
    }
  } else {
    throw ConfigError("unknown generator: " + name);
  }
  write_file(out_path, csv.str());
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural networks with horseshoe node priors"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, name;
  std::vector<std::string> data_paths;
  uint64_t seed = 0;
  bool seed_given = false;
  int samples = 0;
  double threshold = 0.1;
  int64_t layer = 0;
  int64_t gen_n = 0;

  CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "JSON config file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--data", data_paths, "CSV file, or IDX images + labels")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--threshold", threshold, "active-unit fraction of max norm");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on test data");
  eval->add_option("checkpoint", ckpt_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", data_paths, "CSV file, or IDX images + labels")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", out_path, "metrics file")->capture_default_str();
  eval->add_option("--samples", samples, "predictive MC samples");
  eval->add_option("--seed", seed, "evaluation RNG seed");

  CLI::App* inspect = app.add_subcommand("inspect", "Sparsity report for a checkpoint layer");
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  inspect->add_option("layer", layer, "hidden layer index");
  inspect->add_option("--threshold", threshold, "active-unit fraction of max norm");
  inspect->add_option("--out", out_path, "output directory")->capture_default_str();

  CLI::App* experiment = app.add_subcommand("experiment", "Run a full experiment recipe");
  experiment
      ->add_option("name", name,
                   "one of: cubic-robustness, planted-pruning, uci, mnist-subset")
      ->required()
      ->check(CLI::IsMember(
          {"cubic-robustness", "planted-pruning", "uci", "mnist-subset"}));
  experiment->add_option("--data", data_paths, "recipe input files")
      ->check(CLI::ExistingFile);
  experiment->add_option("--out", out_path, "output directory")->required();
  experiment->add_option("--seed", seed, "experiment seed");
  experiment->add_option("--samples", samples, "predictive MC samples for eval");

  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("name", name, "one of: cubic, planted")
      ->required()
      ->check(CLI::IsMember({"cubic", "planted"}));
  gen->add_option("--samples", gen_n, "number of points");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_path, "output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  seed_given = train->count("--seed") > 0;
  if (experiment->parsed() && experiment->count("--seed") == 0) seed = 1;
  if (gen->parsed() && gen->count("--seed") == 0) seed = 1;
  if (eval->parsed() && eval->count("--samples") == 0) samples = 100;
  if (eval->parsed() && out_path.empty()) out_path = "metrics.json";
  if (inspect->parsed() && out_path.empty()) out_path = ".";

  try {
    if (train->parsed()) {
      return cmd_train(config_path, data_paths, out_path, seed_given, seed, threshold);
    }
    if (eval->parsed()) return cmd_eval(ckpt_path, data_paths, out_path, samples, seed);
    if (inspect->parsed()) return cmd_inspect(ckpt_path, layer, threshold, out_path);
    if (experiment->parsed()) {
      return cmd_experiment(name, data_paths, out_path, seed, samples);
    }
    if (gen->parsed()) return cmd_gen_data(name, gen_n, seed, out_path);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
