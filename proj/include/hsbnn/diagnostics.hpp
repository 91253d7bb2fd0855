#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hsbnn/data.hpp"
#include "hsbnn/errors.hpp"
#include "hsbnn/model.hpp"
#include "hsbnn/rng.hpp"

namespace hsbnn {

// Node-level shrinkage summary for one weight layer: expected node weight
// vectors sorted by 2-norm, the count still above a fraction of the largest
// norm, and the value distribution inside the most-shrunk unit.
struct SparsityReport {
  size_t layer = 0;
  std::vector<double> sorted_norms;  // descending
  double threshold_fraction = 0.1;
  double threshold = 0.0;  // threshold_fraction * max norm
  int64_t active_units = 0;
  std::vector<double> histogram_edges;   // bins + 1 entries
  std::vector<int64_t> histogram_counts;  // bins entries
};

inline SparsityReport sparsity_report(const Model& m, size_t layer,
                                      double threshold_fraction = 0.1, int64_t bins = 16) {
  if (threshold_fraction < 0.0 || !(bins >= 1)) {
    throw DomainError("sparsity_report needs threshold_fraction >= 0 and bins >= 1");
  }
  const Tensor ew = expected_node_weights(m, layer);
  SparsityReport rep;
  rep.layer = layer;
  rep.threshold_fraction = threshold_fraction;

  const int64_t units = ew.cols();
  rep.sorted_norms.reserve(static_cast<size_t>(units));
  int64_t smallest_unit = 0;
  double smallest_norm = std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < units; ++k) {
    double sq = 0.0;
    for (int64_t i = 0; i < ew.rows(); ++i) sq += ew(i, k) * ew(i, k);
    const double norm = std::sqrt(sq);
    rep.sorted_norms.push_back(norm);
    if (norm < smallest_norm) {
      smallest_norm = norm;
      smallest_unit = k;
    }
  }
  std::sort(rep.sorted_norms.begin(), rep.sorted_norms.end(), std::greater<double>());
  rep.threshold = threshold_fraction * rep.sorted_norms.front();
  for (double n : rep.sorted_norms) {
    if (n > rep.threshold) rep.active_units += 1;
  }

  // histogram of the most-shrunk unit's expected weights
  double lo = ew(0, smallest_unit), hi = lo;
  for (int64_t i = 0; i < ew.rows(); ++i) {
    lo = std::min(lo, ew(i, smallest_unit));
    hi = std::max(hi, ew(i, smallest_unit));
  }
  if (hi - lo < 1e-300) hi = lo + 1e-300;  // degenerate: all mass in one bin
  const double width = (hi - lo) / static_cast<double>(bins);
  rep.histogram_edges.resize(static_cast<size_t>(bins) + 1);
  for (int64_t b = 0; b <= bins; ++b) {
    rep.histogram_edges[static_cast<size_t>(b)] = lo + width * static_cast<double>(b);
  }
  rep.histogram_counts.assign(static_cast<size_t>(bins), 0);
  for (int64_t i = 0; i < ew.rows(); ++i) {
    int64_t b = static_cast<int64_t>((ew(i, smallest_unit) - lo) / width);
    b = std::clamp<int64_t>(b, 0, bins - 1);
    rep.histogram_counts[static_cast<size_t>(b)] += 1;
  }
  return rep;
}

// ---- held-out evaluation ----

struct RegressionMetrics {
  double rmse = 0.0;              // original target units
  double mean_log_density = 0.0;  // original target units
};

struct ClassificationMetrics {
  double error_rate = 0.0;
  double mean_log_prob = 0.0;
};

// Metrics on a dataset already living in the model's input space; the
// dataset's standardization record (if applied) converts RMSE and densities
// back to original units.
inline RegressionMetrics evaluate_regression(Model& m, const Dataset& test, int M,
                                             uint64_t seed) {
  if (m.net.likelihood != Likelihood::gaussian_regression) {
    throw ContractError("evaluate_regression requires a regression model");
  }
  test.validate();
  RngStream rng(seed);
  PredictiveSummary pred = predict(m, as_batch(test), M, rng);
  const StandardizationRecord& rec = test.standardization;
  const double scale = rec.applied ? rec.y_scale : 1.0;

  double sq = 0.0, ld = 0.0;
  for (int64_t i = 0; i < test.size(); ++i) {
    const double err = (pred.mean[i] - test.y[i]) * scale;
    sq += err * err;
    ld += pred.log_density[i] - std::log(scale);
  }
  RegressionMetrics out;
  out.rmse = std::sqrt(sq / static_cast<double>(test.size()));
  out.mean_log_density = ld / static_cast<double>(test.size());
  return out;
}

inline ClassificationMetrics evaluate_classification(Model& m, const Dataset& test, int M,
                                                     uint64_t seed) {
  if (m.net.likelihood != Likelihood::categorical) {
    throw ContractError("evaluate_classification requires a classification model");
  }
  test.validate();
  if (m.net.output_dim() < test.num_classes) {
    throw DimensionError("model has fewer outputs than the dataset has classes");
  }
  RngStream rng(seed);
  PredictiveSummary pred = predict(m, as_batch(test), M, rng);
  ClassificationMetrics out;
  for (int64_t i = 0; i < test.size(); ++i) {
    if (pred.predicted_labels[static_cast<size_t>(i)] != test.labels[static_cast<size_t>(i)]) {
      out.error_rate += 1.0;
    }
    out.mean_log_prob += pred.log_density[i];
  }
  out.error_rate /= static_cast<double>(test.size());
  out.mean_log_prob /= static_cast<double>(test.size());
  return out;
}

}  // namespace hsbnn
