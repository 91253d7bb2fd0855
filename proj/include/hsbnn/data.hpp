#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hsbnn/errors.hpp"
#include "hsbnn/model.hpp"
#include "hsbnn/rng.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

enum class DatasetKind { regression, classification };

// Per-feature and target statistics captured from a training split; applied
// identically to held-out splits.
struct StandardizationRecord {
  Tensor x_mean, x_scale;  // [D]; scale is 1 for zero-variance columns
  double y_mean = 0.0;
  double y_scale = 1.0;
  bool applied = false;
};

struct Dataset {
  Tensor x;  // [N x D]
  Tensor y;  // [N] regression targets
  std::vector<int64_t> labels;
  DatasetKind kind = DatasetKind::regression;
  int64_t num_classes = 0;
  StandardizationRecord standardization;

  int64_t size() const { return x.empty() ? 0 : x.rows(); }
  int64_t dim() const { return x.empty() ? 0 : x.cols(); }

  void validate() const {
    if (size() < 1) throw DataFormatError("dataset is empty");
    if (!x.all_finite()) throw DataFormatError("dataset features contain non-finite values");
    if (kind == DatasetKind::regression) {
      if (y.size() != size()) throw DataFormatError("target count does not match row count");
      if (!y.all_finite()) throw DataFormatError("dataset targets contain non-finite values");
    } else {
      if (static_cast<int64_t>(labels.size()) != size()) {
        throw DataFormatError("label count does not match row count");
      }
      for (int64_t l : labels) {
        if (l < 0 || l >= num_classes) {
          throw DomainError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
      }
    }
  }
};

inline Batch as_batch(const Dataset& d) {
  Batch b;
  b.x = d.x;
  b.y = d.y;
  b.labels = d.labels;
  return b;
}

// ---- synthetic generators ----

inline Dataset gen_cubic(int64_t n, uint64_t seed) {
  if (n < 1) throw DomainError("gen_cubic requires n >= 1");
  RngStream rng(seed);
  Dataset d;
  d.kind = DatasetKind::regression;
  d.x = Tensor({n, 1});
  d.y = Tensor({n});
  for (int64_t i = 0; i < n; ++i) {
    const double x = -4.0 + 8.0 * rng.uniform();
    d.x(i, 0) = x;
    d.y[i] = x * x * x + rng.normal(0.0, 3.0);
  }
  return d;
}

// Frozen 2-2-1 relu network behind the planted classification task. Both
// hidden units shape the decision boundary on [-1, 1]^2, so two units is the
// minimal capacity that represents the labels.
struct PlantedNetwork {
  // hidden unit k: relu(w1[k][0] x1 + w1[k][1] x2 + b1[k]). The two half-plane
  // units meet in a tilted V: ablating either one relabels ~20% of the square,
  // classes split ~50/50, and only ~3.5% of points sit within 0.05 of the
  // boundary.
  static constexpr double w1[2][2] = {{-0.9, 1.1}, {1.0, 1.2}};
  static constexpr double b1[2] = {0.1, -0.1};
  static constexpr double w2[2] = {1.1, 1.0};
  static constexpr double b2 = -0.55;

  static double output(double x1, double x2) {
    const double h0 = std::max(0.0, w1[0][0] * x1 + w1[0][1] * x2 + b1[0]);
    const double h1 = std::max(0.0, w1[1][0] * x1 + w1[1][1] * x2 + b1[1]);
    return w2[0] * h0 + w2[1] * h1 + b2;
  }
  static int64_t label(double x1, double x2) { return output(x1, x2) > 0.0 ? 1 : 0; }
};

inline Dataset gen_planted_network(int64_t n, uint64_t seed) {
  if (n < 1) throw DomainError("gen_planted_network requires n >= 1");
  RngStream rng(seed);
  Dataset d;
  d.kind = DatasetKind::classification;
  d.num_classes = 2;
  d.x = Tensor({n, 2});
  d.labels.resize(static_cast<size_t>(n));
  bool seen[2] = {false, false};
  for (int64_t i = 0; i < n; ++i) {
    const double x1 = -1.0 + 2.0 * rng.uniform();
    const double x2 = -1.0 + 2.0 * rng.uniform();
    d.x(i, 0) = x1;
    d.x(i, 1) = x2;
    const int64_t l = PlantedNetwork::label(x1, x2);
    d.labels[static_cast<size_t>(i)] = l;
    seen[l] = true;
  }
  if (n >= 100 && !(seen[0] && seen[1])) {
    throw ContractError("planted generator produced a single-class sample");
  }
  return d;
}

// ---- CSV reader ----

namespace detail {

inline std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> cells;
  if (delim == ' ') {  // whitespace mode: any run of spaces/tabs separates
    std::string cur;
    for (char ch : line) {
      if (ch == ' ' || ch == '\t') {
        if (!cur.empty()) cells.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) cells.push_back(std::move(cur));
    return cells;
  }
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_cell(const std::string& raw, double& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  return std::isfinite(out);
}

inline char detect_delimiter(const std::string& line) {
  if (line.find(';') != std::string::npos) return ';';
  if (line.find(',') != std::string::npos) return ',';
  return ' ';
}

}  // namespace detail

// Numeric table with optional header (auto-detected: any non-numeric cell in
// the first row marks it as a header). Delimiter auto-detected among
// semicolon, comma, and whitespace. target_column selects the regression
// target; negative values count from the end (-1 = last column).
inline Dataset read_csv_regression(const std::string& path, int64_t target_column = -1) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open file: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  int64_t line_no = 0;
  char delim = 0;
  bool first_content_row = true;
  while (std::getline(in, line)) {
    line_no += 1;
    if (detail::trim(line).empty()) continue;
    if (delim == 0) delim = detail::detect_delimiter(line);
    std::vector<std::string> cells = detail::split_row(line, delim);
    std::vector<double> vals(cells.size());
    bool all_numeric = true;
    size_t bad_col = 0;
    for (size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_cell(cells[c], vals[c])) {
        all_numeric = false;
        bad_col = c;
        break;
      }
    }
    if (!all_numeric) {
      if (first_content_row) {
        first_content_row = false;  // header row
        continue;
      }
      throw DataFormatError("unparseable or missing value at line " + std::to_string(line_no) +
                            ", column " + std::to_string(bad_col + 1) + " of " + path);
    }
    first_content_row = false;
    if (!rows.empty() && vals.size() != rows.front().size()) {
      throw DataFormatError("line " + std::to_string(line_no) + " has " +
                            std::to_string(vals.size()) + " columns, expected " +
                            std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataFormatError("no data rows in " + path);

  const int64_t width = static_cast<int64_t>(rows.front().size());
  if (width < 2) throw DataFormatError("need at least 2 columns (features + target) in " + path);
  int64_t target = target_column < 0 ? width + target_column : target_column;
  if (target < 0 || target >= width) {
    throw ConfigError("target column " + std::to_string(target_column) +
                      " out of range for a " + std::to_string(width) + "-column table");
  }

  Dataset d;
  d.kind = DatasetKind::regression;
  const int64_t n = static_cast<int64_t>(rows.size());
  d.x = Tensor({n, width - 1});
  d.y = Tensor({n});
  for (int64_t r = 0; r < n; ++r) {
    int64_t j = 0;
    for (int64_t c = 0; c < width; ++c) {
      const double v = rows[static_cast<size_t>(r)][static_cast<size_t>(c)];
      if (c == target) {
        d.y[r] = v;
      } else {
        d.x(r, j++) = v;
      }
    }
  }
  return d;
}

// ---- MNIST IDX reader ----

namespace detail {

inline uint32_t read_u32_be(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataFormatError("truncated IDX header in " + path);
  }
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline std::vector<unsigned char> read_payload(std::ifstream& in, size_t expected,
                                               const std::string& path) {
  std::vector<unsigned char> buf(expected);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  const size_t got = static_cast<size_t>(in.gcount());
  if (got != expected) {
    throw DataFormatError("truncated IDX payload in " + path + ": expected " +
                          std::to_string(expected) + " bytes, found " + std::to_string(got));
  }
  return buf;
}

}  // namespace detail

// Image pixels are divided by 126.0 (the value range becomes [0, ~2.02]).
inline Dataset read_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataFormatError("cannot open file: " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataFormatError("cannot open file: " + labels_path);

  const uint32_t img_magic = detail::read_u32_be(img, images_path);
  if (img_magic != 0x00000803u) {
    throw DataFormatError("bad image magic in " + images_path + ": expected 0x00000803, found 0x" +
                          [&] {
                            char buf[16];
                            std::snprintf(buf, sizeof(buf), "%08x", img_magic);
                            return std::string(buf);
                          }());
  }
  const uint32_t n_img = detail::read_u32_be(img, images_path);
  const uint32_t rows = detail::read_u32_be(img, images_path);
  const uint32_t cols = detail::read_u32_be(img, images_path);

  const uint32_t lab_magic = detail::read_u32_be(lab, labels_path);
  if (lab_magic != 0x00000801u) {
    throw DataFormatError("bad label magic in " + labels_path + ": expected 0x00000801");
  }
  const uint32_t n_lab = detail::read_u32_be(lab, labels_path);
  if (n_img != n_lab) {
    throw DataFormatError("image count " + std::to_string(n_img) + " does not match label count " +
                          std::to_string(n_lab));
  }
  if (n_img == 0) throw DataFormatError("IDX file declares zero items: " + images_path);

  const size_t pixels = static_cast<size_t>(n_img) * rows * cols;
  std::vector<unsigned char> img_bytes = detail::read_payload(img, pixels, images_path);
  std::vector<unsigned char> lab_bytes = detail::read_payload(lab, n_lab, labels_path);

  Dataset d;
  d.kind = DatasetKind::classification;
  d.num_classes = 10;
  d.x = Tensor({static_cast<int64_t>(n_img), static_cast<int64_t>(rows * cols)});
  for (size_t i = 0; i < pixels; ++i) d.x[static_cast<int64_t>(i)] = img_bytes[i] / 126.0;
  d.labels.resize(n_lab);
  for (size_t i = 0; i < n_lab; ++i) {
    const int64_t l = lab_bytes[i];
    if (l > 9) throw DomainError("label " + std::to_string(l) + " outside [0, 10) at item " +
                                 std::to_string(i) + " of " + labels_path);
    d.labels[i] = l;
  }
  return d;
}

// ---- standardization ----

// Z-scores features and targets by the training split's statistics and
// applies the same transform to every dataset in `others`. Zero-variance
// columns are centered but not scaled. Returns the record (also stored on
// each dataset).
inline StandardizationRecord standardize(Dataset& train, std::vector<Dataset*> others = {}) {
  if (train.kind != DatasetKind::regression) {
    throw ContractError("standardize expects regression datasets");
  }
  train.validate();
  const int64_t n = train.size(), dim = train.dim();
  StandardizationRecord rec;
  rec.x_mean = Tensor::zeros({dim});
  rec.x_scale = Tensor::full({dim}, 1.0);
  for (int64_t c = 0; c < dim; ++c) {
    double mean = 0.0;
    for (int64_t r = 0; r < n; ++r) mean += train.x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t r = 0; r < n; ++r) {
      const double dxy = train.x(r, c) - mean;
      var += dxy * dxy;
    }
    var /= static_cast<double>(n);
    rec.x_mean[c] = mean;
    rec.x_scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  double y_mean = 0.0;
  for (int64_t r = 0; r < n; ++r) y_mean += train.y[r];
  y_mean /= static_cast<double>(n);
  double y_var = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const double dy = train.y[r] - y_mean;
    y_var += dy * dy;
  }
  y_var /= static_cast<double>(n);
  rec.y_mean = y_mean;
  rec.y_scale = y_var > 1e-24 ? std::sqrt(y_var) : 1.0;
  rec.applied = true;

  auto apply = [&rec](Dataset& d) {
    for (int64_t r = 0; r < d.size(); ++r) {
      for (int64_t c = 0; c < d.dim(); ++c) {
        d.x(r, c) = (d.x(r, c) - rec.x_mean[c]) / rec.x_scale[c];
      }
      d.y[r] = (d.y[r] - rec.y_mean) / rec.y_scale;
    }
    d.standardization = rec;
  };
  apply(train);
  for (Dataset* d : others) {
    if (d->kind != DatasetKind::regression) {
      throw ContractError("standardize expects regression datasets");
    }
    if (d->dim() != dim) throw DimensionError("feature dimension mismatch in standardize");
    apply(*d);
  }
  return rec;
}

// Re-applies a previously computed record, e.g. to test data at eval time.
inline void apply_standardization(Dataset& d, const StandardizationRecord& rec) {
  if (!rec.applied) throw ContractError("standardization record was never computed");
  if (d.kind != DatasetKind::regression) {
    throw ContractError("apply_standardization expects regression datasets");
  }
  d.validate();
  if (d.dim() != rec.x_mean.size()) {
    throw DimensionError("feature dimension mismatch in apply_standardization");
  }
  for (int64_t r = 0; r < d.size(); ++r) {
    for (int64_t c = 0; c < d.dim(); ++c) {
      d.x(r, c) = (d.x(r, c) - rec.x_mean[c]) / rec.x_scale[c];
    }
    d.y[r] = (d.y[r] - rec.y_mean) / rec.y_scale;
  }
  d.standardization = rec;
}

inline double unstandardize_target(double y, const StandardizationRecord& rec) {
  return y * rec.y_scale + rec.y_mean;
}

// Change of variables: ln p(y) = ln p(y_standardized) - ln(scale).
inline double log_density_correction(const StandardizationRecord& rec) {
  return -std::log(rec.y_scale);
}

// ---- split protocols ----

enum class SplitProtocol { uci_small, protein, single };

inline int64_t protocol_replicates(SplitProtocol p) {
  switch (p) {
    case SplitProtocol::uci_small: return 20;
    case SplitProtocol::protein: return 5;
    case SplitProtocol::single: return 1;
  }
  throw ContractError("unknown split protocol");
}

namespace detail {

inline Dataset take_rows(const Dataset& d, const std::vector<int64_t>& order, int64_t lo,
                         int64_t hi) {
  Dataset out;
  out.kind = d.kind;
  out.num_classes = d.num_classes;
  out.standardization = d.standardization;
  const int64_t n = hi - lo;
  out.x = Tensor({n, d.dim()});
  for (int64_t r = 0; r < n; ++r) {
    const int64_t src = order[static_cast<size_t>(lo + r)];
    for (int64_t c = 0; c < d.dim(); ++c) out.x(r, c) = d.x(src, c);
  }
  if (!d.y.empty()) {
    out.y = Tensor({n});
    for (int64_t r = 0; r < n; ++r) out.y[r] = d.y[order[static_cast<size_t>(lo + r)]];
  }
  if (!d.labels.empty()) {
    out.labels.resize(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
      out.labels[static_cast<size_t>(r)] =
          d.labels[static_cast<size_t>(order[static_cast<size_t>(lo + r)])];
    }
  }
  return out;
}

}  // namespace detail

// 90/10 train/test splits; replicate r reshuffles with a child seed derived
// from (seed, r), so any replicate is reproducible in isolation.
inline std::vector<std::pair<Dataset, Dataset>> protocol_splits(const Dataset& d,
                                                                SplitProtocol protocol,
                                                                uint64_t seed) {
  const int64_t n = d.size();
  const int64_t n_train = (n * 9) / 10;
  if (n_train < 1 || n - n_train < 1) {
    throw ContractError("dataset too small for a 90/10 split: " + std::to_string(n) + " rows");
  }
  const int64_t reps = protocol_replicates(protocol);
  std::vector<std::pair<Dataset, Dataset>> out;
  out.reserve(static_cast<size_t>(reps));
  for (int64_t r = 0; r < reps; ++r) {
    RngStream rng(derive_seed(seed, static_cast<uint64_t>(r)));
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    out.emplace_back(detail::take_rows(d, order, 0, n_train),
                     detail::take_rows(d, order, n_train, n));
  }
  return out;
}

}  // namespace hsbnn
