#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hsbnn/errors.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic seed derivation for independent streams (shuffling,
// reparameterization draws, replicate workers).
inline uint64_t derive_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt + 0x7f4a7c15ull));
}

// Seeded random stream. All transformations (uniform, normal, gamma) are
// implemented explicitly on top of the raw 64-bit generator output, so a given
// seed produces the same sequence everywhere. std::normal_distribution and
// friends are avoided because their draw sequences are implementation-defined.
class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) : seed_(seed), gen_(splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }

  RngStream derive(uint64_t salt) const { return RngStream(derive_seed(seed_, salt)); }

  uint64_t next_raw() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n).
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw DomainError("uniform_int requires n > 0");
    const uint64_t range = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % range);
  }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) {
    if (sigma < 0.0) throw DomainError("normal requires sigma >= 0");
    return mu + sigma * normal();
  }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  // Gamma(shape, rate) via Marsaglia-Tsang, with the boost trick for shape < 1.
  double gamma(double shape, double rate) {
    if (shape <= 0 || rate <= 0) throw DomainError("gamma sampler requires shape, rate > 0");
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform();
      while (u <= 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v / rate;
      }
    }
  }

  // Inverse-Gamma(shape, scale): reciprocal of Gamma(shape, rate = scale).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }

  Tensor normal_tensor(const std::vector<int64_t>& shape, double mu = 0.0, double sigma = 1.0) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = normal(mu, sigma);
    return t;
  }

  // Seeded Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // The Box-Muller spare is stored as raw bits; istream extraction cannot
  // parse hexfloat text.
  std::string serialize() const {
    std::ostringstream os;
    uint64_t spare_bits = 0;
    std::memcpy(&spare_bits, &spare_, sizeof spare_bits);
    os << seed_ << " " << gen_ << " " << (has_spare_ ? 1 : 0) << " " << spare_bits;
    return os.str();
  }

  static RngStream deserialize(const std::string& s) {
    std::istringstream is(s);
    RngStream r;
    int spare_flag = 0;
    uint64_t spare_bits = 0;
    is >> r.seed_ >> r.gen_ >> spare_flag >> spare_bits;
    if (is.fail()) throw DataFormatError("corrupt rng stream state");
    r.has_spare_ = spare_flag != 0;
    std::memcpy(&r.spare_, &spare_bits, sizeof r.spare_);
    return r;
  }

 private:
  uint64_t seed_ = 0;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hsbnn
