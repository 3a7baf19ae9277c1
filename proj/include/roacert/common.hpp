#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace roa {

using State = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double center() const { return 0.5 * (lo + hi); }
};

// Axis-aligned box, one closed interval per state dimension.
using Domain = std::vector<Interval>;

inline double max_norm_over(const Domain& domain) {
  double s = 0.0;
  for (const auto& iv : domain) {
    double m = std::max(std::abs(iv.lo), std::abs(iv.hi));
    s += m * m;
  }
  return std::sqrt(s);
}

inline bool contains(const Domain& domain, const State& x, double scale = 1.0) {
  for (int i = 0; i < x.size(); ++i) {
    double c = domain[i].center();
    double h = 0.5 * domain[i].width();
    if (std::abs(x[i] - c) > scale * h) return false;
  }
  return true;
}

// mt19937_64 with an explicit bits-to-double mapping. The standard
// distributions are implementation-defined, which would break byte-identical
// replays across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  State uniform_in(const Domain& domain) {
    State x(static_cast<int>(domain.size()));
    for (std::size_t i = 0; i < domain.size(); ++i)
      x[static_cast<int>(i)] = uniform(domain[i].lo, domain[i].hi);
    return x;
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace roa
