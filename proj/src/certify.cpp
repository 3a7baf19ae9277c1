#include "roacert/certify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "roacert/parallel.hpp"

namespace roa {

std::size_t Grid::size() const {
  std::size_t n = 1;
  for (int p : points_per_dim) n *= static_cast<std::size_t>(p);
  return n;
}

State Grid::point(std::size_t index) const {
  const auto d = domain.size();
  State x(static_cast<int>(d));
  for (std::size_t k = d; k-- > 0;) {
    auto n = static_cast<std::size_t>(points_per_dim[k]);
    std::size_t i = index % n;
    index /= n;
    x[static_cast<int>(k)] = domain[k].lo + spacing[k] * static_cast<double>(i);
  }
  return x;
}

Matrix Grid::all_points() const {
  Matrix pts(domain.size(), size());
  for (std::size_t i = 0; i < size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = point(i);
  return pts;
}

Grid build_grid(const Domain& domain, const std::vector<int>& points_per_dim) {
  if (domain.empty() || domain.size() != points_per_dim.size())
    throw std::invalid_argument("build_grid: domain/points size mismatch");
  Grid g;
  g.domain = domain;
  g.points_per_dim = points_per_dim;
  double diag2 = 0.0;
  std::ostringstream id;
  for (std::size_t k = 0; k < domain.size(); ++k) {
    if (points_per_dim[k] < 2) throw std::invalid_argument("build_grid: need >= 2 points per dim");
    if (!(domain[k].hi > domain[k].lo)) throw std::invalid_argument("build_grid: degenerate interval");
    double h = domain[k].width() / static_cast<double>(points_per_dim[k] - 1);
    g.spacing.push_back(h);
    diag2 += h * h;
    if (k) id << "x";
    id << points_per_dim[k] << "[" << domain[k].lo << "," << domain[k].hi << "]";
  }
  g.fill_distance = 0.5 * std::sqrt(diag2);
  g.id = id.str();
  return g;
}

double decrease_margin(const Candidate& candidate, const ClosedLoopSystem& system, const State& x) {
  State fx = system.step(x);
  if (!fx.allFinite()) return std::numeric_limits<double>::infinity();
  double vf = candidate.value(fx);
  if (!std::isfinite(vf)) return std::numeric_limits<double>::infinity();
  return vf - candidate.value(x);
}

double compose_lipschitz(double l_v, double l_f) {
  if (!(l_v > 0) || !(l_f > 0)) throw std::invalid_argument("compose_lipschitz: bounds must be positive");
  return l_v * (l_f + 1.0);
}

bool level_set_contains(const Candidate& candidate, double c, const State& x) {
  if (!(c >= 0)) throw std::invalid_argument("level_set_contains: level must be nonnegative");
  return candidate.value(x) <= c;
}

std::string to_string(ThresholdRule r) {
  switch (r) {
    case ThresholdRule::Global: return "global";
    case ThresholdRule::Local: return "local";
    default: return "plain";
  }
}

ThresholdRule threshold_rule_from_string(const std::string& s) {
  if (s == "global") return ThresholdRule::Global;
  if (s == "local") return ThresholdRule::Local;
  if (s == "plain") return ThresholdRule::Plain;
  throw std::invalid_argument("unknown threshold rule: " + s);
}

GridFlow make_grid_flow(const ClosedLoopSystem& system, const Grid& grid) {
  GridFlow flow;
  flow.points = grid.all_points();
  const auto n = grid.size();
  flow.next_points.resize(flow.points.rows(), flow.points.cols());
  flow.point_norms.resize(static_cast<Eigen::Index>(n));
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto col = static_cast<Eigen::Index>(i);
      flow.next_points.col(col) = system.step(flow.points.col(col));
      flow.point_norms[col] = flow.points.col(col).norm();
    }
  });
  return flow;
}

Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, const GridFlow& flow,
                               const CertifyOptions& options) {
  const auto n = grid.size();
  const double tau = grid.fill_distance;
  Vector v = candidate.values(flow.points);
  Vector vf = candidate.values(flow.next_points);

  // per-point tightening threshold
  Vector threshold(static_cast<Eigen::Index>(n));
  switch (options.rule) {
    case ThresholdRule::Global:
      threshold.setConstant(options.l_dv * tau);
      break;
    case ThresholdRule::Local: {
      const double l_f = system.lipschitz;
      parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          auto c = static_cast<Eigen::Index>(i);
          double lv_here = candidate.local_lipschitz(flow.points.col(c), v[c], tau);
          double lv_next = candidate.local_lipschitz(flow.next_points.col(c), vf[c], l_f * tau);
          threshold[c] = (lv_here + l_f * lv_next) * tau;
        }
      });
      break;
    }
    case ThresholdRule::Plain:
      if (options.margin_frac > 0.0)
        threshold = options.margin_frac * (v.array() + options.margin_guard).matrix();
      else
        threshold.setZero();
      break;
  }

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (v[a] != v[b]) return v[a] < v[b];
    return a < b;  // deterministic tiebreak
  });

  Certificate cert;
  cert.candidate_name = candidate.name();
  cert.grid_id = grid.id;
  cert.rule = options.rule;
  cert.l_dv = options.l_dv;
  cert.origin_radius = options.origin_radius;

  double level = 0.0;
  bool any_scanned = false;
  for (std::uint32_t idx : order) {
    if (flow.point_norms[idx] <= options.origin_radius) continue;
    double dv = vf[idx] - v[idx];
    bool finite = std::isfinite(dv);
    if (finite && dv < -threshold[idx]) {
      level = v[idx];
      any_scanned = true;
    } else {
      level = any_scanned ? v[idx] * (1.0 - 1e-9) : 0.0;
      break;
    }
  }
  cert.level = level;

  for (std::uint32_t idx : order) {
    if (v[idx] > cert.level) break;
    cert.certified.push_back(idx);
    if (flow.point_norms[idx] > options.origin_radius)
      cert.margins.push_back(vf[idx] - v[idx] + threshold[idx]);
  }
  std::sort(cert.certified.begin(), cert.certified.end());
  return cert;
}

Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, const CertifyOptions& options) {
  return largest_safe_level(candidate, system, grid, make_grid_flow(system, grid), options);
}

Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, double l_dv, double origin_radius) {
  CertifyOptions options;
  options.rule = ThresholdRule::Global;
  options.l_dv = l_dv;
  options.origin_radius = origin_radius;
  return largest_safe_level(candidate, system, grid, options);
}

void write_level_set_csv(const std::filesystem::path& path, const Grid& grid,
                         const Candidate& candidate, const ClosedLoopSystem& system,
                         const Certificate& certificate) {
  GridFlow flow = make_grid_flow(system, grid);
  Vector v = candidate.values(flow.points);
  Vector vf = candidate.values(flow.next_points);

  std::vector<bool> in_set(grid.size(), false);
  for (auto idx : certificate.certified) in_set[idx] = true;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const auto d = grid.domain.size();
  for (std::size_t k = 0; k < d; ++k) out << "x" << k << ",";
  out << "v,delta_v,certified\n";
  char buf[64];
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto c = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", flow.points(static_cast<Eigen::Index>(k), c));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v[c]);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", vf[c] - v[c]);
    out << buf << "," << (in_set[i] ? 1 : 0) << "\n";
  }
}

}  // namespace roa
