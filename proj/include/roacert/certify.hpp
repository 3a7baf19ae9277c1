#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "roacert/common.hpp"
#include "roacert/dynamics.hpp"
#include "roacert/lyapunov.hpp"

namespace roa {

// Uniform rectangular discretization including the domain corners.
// fill_distance (tau) is half the cell diagonal: every point of the domain is
// within tau of a grid point. Points enumerate lexicographically, first
// dimension slowest.
struct Grid {
  Domain domain;
  std::vector<int> points_per_dim;
  std::vector<double> spacing;
  double fill_distance = 0.0;
  std::string id;

  std::size_t size() const;
  State point(std::size_t index) const;
  Matrix all_points() const;  // d x N
};

Grid build_grid(const Domain& domain, const std::vector<int>& points_per_dim);

// One-step decrease at x: v(f(x)) - v(x). A step that leaves the representable
// range counts as a violation (+infinity).
double decrease_margin(const Candidate& candidate, const ClosedLoopSystem& system, const State& x);

// |dv(x) - dv(x')| <= L_v L_f ||x-x'|| + L_v ||x-x'||
double compose_lipschitz(double l_v, double l_f);

bool level_set_contains(const Candidate& candidate, double c, const State& x);

// How the decrease test is tightened against discretization error:
//  Global: dv(x) < -L_dv * tau with one composed bound for the whole domain.
//  Local:  dv(x) < -(l_v(x) + L_f l_v(f(x))) * tau with sound per-point value
//          Lipschitz bounds; far tighter where v is small or flat.
//  Plain:  dv(x) < 0, no tightening. Soundness then rests on the empirical
//          audit against the simulation oracle rather than on Lipschitz slack.
enum class ThresholdRule { Global, Local, Plain };

std::string to_string(ThresholdRule r);
ThresholdRule threshold_rule_from_string(const std::string& s);

struct CertifyOptions {
  ThresholdRule rule = ThresholdRule::Global;
  double l_dv = 0.0;           // used by Global
  double origin_radius = 0.0;  // grid points with ||x|| <= r0 are exempt from the test
  // Plain-rule margin: require dv(x) < -margin_frac * (v(x) + margin_guard)
  // instead of dv(x) < 0. Screens out hairline passes that only reflect
  // discretization luck.
  double margin_frac = 0.0;
  double margin_guard = 1e-3;
};

// A certified safe level c with the grid evidence behind it: every grid point
// with v(x) <= c and ||x|| > origin_radius passed the tightened decrease test.
// `certified` lists all grid indices with v <= c (the claimed-safe discrete
// set, including the exempt origin ball); `margins` holds dv + threshold for
// the tested points (negative = pass, with room).
struct Certificate {
  double level = 0.0;
  std::string candidate_name;
  std::string grid_id;
  ThresholdRule rule = ThresholdRule::Global;
  double l_dv = 0.0;
  double origin_radius = 0.0;
  std::vector<std::uint32_t> certified;
  std::vector<double> margins;

  bool empty() const { return !(level > 0.0); }
};

// Precomputed per-grid-point data reused across repeated certifications of
// the same system on the same grid.
struct GridFlow {
  Matrix points;        // d x N
  Matrix next_points;   // d x N, f applied column-wise
  Vector point_norms;   // ||x|| per grid point
};

GridFlow make_grid_flow(const ClosedLoopSystem& system, const Grid& grid);

// Sorts grid points by v ascending (index-tiebreak) and scans those with
// ||x|| > origin_radius: the certified level is the last value before the
// first point that fails the tightened decrease test, scaled just below the
// violator. An immediate violation yields the empty certificate, c = 0.
Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, const GridFlow& flow,
                               const CertifyOptions& options);

Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, const CertifyOptions& options);

// Spec form: explicit scalar Lipschitz bound for the decrease function.
Certificate largest_safe_level(const Candidate& candidate, const ClosedLoopSystem& system,
                               const Grid& grid, double l_dv, double origin_radius);

// CSV rows (x..., v, delta_v, certified) for level-set plots.
void write_level_set_csv(const std::filesystem::path& path, const Grid& grid,
                         const Candidate& candidate, const ClosedLoopSystem& system,
                         const Certificate& certificate);

}  // namespace roa
