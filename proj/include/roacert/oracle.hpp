#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "roacert/certify.hpp"
#include "roacert/common.hpp"
#include "roacert/dynamics.hpp"

namespace roa {

// Ground-truth region of attraction on a grid, estimated by exhaustive
// forward simulation.
struct RoaMask {
  std::vector<std::uint8_t> safe;  // one flag per grid point
  std::string grid_id;
  int horizon = 0;
  double conv_radius = 0.0;

  std::size_t count() const;
};

// A point is safe iff its trajectory stays within twice the domain bounding
// box and sits inside the conv_radius ball for the entire final 10% of the
// horizon (an orbiting trajectory that only passes through the ball fails).
RoaMask ground_truth_roa(const ClosedLoopSystem& system, const Grid& grid, int horizon,
                         double conv_radius);

// |{v <= c} ∩ mask| / |mask|
double coverage_fraction(const Certificate& certificate, const RoaMask& mask, const Grid& grid,
                         const Candidate& candidate);

struct AuditReport {
  std::size_t certified_points = 0;
  std::size_t false_positives = 0;  // certified but not in the true ROA
  double worst_margin = 0.0;        // largest dv + threshold among tested points
};

AuditReport soundness_audit(const Certificate& certificate, const RoaMask& mask, const Grid& grid);

void write_roa_csv(const std::filesystem::path& path, const Grid& grid, const RoaMask& mask);
void write_audit_json(const std::filesystem::path& path, const AuditReport& report,
                      const Certificate& certificate);

}  // namespace roa
