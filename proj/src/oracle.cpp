#include "roacert/oracle.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "roacert/parallel.hpp"

namespace roa {

std::size_t RoaMask::count() const {
  std::size_t n = 0;
  for (auto s : safe) n += s;
  return n;
}

namespace {

bool converges(const ClosedLoopSystem& system, State x, int horizon, double conv_radius) {
  const int window_start = horizon - horizon / 10;
  for (int t = 1; t <= horizon; ++t) {
    x = system.step(x);
    if (!x.allFinite()) return false;
    if (!contains(system.domain, x, 2.0)) return false;
    if (t > window_start && x.norm() > conv_radius) return false;
  }
  return true;
}

}  // namespace

RoaMask ground_truth_roa(const ClosedLoopSystem& system, const Grid& grid, int horizon,
                         double conv_radius) {
  if (horizon < 1) throw std::invalid_argument("ground_truth_roa: horizon must be >= 1");
  if (!(conv_radius > 0)) throw std::invalid_argument("ground_truth_roa: conv_radius must be positive");
  RoaMask mask;
  mask.grid_id = grid.id;
  mask.horizon = horizon;
  mask.conv_radius = conv_radius;
  mask.safe.assign(grid.size(), 0);
  parallel_for(grid.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      mask.safe[i] = converges(system, grid.point(i), horizon, conv_radius) ? 1 : 0;
  });
  return mask;
}

double coverage_fraction(const Certificate& certificate, const RoaMask& mask, const Grid& grid,
                         const Candidate& candidate) {
  if (mask.grid_id != grid.id) throw std::invalid_argument("coverage_fraction: grid mismatch");
  const std::size_t total = mask.count();
  if (total == 0) throw std::domain_error("coverage_fraction: empty oracle mask");
  Vector v = candidate.values(grid.all_points());
  std::size_t covered = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (mask.safe[i] && v[static_cast<Eigen::Index>(i)] <= certificate.level) ++covered;
  return static_cast<double>(covered) / static_cast<double>(total);
}

AuditReport soundness_audit(const Certificate& certificate, const RoaMask& mask, const Grid& grid) {
  if (mask.grid_id != grid.id) throw std::invalid_argument("soundness_audit: grid mismatch");
  AuditReport report;
  report.certified_points = certificate.certified.size();
  for (auto idx : certificate.certified)
    if (!mask.safe[idx]) ++report.false_positives;
  report.worst_margin = 0.0;
  if (!certificate.margins.empty())
    report.worst_margin = *std::max_element(certificate.margins.begin(), certificate.margins.end());
  return report;
}

void write_roa_csv(const std::filesystem::path& path, const Grid& grid, const RoaMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const auto d = grid.domain.size();
  for (std::size_t k = 0; k < d; ++k) out << "x" << k << ",";
  out << "true_safe\n";
  char buf[64];
  for (std::size_t i = 0; i < grid.size(); ++i) {
    State x = grid.point(i);
    for (std::size_t k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", x[static_cast<Eigen::Index>(k)]);
      out << buf << ",";
    }
    out << (mask.safe[i] ? 1 : 0) << "\n";
  }
}

void write_audit_json(const std::filesystem::path& path, const AuditReport& report,
                      const Certificate& certificate) {
  nlohmann::json j;
  j["candidate"] = certificate.candidate_name;
  j["grid"] = certificate.grid_id;
  j["level"] = certificate.level;
  j["rule"] = to_string(certificate.rule);
  j["origin_radius"] = certificate.origin_radius;
  j["certified_points"] = report.certified_points;
  j["false_positives"] = report.false_positives;
  j["worst_margin"] = report.worst_margin;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace roa
