#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "roacert/certify.hpp"
#include "roacert/dynamics.hpp"
#include "roacert/oracle.hpp"
#include "roacert/train.hpp"

namespace roa {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything one experiment needs, loadable from a single JSON document.
// Unknown keys are rejected so typos cannot silently fall back to defaults.
struct ExperimentConfig {
  PendulumParams pendulum;
  Matrix lqr_q = Matrix::Identity(2, 2);
  Matrix lqr_r = Matrix::Identity(1, 1);
  Domain domain = {{-M_PI, M_PI}, {-2.0 * M_PI, 2.0 * M_PI}};
  std::vector<int> grid_points = {251, 251};
  int oracle_horizon = 2000;
  double oracle_conv_radius = 0.01;
  TrainConfig train;
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;  // fully resolved, defaults included

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Pendulum + LQR policy + grid assembled from one config. The quadratic
// baseline candidate is QuadraticCandidate(lqr.p).
struct Experiment {
  ClosedLoopSystem system;
  Grid grid;
  LqrSolution lqr;
  LinearPolicy policy;
};

Experiment make_experiment(const ExperimentConfig& config);

}  // namespace roa
