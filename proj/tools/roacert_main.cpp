// Command-line front end: train a network Lyapunov candidate, certify stored
// candidates, estimate the ground-truth ROA, or compare candidates, all from
// one JSON config. Exit codes: 0 success, 1 config error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "roacert/config.hpp"

namespace fs = std::filesystem;
using namespace roa;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig config =
      args.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(args.config_path);
  if (!args.out_dir.empty()) config.output_dir = args.out_dir;
  if (args.seed) {
    config.seed = *args.seed;
    config.train.seed = *args.seed;
  }
  config.validate();
  return config;
}

void write_manifest(const ExperimentConfig& config, const std::string& command) {
  nlohmann::json j = config.to_json();
  j["command"] = command;
  std::ofstream out(fs::path(config.output_dir) / "manifest.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

CertifyOptions options_for(const ExperimentConfig& config, const Grid& grid,
                           const ClosedLoopSystem& system, const Candidate& candidate) {
  CertifyOptions opt;
  opt.rule = config.train.rule;
  opt.origin_radius = config.train.origin_radius.value_or(2.0 * grid.fill_distance);
  if (opt.rule == ThresholdRule::Global)
    opt.l_dv = compose_lipschitz(candidate.lipschitz_bound(system.domain), system.lipschitz);
  return opt;
}

int cmd_train(const CommonArgs& args) {
  ExperimentConfig config = load_config(args);
  fs::create_directories(config.output_dir);
  write_manifest(config, "train");
  Experiment exp = make_experiment(config);
  QuadraticCandidate quadratic(exp.lqr.p);

  std::fprintf(stderr, "oracle: simulating %zu grid points...\n", exp.grid.size());
  RoaMask mask = ground_truth_roa(exp.system, exp.grid, config.oracle_horizon,
                                  config.oracle_conv_radius);
  std::fprintf(stderr, "oracle: %zu safe points (%.1f%% of grid)\n", mask.count(),
               100.0 * static_cast<double>(mask.count()) / static_cast<double>(exp.grid.size()));

  TrainResult result = run_training(config.train, exp.system, exp.grid, &mask, &quadratic);

  fs::path out(config.output_dir);
  write_training_curve_csv(out / "training_curve.csv", result.history);
  {
    std::ofstream net_out(out / "network.json", std::ios::binary);
    net_out << result.net.to_json().dump() << "\n";
  }
  NetCandidate candidate(&result.net);
  write_level_set_csv(out / "level_set.csv", exp.grid, candidate, exp.system, result.certificate);
  AuditReport audit = soundness_audit(result.certificate, mask, exp.grid);
  write_audit_json(out / "audit.json", audit, result.certificate);

  for (const auto& r : result.history.records)
    std::fprintf(stderr, "iter %2d  c=%.6f  coverage=%.4f  fp=%ld  cls=%.3f dec=%.3f  (%.1fs)\n",
                 r.iter, r.level, r.coverage, r.false_positives, r.classifier_loss,
                 r.decrease_loss, r.seconds);
  std::fprintf(stderr, "final: c=%.6f coverage=%.4f false_positives=%zu\n",
               result.certificate.level,
               coverage_fraction(result.certificate, mask, exp.grid, candidate),
               audit.false_positives);
  return 0;
}

int cmd_oracle(const CommonArgs& args) {
  ExperimentConfig config = load_config(args);
  fs::create_directories(config.output_dir);
  write_manifest(config, "oracle");
  Experiment exp = make_experiment(config);
  RoaMask mask = ground_truth_roa(exp.system, exp.grid, config.oracle_horizon,
                                  config.oracle_conv_radius);
  write_roa_csv(fs::path(config.output_dir) / "roa.csv", exp.grid, mask);
  std::fprintf(stderr, "oracle: %zu of %zu grid points converge\n", mask.count(), exp.grid.size());
  return 0;
}

int cmd_certify(const CommonArgs& args, const std::string& network_path) {
  ExperimentConfig config = load_config(args);
  fs::create_directories(config.output_dir);
  write_manifest(config, "certify");
  Experiment exp = make_experiment(config);

  std::ifstream in(network_path);
  if (!in) throw std::runtime_error("cannot open network file " + network_path);
  nlohmann::json j;
  in >> j;
  LyapunovNet net = LyapunovNet::from_json(j);
  NetCandidate candidate(&net);

  Certificate cert =
      largest_safe_level(candidate, exp.system, exp.grid, options_for(config, exp.grid, exp.system, candidate));
  write_level_set_csv(fs::path(config.output_dir) / "level_set.csv", exp.grid, candidate,
                      exp.system, cert);
  std::fprintf(stderr, "certified level c=%.6f (%zu grid points)\n", cert.level,
               cert.certified.size());
  return 0;
}

int cmd_compare(const CommonArgs& args, const std::string& network_path, bool lqr_only) {
  ExperimentConfig config = load_config(args);
  fs::create_directories(config.output_dir);
  write_manifest(config, "compare");
  Experiment exp = make_experiment(config);
  QuadraticCandidate quadratic(exp.lqr.p);

  RoaMask mask = ground_truth_roa(exp.system, exp.grid, config.oracle_horizon,
                                  config.oracle_conv_radius);

  std::optional<LyapunovNet> net;
  if (!lqr_only) {
    std::ifstream in(network_path);
    if (!in) throw std::runtime_error("cannot open network file " + network_path +
                                      " (train first or pass --lqr-only)");
    nlohmann::json j;
    in >> j;
    net = LyapunovNet::from_json(j);
  }

  std::ofstream out(fs::path(config.output_dir) / "compare.csv", std::ios::binary);
  out << "name,certified_level,coverage_fraction,false_positives\n";
  char buf[64];
  auto emit = [&](const Candidate& candidate) {
    Certificate cert = largest_safe_level(candidate, exp.system, exp.grid,
                                          options_for(config, exp.grid, exp.system, candidate));
    double frac = coverage_fraction(cert, mask, exp.grid, candidate);
    AuditReport audit = soundness_audit(cert, mask, exp.grid);
    out << candidate.name() << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", cert.level);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", frac);
    out << buf << "," << audit.false_positives << "\n";
    std::fprintf(stderr, "%s: c=%.6f coverage=%.4f false_positives=%zu\n",
                 candidate.name().c_str(), cert.level, frac, audit.false_positives);
  };
  if (net) {
    NetCandidate candidate(&*net);
    emit(candidate);
  }
  emit(quadratic);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Lyapunov region-of-attraction certification"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string network_path = "out/network.json";
  bool lqr_only = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "experiment config JSON");
    cmd->add_option("--out", common.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", common.seed, "seed (overrides config)");
  };

  auto* train = app.add_subcommand("train", "run the level-set growth training loop");
  add_common(train);
  auto* oracle = app.add_subcommand("oracle", "ground-truth ROA by forward simulation");
  add_common(oracle);
  auto* certify = app.add_subcommand("certify", "certify a stored network");
  add_common(certify);
  certify->add_option("--network", network_path, "network parameter file");
  auto* compare = app.add_subcommand("compare", "compare network and LQR candidates");
  add_common(compare);
  compare->add_option("--network", network_path, "network parameter file");
  compare->add_flag("--lqr-only", lqr_only, "skip the network candidate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(common);
    if (oracle->parsed()) return cmd_oracle(common);
    if (certify->parsed()) return cmd_certify(common, network_path);
    if (compare->parsed()) return cmd_compare(common, network_path, lqr_only);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const StartupError& e) {
    std::cerr << "startup error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
