#include "roacert/config.hpp"

#include <fstream>
#include <set>

namespace roa {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

Matrix parse_matrix(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ConfigError("config: " + where + " must be a matrix (array of rows)");
  Matrix m(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size()) throw ConfigError("config: ragged matrix in " + where);
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

nlohmann::json dump_matrix(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

void ExperimentConfig::validate() const {
  pendulum.validate();
  train.validate();
  if (domain.size() != grid_points.size()) throw ConfigError("config: domain/grid dimension mismatch");
  for (const auto& iv : domain)
    if (!(iv.hi > iv.lo)) throw ConfigError("config: degenerate domain interval");
  for (int p : grid_points)
    if (p < 2) throw ConfigError("config: grid needs >= 2 points per dim");
  if (oracle_horizon < 1) throw ConfigError("config: oracle horizon must be >= 1");
  if (!(oracle_conv_radius > 0)) throw ConfigError("config: oracle conv radius must be positive");
  if (lqr_q.rows() != lqr_q.cols() || lqr_r.rows() != lqr_r.cols())
    throw ConfigError("config: LQR weights must be square");
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  reject_unknown(j, {"pendulum", "lqr", "domain", "grid", "oracle", "network", "train",
                     "certify", "output_dir", "seed"},
                 "top level");

  if (j.contains("pendulum")) {
    const auto& jp = j["pendulum"];
    reject_unknown(jp, {"mass", "length", "gravity", "friction", "torque_limit", "dt"}, "pendulum");
    if (jp.contains("mass")) c.pendulum.mass = jp["mass"].get<double>();
    if (jp.contains("length")) c.pendulum.length = jp["length"].get<double>();
    if (jp.contains("gravity")) c.pendulum.gravity = jp["gravity"].get<double>();
    if (jp.contains("friction")) c.pendulum.friction = jp["friction"].get<double>();
    if (jp.contains("torque_limit")) c.pendulum.torque_limit = jp["torque_limit"].get<double>();
    if (jp.contains("dt")) c.pendulum.dt = jp["dt"].get<double>();
  }
  if (j.contains("lqr")) {
    const auto& jl = j["lqr"];
    reject_unknown(jl, {"q", "r"}, "lqr");
    if (jl.contains("q")) c.lqr_q = parse_matrix(jl["q"], "lqr.q");
    if (jl.contains("r")) c.lqr_r = parse_matrix(jl["r"], "lqr.r");
  }
  if (j.contains("domain")) {
    c.domain.clear();
    for (const auto& pair : j["domain"]) {
      if (!pair.is_array() || pair.size() != 2) throw ConfigError("config: domain entries are [lo, hi]");
      c.domain.push_back({pair[0].get<double>(), pair[1].get<double>()});
    }
  }
  if (j.contains("grid")) {
    const auto& jg = j["grid"];
    reject_unknown(jg, {"points_per_dim"}, "grid");
    if (jg.contains("points_per_dim")) c.grid_points = jg["points_per_dim"].get<std::vector<int>>();
  }
  if (j.contains("oracle")) {
    const auto& jo = j["oracle"];
    reject_unknown(jo, {"horizon", "conv_radius"}, "oracle");
    if (jo.contains("horizon")) c.oracle_horizon = jo["horizon"].get<int>();
    if (jo.contains("conv_radius")) c.oracle_conv_radius = jo["conv_radius"].get<double>();
  }
  if (j.contains("network")) {
    const auto& jn = j["network"];
    reject_unknown(jn, {"widths", "activation", "eps", "leaky_slope"}, "network");
    if (jn.contains("widths")) c.train.hidden = jn["widths"].get<std::vector<int>>();
    if (jn.contains("activation"))
      c.train.activation = activation_from_string(jn["activation"].get<std::string>());
    if (jn.contains("eps")) c.train.eps = jn["eps"].get<double>();
    if (jn.contains("leaky_slope")) c.train.leaky_slope = jn["leaky_slope"].get<double>();
  }
  if (j.contains("train")) {
    const auto& jt = j["train"];
    reject_unknown(jt,
                   {"lambda", "alpha", "horizon", "c_s", "sgd_iters", "batch_size",
                    "learning_rate", "outer_iters", "delta_frac", "grad_clip", "loss_margin_frac",
                    "cert_margin_frac", "lr_final_frac", "pretrain_iters", "pretrain_lr",
                    "pretrain_batch", "stall_rel_tol", "stall_iters"},
                   "train");
    if (jt.contains("lambda")) c.train.lambda = jt["lambda"].get<double>();
    if (jt.contains("alpha")) c.train.alpha = jt["alpha"].get<double>();
    if (jt.contains("horizon")) c.train.horizon = jt["horizon"].get<int>();
    if (jt.contains("c_s")) c.train.c_s = jt["c_s"].get<double>();
    if (jt.contains("sgd_iters")) c.train.sgd_iters = jt["sgd_iters"].get<int>();
    if (jt.contains("batch_size")) c.train.batch_size = jt["batch_size"].get<int>();
    if (jt.contains("learning_rate")) c.train.learning_rate = jt["learning_rate"].get<double>();
    if (jt.contains("outer_iters")) c.train.outer_iters = jt["outer_iters"].get<int>();
    if (jt.contains("delta_frac")) c.train.delta_frac = jt["delta_frac"].get<double>();
    if (jt.contains("grad_clip")) c.train.grad_clip = jt["grad_clip"].get<double>();
    if (jt.contains("loss_margin_frac")) c.train.loss_margin_frac = jt["loss_margin_frac"].get<double>();
    if (jt.contains("cert_margin_frac")) c.train.cert_margin_frac = jt["cert_margin_frac"].get<double>();
    if (jt.contains("lr_final_frac")) c.train.lr_final_frac = jt["lr_final_frac"].get<double>();
    if (jt.contains("pretrain_iters")) c.train.pretrain_iters = jt["pretrain_iters"].get<int>();
    if (jt.contains("pretrain_lr")) c.train.pretrain_lr = jt["pretrain_lr"].get<double>();
    if (jt.contains("pretrain_batch")) c.train.pretrain_batch = jt["pretrain_batch"].get<int>();
    if (jt.contains("stall_rel_tol")) c.train.stall_rel_tol = jt["stall_rel_tol"].get<double>();
    if (jt.contains("stall_iters")) c.train.stall_iters = jt["stall_iters"].get<int>();
  }
  if (j.contains("certify")) {
    const auto& jc = j["certify"];
    reject_unknown(jc, {"rule", "origin_radius"}, "certify");
    if (jc.contains("rule")) c.train.rule = threshold_rule_from_string(jc["rule"].get<std::string>());
    if (jc.contains("origin_radius")) {
      if (jc["origin_radius"].is_string()) {
        if (jc["origin_radius"].get<std::string>() != "auto")
          throw ConfigError("config: certify.origin_radius is a number or \"auto\"");
        c.train.origin_radius.reset();
      } else {
        c.train.origin_radius = jc["origin_radius"].get<double>();
      }
    }
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("seed")) {
    c.seed = j["seed"].get<std::uint64_t>();
    c.train.seed = c.seed;
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["pendulum"] = {{"mass", pendulum.mass},       {"length", pendulum.length},
                   {"gravity", pendulum.gravity}, {"friction", pendulum.friction},
                   {"torque_limit", pendulum.torque_limit}, {"dt", pendulum.dt}};
  j["lqr"] = {{"q", dump_matrix(lqr_q)}, {"r", dump_matrix(lqr_r)}};
  j["domain"] = nlohmann::json::array();
  for (const auto& iv : domain) j["domain"].push_back({iv.lo, iv.hi});
  j["grid"] = {{"points_per_dim", grid_points}};
  j["oracle"] = {{"horizon", oracle_horizon}, {"conv_radius", oracle_conv_radius}};
  j["network"] = {{"widths", train.hidden},
                  {"activation", to_string(train.activation)},
                  {"eps", train.eps},
                  {"leaky_slope", train.leaky_slope}};
  j["train"] = {{"lambda", train.lambda},
                {"alpha", train.alpha},
                {"horizon", train.horizon},
                {"c_s", train.c_s},
                {"sgd_iters", train.sgd_iters},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"outer_iters", train.outer_iters},
                {"delta_frac", train.delta_frac},
                {"grad_clip", train.grad_clip},
                {"loss_margin_frac", train.loss_margin_frac},
                {"cert_margin_frac", train.cert_margin_frac},
                {"lr_final_frac", train.lr_final_frac},
                {"pretrain_iters", train.pretrain_iters},
                {"pretrain_lr", train.pretrain_lr},
                {"pretrain_batch", train.pretrain_batch},
                {"stall_rel_tol", train.stall_rel_tol},
                {"stall_iters", train.stall_iters}};
  j["certify"] = {{"rule", to_string(train.rule)}};
  if (train.origin_radius)
    j["certify"]["origin_radius"] = *train.origin_radius;
  else
    j["certify"]["origin_radius"] = "auto";
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  return j;
}

Experiment make_experiment(const ExperimentConfig& config) {
  config.validate();
  Experiment exp;
  auto [a, b] = linearize_discretize(config.pendulum);
  exp.lqr = solve_lqr(a, b, config.lqr_q, config.lqr_r);
  exp.policy.gain = -exp.lqr.k;  // u = K x with K the stabilizing gain
  exp.policy.torque_limit = config.pendulum.torque_limit;
  exp.system = make_pendulum_system(config.pendulum, exp.policy, config.domain);
  exp.grid = build_grid(config.domain, config.grid_points);
  return exp;
}

}  // namespace roa
