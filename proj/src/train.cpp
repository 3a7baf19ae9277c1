#include "roacert/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace roa {

void TrainConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("train: need at least one hidden layer");
  for (std::size_t i = 0; i < hidden.size(); ++i)
    if (hidden[i] < (i ? hidden[i - 1] : 1))
      throw std::invalid_argument("train: layer widths must not decrease");
  if (!(eps > 0)) throw std::invalid_argument("train: eps must be positive");
  if (!(lambda > 0)) throw std::invalid_argument("train: lambda must be positive");
  if (!(alpha > 1)) throw std::invalid_argument("train: alpha must exceed 1");
  if (horizon < 1) throw std::invalid_argument("train: horizon must be >= 1");
  if (!(c_s > 0)) throw std::invalid_argument("train: c_s must be positive");
  if (sgd_iters < 1 || outer_iters < 1) throw std::invalid_argument("train: iteration counts must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(delta_frac > 0)) throw std::invalid_argument("train: delta_frac must be positive");
  if (grad_clip < 0) throw std::invalid_argument("train: grad_clip must be >= 0");
  if (loss_margin_frac < 0 || cert_margin_frac < 0)
    throw std::invalid_argument("train: margins must be >= 0");
  if (!(lr_final_frac > 0) || lr_final_frac > 1)
    throw std::invalid_argument("train: lr_final_frac must be in (0, 1]");
  if (origin_radius && *origin_radius < 0) throw std::invalid_argument("train: origin_radius must be >= 0");
  if (pretrain_iters < 0 || pretrain_batch < 1) throw std::invalid_argument("train: bad pretrain settings");
  if (!(stall_rel_tol > 0) || stall_iters < 1) throw std::invalid_argument("train: bad stall settings");
}

Matrix sample_gap_batch(const Candidate& candidate, double c_k, double alpha, int batch_size,
                        const Domain& domain, Rng& rng, bool* fallback) {
  if (!(c_k > 0))
    throw std::runtime_error("sample_gap_batch: certified level is zero; re-initialize the candidate");
  if (fallback) *fallback = false;
  const double cap = alpha * c_k;
  const int d = static_cast<int>(domain.size());
  Matrix batch(d, batch_size);
  int got = 0;
  long proposals = 0;
  constexpr long kRateWindow = 200000;
  bool rejecting = true;
  while (got < batch_size) {
    State x = rng.uniform_in(domain);
    if (rejecting) {
      ++proposals;
      if (candidate.value(x) <= cap) {
        batch.col(got++) = x;
      } else if (proposals >= kRateWindow &&
                 static_cast<double>(got) < 1e-3 * static_cast<double>(proposals)) {
        rejecting = false;
        if (fallback) *fallback = true;
      }
    } else {
      batch.col(got++) = x;
    }
  }
  return batch;
}

LabeledBatch label_batch(const Matrix& states, const ClosedLoopSystem& system,
                         const Candidate& candidate, double c_k, int horizon) {
  if (horizon < 1) throw std::invalid_argument("label_batch: horizon must be >= 1");
  const Eigen::Index n = states.cols();
  LabeledBatch out;
  out.states = states;
  out.labels = Vector::Constant(n, -1.0);
  out.next_states.resize(states.rows(), n);
  out.endpoints = states;
  out.trap_times.assign(static_cast<std::size_t>(n), -1);

  for (Eigen::Index i = 0; i < n; ++i)
    out.next_states.col(i) = system.step(states.col(i));

  // march all still-undecided trajectories together so the value evaluations
  // stay batched
  Matrix cur = states;
  std::vector<Eigen::Index> active(static_cast<std::size_t>(n));
  std::iota(active.begin(), active.end(), 0);
  for (int t = 0; t <= horizon && !active.empty(); ++t) {
    Matrix pts(states.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) pts.col(static_cast<Eigen::Index>(j)) = cur.col(active[j]);
    Vector v = candidate.values(pts);

    std::vector<Eigen::Index> next_active;
    next_active.reserve(active.size());
    for (std::size_t j = 0; j < active.size(); ++j) {
      const Eigen::Index i = active[j];
      const auto& x = pts.col(static_cast<Eigen::Index>(j));
      if (contains(system.domain, x) && v[static_cast<Eigen::Index>(j)] <= c_k) {
        out.labels[i] = 1.0;  // trapped in the certified level set
        out.trap_times[static_cast<std::size_t>(i)] = t;
        out.endpoints.col(i) = x;
        continue;
      }
      if (!x.allFinite() || !contains(system.domain, x, 2.0)) {
        out.endpoints.col(i) = x;  // left the representable region: unsafe
        continue;
      }
      if (t == horizon) {
        out.endpoints.col(i) = x;
        continue;
      }
      next_active.push_back(i);
    }
    if (t < horizon)
      for (Eigen::Index i : next_active) cur.col(i) = system.step(cur.col(i));
    active = std::move(next_active);
  }
  return out;
}

void pretrain_to_quadratic(LyapunovNet& net, const QuadraticCandidate& target, double scale,
                           int iters, double learning_rate, int batch_size, const Domain& domain,
                           Rng& rng) {
  if (!(scale > 0)) throw std::invalid_argument("pretrain_to_quadratic: scale must be positive");
  const int d = static_cast<int>(domain.size());
  const double guard = 1e-2;  // relative-error floor so the near-origin fit stays tight
  auto grad = net.zero_gradient();
  for (int it = 0; it < iters; ++it) {
    Matrix pts(d, batch_size);
    for (int j = 0; j < batch_size; ++j) pts.col(j) = rng.uniform_in(domain);
    Vector tgt = target.values(pts) / scale;
    auto fwd = net.forward(pts);
    Vector seed(batch_size);
    for (int j = 0; j < batch_size; ++j) {
      double w = 1.0 / ((tgt[j] + guard) * (tgt[j] + guard));
      seed[j] = 2.0 * w * (fwd.v[j] - tgt[j]) / static_cast<double>(batch_size);
    }
    grad.set_zero();
    net.backward(fwd, seed, &grad);
    double gn = std::sqrt(grad.squared_norm());
    if (gn > 1.0) grad.scale(1.0 / gn);
    // finish with a finer step so low-value regions fit tightly
    double lr = it * 4 < iters * 3 ? learning_rate : 0.2 * learning_rate;
    net.apply_sgd(grad, lr);
  }
}

namespace {

CertifyOptions certify_options(const TrainConfig& config, const ClosedLoopSystem& system,
                               const Grid& grid, const Candidate& candidate) {
  CertifyOptions opt;
  opt.rule = config.rule;
  opt.origin_radius = config.origin_radius.value_or(2.0 * grid.fill_distance);
  opt.margin_frac = config.cert_margin_frac;
  opt.margin_guard = config.delta_frac * config.c_s;
  if (config.rule == ThresholdRule::Global)
    opt.l_dv = compose_lipschitz(candidate.lipschitz_bound(system.domain), system.lipschitz);
  return opt;
}

}  // namespace

IterationRecord outer_iteration(TrainState& state, const TrainConfig& config,
                                const ClosedLoopSystem& system, const Grid& grid,
                                const GridFlow& flow, Rng& rng, const RoaMask* mask) {
  const auto t0 = std::chrono::steady_clock::now();
  IterationRecord rec;
  NetCandidate candidate(state.net);
  LossParams loss_params{config.c_s, config.lambda, config.delta_frac * config.c_s,
                         config.loss_margin_frac};

  double lr = config.learning_rate;
  if (config.lr_final_frac < 1.0 && config.outer_iters > 1) {
    double progress = static_cast<double>(state.iter) / static_cast<double>(config.outer_iters - 1);
    lr *= std::pow(config.lr_final_frac, std::min(progress, 1.0));
  }

  auto grad = state.net->zero_gradient();
  for (int s = 0; s < config.sgd_iters; ++s) {
    bool fallback = false;
    Matrix batch = sample_gap_batch(candidate, state.level, config.alpha, config.batch_size,
                                    system.domain, rng, &fallback);
    rec.sampling_fallback |= fallback;
    LabeledBatch labeled = label_batch(batch, system, candidate, state.level, config.horizon);

    grad.set_zero();
    LossValue loss = loss_and_gradient(*state.net, labeled.states, labeled.labels,
                                       labeled.next_states, loss_params, &grad);
    rec.classifier_loss += loss.classifier;
    rec.decrease_loss += loss.decrease;

    grad.scale(1.0 / static_cast<double>(config.batch_size));
    if (config.grad_clip > 0) {
      double gn = std::sqrt(grad.squared_norm());
      if (gn > config.grad_clip) grad.scale(config.grad_clip / gn);
    }
    sgd_step(*state.net, grad, lr);
  }
  ++state.iter;

  Certificate cert = largest_safe_level(candidate, system, grid, flow,
                                        certify_options(config, system, grid, candidate));
  if (cert.empty()) {
    rec.empty_certificate = true;
    state.level = state.initial_level;  // restart the growth from the initial estimate
  } else {
    state.level = cert.level;
  }
  rec.level = state.level;
  if (mask != nullptr) {
    rec.coverage = coverage_fraction(cert, *mask, grid, candidate);
    rec.false_positives = static_cast<long>(soundness_audit(cert, *mask, grid).false_positives);
    if (rec.false_positives > 0) {
      int shown = 0;
      for (auto idx : cert.certified) {
        if (mask->safe[idx] || shown >= 4) continue;
        auto col = static_cast<Eigen::Index>(idx);
        double vx = candidate.value(flow.points.col(col));
        double dv = candidate.value(flow.next_points.col(col)) - vx;
        std::fprintf(stderr, "  [audit] uncertified-in-truth point x=(%.4f, %.4f) v=%.6f dv=%.3e\n",
                     flow.points(0, col), flow.points(1, col), vx, dv);
        ++shown;
      }
    }
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

TrainResult run_training(const TrainConfig& config, const ClosedLoopSystem& system,
                         const Grid& grid, const RoaMask* mask,
                         const QuadraticCandidate* pretrain_target) {
  config.validate();
  Rng rng(config.seed);
  GridFlow flow = make_grid_flow(system, grid);
  const int d = static_cast<int>(system.domain.size());

  TrainResult result;
  Certificate initial_cert;
  constexpr int kInitAttempts = 3;
  std::vector<int> dims{d};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  for (int attempt = 0; attempt < kInitAttempts; ++attempt) {
    LyapunovNet net(dims, config.activation, config.eps, config.leaky_slope);
    net.init_random(rng);
    if (config.pretrain_iters > 0 && pretrain_target != nullptr) {
      // scale so the quadratic's own certified level maps to c_s
      CertifyOptions qopt;
      qopt.rule = ThresholdRule::Plain;
      qopt.origin_radius = config.origin_radius.value_or(2.0 * grid.fill_distance);
      Certificate qcert = largest_safe_level(*pretrain_target, system, grid, flow, qopt);
      double scale = qcert.level > 0 ? qcert.level / config.c_s : 1.0;
      pretrain_to_quadratic(net, *pretrain_target, scale, config.pretrain_iters,
                            config.pretrain_lr, config.pretrain_batch, system.domain, rng);
    }
    NetCandidate candidate(&net);
    initial_cert = largest_safe_level(candidate, system, grid, flow,
                                      certify_options(config, system, grid, candidate));
    if (!initial_cert.empty()) {
      result.net = std::move(net);
      break;
    }
    if (attempt == kInitAttempts - 1)
      throw StartupError("run_training: no nonzero initial level after 3 initializations");
  }

  TrainState state;
  state.net = &result.net;
  state.level = initial_cert.level;
  state.initial_level = initial_cert.level;

  NetCandidate candidate(&result.net);
  IterationRecord first;
  first.iter = 0;
  first.level = state.level;
  if (mask != nullptr) {
    first.coverage = coverage_fraction(initial_cert, *mask, grid, candidate);
    first.false_positives = static_cast<long>(soundness_audit(initial_cert, *mask, grid).false_positives);
  }
  result.history.records.push_back(first);

  int stalled = 0;
  for (int k = 1; k <= config.outer_iters; ++k) {
    double prev = state.level;
    IterationRecord rec = outer_iteration(state, config, system, grid, flow, rng, mask);
    rec.iter = k;
    result.history.records.push_back(rec);
    if (prev > 0 && std::abs(state.level - prev) / prev < config.stall_rel_tol)
      ++stalled;
    else
      stalled = 0;
    if (stalled >= config.stall_iters) break;
  }

  result.certificate = largest_safe_level(candidate, system, grid, flow,
                                          certify_options(config, system, grid, candidate));
  return result;
}

void write_training_curve_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "iter,c_k,coverage_fraction,classifier_loss,decrease_loss,seconds\n";
  char buf[64];
  for (const auto& r : history.records) {
    out << r.iter << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", r.level);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", r.coverage);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", r.classifier_loss);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", r.decrease_loss);
    out << buf << ",0\n";  // wall time is not replayable; see the run log
  }
}

}  // namespace roa
