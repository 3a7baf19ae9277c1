#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "roacert/certify.hpp"
#include "roacert/common.hpp"
#include "roacert/dynamics.hpp"
#include "roacert/lyapunov.hpp"
#include "roacert/oracle.hpp"

namespace roa {

struct TrainConfig {
  std::vector<int> hidden = {64, 64, 64};  // layer widths of the candidate net
  Activation activation = Activation::Tanh;
  double eps = 1e-2;
  double leaky_slope = 0.01;

  double lambda = 1000.0;       // Lagrange multiplier on the decrease penalty
  double alpha = 1.25;          // level-set expansion multiplier
  int horizon = 200;            // forward-simulation steps for labeling
  double c_s = 1.0;             // prescribed level delineating the safe set
  int sgd_iters = 10;           // gradient steps per outer iteration
  int batch_size = 512;
  double learning_rate = 5e-3;
  int outer_iters = 20;
  std::uint64_t seed = 0;

  double delta_frac = 1e-3;     // delta = delta_frac * c_s in the decrease loss
  double grad_clip = 1.0;       // global-norm clip on the mean-scaled gradient; 0 disables
  double loss_margin_frac = 4e-3;  // stability margin trained into the decrease constraint
  double cert_margin_frac = 1e-3;  // plain-rule certification margin (< loss margin)
  double lr_final_frac = 1.0;   // geometric learning-rate anneal to lr * frac at the last iteration
  ThresholdRule rule = ThresholdRule::Plain;
  std::optional<double> origin_radius;  // nullopt: 2 * grid fill distance
  int pretrain_iters = 3000;    // supervised fit to a certified quadratic; 0 disables
  double pretrain_lr = 0.05;
  int pretrain_batch = 256;
  double stall_rel_tol = 1e-3;  // |c_{k+1}-c_k|/c_k below this ...
  int stall_iters = 3;          // ... for this many consecutive iterations stops early

  void validate() const;
};

struct LabeledBatch {
  Matrix states;       // d x N
  Vector labels;       // +1 trapped within the horizon, -1 otherwise
  Matrix next_states;  // one-step image f(x), consumed by the training loss
  Matrix endpoints;    // state where the simulated trajectory ended
  std::vector<int> trap_times;  // -1 for unsafe samples
};

struct IterationRecord {
  int iter = 0;
  double level = 0.0;
  double coverage = 0.0;         // fraction of the oracle ROA, 0 if no mask given
  double classifier_loss = 0.0;  // summed over the iteration's batches
  double decrease_loss = 0.0;
  double seconds = 0.0;          // wall time; excluded from CSV to keep runs replayable
  long false_positives = -1;     // soundness audit per iteration, -1 if no mask given
  bool sampling_fallback = false;
  bool empty_certificate = false;
};

struct TrainHistory {
  std::vector<IterationRecord> records;
};

struct TrainResult {
  LyapunovNet net;
  Certificate certificate;
  TrainHistory history;
};

// Raised when no nonzero initial level can be certified after the allowed
// re-initialization attempts.
struct StartupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rejection-samples batch_size states with v(x) <= alpha * c_k, uniform over
// the domain. Falls back to plain uniform sampling (flag set) once the
// observed acceptance rate drops below 1e-3.
Matrix sample_gap_batch(const Candidate& candidate, double c_k, double alpha, int batch_size,
                        const Domain& domain, Rng& rng, bool* fallback);

// y = +1 iff the trajectory is inside the domain with v(x_t) <= c_k at some
// t in {0..horizon} (it is then trapped in the certified level set);
// simulation stops early once the state leaves twice the domain box.
LabeledBatch label_batch(const Matrix& states, const ClosedLoopSystem& system,
                         const Candidate& candidate, double c_k, int horizon);

// Relative-error fit of the network to scale * quadratic; used to start
// training from a candidate that already certifies a nonzero level.
void pretrain_to_quadratic(LyapunovNet& net, const QuadraticCandidate& target, double scale,
                           int iters, double learning_rate, int batch_size, const Domain& domain,
                           Rng& rng);

struct TrainState {
  LyapunovNet* net = nullptr;
  double level = 0.0;    // current certified level c_k
  double initial_level = 0.0;
  int iter = 0;          // outer iteration counter, drives the lr schedule
};

// One outer iteration: sgd_iters gradient steps, each on a freshly sampled
// and labeled gap batch, followed by recertification.
IterationRecord outer_iteration(TrainState& state, const TrainConfig& config,
                                const ClosedLoopSystem& system, const Grid& grid,
                                const GridFlow& flow, Rng& rng, const RoaMask* mask);

// Full training loop: initialize (optionally pretrain), certify c_0, then
// outer iterations until outer_iters or the level stalls. `mask` only feeds
// the per-iteration coverage/audit metrics; pass nullptr to skip them.
TrainResult run_training(const TrainConfig& config, const ClosedLoopSystem& system,
                         const Grid& grid, const RoaMask* mask,
                         const QuadraticCandidate* pretrain_target);

// iter,c_k,coverage_fraction,classifier_loss,decrease_loss,seconds
// The seconds column is written as 0 so equal-seed runs stay byte-identical.
void write_training_curve_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace roa
