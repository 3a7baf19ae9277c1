#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "roacert/common.hpp"

namespace roa {

enum class Activation { Tanh, LeakyRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// One layer of the structured network. The effective weight is
//   W = [ G1^T G1 + eps*I ]   (in_dim rows, positive-definite)
//       [ G2              ]   (out_dim - in_dim rows)
// so W always has full column rank and sigma_min(W) >= eps. Output dimension
// must not decrease, otherwise W would pick up a nullspace.
struct StructuredLayer {
  Matrix g1;  // q x in_dim, q = ceil((in_dim + 1) / 2)
  Matrix g2;  // (out_dim - in_dim) x in_dim
  double eps = 1e-2;
  Activation act = Activation::Tanh;
  double leaky_slope = 0.01;

  int in_dim() const { return static_cast<int>(g1.cols()); }
  int out_dim() const { return in_dim() + static_cast<int>(g2.rows()); }
};

// Minimal row count for G1 such that every entry of G1^T G1 is a free
// parameter: q = ceil((d + 1) / 2).
int structured_rows(int in_dim);

Matrix assemble_weight(const StructuredLayer& layer);

// Candidate Lyapunov function. Both implementations are interchangeable for
// certification; only the network supports training.
class Candidate {
 public:
  virtual ~Candidate() = default;
  virtual double value(const State& x) const = 0;
  // pts is d x N, one state per column.
  virtual Vector values(const Matrix& pts) const = 0;
  virtual double lipschitz_bound(const Domain& domain) const = 0;
  // Sound Lipschitz bound for the value on the ball B(x, radius);
  // v_at_x = value(x) is passed in because callers already have it.
  virtual double local_lipschitz(const State& x, double v_at_x, double radius) const = 0;
  virtual std::string name() const = 0;
};

// v(x) = phi(x)^T phi(x) with phi a feed-forward net of StructuredLayers.
// Positive-definiteness holds for every parameter value: each layer maps only
// zero to zero, so v(0) = 0 and v(x) > 0 elsewhere.
class LyapunovNet {
 public:
  LyapunovNet() = default;
  // dims = {input_dim, width_1, ..., width_L}, nondecreasing.
  LyapunovNet(const std::vector<int>& dims, Activation act, double eps,
              double leaky_slope = 0.01);

  // G entries i.i.d. uniform in [-1/sqrt(in_dim), 1/sqrt(in_dim)].
  void init_random(Rng& rng);

  double value(const State& x) const;
  Vector values(const Matrix& pts) const;

  int input_dim() const { return input_dim_; }
  const std::vector<StructuredLayer>& layers() const { return layers_; }
  const std::vector<Matrix>& weights() const;  // assembled, cached
  std::uint64_t version() const { return version_; }

  // Activations kept for the backward pass; y[0] is the input batch and
  // y[l], z[l] the post-/pre-activation outputs of layer l (1-based).
  struct Forward {
    std::vector<Matrix> y;
    std::vector<Matrix> z;
    Vector v;
  };
  Forward forward(const Matrix& pts) const;

  struct Gradient {
    std::vector<Matrix> g1;
    std::vector<Matrix> g2;
    void set_zero();
    double squared_norm() const;
    void scale(double s);
  };
  Gradient zero_gradient() const;

  // Accumulates d(sum_i seed_i * v_i)/d{G1,G2} into *grad.
  void backward(const Forward& fwd, const Vector& seed, Gradient* grad) const;

  // theta as one flat vector (layer order, G1 then G2, row-major); used by
  // serialization round-trips and finite-difference checks.
  Vector flat_params() const;
  void set_flat_params(const Vector& theta);
  void apply_sgd(const Gradient& grad, double learning_rate);

  nlohmann::json to_json() const;
  static LyapunovNet from_json(const nlohmann::json& j);

 private:
  std::vector<StructuredLayer> layers_;
  int input_dim_ = 0;
  std::uint64_t version_ = 0;
  mutable std::vector<Matrix> weights_cache_;
  mutable std::uint64_t weights_version_ = ~0ull;
};

// Perceptron classifier loss plus the Lagrangian decrease penalty,
//   sum_i max(0, -y_i (c_s - v(x_i)))
//        + lambda * (y_i+1)/2 * max(0, v(f(x_i)) - v(x_i)) / (v(x_i) + delta)
// with delta > 0 guarding the division at the origin.
struct LossParams {
  double c_s = 1.0;
  double lambda = 1000.0;
  double delta = 1e-3;
  // Optional stability margin: the decrease term activates once
  // v(f(x)) - v(x) + margin_frac * (v(x) + delta) > 0, so satisfied
  // constraints keep a buffer instead of sitting at the boundary.
  // Zero recovers the plain penalty.
  double margin_frac = 0.0;
};

struct LossValue {
  double total = 0.0;
  double classifier = 0.0;
  double decrease = 0.0;
};

// states/next_states are d x N, labels in {-1, +1}. If grad is non-null the
// gradient is accumulated through both v(x) and v(f(x)).
LossValue loss_and_gradient(const LyapunovNet& net, const Matrix& states, const Vector& labels,
                            const Matrix& next_states, const LossParams& params,
                            LyapunovNet::Gradient* grad);

void sgd_step(LyapunovNet& net, const LyapunovNet::Gradient& grad, double learning_rate);

// Largest singular value by power iteration on W^T W; matches the
// deterministic start vector across runs.
double spectral_norm(const Matrix& w, int max_iters = 100, double rel_tol = 1e-10);

// Product of layer spectral norms and activation Lipschitz constants.
double lipschitz_feature_bound(const LyapunovNet& net);

// L_v = 2 * L_phi^2 * max_{x in domain} ||x||, valid because phi(0) = 0.
double lipschitz_bound_candidate(const LyapunovNet& net, const Domain& domain);

class NetCandidate : public Candidate {
 public:
  explicit NetCandidate(const LyapunovNet* net) : net_(net) {}
  double value(const State& x) const override { return net_->value(x); }
  Vector values(const Matrix& pts) const override { return net_->values(pts); }
  double lipschitz_bound(const Domain& domain) const override;
  double local_lipschitz(const State& x, double v_at_x, double radius) const override;
  std::string name() const override { return "nn"; }
  double feature_bound() const;  // cached L_phi

 private:
  const LyapunovNet* net_;
  mutable double l_phi_ = -1.0;
  mutable std::uint64_t l_phi_version_ = ~0ull;
};

class QuadraticCandidate : public Candidate {
 public:
  explicit QuadraticCandidate(Matrix p);
  double value(const State& x) const override;
  Vector values(const Matrix& pts) const override;
  double lipschitz_bound(const Domain& domain) const override;
  double local_lipschitz(const State& x, double v_at_x, double radius) const override;
  std::string name() const override { return "lqr"; }
  const Matrix& p() const { return p_; }

 private:
  Matrix p_;
  double p_norm_ = 0.0;
};

double value_quadratic(const Matrix& p, const State& x);

}  // namespace roa
