#include "roacert/lyapunov.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace roa {

std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "leaky_relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  throw std::invalid_argument("unknown activation: " + s);
}

int structured_rows(int in_dim) { return (in_dim + 2) / 2; }  // ceil((d+1)/2)

Matrix assemble_weight(const StructuredLayer& layer) {
  if (layer.out_dim() < layer.in_dim())
    throw std::invalid_argument("assemble_weight: layer must not decrease dimension");
  const int d = layer.in_dim();
  Matrix w(layer.out_dim(), d);
  w.topRows(d) = layer.g1.transpose() * layer.g1 + layer.eps * Matrix::Identity(d, d);
  if (layer.g2.rows() > 0) w.bottomRows(layer.g2.rows()) = layer.g2;
  return w;
}

namespace {

inline double act_scalar(Activation a, double slope, double z) {
  return a == Activation::Tanh ? std::tanh(z) : (z >= 0.0 ? z : slope * z);
}

void act_inplace(Activation a, double slope, Matrix* m) {
  if (a == Activation::Tanh) {
    *m = m->array().tanh();
  } else {
    *m = m->array().max(0.0) + slope * m->array().min(0.0);
  }
}

// derivative of the activation given pre-activation z and post-activation y
Matrix act_derivative(Activation a, double slope, const Matrix& z, const Matrix& y) {
  if (a == Activation::Tanh) return (1.0 - y.array().square()).matrix();
  return (z.array() >= 0.0).select(Matrix::Ones(z.rows(), z.cols()), slope * Matrix::Ones(z.rows(), z.cols()));
}

double act_lipschitz(Activation a, double slope) {
  return a == Activation::Tanh ? 1.0 : std::max(1.0, slope);
}

}  // namespace

LyapunovNet::LyapunovNet(const std::vector<int>& dims, Activation act, double eps,
                         double leaky_slope) {
  if (dims.size() < 2) throw std::invalid_argument("LyapunovNet: need at least one layer");
  if (!(eps > 0)) throw std::invalid_argument("LyapunovNet: eps must be positive");
  if (act == Activation::LeakyRelu && !(leaky_slope > 0))
    throw std::invalid_argument("LyapunovNet: leaky slope must be positive");
  input_dim_ = dims[0];
  for (std::size_t l = 1; l < dims.size(); ++l) {
    if (dims[l] < dims[l - 1])
      throw std::invalid_argument("LyapunovNet: layer dimensions must not decrease");
    StructuredLayer layer;
    layer.g1 = Matrix::Zero(structured_rows(dims[l - 1]), dims[l - 1]);
    layer.g2 = Matrix::Zero(dims[l] - dims[l - 1], dims[l - 1]);
    layer.eps = eps;
    layer.act = act;
    layer.leaky_slope = leaky_slope;
    layers_.push_back(std::move(layer));
  }
}

void LyapunovNet::init_random(Rng& rng) {
  for (auto& layer : layers_) {
    double s = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
    for (Eigen::Index i = 0; i < layer.g1.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g1.cols(); ++j) layer.g1(i, j) = rng.uniform(-s, s);
    for (Eigen::Index i = 0; i < layer.g2.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g2.cols(); ++j) layer.g2(i, j) = rng.uniform(-s, s);
  }
  ++version_;
}

const std::vector<Matrix>& LyapunovNet::weights() const {
  if (weights_version_ != version_) {
    weights_cache_.clear();
    weights_cache_.reserve(layers_.size());
    for (const auto& layer : layers_) weights_cache_.push_back(assemble_weight(layer));
    weights_version_ = version_;
  }
  return weights_cache_;
}

double LyapunovNet::value(const State& x) const {
  Vector y = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = weights()[l] * y;
    y.resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      y[i] = act_scalar(layers_[l].act, layers_[l].leaky_slope, z[i]);
  }
  return y.squaredNorm();
}

Vector LyapunovNet::values(const Matrix& pts) const {
  Matrix y = pts;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = weights()[l] * y;
    act_inplace(layers_[l].act, layers_[l].leaky_slope, &z);
    y = std::move(z);
  }
  return y.colwise().squaredNorm().transpose();
}

LyapunovNet::Forward LyapunovNet::forward(const Matrix& pts) const {
  Forward f;
  f.y.resize(layers_.size() + 1);
  f.z.resize(layers_.size() + 1);
  f.y[0] = pts;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    f.z[l + 1] = weights()[l] * f.y[l];
    f.y[l + 1] = f.z[l + 1];
    act_inplace(layers_[l].act, layers_[l].leaky_slope, &f.y[l + 1]);
  }
  f.v = f.y.back().colwise().squaredNorm().transpose();
  return f;
}

void LyapunovNet::Gradient::set_zero() {
  for (auto& m : g1) m.setZero();
  for (auto& m : g2) m.setZero();
}

double LyapunovNet::Gradient::squared_norm() const {
  double s = 0.0;
  for (const auto& m : g1) s += m.squaredNorm();
  for (const auto& m : g2) s += m.squaredNorm();
  return s;
}

void LyapunovNet::Gradient::scale(double s) {
  for (auto& m : g1) m *= s;
  for (auto& m : g2) m *= s;
}

LyapunovNet::Gradient LyapunovNet::zero_gradient() const {
  Gradient g;
  for (const auto& layer : layers_) {
    g.g1.push_back(Matrix::Zero(layer.g1.rows(), layer.g1.cols()));
    g.g2.push_back(Matrix::Zero(layer.g2.rows(), layer.g2.cols()));
  }
  return g;
}

void LyapunovNet::backward(const Forward& fwd, const Vector& seed, Gradient* grad) const {
  const auto n_layers = layers_.size();
  // d(sum seed_i v_i)/dy_last = 2 * y_last * diag(seed)
  Matrix d = 2.0 * fwd.y[n_layers] * seed.asDiagonal();
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = layers_[l];
    Matrix dz = d.cwiseProduct(act_derivative(layer.act, layer.leaky_slope, fwd.z[l + 1], fwd.y[l + 1]));
    Matrix dw = dz * fwd.y[l].transpose();
    // W = [G1^T G1 + eps I; G2]: the top-block gradient dT maps back to G1 as
    // G1 (dT + dT^T); the bottom block is G2's gradient directly.
    const int din = layer.in_dim();
    Matrix dt = dw.topRows(din);
    grad->g1[l] += layer.g1 * (dt + dt.transpose());
    if (layer.g2.rows() > 0) grad->g2[l] += dw.bottomRows(layer.g2.rows());
    if (l > 0) d = weights()[l].transpose() * dz;
  }
}

Vector LyapunovNet::flat_params() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.g1.size() + layer.g2.size();
  Vector theta(n);
  Eigen::Index at = 0;
  for (const auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.g1.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g1.cols(); ++j) theta[at++] = layer.g1(i, j);
    for (Eigen::Index i = 0; i < layer.g2.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g2.cols(); ++j) theta[at++] = layer.g2(i, j);
  }
  return theta;
}

void LyapunovNet::set_flat_params(const Vector& theta) {
  Eigen::Index at = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index i = 0; i < layer.g1.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g1.cols(); ++j) layer.g1(i, j) = theta[at++];
    for (Eigen::Index i = 0; i < layer.g2.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.g2.cols(); ++j) layer.g2(i, j) = theta[at++];
  }
  if (at != theta.size()) throw std::invalid_argument("set_flat_params: size mismatch");
  ++version_;
}

void LyapunovNet::apply_sgd(const Gradient& grad, double learning_rate) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].g1 -= learning_rate * grad.g1[l];
    if (layers_[l].g2.rows() > 0) layers_[l].g2 -= learning_rate * grad.g2[l];
  }
  ++version_;
}

void sgd_step(LyapunovNet& net, const LyapunovNet::Gradient& grad, double learning_rate) {
  if (!(learning_rate > 0)) throw std::invalid_argument("sgd_step: learning_rate must be positive");
  net.apply_sgd(grad, learning_rate);
}

nlohmann::json LyapunovNet::to_json() const {
  nlohmann::json j;
  j["input_dim"] = input_dim_;
  j["layers"] = nlohmann::json::array();
  for (const auto& layer : layers_) {
    nlohmann::json jl;
    jl["in_dim"] = layer.in_dim();
    jl["out_dim"] = layer.out_dim();
    jl["eps"] = layer.eps;
    jl["activation"] = to_string(layer.act);
    jl["leaky_slope"] = layer.leaky_slope;
    auto dump = [](const Matrix& m) {
      std::vector<double> flat(m.size());
      Eigen::Index at = 0;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index jx = 0; jx < m.cols(); ++jx) flat[at++] = m(i, jx);
      return flat;
    };
    jl["g1"] = dump(layer.g1);
    jl["g2"] = dump(layer.g2);
    j["layers"].push_back(jl);
  }
  return j;
}

LyapunovNet LyapunovNet::from_json(const nlohmann::json& j) {
  LyapunovNet net;
  net.input_dim_ = j.at("input_dim").get<int>();
  for (const auto& jl : j.at("layers")) {
    StructuredLayer layer;
    int din = jl.at("in_dim").get<int>();
    int dout = jl.at("out_dim").get<int>();
    layer.eps = jl.at("eps").get<double>();
    layer.act = activation_from_string(jl.at("activation").get<std::string>());
    layer.leaky_slope = jl.at("leaky_slope").get<double>();
    layer.g1 = Matrix::Zero(structured_rows(din), din);
    layer.g2 = Matrix::Zero(dout - din, din);
    auto load = [](const nlohmann::json& arr, Matrix* m) {
      if (static_cast<Eigen::Index>(arr.size()) != m->size())
        throw std::invalid_argument("network file: matrix size mismatch");
      Eigen::Index at = 0;
      for (Eigen::Index i = 0; i < m->rows(); ++i)
        for (Eigen::Index jx = 0; jx < m->cols(); ++jx) (*m)(i, jx) = arr[at++].get<double>();
    };
    load(jl.at("g1"), &layer.g1);
    load(jl.at("g2"), &layer.g2);
    net.layers_.push_back(std::move(layer));
  }
  ++net.version_;
  return net;
}

LossValue loss_and_gradient(const LyapunovNet& net, const Matrix& states, const Vector& labels,
                            const Matrix& next_states, const LossParams& params,
                            LyapunovNet::Gradient* grad) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw std::invalid_argument("loss_and_gradient: empty batch");
  if (!(params.c_s > 0) || !(params.lambda > 0) || !(params.delta > 0))
    throw std::invalid_argument("loss_and_gradient: c_s, lambda, delta must be positive");

  auto fwd_x = net.forward(states);
  auto fwd_f = net.forward(next_states);

  LossValue loss;
  Vector seed_x = Vector::Zero(n);
  Vector seed_f = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = labels[i];
    const double vx = fwd_x.v[i];
    const double vf = fwd_f.v[i];
    const double cls = -y * (params.c_s - vx);
    if (cls > 0.0) {
      loss.classifier += cls;
      seed_x[i] += y;
    }
    if (y > 0.0) {
      const double denom = vx + params.delta;
      const double slack = vf - vx + params.margin_frac * denom;
      if (slack > 0.0) {
        loss.decrease += params.lambda * slack / denom;
        seed_f[i] += params.lambda / denom;
        // quotient rule: d/dvx [slack/denom]
        seed_x[i] += params.lambda * ((params.margin_frac - 1.0) / denom - slack / (denom * denom));
      }
    }
    if (!std::isfinite(loss.classifier) || !std::isfinite(loss.decrease)) {
      std::ostringstream msg;
      msg << "loss_and_gradient: non-finite loss at sample " << i;
      throw std::runtime_error(msg.str());
    }
  }
  loss.total = loss.classifier + loss.decrease;

  if (grad != nullptr) {
    net.backward(fwd_x, seed_x, grad);
    net.backward(fwd_f, seed_f, grad);
  }
  return loss;
}

double spectral_norm(const Matrix& w, int max_iters, double rel_tol) {
  if (w.size() == 0) return 0.0;
  // ramped start so it cannot be exactly orthogonal to the top singular vector
  Vector v(w.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
  v.normalize();
  double sigma = 0.0;
  for (int i = 0; i < max_iters; ++i) {
    Vector next = w.transpose() * (w * v);
    double nn = next.norm();
    if (!(nn > 0.0)) return 0.0;  // zero matrix
    next /= nn;
    double est = std::sqrt(nn);
    if (!std::isfinite(est)) throw std::runtime_error("spectral_norm: power iteration diverged");
    if (i > 0 && std::abs(est - sigma) <= rel_tol * std::max(est, 1e-300)) {
      return est;
    }
    sigma = est;
    v = std::move(next);
  }
  return sigma;
}

double lipschitz_feature_bound(const LyapunovNet& net) {
  double p = 1.0;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    p *= spectral_norm(net.weights()[l]) * act_lipschitz(layer.act, layer.leaky_slope);
  }
  return p;
}

double lipschitz_bound_candidate(const LyapunovNet& net, const Domain& domain) {
  double l_phi = lipschitz_feature_bound(net);
  return 2.0 * l_phi * l_phi * max_norm_over(domain);
}

double NetCandidate::feature_bound() const {
  if (l_phi_version_ != net_->version()) {
    l_phi_ = lipschitz_feature_bound(*net_);
    l_phi_version_ = net_->version();
  }
  return l_phi_;
}

double NetCandidate::lipschitz_bound(const Domain& domain) const {
  double l_phi = feature_bound();
  return 2.0 * l_phi * l_phi * max_norm_over(domain);
}

double NetCandidate::local_lipschitz(const State& x, double v_at_x, double radius) const {
  // |v(x') - v(x)| <= L_phi ||x'-x|| (||phi(x')|| + ||phi(x)||)
  //                <= L_phi (2 sqrt(v(x)) + L_phi r) ||x'-x||   on B(x, r)
  (void)x;
  double l_phi = feature_bound();
  return l_phi * (2.0 * std::sqrt(std::max(v_at_x, 0.0)) + l_phi * radius);
}

QuadraticCandidate::QuadraticCandidate(Matrix p) : p_(std::move(p)) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(p_);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("QuadraticCandidate: P must be positive-definite");
  p_norm_ = es.eigenvalues().cwiseAbs().maxCoeff();
}

double QuadraticCandidate::value(const State& x) const { return x.dot(p_ * x); }

Vector QuadraticCandidate::values(const Matrix& pts) const {
  return (pts.array() * (p_ * pts).array()).colwise().sum().transpose();
}

double QuadraticCandidate::lipschitz_bound(const Domain& domain) const {
  return 2.0 * p_norm_ * max_norm_over(domain);
}

double QuadraticCandidate::local_lipschitz(const State& x, double v_at_x, double radius) const {
  (void)v_at_x;
  return 2.0 * (p_ * x).norm() + p_norm_ * radius;
}

double value_quadratic(const Matrix& p, const State& x) { return x.dot(p * x); }

}  // namespace roa
