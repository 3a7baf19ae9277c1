#include "roacert/dynamics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace roa {

void PendulumParams::validate() const {
  if (!(mass > 0) || !(length > 0) || !(gravity > 0) || !(dt > 0))
    throw std::invalid_argument("pendulum: mass, length, gravity, dt must be positive");
  if (!(friction >= 0)) throw std::invalid_argument("pendulum: friction must be nonnegative");
  if (!(torque_limit > 0)) throw std::invalid_argument("pendulum: torque_limit must be positive");
}

double LinearPolicy::control(const State& x) const {
  double u = gain * x;
  return std::clamp(u, -torque_limit, torque_limit);
}

State pendulum_derivative(const State& x, double u, const PendulumParams& params) {
  if (!x.allFinite() || !std::isfinite(u))
    throw std::domain_error("pendulum_derivative: non-finite input");
  State dx(2);
  dx[0] = x[1];
  dx[1] = (params.gravity_torque() * std::sin(x[0]) - params.friction * x[1] + u) / params.inertia();
  return dx;
}

State step_closed_loop(const State& x, const LinearPolicy& policy, const PendulumParams& params) {
  double u = policy.control(x);
  assert(std::abs(u) <= policy.torque_limit);
  return x + params.dt * pendulum_derivative(x, u, params);
}

std::pair<Matrix, Matrix> linearize_discretize(const PendulumParams& params) {
  Matrix ac(2, 2);
  ac << 0.0, 1.0,
        params.gravity / params.length, -params.friction / params.inertia();
  Matrix bc(2, 1);
  bc << 0.0, 1.0 / params.inertia();
  return {Matrix::Identity(2, 2) + params.dt * ac, params.dt * bc};
}

double dare_residual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                     const Matrix& p) {
  Matrix btpa = b.transpose() * p * a;
  Matrix res = a.transpose() * p * a - p -
               btpa.transpose() * (r + b.transpose() * p * b).ldlt().solve(btpa) + q;
  return res.norm();
}

double spectral_radius(const Matrix& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

LqrSolution solve_lqr(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                      double tol, int max_iters) {
  Matrix p = q;
  bool converged = false;
  for (int i = 0; i < max_iters; ++i) {
    Matrix btpa = b.transpose() * p * a;
    Matrix next = a.transpose() * p * a -
                  btpa.transpose() * (r + b.transpose() * p * b).ldlt().solve(btpa) + q;
    p = 0.5 * (next + next.transpose());  // keep symmetric under roundoff
    if (dare_residual(a, b, q, r, p) <= tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw std::runtime_error("solve_lqr: Riccati recursion did not converge");

  LqrSolution sol;
  sol.p = p;
  sol.k = (r + b.transpose() * p * b).ldlt().solve(b.transpose() * p * a);
  sol.q = q;
  sol.r = r;
  sol.residual = dare_residual(a, b, q, r, p);
  sol.closed_loop_radius = spectral_radius(a - b * sol.k);
  if (sol.closed_loop_radius >= 1.0)
    throw std::runtime_error("solve_lqr: closed loop is not stable");
  return sol;
}

namespace {

double norm2(const Matrix& m) {
  return Eigen::JacobiSVD<Matrix>(m).singularValues()[0];
}

// Range of cos over [lo, hi].
std::pair<double, double> cos_range(double lo, double hi) {
  double cmin = std::min(std::cos(lo), std::cos(hi));
  double cmax = std::max(std::cos(lo), std::cos(hi));
  // interior extrema at multiples of pi
  double k0 = std::ceil(lo / M_PI);
  for (double k = k0; k * M_PI <= hi; k += 1.0) {
    double c = std::cos(k * M_PI);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }
  return {cmin, cmax};
}

}  // namespace

double lipschitz_bound_system(const LinearPolicy& policy, const PendulumParams& params,
                              const Domain& domain) {
  // step Jacobian: I + dt*(d/dx)[om, (mgl sin th - beta om + u)/inertia]
  //              = m0 + cos(th)*m1 + s*m2, saturation slope s in {0,1}
  Matrix m0(2, 2);
  m0 << 1.0, params.dt,
        0.0, 1.0 - params.dt * params.friction / params.inertia();
  Matrix m1 = Matrix::Zero(2, 2);
  m1(1, 0) = params.dt * params.gravity / params.length;
  Matrix m2(2, 2);
  m2.row(0).setZero();
  m2.row(1) = (params.dt / params.inertia()) * policy.gain;

  auto [cmin, cmax] = cos_range(domain[0].lo, domain[0].hi);
  double bound = 0.0;
  for (double c : {cmin, cmax})
    for (double s : {0.0, 1.0})
      bound = std::max(bound, norm2(m0 + c * m1 + s * m2));
  return bound;
}

ClosedLoopSystem make_pendulum_system(const PendulumParams& params, const LinearPolicy& policy,
                                      Domain domain) {
  params.validate();
  ClosedLoopSystem sys;
  sys.domain = std::move(domain);
  sys.lipschitz = lipschitz_bound_system(policy, params, sys.domain);
  sys.name = "pendulum";
  sys.step = [params, policy](const State& x) { return step_closed_loop(x, policy, params); };
  return sys;
}

ClosedLoopSystem make_linear_system(const Matrix& a, Domain domain) {
  ClosedLoopSystem sys;
  sys.domain = std::move(domain);
  sys.lipschitz = norm2(a);
  sys.name = "linear";
  sys.step = [a](const State& x) { return State(a * x); };
  return sys;
}

}  // namespace roa
