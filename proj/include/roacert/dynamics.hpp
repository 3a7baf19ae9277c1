#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "roacert/common.hpp"

namespace roa {

// Inverted pendulum around the upright equilibrium:
//   inertia * thdd = m*g*l*sin(th) - friction*thd + u,   inertia = m*l^2
// State is (angle [rad], angular velocity [rad/s]); the angle is not wrapped,
// so divergence past the upright cell stays visible to the oracle.
struct PendulumParams {
  double mass = 0.25;           // kg
  double length = 0.5;          // m
  double gravity = 9.81;        // m/s^2
  double friction = 0.1;        // N*m*s
  double torque_limit = 0.613125;  // N*m, binds well inside the domain
  double dt = 0.01;             // s

  double inertia() const { return mass * length * length; }
  double gravity_torque() const { return mass * gravity * length; }
  void validate() const;
};

// u = clamp(gain * x, -torque_limit, torque_limit)
struct LinearPolicy {
  Eigen::RowVectorXd gain;
  double torque_limit = 0.0;

  double control(const State& x) const;
};

// Deterministic discrete-time closed-loop map with a Lipschitz bound valid on
// `domain`. The equilibrium sits at the origin.
struct ClosedLoopSystem {
  std::function<State(const State&)> step;
  Domain domain;
  double lipschitz = 0.0;
  std::string name;
};

struct LqrSolution {
  Matrix p;  // cost-to-go, symmetric positive-definite
  Matrix k;  // gain, u = -k x stabilizes x+ = A x + B u
  Matrix q;
  Matrix r;
  double residual = 0.0;
  double closed_loop_radius = 0.0;  // spectral radius of A - B k
};

State pendulum_derivative(const State& x, double u, const PendulumParams& params);

State step_closed_loop(const State& x, const LinearPolicy& policy, const PendulumParams& params);

// Euler-consistent pair: A = I + dt*Ac, B = dt*Bc with Ac, Bc the Jacobians
// of the continuous dynamics at the origin.
std::pair<Matrix, Matrix> linearize_discretize(const PendulumParams& params);

// Fixed-point iteration on the discrete Riccati recursion, run until the DARE
// residual drops below `tol`.
LqrSolution solve_lqr(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                      double tol = 1e-10, int max_iters = 2000000);

double dare_residual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                     const Matrix& p);

double spectral_radius(const Matrix& m);

// Upper bound on the Lipschitz constant of the closed-loop pendulum step over
// a rectangular domain. Uses the analytic step Jacobian; the torque clamp
// enters as a subdifferential slope in {0, 1} and cos(theta) is relaxed to its
// exact range, where the induced 2-norm is convex and peaks at an endpoint.
double lipschitz_bound_system(const LinearPolicy& policy, const PendulumParams& params,
                              const Domain& domain);

ClosedLoopSystem make_pendulum_system(const PendulumParams& params, const LinearPolicy& policy,
                                      Domain domain = {{-M_PI, M_PI}, {-2.0 * M_PI, 2.0 * M_PI}});

// x+ = A x restricted to `domain`; Lipschitz bound is ||A||_2.
ClosedLoopSystem make_linear_system(const Matrix& a, Domain domain);

}  // namespace roa
