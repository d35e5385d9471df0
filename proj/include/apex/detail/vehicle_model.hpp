#pragma once

// Scalar-generic single-track model. Instantiated with double for simulation
// and with ad::Var for reverse-mode differentiation in system identification,
// so both paths share one set of equations.

#include <array>
#include <cmath>

#include "apex/dynamics.hpp"
#include "apex/errors.hpp"

namespace apex::dynamics::model {

inline double value_of(double x) { return x; }

enum Index : std::size_t { kX = 0, kY, kYaw, kVx, kVy, kR, kDelta, kOmega };

template <class T>
using State = std::array<T, 8>;

template <class T>
struct Params {
  T m, Iz, lf, lr, R_w, mu;
  T Bf, Cf, Df, Ef;
  T Br, Cr, Dr, Er;
  T T_delta, T_omega, c_drag, c_roll;
  double delta_max, omega_max;
};

template <class T>
Params<T> lift(const VehicleParams& p) {
  return {T(p.m),       T(p.Iz),      T(p.lf),      T(p.lr),       T(p.R_w),     T(p.mu),
          T(p.front.B), T(p.front.C), T(p.front.D), T(p.front.E),  T(p.rear.B),  T(p.rear.C),
          T(p.rear.D),  T(p.rear.E),  T(p.T_delta), T(p.T_omega),  T(p.c_drag),  T(p.c_roll),
          p.delta_max,  p.omega_max};
}

template <class T>
T abs_of(const T& x) {
  return value_of(x) >= 0.0 ? x : T(-x);
}

template <class T>
T lower_bounded(const T& x, double floor) {
  return value_of(x) > floor ? x : T(floor);
}

// sin(C * atan(B x - E (B x - atan(B x))))
template <class T>
T magic_shape(const T& B, const T& C, const T& E, const T& x) {
  using std::atan;
  using std::sin;
  const T bx = B * x;
  return sin(C * atan(bx - E * (bx - atan(bx))));
}

// Friction-circle combination: the pure-slip curve is evaluated at the
// resultant slip sigma = |(kappa, alpha)| and distributed along the slip
// direction, so |F| = peak * D * |sin(...)| <= peak * D.
template <class T>
void combined_slip(const T& B, const T& C, const T& D, const T& E, const T& peak, const T& alpha,
                   const T& kappa, T& fx, T& fy) {
  using std::sqrt;
  const T s2 = kappa * kappa + alpha * alpha;
  if (value_of(s2) < 1e-24) {
    const T slope = peak * D * C * B;
    fx = slope * kappa;
    fy = slope * alpha;
    return;
  }
  const T sigma = sqrt(s2);
  const T scale = peak * D * magic_shape(B, C, E, sigma) / sigma;
  fx = scale * kappa;
  fy = scale * alpha;
}

constexpr double kMinSlipSpeed = 0.3;  // m/s, denominator floor in slip definitions
constexpr double kCreepSpeed = 0.1;    // m/s, below this tire forces blend to creep damping
constexpr double kRollingSmoothing = 0.05;

template <class T>
State<T> derivatives(const State<T>& s, const T& delta_ref, const T& omega_ref, const Params<T>& p,
                     bool ideal_actuators) {
  using std::atan2;
  using std::cos;
  using std::sin;
  using std::tanh;

  const T& yaw = s[kYaw];
  const T& vx = s[kVx];
  const T& vy = s[kVy];
  const T& r = s[kR];
  const T& delta = s[kDelta];
  const T& omega = s[kOmega];

  const T wheelbase = p.lf + p.lr;
  const T fz_f = p.m * kGravity * p.lr / wheelbase;
  const T fz_r = p.m * kGravity * p.lf / wheelbase;
  const T peak_f = p.mu * fz_f;
  const T peak_r = p.mu * fz_r;

  const T cd = cos(delta);
  const T sd = sin(delta);
  const T vy_f = vy + p.lf * r;
  const T vy_r = vy - p.lr * r;
  // Contact-patch velocity in each wheel frame.
  const T vlong_f = vx * cd + vy_f * sd;
  const T vlat_f = vy_f * cd - vx * sd;
  const T& vlong_r = vx;
  const T& vlat_r = vy_r;
  const T wheel_speed = omega * p.R_w;

  const double speed = std::abs(value_of(vx));
  T fx_f(0.0), fy_f(0.0), fx_r(0.0), fy_r(0.0);
  if (speed > 0.0) {
    const T vx_safe = lower_bounded(vx, kMinSlipSpeed);
    const T alpha_f = delta - atan2(vy_f, vx_safe);
    const T alpha_r = -atan2(vy_r, vx_safe);
    const T kappa_f = (wheel_speed - vlong_f) / lower_bounded(abs_of(vlong_f), kMinSlipSpeed);
    const T kappa_r = (wheel_speed - vlong_r) / lower_bounded(abs_of(vlong_r), kMinSlipSpeed);
    combined_slip(p.Bf, p.Cf, p.Df, p.Ef, peak_f, alpha_f, kappa_f, fx_f, fy_f);
    combined_slip(p.Br, p.Cr, p.Dr, p.Er, peak_r, alpha_r, kappa_r, fx_r, fy_r);
  }
  if (speed < kCreepSpeed) {
    // Linear damping of contact-patch slip velocities; zero force at rest.
    const T slope_f = peak_f * p.Df * p.Cf * p.Bf / kMinSlipSpeed;
    const T slope_r = peak_r * p.Dr * p.Cr * p.Br / kMinSlipSpeed;
    const T b = abs_of(vx) / kCreepSpeed;
    const T a = T(1.0) - b;
    fx_f = b * fx_f + a * slope_f * (wheel_speed - vlong_f);
    fy_f = b * fy_f - a * slope_f * vlat_f;
    fx_r = b * fx_r + a * slope_r * (wheel_speed - vlong_r);
    fy_r = b * fy_r - a * slope_r * vlat_r;
  }

  const T fx_front_body = fx_f * cd - fy_f * sd;
  const T fy_front_body = fx_f * sd + fy_f * cd;
  const T resistance = p.c_drag * vx * abs_of(vx) + p.c_roll * tanh(vx / kRollingSmoothing);

  State<T> d;
  d[kX] = vx * cos(yaw) - vy * sin(yaw);
  d[kY] = vx * sin(yaw) + vy * cos(yaw);
  d[kYaw] = r;
  d[kVx] = (fx_front_body + fx_r - resistance) / p.m + vy * r;
  d[kVy] = (fy_front_body + fy_r) / p.m - vx * r;
  d[kR] = (p.lf * fy_front_body - p.lr * fy_r) / p.Iz;
  if (ideal_actuators) {
    d[kDelta] = T(0.0);
    d[kOmega] = T(0.0);
  } else {
    d[kDelta] = (delta_ref - delta) / p.T_delta;
    d[kOmega] = (omega_ref - omega) / p.T_omega;
  }
  return d;
}

template <class T>
T clamp_to(const T& x, double lo, double hi) {
  if (value_of(x) < lo) return T(lo);
  if (value_of(x) > hi) return T(hi);
  return x;
}

template <class T>
State<T> rk4(const State<T>& s, const T& delta_ref, const T& omega_ref, const Params<T>& p, double h,
             bool ideal) {
  auto axpy = [](const State<T>& base, const State<T>& k, double a) {
    State<T> out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + a * k[i];
    return out;
  };
  const State<T> k1 = derivatives(s, delta_ref, omega_ref, p, ideal);
  const State<T> k2 = derivatives(axpy(s, k1, 0.5 * h), delta_ref, omega_ref, p, ideal);
  const State<T> k3 = derivatives(axpy(s, k2, 0.5 * h), delta_ref, omega_ref, p, ideal);
  const State<T> k4 = derivatives(axpy(s, k3, h), delta_ref, omega_ref, p, ideal);
  State<T> out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = s[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

template <class T>
State<T> step(State<T> s, T delta_ref, T omega_ref, const Params<T>& p, const IntegratorOptions& opt) {
  delta_ref = clamp_to(delta_ref, -p.delta_max, p.delta_max);
  omega_ref = clamp_to(omega_ref, 0.0, p.omega_max);
  const double h = opt.dt / opt.substeps;
  for (int i = 0; i < opt.substeps; ++i) {
    if (opt.ideal_actuators) {
      s[kDelta] = delta_ref;
      s[kOmega] = omega_ref;
    }
    s = rk4(s, delta_ref, omega_ref, p, h, opt.ideal_actuators);
    s[kDelta] = clamp_to(s[kDelta], -p.delta_max, p.delta_max);
    s[kOmega] = clamp_to(s[kOmega], 0.0, p.omega_max);
    for (const auto& v : s) {
      if (!std::isfinite(value_of(v))) throw NumericalError("non-finite vehicle state", i);
    }
  }
  return s;
}

}  // namespace apex::dynamics::model
