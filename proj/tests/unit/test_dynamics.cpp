#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "apex/dynamics.hpp"
#include "apex/errors.hpp"

using namespace apex;
using namespace apex::dynamics;

namespace {

double pure_slip(const TireCoeffs& t, double peak, double x) {
  const double bx = t.B * x;
  return peak * t.D * std::sin(t.C * std::atan(bx - t.E * (bx - std::atan(bx))));
}

VehicleState cruising(double vx, double steer) {
  VehicleState s;
  s.vx = vx;
  s.delta = steer;
  s.omega = vx / VehicleParams{}.R_w;
  return s;
}

}  // namespace

TEST(Dynamics, ZeroStateZeroCommandStaysAtRest) {
  VehicleParams p;
  auto s = integrate_step(VehicleState{}, {0.0, 0.0}, p);
  EXPECT_EQ(s, VehicleState{});
}

TEST(Dynamics, StraightLineRollingKeepsHeading) {
  VehicleParams p;
  VehicleState s = cruising(2.0, 0.0);
  for (int k = 0; k < 20; ++k) s = integrate_step(s, {0.0, 2.0 / p.R_w}, p);
  EXPECT_NEAR(s.y, 0.0, 1e-12);
  EXPECT_NEAR(s.yaw, 0.0, 1e-12);
  EXPECT_NEAR(s.vy, 0.0, 1e-12);
  EXPECT_GT(s.x, 0.0);
}

TEST(Dynamics, FirstOrderActuatorStepResponse) {
  for (double tau : {0.05, 0.1, 0.2}) {
    VehicleParams p;
    p.T_delta = tau;
    p.T_omega = tau;
    VehicleState s;
    const double dref = 0.3, oref = 40.0;
    double t = 0.0;
    for (int k = 0; k < 20; ++k) {
      s = integrate_step(s, {dref, oref}, p);
      t += 0.05;
      const double expected = 1.0 - std::exp(-t / tau);
      ASSERT_NEAR(s.delta, dref * expected, 1e-4) << tau << " " << t;
      ASSERT_NEAR(s.omega, oref * expected, 1e-4 * oref) << tau << " " << t;
    }
  }
}

TEST(Dynamics, IdealActuatorsTrackReferencesInstantly) {
  VehicleParams p;
  IntegratorOptions opt;
  opt.ideal_actuators = true;
  auto s = integrate_step(cruising(1.5, 0.0), {0.2, 35.0}, p, opt);
  EXPECT_DOUBLE_EQ(s.delta, 0.2);
  EXPECT_DOUBLE_EQ(s.omega, 35.0);
}

TEST(Dynamics, ReferencesAreClampedToLimits) {
  VehicleParams p;
  IntegratorOptions opt;
  opt.ideal_actuators = true;
  auto s = integrate_step(VehicleState{}, {2.0, 1000.0}, p, opt);
  EXPECT_DOUBLE_EQ(s.delta, p.delta_max);
  EXPECT_DOUBLE_EQ(s.omega, p.omega_max);
}

TEST(Dynamics, RK4SelfConvergence) {
  VehicleParams p;
  VehicleState s0 = cruising(3.0, 0.1);
  s0.vy = 0.2;
  s0.yaw_rate = 0.5;
  const ActuatorCommand cmd{0.3, 70.0};
  IntegratorOptions coarse{0.05, 10, false};
  IntegratorOptions fine{0.05, 100, false};
  auto a = integrate_step(s0, cmd, p, coarse).to_array();
  auto b = integrate_step(s0, cmd, p, fine).to_array();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5) << i;
}

TEST(Dynamics, KinematicLimitAtLowSlip) {
  // Small steering at moderate speed: yaw rate approaches vx * tan(delta) / wheelbase
  // minus the understeer from the rear axle. Check the sign and rough magnitude.
  VehicleParams p;
  VehicleState s = cruising(1.0, 0.05);
  for (int k = 0; k < 40; ++k) s = integrate_step(s, {0.05, 1.0 / p.R_w}, p);
  const double kinematic = s.vx * std::tan(0.05) / (p.lf + p.lr);
  EXPECT_GT(s.yaw_rate, 0.5 * kinematic);
  EXPECT_LT(s.yaw_rate, 1.2 * kinematic);
}

TEST(Dynamics, PureSlipChannelsMatchMagicFormula) {
  TireCoeffs t{7.0, 1.5, 1.0, 0.2};
  const double mu = 0.8, fz = 16.0;
  for (double x : {-0.5, -0.1, 0.02, 0.1, 0.3, 1.0}) {
    auto lat = tire_forces(t, mu, x, 0.0, fz);
    EXPECT_NEAR(lat.fy, pure_slip(t, mu * fz, x), 1e-12);
    EXPECT_NEAR(lat.fx, 0.0, 1e-12);
    auto lon = tire_forces(t, mu, 0.0, x, fz);
    EXPECT_NEAR(lon.fx, pure_slip(t, mu * fz, x), 1e-12);
    EXPECT_NEAR(lon.fy, 0.0, 1e-12);
  }
}

TEST(Dynamics, CombinedForceStaysInsideFrictionCircle) {
  TireCoeffs t{8.0, 1.9, 1.0, -0.5};
  const double mu = 0.9, fz = 16.0;
  for (int i = -40; i <= 40; ++i) {
    for (int j = -40; j <= 40; ++j) {
      auto f = tire_forces(t, mu, 0.03 * i, 0.05 * j, fz);
      ASSERT_LE(std::hypot(f.fx, f.fy), mu * fz * t.D * (1.0 + 1e-12));
    }
  }
}

TEST(Dynamics, TireAccelerationBoundedByFriction) {
  // Along a hard cornering manoeuvre the acceleration produced by the tires
  // never exceeds mu * g * D.
  VehicleParams p;
  VehicleState s = cruising(3.0, 0.0);
  for (int k = 0; k < 60; ++k) {
    const ActuatorCommand cmd{p.delta_max, 3.5 / p.R_w};
    const auto d = derivatives(s, cmd, p);
    const double resistance = p.c_drag * s.vx * std::abs(s.vx) + p.c_roll * std::tanh(s.vx / 0.05);
    const double ax = d.vx - s.vy * s.yaw_rate + resistance / p.m;
    const double ay = d.vy + s.vx * s.yaw_rate;
    ASSERT_LE(std::hypot(ax, ay), p.mu * kGravity * std::max(p.front.D, p.rear.D) * (1.0 + 1e-9)) << k;
    s = integrate_step(s, cmd, p);
  }
}

TEST(Dynamics, NonFiniteInputRaisesNumericalError) {
  VehicleParams p;
  VehicleState s = cruising(1.0, 0.0);
  s.vy = std::numeric_limits<double>::quiet_NaN();
  try {
    integrate_step(s, {0.0, 20.0}, p);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.substep(), 0);
  }
}

TEST(Dynamics, ParamsRoundTripThroughFile) {
  VehicleParams p;
  p.m = 2.75;
  p.mu = 0.6123456789;
  p.rear.E = -0.3;
  auto path = std::filesystem::temp_directory_path() / "apex_test_params.txt";
  save_params(path, p);
  EXPECT_EQ(load_params(path), p);
}

TEST(Dynamics, ParamsValidationRejectsBadValues) {
  VehicleParams p;
  p.m = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.front.C = 2.5;
  EXPECT_THROW(p.validate(), ConfigError);
  KeyValueFile kv;
  kv.set("Iz", 0.0);
  EXPECT_THROW(params_from_keyvalues(kv), ConfigError);
}

TEST(Dynamics, ZeroSigmaRandomizationIsIdentity) {
  VehicleParams p;
  std::mt19937_64 rng(1);
  EXPECT_EQ(randomize_params(p, {0.0, RandomizationMode::all_single_track}, rng), p);
}

TEST(Dynamics, FrictionRandomizationStatistics) {
  VehicleParams p;
  std::mt19937_64 rng(11);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    auto q = randomize_params(p, {0.1, RandomizationMode::friction_only}, rng);
    ASSERT_EQ(q.m, p.m);
    ASSERT_EQ(q.front.D, p.front.D);
    const double f = q.mu / p.mu;
    ASSERT_GE(f, 0.5 - 1e-12);
    ASSERT_LE(f, 1.5 + 1e-12);
    sum += f;
    sq += f * f;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 1.0, 4.0 * 0.1 / std::sqrt(n));
  EXPECT_NEAR(sd, 0.1, 0.005);
}

TEST(Dynamics, AllParameterRandomizationTouchesEveryScaledField) {
  VehicleParams p;
  std::mt19937_64 rng(3);
  auto q = randomize_params(p, {0.05, RandomizationMode::all_single_track}, rng);
  EXPECT_NE(q.m, p.m);
  EXPECT_NE(q.Iz, p.Iz);
  EXPECT_NE(q.lf, p.lf);
  EXPECT_NE(q.lr, p.lr);
  EXPECT_NE(q.mu, p.mu);
  EXPECT_NE(q.front.D, p.front.D);
  EXPECT_DOUBLE_EQ(q.front.D / p.front.D, q.rear.D / p.rear.D);
  EXPECT_EQ(q.R_w, p.R_w);
  EXPECT_EQ(q.T_delta, p.T_delta);
}

TEST(Dynamics, ClampedFactorsUnderLargeSigma) {
  VehicleParams p;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 2000; ++i) {
    auto q = randomize_params(p, {1.0, RandomizationMode::all_single_track}, rng);
    ASSERT_GE(q.m / p.m, 0.5 - 1e-12);
    ASSERT_LE(q.m / p.m, 1.5 + 1e-12);
    ASSERT_GE(q.mu / p.mu, 0.5 - 1e-12);
    ASSERT_LE(q.mu / p.mu, 1.5 + 1e-12);
  }
}
