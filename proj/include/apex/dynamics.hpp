#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>

#include "apex/keyvalue.hpp"

namespace apex::dynamics {

struct VehicleState {
  double x = 0.0;         // m
  double y = 0.0;         // m
  double yaw = 0.0;       // rad
  double vx = 0.0;        // longitudinal body velocity, m/s
  double vy = 0.0;        // lateral body velocity, m/s
  double yaw_rate = 0.0;  // rad/s
  double delta = 0.0;     // steering angle, rad
  double omega = 0.0;     // wheel speed, rad/s

  static constexpr std::size_t kSize = 8;
  std::array<double, kSize> to_array() const { return {x, y, yaw, vx, vy, yaw_rate, delta, omega}; }
  static VehicleState from_array(const std::array<double, kSize>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }
  bool operator==(const VehicleState&) const = default;
};

struct ActuatorCommand {
  double delta_ref = 0.0;  // rad
  double omega_ref = 0.0;  // rad/s
};

// Magic-formula shape coefficients for one axle.
struct TireCoeffs {
  double B = 7.0;
  double C = 1.5;
  double D = 1.0;
  double E = 0.2;
  bool operator==(const TireCoeffs&) const = default;
};

struct TireForces {
  double fx = 0.0;
  double fy = 0.0;
};

// Nominal values describe a 1:8 scale car. They are placeholders until
// replaced by an identified parameter file.
struct VehicleParams {
  double m = 3.3;          // kg
  double Iz = 0.05;        // kg m^2
  double lf = 0.16;        // m
  double lr = 0.17;        // m
  double R_w = 0.05;       // m
  double mu = 0.8;
  TireCoeffs front{7.0, 1.5, 1.0, 0.2};
  TireCoeffs rear{8.0, 1.5, 1.0, 0.2};
  double T_delta = 0.1;    // s
  double T_omega = 0.1;    // s
  double c_drag = 0.1;     // N s^2 / m^2
  double c_roll = 0.5;     // N
  double delta_max = 0.5;  // rad
  double omega_max = 160.0;  // rad/s

  // Throws ConfigError when an invariant is violated.
  void validate() const;
  bool operator==(const VehicleParams&) const = default;
};

KeyValueFile params_to_keyvalues(const VehicleParams& p);
VehicleParams params_from_keyvalues(const KeyValueFile& kv, const VehicleParams& defaults = {});
VehicleParams load_params(const std::filesystem::path& path);
void save_params(const std::filesystem::path& path, const VehicleParams& p);

enum class RandomizationMode { friction_only, all_single_track };

struct RandomizationSpec {
  double sigma_dr = 0.0;
  RandomizationMode mode = RandomizationMode::friction_only;
};

std::string to_string(RandomizationMode mode);
RandomizationMode parse_randomization_mode(const std::string& name);

// Combined-slip magic formula. Each channel reduces to the pure-slip curve
// mu*Fz*D*sin(C*atan(B*x - E*(B*x - atan(B*x)))) when the other slip is zero,
// and the resultant never exceeds mu*Fz*D.
TireForces tire_forces(const TireCoeffs& tire, double mu, double alpha, double kappa, double fz);

struct IntegratorOptions {
  double dt = 0.05;
  int substeps = 10;
  // Steering and wheel speed follow their references instantly (ablation without actuator lag).
  bool ideal_actuators = false;
};

VehicleState derivatives(const VehicleState& state, const ActuatorCommand& cmd,
                         const VehicleParams& params);

// Classical RK4 over `substeps` equal substeps. Throws NumericalError if a
// substep produces a non-finite state.
VehicleState integrate_step(const VehicleState& state, const ActuatorCommand& cmd,
                            const VehicleParams& params, const IntegratorOptions& options = {});

// Multiplies selected parameters by factors drawn from N(1, sigma) clamped to [0.5, 1.5].
VehicleParams randomize_params(const VehicleParams& params, const RandomizationSpec& spec,
                               std::mt19937_64& rng);

constexpr double kGravity = 9.81;

}  // namespace apex::dynamics
