#include "apex/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "apex/detail/vehicle_model.hpp"
#include "apex/errors.hpp"

namespace apex::dynamics {

namespace {

model::State<double> to_model(const VehicleState& s) { return s.to_array(); }

VehicleState from_model(const model::State<double>& s) { return VehicleState::from_array(s); }

}  // namespace

void VehicleParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("vehicle parameter '") + name + "' must be positive and finite");
    }
  };
  positive(m, "m");
  positive(Iz, "Iz");
  positive(lf, "lf");
  positive(lr, "lr");
  positive(R_w, "R_w");
  positive(mu, "mu");
  positive(T_delta, "T_delta");
  positive(T_omega, "T_omega");
  positive(delta_max, "delta_max");
  positive(omega_max, "omega_max");
  for (const auto* t : {&front, &rear}) {
    positive(t->B, "tire_B");
    positive(t->D, "tire_D");
    if (!(t->C > 1.0 && t->C <= 2.0)) throw ConfigError("tire_C must lie in (1, 2]");
    if (!(t->E <= 1.0)) throw ConfigError("tire_E must not exceed 1");
  }
  if (c_drag < 0.0 || c_roll < 0.0) throw ConfigError("resistance coefficients must be non-negative");
}

KeyValueFile params_to_keyvalues(const VehicleParams& p) {
  KeyValueFile kv;
  kv.set("m", p.m);
  kv.set("Iz", p.Iz);
  kv.set("lf", p.lf);
  kv.set("lr", p.lr);
  kv.set("R_w", p.R_w);
  kv.set("mu", p.mu);
  kv.set("tire_B_front", p.front.B);
  kv.set("tire_C_front", p.front.C);
  kv.set("tire_D_front", p.front.D);
  kv.set("tire_E_front", p.front.E);
  kv.set("tire_B_rear", p.rear.B);
  kv.set("tire_C_rear", p.rear.C);
  kv.set("tire_D_rear", p.rear.D);
  kv.set("tire_E_rear", p.rear.E);
  kv.set("T_delta", p.T_delta);
  kv.set("T_omega", p.T_omega);
  kv.set("c_drag", p.c_drag);
  kv.set("c_roll", p.c_roll);
  kv.set("delta_max", p.delta_max);
  kv.set("omega_max", p.omega_max);
  return kv;
}

VehicleParams params_from_keyvalues(const KeyValueFile& kv, const VehicleParams& d) {
  VehicleParams p;
  p.m = kv.get_double("m", d.m);
  p.Iz = kv.get_double("Iz", d.Iz);
  p.lf = kv.get_double("lf", d.lf);
  p.lr = kv.get_double("lr", d.lr);
  p.R_w = kv.get_double("R_w", d.R_w);
  p.mu = kv.get_double("mu", d.mu);
  p.front.B = kv.get_double("tire_B_front", d.front.B);
  p.front.C = kv.get_double("tire_C_front", d.front.C);
  p.front.D = kv.get_double("tire_D_front", d.front.D);
  p.front.E = kv.get_double("tire_E_front", d.front.E);
  p.rear.B = kv.get_double("tire_B_rear", d.rear.B);
  p.rear.C = kv.get_double("tire_C_rear", d.rear.C);
  p.rear.D = kv.get_double("tire_D_rear", d.rear.D);
  p.rear.E = kv.get_double("tire_E_rear", d.rear.E);
  p.T_delta = kv.get_double("T_delta", d.T_delta);
  p.T_omega = kv.get_double("T_omega", d.T_omega);
  p.c_drag = kv.get_double("c_drag", d.c_drag);
  p.c_roll = kv.get_double("c_roll", d.c_roll);
  p.delta_max = kv.get_double("delta_max", d.delta_max);
  p.omega_max = kv.get_double("omega_max", d.omega_max);
  p.validate();
  return p;
}

VehicleParams load_params(const std::filesystem::path& path) {
  return params_from_keyvalues(KeyValueFile::load(path));
}

void save_params(const std::filesystem::path& path, const VehicleParams& p) {
  params_to_keyvalues(p).save(path);
}

std::string to_string(RandomizationMode mode) {
  return mode == RandomizationMode::friction_only ? "friction_only" : "all_single_track";
}

RandomizationMode parse_randomization_mode(const std::string& name) {
  if (name == "friction_only" || name == "friction") return RandomizationMode::friction_only;
  if (name == "all_single_track" || name == "all") return RandomizationMode::all_single_track;
  throw ConfigError("unknown randomization mode '" + name + "'");
}

TireForces tire_forces(const TireCoeffs& tire, double mu, double alpha, double kappa, double fz) {
  double fx = 0.0, fy = 0.0;
  model::combined_slip(tire.B, tire.C, tire.D, tire.E, mu * fz, alpha, kappa, fx, fy);
  return {fx, fy};
}

VehicleState derivatives(const VehicleState& state, const ActuatorCommand& cmd,
                         const VehicleParams& params) {
  const auto p = model::lift<double>(params);
  return from_model(model::derivatives(to_model(state), cmd.delta_ref, cmd.omega_ref, p, false));
}

VehicleState integrate_step(const VehicleState& state, const ActuatorCommand& cmd,
                            const VehicleParams& params, const IntegratorOptions& options) {
  if (!(options.dt > 0.0) || options.substeps < 1) {
    throw UsageError("integrate_step needs dt > 0 and at least one substep");
  }
  const auto p = model::lift<double>(params);
  return from_model(model::step(to_model(state), cmd.delta_ref, cmd.omega_ref, p, options));
}

VehicleParams randomize_params(const VehicleParams& params, const RandomizationSpec& spec,
                               std::mt19937_64& rng) {
  if (spec.sigma_dr < 0.0) throw ConfigError("sigma_dr must be non-negative");
  if (spec.sigma_dr == 0.0) return params;
  std::normal_distribution<double> noise(1.0, spec.sigma_dr);
  auto factor = [&] { return std::clamp(noise(rng), 0.5, 1.5); };

  VehicleParams out = params;
  if (spec.mode == RandomizationMode::friction_only) {
    out.mu *= factor();
    return out;
  }
  out.m *= factor();
  out.Iz *= factor();
  out.lf *= factor();
  out.lr *= factor();
  out.mu *= factor();
  const double d = factor();
  out.front.D *= d;
  out.rear.D *= d;
  return out;
}

}  // namespace apex::dynamics
