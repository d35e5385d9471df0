#include "apex/env.hpp"

#include <algorithm>
#include <cmath>

#include "apex/errors.hpp"

namespace apex::env {

using dynamics::VehicleParams;
using dynamics::VehicleState;

void EnvConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (n_lookahead < 1) throw ConfigError("n_lookahead must be >= 1");
  if (!(lookahead_spacing > 0.0)) throw ConfigError("lookahead_spacing must be positive");
  if (!(action_scale_delta > 0.0) || !(action_scale_accel > 0.0)) {
    throw ConfigError("action scales must be positive");
  }
  if (episode_steps < 1) throw ConfigError("episode_steps must be >= 1");
  if (reset_speed_max < 0.0) throw ConfigError("reset_speed_max must be non-negative");
  if (randomization.sigma_dr < 0.0) throw ConfigError("sigma_dr must be non-negative");
  const auto& m = obs_maxima;
  for (double v : {m.vx, m.vy, m.yaw_rate, m.n, m.u, m.delta, m.curvature, m.width}) {
    if (!(v > 0.0)) throw ConfigError("observation maxima must be positive");
  }
  for (double v : {m.omega, m.omega_dot, m.s}) {
    if (v < 0.0) throw ConfigError("observation maxima must be positive (0 = derive)");
  }
}

std::size_t EnvConfig::observation_size() const {
  return track_representation == TrackRepresentation::geometric
             ? 10 + 2 * static_cast<std::size_t>(n_lookahead)
             : 11;
}

std::string to_string(TrackRepresentation r) {
  return r == TrackRepresentation::geometric ? "geometric" : "progress";
}

std::string to_string(ActionSpace a) {
  return a == ActionSpace::wheel_accel ? "wheel_accel" : "wheel_speed";
}

KeyValueFile config_to_keyvalues(const EnvConfig& c) {
  KeyValueFile kv;
  kv.set("dt", c.dt);
  kv.set("substeps", c.substeps);
  kv.set("n_lookahead", c.n_lookahead);
  kv.set("lookahead_spacing", c.lookahead_spacing);
  kv.set("action_scale_delta", c.action_scale_delta);
  kv.set("action_scale_accel", c.action_scale_accel);
  kv.set("randomization", dynamics::to_string(c.randomization.mode));
  kv.set("sigma_dr", c.randomization.sigma_dr);
  kv.set("track_representation", to_string(c.track_representation));
  kv.set("action_space", to_string(c.action_space));
  kv.set("model_actuators", c.model_actuators);
  kv.set("episode_steps", c.episode_steps);
  kv.set("reset_speed_max", c.reset_speed_max);
  const auto& m = c.obs_maxima;
  kv.set("max_vx", m.vx);
  kv.set("max_vy", m.vy);
  kv.set("max_yaw_rate", m.yaw_rate);
  kv.set("max_n", m.n);
  kv.set("max_u", m.u);
  kv.set("max_delta", m.delta);
  kv.set("max_omega", m.omega);
  kv.set("max_omega_dot", m.omega_dot);
  kv.set("max_curvature", m.curvature);
  kv.set("max_width", m.width);
  kv.set("max_s", m.s);
  return kv;
}

EnvConfig config_from_keyvalues(const KeyValueFile& kv, const EnvConfig& d) {
  EnvConfig c = d;
  c.dt = kv.get_double("dt", d.dt);
  c.substeps = static_cast<int>(kv.get_int("substeps", d.substeps));
  c.n_lookahead = static_cast<int>(kv.get_int("n_lookahead", d.n_lookahead));
  c.lookahead_spacing = kv.get_double("lookahead_spacing", d.lookahead_spacing);
  c.action_scale_delta = kv.get_double("action_scale_delta", d.action_scale_delta);
  c.action_scale_accel = kv.get_double("action_scale_accel", d.action_scale_accel);
  if (auto mode = kv.get("randomization")) {
    c.randomization.mode = dynamics::parse_randomization_mode(*mode);
  }
  c.randomization.sigma_dr = kv.get_double("sigma_dr", d.randomization.sigma_dr);
  if (auto r = kv.get("track_representation")) {
    if (*r == "geometric") c.track_representation = TrackRepresentation::geometric;
    else if (*r == "progress") c.track_representation = TrackRepresentation::progress;
    else throw ConfigError("unknown track_representation '" + *r + "'");
  }
  if (auto a = kv.get("action_space")) {
    if (*a == "wheel_accel") c.action_space = ActionSpace::wheel_accel;
    else if (*a == "wheel_speed") c.action_space = ActionSpace::wheel_speed;
    else throw ConfigError("unknown action_space '" + *a + "'");
  }
  c.model_actuators = kv.get_bool("model_actuators", d.model_actuators);
  c.episode_steps = static_cast<int>(kv.get_int("episode_steps", d.episode_steps));
  c.reset_speed_max = kv.get_double("reset_speed_max", d.reset_speed_max);
  auto& m = c.obs_maxima;
  m.vx = kv.get_double("max_vx", d.obs_maxima.vx);
  m.vy = kv.get_double("max_vy", d.obs_maxima.vy);
  m.yaw_rate = kv.get_double("max_yaw_rate", d.obs_maxima.yaw_rate);
  m.n = kv.get_double("max_n", d.obs_maxima.n);
  m.u = kv.get_double("max_u", d.obs_maxima.u);
  m.delta = kv.get_double("max_delta", d.obs_maxima.delta);
  m.omega = kv.get_double("max_omega", d.obs_maxima.omega);
  m.omega_dot = kv.get_double("max_omega_dot", d.obs_maxima.omega_dot);
  m.curvature = kv.get_double("max_curvature", d.obs_maxima.curvature);
  m.width = kv.get_double("max_width", d.obs_maxima.width);
  m.s = kv.get_double("max_s", d.obs_maxima.s);
  c.validate();
  return c;
}

void apply_ablation(EnvConfig& config, const std::string& preset) {
  auto sigma_after = [&](std::size_t prefix) {
    const std::string text = preset.substr(prefix);
    try {
      std::size_t used = 0;
      double v = std::stod(text, &used);
      if (used != text.size() || v < 0.0) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("invalid sigma in ablation preset '" + preset + "'");
    }
  };
  if (preset == "obs-s") {
    config.track_representation = TrackRepresentation::progress;
  } else if (preset == "wheel-speed") {
    config.action_space = ActionSpace::wheel_speed;
  } else if (preset == "no-actuators") {
    config.model_actuators = false;
  } else if (preset.rfind("dr-friction-", 0) == 0) {
    config.randomization = {sigma_after(12), dynamics::RandomizationMode::friction_only};
  } else if (preset.rfind("dr-all-", 0) == 0) {
    config.randomization = {sigma_after(7), dynamics::RandomizationMode::all_single_track};
  } else {
    throw ConfigError("unknown ablation preset '" + preset +
                      "' (expected obs-s, wheel-speed, no-actuators, dr-friction-<s>, dr-all-<s>)");
  }
}

ObservationMaxima resolve_maxima(const EnvConfig& config, const VehicleParams& nominal,
                                 const track::TrackDefinition& track) {
  ObservationMaxima m = config.obs_maxima;
  if (m.omega == 0.0) m.omega = nominal.omega_max;
  if (m.omega_dot == 0.0) m.omega_dot = config.action_scale_accel / nominal.R_w;
  if (m.s == 0.0) m.s = track.total_length();
  return m;
}

Observation build_observation(const VehicleState& state, const CommandHistory& history,
                              const track::FrenetPose& pose, const track::TrackDefinition& track,
                              const EnvConfig& config, const ObservationMaxima& m) {
  Observation obs;
  obs.reserve(config.observation_size());
  if (config.track_representation == TrackRepresentation::geometric) {
    obs.push_back(state.vx / m.vx);
    obs.push_back(state.vy / m.vy);
    obs.push_back(pose.u / m.u);
    obs.push_back(pose.n / m.n);
    obs.push_back(state.yaw_rate / m.yaw_rate);
    obs.push_back(state.delta / m.delta);
    obs.push_back(history.delta_ref / m.delta);
    obs.push_back(history.omega_dot_ref / m.omega_dot);
    obs.push_back(history.omega_ref / m.omega);
    obs.push_back(state.omega / m.omega);
    const auto look = track::sample_lookahead(track, pose.s, config.n_lookahead, config.lookahead_spacing);
    for (double c : look.curvature) obs.push_back(c / m.curvature);
    for (double w : look.width) obs.push_back(w / m.width);
  } else {
    obs.push_back(pose.n / m.n);
    obs.push_back(pose.u / m.u);
    obs.push_back(state.vx / m.vx);
    obs.push_back(state.vy / m.vy);
    obs.push_back(state.yaw_rate / m.yaw_rate);
    obs.push_back(state.delta / m.delta);
    obs.push_back(history.delta_ref / m.delta);
    obs.push_back(history.omega_dot_ref / m.omega_dot);
    obs.push_back(history.omega_ref / m.omega);
    obs.push_back(state.omega / m.omega);
    obs.push_back(pose.s / m.s);
  }
  return obs;
}

RacingEnv::RacingEnv(std::shared_ptr<const track::TrackDefinition> track, VehicleParams nominal,
                     EnvConfig config, std::uint64_t seed)
    : track_(std::move(track)),
      nominal_(nominal),
      params_(nominal),
      config_(config),
      rng_(seed) {
  if (!track_) throw UsageError("environment needs a track");
  config_.validate();
  nominal_.validate();
  maxima_ = resolve_maxima(config_, nominal_, *track_);
}

Observation RacingEnv::place(double s, double vx) {
  const auto pose = track::frenet_to_global(*track_, s, 0.0);
  state_ = VehicleState{};
  state_.x = pose.x;
  state_.y = pose.y;
  state_.yaw = pose.yaw;
  state_.vx = vx;
  state_.omega = std::min(vx / params_.R_w, params_.omega_max);
  history_ = {0.0, state_.omega, 0.0};
  frenet_ = {track_->wrap_s(s), 0.0, 0.0};
  lap_count_ = 0;
  episode_steps_ = 0;
  episode_progress_ = 0.0;
  needs_reset_ = false;
  return observe();
}

Observation RacingEnv::reset() {
  params_ = dynamics::randomize_params(nominal_, config_.randomization, rng_);
  std::uniform_real_distribution<double> s_dist(0.0, track_->total_length());
  std::uniform_real_distribution<double> v_dist(0.0, config_.reset_speed_max);
  const double s = s_dist(rng_);
  const double vx = v_dist(rng_);
  return place(s, vx);
}

Observation RacingEnv::reset_at(double s, double vx) { return place(s, vx); }

void RacingEnv::set_state(const VehicleState& state) {
  state_ = state;
  frenet_ = track::global_to_frenet(*track_, state.x, state.y, state.yaw);
  needs_reset_ = false;
}

Observation RacingEnv::observe() const {
  return build_observation(state_, history_, frenet_, *track_, config_, maxima_);
}

StepResult RacingEnv::step(const Action& action) {
  const double steer = std::clamp(action.steer, -1.0, 1.0);
  const double throttle = std::clamp(action.throttle, -1.0, 1.0);
  const double delta_ref = config_.action_scale_delta * steer;
  double omega_ref = history_.omega_ref;
  double omega_dot_ref = 0.0;
  if (config_.action_space == ActionSpace::wheel_accel) {
    omega_dot_ref = config_.action_scale_accel * throttle / params_.R_w;
    omega_ref = std::clamp(omega_ref + omega_dot_ref * config_.dt, 0.0, params_.omega_max);
  } else {
    omega_ref = 0.5 * (throttle + 1.0) * params_.omega_max;
    omega_dot_ref = (omega_ref - history_.omega_ref) / config_.dt;
  }
  return advance(delta_ref, omega_ref, omega_dot_ref);
}

StepResult RacingEnv::step_command(const dynamics::ActuatorCommand& command) {
  const double delta_ref = std::clamp(command.delta_ref, -params_.delta_max, params_.delta_max);
  const double omega_ref = std::clamp(command.omega_ref, 0.0, params_.omega_max);
  return advance(delta_ref, omega_ref, (omega_ref - history_.omega_ref) / config_.dt);
}

StepResult RacingEnv::advance(double delta_ref, double omega_ref, double omega_dot_ref) {
  if (needs_reset_) throw UsageError("step called on an environment that needs reset");
  history_ = {delta_ref, omega_ref, omega_dot_ref};
  const dynamics::IntegratorOptions opts{config_.dt, config_.substeps, !config_.model_actuators};
  state_ = dynamics::integrate_step(state_, {delta_ref, omega_ref}, params_, opts);

  StepResult result;
  bool inside = false;
  double progress = 0.0;
  const double s_prev = frenet_.s;
  try {
    frenet_ = track::global_to_frenet(*track_, state_.x, state_.y, state_.yaw, s_prev);
    progress = track::progress_delta(s_prev, frenet_.s, track_->total_length());
    inside = track::is_inside(*track_, frenet_);
  } catch (const OutOfDomainError&) {
    inside = false;
  }
  if (progress > 0.0 && frenet_.s < s_prev) ++lap_count_;
  if (progress < 0.0 && frenet_.s > s_prev) --lap_count_;

  ++episode_steps_;
  episode_progress_ += progress;
  result.reward = inside ? progress : -1.0;
  result.terminated = !inside;
  result.truncated = inside && episode_steps_ >= config_.episode_steps;
  needs_reset_ = result.terminated || result.truncated;

  result.observation = observe();
  result.info.lap_count = lap_count_;
  result.info.state = state_;
  result.info.frenet = frenet_;
  result.info.command = history_;
  result.info.progress = progress;
  result.info.episode_progress = episode_progress_;
  result.info.episode_steps = episode_steps_;
  return result;
}

std::vector<StepResult> step_batch(std::span<RacingEnv> envs, std::span<const Action> actions,
                                   ThreadPool* pool) {
  if (envs.size() != actions.size()) {
    throw UsageError("step_batch: " + std::to_string(envs.size()) + " environments but " +
                     std::to_string(actions.size()) + " actions");
  }
  std::vector<StepResult> results(envs.size());
  auto body = [&](std::size_t i) {
    auto r = envs[i].step(actions[i]);
    if (r.terminated || r.truncated) {
      r.terminal_observation = std::move(r.observation);
      r.observation = envs[i].reset();
    }
    results[i] = std::move(r);
  };
  if (pool) {
    pool->parallel_for(envs.size(), body);
  } else {
    for (std::size_t i = 0; i < envs.size(); ++i) body(i);
  }
  return results;
}

std::vector<RacingEnv> make_envs(std::shared_ptr<const track::TrackDefinition> track,
                                 const VehicleParams& nominal, const EnvConfig& config,
                                 std::size_t count, std::uint64_t seed) {
  std::vector<RacingEnv> envs;
  envs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    envs.emplace_back(track, nominal, config, derive_seed(seed, i));
  }
  return envs;
}

EnvSetup setup_from_keyvalues(const KeyValueFile& kv, const std::filesystem::path& base_dir) {
  EnvSetup setup;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (auto t = kv.get("track")) setup.track_path = resolve(*t);
  if (auto p = kv.get("params")) setup.params_path = resolve(*p);
  setup.track_options.resolution = kv.get_double("track_resolution", setup.track_options.resolution);
  setup.track_options.vehicle_half_width =
      kv.get_double("vehicle_half_width", setup.track_options.vehicle_half_width);
  setup.config = config_from_keyvalues(kv);
  return setup;
}

EnvSetup load_env_setup(const std::filesystem::path& path) {
  auto kv = KeyValueFile::load(path);
  auto setup = setup_from_keyvalues(kv, path.parent_path());
  if (setup.track_path.empty()) throw ConfigError(path.string() + ": missing 'track' entry");
  return setup;
}

KeyValueFile setup_to_keyvalues(const EnvSetup& setup) {
  KeyValueFile kv;
  kv.set("track", setup.track_path.string());
  if (!setup.params_path.empty()) kv.set("params", setup.params_path.string());
  kv.set("track_resolution", setup.track_options.resolution);
  kv.set("vehicle_half_width", setup.track_options.vehicle_half_width);
  kv.merge(config_to_keyvalues(setup.config));
  return kv;
}

}  // namespace apex::env
