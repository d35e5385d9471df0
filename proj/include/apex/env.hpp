#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "apex/dynamics.hpp"
#include "apex/keyvalue.hpp"
#include "apex/parallel.hpp"
#include "apex/track.hpp"

namespace apex::env {

enum class TrackRepresentation { geometric, progress };
enum class ActionSpace { wheel_accel, wheel_speed };

// Divisors applied to each observation element. Zero entries are resolved at
// environment construction: omega from omega_max, omega_dot from the
// acceleration scale and wheel radius, s from the track length.
struct ObservationMaxima {
  double vx = 8.0;
  double vy = 3.0;
  double yaw_rate = 6.0;
  double n = 1.0;
  double u = 3.14159265358979323846;
  double delta = 0.5;
  double omega = 0.0;
  double omega_dot = 0.0;
  double curvature = 3.0;
  double width = 1.0;
  double s = 0.0;
};

struct EnvConfig {
  double dt = 0.05;
  int substeps = 10;
  int n_lookahead = 10;
  double lookahead_spacing = 0.3;
  ObservationMaxima obs_maxima;
  double action_scale_delta = 0.5;  // rad
  double action_scale_accel = 5.0;  // m/s^2 at the wheel contact point
  dynamics::RandomizationSpec randomization;
  TrackRepresentation track_representation = TrackRepresentation::geometric;
  ActionSpace action_space = ActionSpace::wheel_accel;
  bool model_actuators = true;
  int episode_steps = 1024;
  double reset_speed_max = 2.0;  // m/s

  void validate() const;
  std::size_t observation_size() const;
};

std::string to_string(TrackRepresentation r);
std::string to_string(ActionSpace a);

KeyValueFile config_to_keyvalues(const EnvConfig& config);
EnvConfig config_from_keyvalues(const KeyValueFile& kv, const EnvConfig& defaults = {});

// Applies one named variant: obs-s, wheel-speed, no-actuators,
// dr-friction-<sigma>, dr-all-<sigma>.
void apply_ablation(EnvConfig& config, const std::string& preset);

using Observation = std::vector<double>;

// Raw policy output; each element is clamped to [-1, 1] before scaling.
struct Action {
  double steer = 0.0;
  double throttle = 0.0;
};

struct CommandHistory {
  double delta_ref = 0.0;      // rad
  double omega_ref = 0.0;      // rad/s
  double omega_dot_ref = 0.0;  // rad/s^2
};

struct StepInfo {
  int lap_count = 0;
  dynamics::VehicleState state;
  track::FrenetPose frenet;
  CommandHistory command;
  double progress = 0.0;          // progress_delta of this step
  double episode_progress = 0.0;  // running sum over the episode
  int episode_steps = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
  StepInfo info;
  // Set by step_batch when the environment was reset after this step; holds
  // the observation the step actually produced.
  std::optional<Observation> terminal_observation;
};

ObservationMaxima resolve_maxima(const EnvConfig& config, const dynamics::VehicleParams& nominal,
                                 const track::TrackDefinition& track);

Observation build_observation(const dynamics::VehicleState& state, const CommandHistory& history,
                              const track::FrenetPose& pose, const track::TrackDefinition& track,
                              const EnvConfig& config, const ObservationMaxima& maxima);

class RacingEnv {
 public:
  RacingEnv(std::shared_ptr<const track::TrackDefinition> track, dynamics::VehicleParams nominal,
            EnvConfig config, std::uint64_t seed);

  // Random centerline start, re-randomized parameters.
  Observation reset();
  // Deterministic placement on the centerline at progress s, aligned with the track.
  Observation reset_at(double s, double vx);

  StepResult step(const Action& action);
  // Drives the actuators with explicit references (baseline controllers).
  StepResult step_command(const dynamics::ActuatorCommand& command);

  // Overwrites the vehicle state (tests and forced scenarios). The Frenet
  // pose is recomputed without a hint.
  void set_state(const dynamics::VehicleState& state);
  void set_params(const dynamics::VehicleParams& params) { params_ = params; }

  Observation observe() const;

  const dynamics::VehicleState& state() const { return state_; }
  const track::FrenetPose& frenet() const { return frenet_; }
  const CommandHistory& command() const { return history_; }
  const dynamics::VehicleParams& params() const { return params_; }
  const dynamics::VehicleParams& nominal_params() const { return nominal_; }
  const EnvConfig& config() const { return config_; }
  const ObservationMaxima& maxima() const { return maxima_; }
  const track::TrackDefinition& track() const { return *track_; }
  std::shared_ptr<const track::TrackDefinition> track_ptr() const { return track_; }
  std::size_t observation_size() const { return config_.observation_size(); }
  bool needs_reset() const { return needs_reset_; }
  int lap_count() const { return lap_count_; }

 private:
  Observation place(double s, double vx);
  StepResult advance(double delta_ref, double omega_ref, double omega_dot_ref);

  std::shared_ptr<const track::TrackDefinition> track_;
  dynamics::VehicleParams nominal_;
  dynamics::VehicleParams params_;
  EnvConfig config_;
  ObservationMaxima maxima_;
  std::mt19937_64 rng_;

  dynamics::VehicleState state_;
  track::FrenetPose frenet_;
  CommandHistory history_;
  int lap_count_ = 0;
  int episode_steps_ = 0;
  double episode_progress_ = 0.0;
  bool needs_reset_ = true;
};

// Steps every environment with its action. Environments that terminate or
// truncate are reset immediately; their result carries the reset observation
// in `observation` and the final one in `terminal_observation`. Results do
// not depend on the number of threads or on evaluation order.
std::vector<StepResult> step_batch(std::span<RacingEnv> envs, std::span<const Action> actions,
                                   ThreadPool* pool = nullptr);

// Builds n environments sharing one track, each with its own seed stream.
std::vector<RacingEnv> make_envs(std::shared_ptr<const track::TrackDefinition> track,
                                 const dynamics::VehicleParams& nominal, const EnvConfig& config,
                                 std::size_t count, std::uint64_t seed);

// Environment setup file: track/params paths plus EnvConfig keys.
struct EnvSetup {
  std::filesystem::path track_path;
  std::filesystem::path params_path;  // empty -> nominal defaults
  EnvConfig config;
  track::TrackOptions track_options;
};

EnvSetup load_env_setup(const std::filesystem::path& path);
KeyValueFile setup_to_keyvalues(const EnvSetup& setup);
EnvSetup setup_from_keyvalues(const KeyValueFile& kv, const std::filesystem::path& base_dir);

}  // namespace apex::env
