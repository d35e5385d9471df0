#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apex/env.hpp"
#include "apex/trainer.hpp"

namespace apex::evalkit {

// One control step of a closed-loop run. Columns of the trajectory CSV.
struct TrajectorySample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double r = 0.0;
  double delta = 0.0;
  double omega = 0.0;
  double s = 0.0;
  double n = 0.0;
  double reward = 0.0;
  bool terminated = false;  // boundary violation at this step
};

struct TrajectoryLog {
  double dt = 0.0;
  double track_length = 0.0;
  std::vector<TrajectorySample> samples;

  bool empty() const { return samples.empty(); }
};

std::string trajectory_header();
void write_trajectory(const std::filesystem::path& path, const TrajectoryLog& log);
TrajectoryLog read_trajectory(const std::filesystem::path& path, double track_length);

struct BaselineOptions {
  double v_cap = 3.0;             // m/s
  double a_lat_max = 2.5;         // m/s^2
  double curvature_floor = 1e-3;  // 1/m
  double lookahead_min = 0.4;     // m
  double lookahead_gain = 0.25;   // s (lookahead grows with speed)
  double preview = 1.2;           // m of centerline scanned for curvature
};

// Pure pursuit toward a speed-scaled lookahead point on the centerline with a
// curvature-limited target speed.
dynamics::ActuatorCommand baseline_controller(const dynamics::VehicleState& state, const track::FrenetPose& pose,
                                              const track::TrackDefinition& track,
                                              const dynamics::VehicleParams& params,
                                              const BaselineOptions& options = {});

// Target speed of the baseline for the given preview curvature.
double baseline_speed(double preview_curvature, const BaselineOptions& options);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual env::StepResult drive(env::RacingEnv& env, const env::Observation& obs) = 0;
};

class PolicyController : public Controller {
 public:
  explicit PolicyController(trainer::Policy policy) : policy_(std::move(policy)) {}
  env::StepResult drive(env::RacingEnv& env, const env::Observation& obs) override;

 private:
  trainer::Policy policy_;
};

class BaselineController : public Controller {
 public:
  explicit BaselineController(BaselineOptions options = {}) : options_(options) {}
  env::StepResult drive(env::RacingEnv& env, const env::Observation& obs) override;

 private:
  BaselineOptions options_;
};

struct EvalOptions {
  int n_laps = 20;
  double start_s = 0.0;             // start line; laps are counted at crossings of s = 0
  double start_speed = 0.0;         // m/s
  double max_time_per_lap = 60.0;   // s; the run stops after n_laps * max_time_per_lap
  std::uint64_t seed = 0;
};

// Drives until n_laps start/finish crossings have accumulated. A boundary
// violation is logged and the car is placed back on the centerline at the
// progress where it left the track, at rest, and the run continues.
TrajectoryLog run_eval(Controller& controller, std::shared_ptr<const track::TrackDefinition> track,
                       const dynamics::VehicleParams& params, const env::EnvConfig& config,
                       const EvalOptions& options = {});

struct Lap {
  double start_time = 0.0;
  double end_time = 0.0;
  double time = 0.0;
  bool clean = true;
  std::size_t begin_index = 0;  // first sample after the start crossing
  std::size_t end_index = 0;    // first sample after the end crossing
};

// Laps between consecutive forward crossings of s = 0, with crossing times
// interpolated inside the step. The first sample counts as a boundary when
// the log starts on the line.
std::vector<Lap> lap_times(const TrajectoryLog& log, double track_length);

// (1/N) * integral of max(|n| - W(s), 0) dt, trapezoidal rule on the log grid.
double integrate_off_track(std::span<const double> times, std::span<const double> excess, int n_laps);
double compute_e_off(const TrajectoryLog& log, const track::TrackDefinition& track, int n_laps);

struct EvalReport {
  std::optional<double> fastest_clean_lap;
  std::optional<double> mean_lap;
  std::optional<double> lap_std;
  std::optional<double> mean_clean_lap;
  double e_off = 0.0;
  double crash_rate = 0.0;  // laps containing a violation / laps driven
  int lap_count = 0;
  int clean_lap_count = 0;
  int crash_count = 0;
  double total_time = 0.0;
  std::vector<Lap> laps;

  bool operator==(const EvalReport&) const;
};

EvalReport make_report(const TrajectoryLog& log, const track::TrackDefinition& track, int n_laps);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
EvalReport read_report(const std::filesystem::path& path);

// Per-s velocity profile of one lap on the resampled track grid.
struct ProfileRow {
  double s = 0.0;
  double vx = 0.0;
  double time = 0.0;  // since the lap started
};

// Profile of the fastest clean lap, or the first lap when none is clean.
// Empty when no lap was completed.
std::vector<ProfileRow> velocity_profile(const TrajectoryLog& log, const track::TrackDefinition& track);
std::vector<ProfileRow> lap_profile(const TrajectoryLog& log, const Lap& lap, const track::TrackDefinition& track);

// time_b(s) - time_a(s) on the common grid of two profiles.
struct DeltaRow {
  double s = 0.0;
  double delta_time = 0.0;
};
std::vector<DeltaRow> compare_profiles(std::span<const ProfileRow> a, std::span<const ProfileRow> b);

void write_profile(const std::filesystem::path& path, std::span<const ProfileRow> rows);
std::vector<ProfileRow> read_profile(const std::filesystem::path& path);
void write_delta(const std::filesystem::path& path, std::span<const DeltaRow> rows);

struct ExportPaths {
  std::filesystem::path trajectory;
  std::filesystem::path report;
  std::filesystem::path profile;
};

// Writes trajectory.csv, report.json and profile.csv into dir. An empty
// trajectory raises UsageError before any file is created.
ExportPaths export_report(const TrajectoryLog& log, const EvalReport& report, std::span<const ProfileRow> profile,
                          const std::filesystem::path& dir);

}  // namespace apex::evalkit
