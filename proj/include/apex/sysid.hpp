#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "apex/dynamics.hpp"
#include "apex/parallel.hpp"

namespace apex::sysid {

// Synchronously sampled identification data. All channels have the same length.
struct DriveLog {
  std::vector<double> t;          // s
  std::vector<double> x;          // m
  std::vector<double> y;          // m
  std::vector<double> yaw;        // rad
  std::vector<double> omega;      // rad/s
  std::vector<double> delta;      // rad
  std::vector<double> delta_ref;  // rad
  std::vector<double> omega_ref;  // rad/s

  std::size_t size() const { return t.size(); }
};

constexpr double kMaxLogGap = 0.011;  // s

// Reads `t,x,y,yaw,omega,delta,delta_ref,omega_ref`. Throws ParseError on
// malformed or empty files and LogGapError when consecutive timestamps are
// more than kMaxLogGap apart (or not increasing).
DriveLog ingest_log(const std::filesystem::path& path);
void write_log(const std::filesystem::path& path, const DriveLog& log);
void check_log(const DriveLog& log);

struct BodyVelocities {
  std::vector<double> vx;
  std::vector<double> vy;
  std::vector<double> r;
};

// Savitzky-Golay derivative coefficients for the centre of a window of
// `window` samples at unit spacing.
std::vector<double> savgol_derivative_coeffs(int window, int polyorder);

// Differentiates x, y and the unwrapped yaw with a Savitzky-Golay filter and
// rotates the world-frame velocity into the body frame. Edge samples use the
// polynomial fitted to the first/last full window.
BodyVelocities estimate_velocities(const DriveLog& log, int window = 11, int polyorder = 3);

// Continuous version of an angle sequence (removes 2*pi jumps).
std::vector<double> unwrap(const std::vector<double>& angles);

struct TrainingSegment {
  dynamics::VehicleState initial_state;
  // commands[j] drives the transition from sample j to sample j + 1.
  std::vector<dynamics::ActuatorCommand> commands;
  // targets[0] equals the initial state.
  std::vector<dynamics::VehicleState> targets;
};

// Overlapping windows of `horizon` samples with stride horizon / 2. Windows
// that straddle a dropped frame are skipped.
std::vector<TrainingSegment> make_segments(const DriveLog& log, const BodyVelocities& velocities,
                                           int horizon = 85);

// Segments straight from simulated states (exact velocities).
std::vector<TrainingSegment> make_segments(const std::vector<dynamics::VehicleState>& states,
                                           const std::vector<dynamics::ActuatorCommand>& commands,
                                           int horizon = 85);

struct StateWeights {
  double x = 0.1;
  double y = 0.1;
  double yaw = 0.1;
  double vx = 1.0;
  double vy = 1.0;
  double r = 1.0;
  double delta = 1.0;
  double omega = 1.0;
};

enum class GradientMode { analytic_reverse, central_difference };

std::string to_string(GradientMode mode);
GradientMode parse_gradient_mode(const std::string& name);

struct SysIdConfig {
  int horizon = 85;
  double dt = 0.01;  // log sample period
  int substeps = 2;
  double learning_rate = 0.02;
  double final_learning_rate = 0.001;  // linear decay to this value over the epochs
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;
  int epochs = 200;
  StateWeights state_weights;
  GradientMode gradient_mode = GradientMode::analytic_reverse;
  double fd_step = 1e-4;  // in log-parameter space
  std::vector<std::string> fit_params{"m", "Iz", "mu", "T_delta", "T_omega"};
  std::uint64_t seed = 0;

  void validate() const;
};

KeyValueFile config_to_keyvalues(const SysIdConfig& config);
SysIdConfig config_from_keyvalues(const KeyValueFile& kv, const SysIdConfig& defaults = {});

// Parameters that can be identified (all strictly positive).
const std::vector<std::string>& fittable_parameters();
double get_parameter(const dynamics::VehicleParams& params, const std::string& name);
void set_parameter(dynamics::VehicleParams& params, const std::string& name, double value);

constexpr double kFailedRolloutLoss = 1e6;

// Weighted MSE: (1/H) * sum_j sum_c w_c (pred_jc - target_jc)^2.
double rollout_loss(const dynamics::VehicleParams& params, const TrainingSegment& segment,
                    const StateWeights& weights, double dt = 0.01, int substeps = 2);

// Mean loss over segments and its gradient with respect to z, where each
// fitted parameter is p = base * exp(z).
struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

LossGradient loss_and_gradient(const dynamics::VehicleParams& base, const std::vector<double>& z,
                               const std::vector<const TrainingSegment*>& batch,
                               const SysIdConfig& config, ThreadPool* pool = nullptr);

double mean_loss(const dynamics::VehicleParams& params, const std::vector<TrainingSegment>& segments,
                 const SysIdConfig& config, ThreadPool* pool = nullptr);

struct FitResult {
  dynamics::VehicleParams params;  // lowest full-dataset loss seen
  std::vector<double> loss_history;  // entry 0: initial parameters; entry e: after epoch e
  double best_loss = 0.0;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

// AdamW in log-parameter space over shuffled mini-batches. Throws
// DivergenceError when the loss grows tenfold over 20 epochs.
FitResult fit(const std::vector<TrainingSegment>& segments, const dynamics::VehicleParams& init,
              const SysIdConfig& config, ThreadPool* pool = nullptr,
              const EpochCallback& on_epoch = {});

void write_loss_history(const std::filesystem::path& path, const std::vector<double>& history);

// Synthetic excitation: smooth multi-sine steering and speed references.
struct SyntheticLog {
  DriveLog log;
  std::vector<dynamics::VehicleState> states;
  std::vector<dynamics::ActuatorCommand> commands;
};

SyntheticLog simulate_log(const dynamics::VehicleParams& params, double duration, std::uint64_t seed,
                          double dt = 0.01, int substeps = 2);

}  // namespace apex::sysid
