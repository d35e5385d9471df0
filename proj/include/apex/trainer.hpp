#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "apex/env.hpp"
#include "apex/keyvalue.hpp"
#include "apex/network.hpp"

namespace apex::trainer {

using Network = ActorCritic<float>;

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  int n_envs = 400;
  int n_steps = 1024;
  int batch_size = 1024;
  int epochs_per_update = 10;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::int64_t total_steps = 120'000'000;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double adam_epsilon = 1e-5;
  std::uint64_t seed = 0;
  int threads = 1;
  int checkpoint_every = 50;  // updates; 0 disables periodic checkpoints
  int progress_window = 100;  // completed episodes averaged in mean_ep_progress
  std::vector<std::size_t> actor_hidden{256, 256};
  std::vector<std::size_t> critic_hidden{512, 512};
  double init_log_std = -1.2039728043259361;

  void validate() const;
};

KeyValueFile config_to_keyvalues(const PpoConfig& config);
PpoConfig config_from_keyvalues(const KeyValueFile& kv, const PpoConfig& defaults = {});

NetworkShape network_shape(const PpoConfig& config, std::size_t obs_dim);

// Linear interpolation from lr_start (progress 0) to lr_end (progress 1).
double lr_schedule(double progress, const PpoConfig& config);

struct SampledAction {
  std::vector<double> raw;       // Gaussian sample before clipping
  std::vector<double> clipped;   // raw clipped to [-1, 1]
  double log_prob = 0.0;         // of `raw` under the unclipped Gaussian
};

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std);

SampledAction sample_action(std::span<const double> mean, std::span<const double> log_std,
                            std::mt19937_64& rng);

// Single-sequence generalized advantage estimation. dones[t] marks the end of
// an episode at step t: nothing after t contributes to A_t. `bootstrap` is
// the value of the state following the last step.
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> dones, double bootstrap, double gamma, double lambda);

// In-place normalization to zero mean and unit (population) standard deviation.
void normalize_advantages(std::span<double> advantages);

// Step-major storage: index = step * n_envs + env.
struct RolloutBuffer {
  std::size_t n_envs = 0;
  std::size_t n_steps = 0;
  std::size_t obs_dim = 0;
  std::size_t action_dim = 2;
  Eigen::MatrixXf observations;  // obs_dim x capacity
  Eigen::MatrixXf actions;       // action_dim x capacity (unclipped samples)
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> dones;  // 1 where the episode ended (terminated or truncated)
  std::vector<double> advantages;
  std::vector<double> returns;
  std::size_t filled = 0;

  RolloutBuffer() = default;
  RolloutBuffer(std::size_t envs, std::size_t steps, std::size_t obs, std::size_t act = 2);
  std::size_t capacity() const { return n_envs * n_steps; }
  bool full() const { return filled == capacity(); }

  // GAE per environment; last_values[e] bootstraps the step after the buffer.
  void finish(std::span<const double> last_values, double gamma, double lambda);
};

template <class S>
struct MiniBatch {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> obs;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> actions;
  Eigen::Matrix<S, Eigen::Dynamic, 1> old_log_probs;
  Eigen::Matrix<S, Eigen::Dynamic, 1> advantages;  // already normalized
  Eigen::Matrix<S, Eigen::Dynamic, 1> returns;
};

struct LossTerms {
  double total = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Clipped-surrogate PPO loss; when `grad` is given it receives the gradient
// with respect to all network parameters.
template <class S>
LossTerms ppo_loss(const ActorCritic<S>& net, const MiniBatch<S>& batch, const PpoConfig& config,
                   Eigen::Matrix<S, Eigen::Dynamic, 1>* grad = nullptr);

extern template LossTerms ppo_loss<float>(const ActorCritic<float>&, const MiniBatch<float>&, const PpoConfig&,
                                          Eigen::VectorXf*);
extern template LossTerms ppo_loss<double>(const ActorCritic<double>&, const MiniBatch<double>&,
                                           const PpoConfig&, Eigen::VectorXd*);

struct AdamState {
  Eigen::VectorXf m;
  Eigen::VectorXf v;
  std::int64_t step = 0;

  void reset(std::size_t n);
  void update(Eigen::VectorXf& params, const Eigen::VectorXf& grad, double lr, double epsilon,
              double beta1 = 0.9, double beta2 = 0.999);
};

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

// epochs_per_update passes over shuffled mini-batches, per-mini-batch
// advantage normalization, global gradient-norm clipping. Throws
// TrainingError on a non-finite loss.
UpdateMetrics ppo_update(Network& net, AdamState& adam, const RolloutBuffer& buffer, const PpoConfig& config,
                         double lr, std::mt19937_64& rng);

struct TrainingState {
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
};

// Binary container: "APEXCKPT", version byte, little-endian float32 blocks
// with shape headers, optimizer moments, counters, and the configuration text.
void save_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState& adam,
                     const TrainingState& state, const std::string& config_text = {});

struct Checkpoint {
  Network network;
  AdamState adam;
  TrainingState state;
  std::string config_text;
};

// Throws CheckpointError on a corrupt or truncated file and
// DimensionMismatchError when expected_obs_dim is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::size_t> expected_obs_dim = std::nullopt);

struct UpdateLog {
  std::int64_t update = 0;
  std::int64_t env_steps = 0;
  double mean_reward = 0.0;
  double mean_ep_progress = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_frac = 0.0;
  double lr = 0.0;
};

std::string training_log_header();
std::string format_log_row(const UpdateLog& row);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path log_path;        // empty: no CSV
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const UpdateLog&)> on_update;
};

struct TrainResult {
  Network network;
  AdamState adam;
  TrainingState state;
  std::vector<UpdateLog> log;
};

TrainResult train(std::shared_ptr<const track::TrackDefinition> track, const dynamics::VehicleParams& nominal,
                  const env::EnvConfig& env_config, const PpoConfig& config, const TrainOptions& options = {});

// Deterministic policy: tanh-squashed actor mean.
class Policy {
 public:
  explicit Policy(Network net) : net_(std::move(net)) {}
  env::Action act(const env::Observation& obs) const;
  const Network& network() const { return net_; }

 private:
  Network net_;
};

}  // namespace apex::trainer
