#include "apex/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

#include "apex/errors.hpp"
#include "apex/parallel.hpp"

namespace apex::trainer {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (auto s : sizes) out += (out.empty() ? "" : ",") + std::to_string(s);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = std::string(trim(item));
    if (t.empty()) continue;
    const double v = parse_double(t, key);
    if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError(key + " must list positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be positive");
  if (n_envs < 1 || n_steps < 1 || batch_size < 1 || epochs_per_update < 1) {
    throw ConfigError("n_envs, n_steps, batch_size and epochs_per_update must be >= 1");
  }
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ConfigError("learning rates need lr_start >= lr_end > 0");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (entropy_coef < 0.0 || value_coef < 0.0) throw ConfigError("loss coefficients must be non-negative");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (checkpoint_every < 0 || progress_window < 1) throw ConfigError("invalid checkpoint or logging interval");
}

KeyValueFile config_to_keyvalues(const PpoConfig& c) {
  KeyValueFile kv;
  kv.set("gamma", c.gamma);
  kv.set("gae_lambda", c.gae_lambda);
  kv.set("clip_epsilon", c.clip_epsilon);
  kv.set("n_envs", c.n_envs);
  kv.set("n_steps", c.n_steps);
  kv.set("batch_size", c.batch_size);
  kv.set("epochs_per_update", c.epochs_per_update);
  kv.set("lr_start", c.lr_start);
  kv.set("lr_end", c.lr_end);
  kv.set("total_steps", c.total_steps);
  kv.set("entropy_coef", c.entropy_coef);
  kv.set("value_coef", c.value_coef);
  kv.set("max_grad_norm", c.max_grad_norm);
  kv.set("adam_epsilon", c.adam_epsilon);
  kv.set("seed", static_cast<std::int64_t>(c.seed));
  kv.set("threads", c.threads);
  kv.set("checkpoint_every", c.checkpoint_every);
  kv.set("progress_window", c.progress_window);
  kv.set("actor_hidden", join_sizes(c.actor_hidden));
  kv.set("critic_hidden", join_sizes(c.critic_hidden));
  kv.set("init_log_std", c.init_log_std);
  return kv;
}

PpoConfig config_from_keyvalues(const KeyValueFile& kv, const PpoConfig& d) {
  PpoConfig c = d;
  c.gamma = kv.get_double("gamma", d.gamma);
  c.gae_lambda = kv.get_double("gae_lambda", d.gae_lambda);
  c.clip_epsilon = kv.get_double("clip_epsilon", d.clip_epsilon);
  c.n_envs = static_cast<int>(kv.get_int("n_envs", d.n_envs));
  c.n_steps = static_cast<int>(kv.get_int("n_steps", d.n_steps));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", d.batch_size));
  c.epochs_per_update = static_cast<int>(kv.get_int("epochs_per_update", d.epochs_per_update));
  c.lr_start = kv.get_double("lr_start", d.lr_start);
  c.lr_end = kv.get_double("lr_end", d.lr_end);
  c.total_steps = kv.get_int("total_steps", d.total_steps);
  c.entropy_coef = kv.get_double("entropy_coef", d.entropy_coef);
  c.value_coef = kv.get_double("value_coef", d.value_coef);
  c.max_grad_norm = kv.get_double("max_grad_norm", d.max_grad_norm);
  c.adam_epsilon = kv.get_double("adam_epsilon", d.adam_epsilon);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(d.seed)));
  c.threads = static_cast<int>(kv.get_int("threads", d.threads));
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", d.checkpoint_every));
  c.progress_window = static_cast<int>(kv.get_int("progress_window", d.progress_window));
  if (auto v = kv.get("actor_hidden")) c.actor_hidden = parse_sizes(*v, "actor_hidden");
  if (auto v = kv.get("critic_hidden")) c.critic_hidden = parse_sizes(*v, "critic_hidden");
  c.init_log_std = kv.get_double("init_log_std", d.init_log_std);
  c.validate();
  return c;
}

NetworkShape network_shape(const PpoConfig& config, std::size_t obs_dim) {
  NetworkShape s;
  s.obs_dim = obs_dim;
  s.action_dim = 2;
  s.actor_hidden = config.actor_hidden;
  s.critic_hidden = config.critic_hidden;
  s.init_log_std = config.init_log_std;
  return s;
}

double lr_schedule(double progress, const PpoConfig& config) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return config.lr_start + (config.lr_end - config.lr_start) * p;
}

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean, std::span<const double> log_std) {
  double lp = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double z = (x[d] - mean[d]) / std::exp(log_std[d]);
    lp += -0.5 * z * z - log_std[d] - 0.5 * kLog2Pi;
  }
  return lp;
}

SampledAction sample_action(std::span<const double> mean, std::span<const double> log_std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  SampledAction out;
  out.raw.resize(mean.size());
  out.clipped.resize(mean.size());
  for (std::size_t d = 0; d < mean.size(); ++d) {
    out.raw[d] = mean[d] + std::exp(log_std[d]) * normal(rng);
    out.clipped[d] = std::clamp(out.raw[d], -1.0, 1.0);
  }
  out.log_prob = gaussian_log_prob(out.raw, mean, log_std);
  return out;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> dones,
                      double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw UsageError("compute_gae: sequence lengths differ");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double live = 1.0 - dones[t];
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
  }
  return out;
}

void normalize_advantages(std::span<double> a) {
  if (a.empty()) return;
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  const double scale = sd > 1e-8 ? 1.0 / sd : 0.0;
  for (double& v : a) v = (v - mean) * scale;
}

RolloutBuffer::RolloutBuffer(std::size_t envs, std::size_t steps, std::size_t obs, std::size_t act)
    : n_envs(envs), n_steps(steps), obs_dim(obs), action_dim(act) {
  const std::size_t cap = envs * steps;
  observations = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(obs), static_cast<Eigen::Index>(cap));
  actions = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(act), static_cast<Eigen::Index>(cap));
  log_probs.assign(cap, 0.0);
  rewards.assign(cap, 0.0);
  values.assign(cap, 0.0);
  dones.assign(cap, 0.0);
  advantages.assign(cap, 0.0);
  returns.assign(cap, 0.0);
}

void RolloutBuffer::finish(std::span<const double> last_values, double gamma, double lambda) {
  if (!full()) throw UsageError("rollout buffer must be full before computing advantages");
  if (last_values.size() != n_envs) throw UsageError("need one bootstrap value per environment");
  std::vector<double> r(n_steps), v(n_steps), d(n_steps);
  for (std::size_t e = 0; e < n_envs; ++e) {
    for (std::size_t t = 0; t < n_steps; ++t) {
      const std::size_t i = t * n_envs + e;
      r[t] = rewards[i];
      v[t] = values[i];
      d[t] = dones[i];
    }
    const auto g = compute_gae(r, v, d, last_values[e], gamma, lambda);
    for (std::size_t t = 0; t < n_steps; ++t) {
      advantages[t * n_envs + e] = g.advantages[t];
      returns[t * n_envs + e] = g.returns[t];
    }
  }
}

template <class S>
LossTerms ppo_loss(const ActorCritic<S>& net, const MiniBatch<S>& batch, const PpoConfig& config,
                   Eigen::Matrix<S, Eigen::Dynamic, 1>* grad) {
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index B = batch.obs.cols();
  const Eigen::Index A = static_cast<Eigen::Index>(net.shape().action_dim);
  if (B == 0) throw UsageError("empty mini-batch");
  typename ActorCritic<S>::Cache cache;
  const auto out = net.forward(batch.obs, grad ? &cache : nullptr);
  const Vec log_std = net.log_std();
  const Vec inv_std = (-log_std.array()).exp().matrix();
  const S invB = S(1) / static_cast<S>(B);
  const S eps = static_cast<S>(config.clip_epsilon);

  Mat z = ((batch.actions - out.mean).array().colwise() * inv_std.array()).matrix();
  const S log_std_sum = log_std.sum();
  LossTerms terms;
  Vec d_logp(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const S logp = S(-0.5) * z.col(i).squaredNorm() - log_std_sum - S(0.5 * kLog2Pi) * static_cast<S>(A);
    const S log_ratio = logp - batch.old_log_probs(i);
    const S ratio = std::exp(log_ratio);
    const S adv = batch.advantages(i);
    const S s1 = ratio * adv;
    const S s2 = std::clamp(ratio, S(1) - eps, S(1) + eps) * adv;
    terms.policy_loss -= static_cast<double>(std::min(s1, s2));
    d_logp(i) = s1 <= s2 ? -adv * ratio * invB : S(0);
    terms.approx_kl += static_cast<double>((ratio - S(1)) - log_ratio);
    if (std::abs(ratio - S(1)) > eps) terms.clip_fraction += 1.0;
  }
  const Vec verr = out.value - batch.returns;
  terms.policy_loss /= static_cast<double>(B);
  terms.approx_kl /= static_cast<double>(B);
  terms.clip_fraction /= static_cast<double>(B);
  terms.value_loss = static_cast<double>(verr.squaredNorm() * invB);
  terms.entropy = static_cast<double>(log_std_sum) + 0.5 * (kLog2Pi + 1.0) * static_cast<double>(A);
  terms.total = terms.policy_loss + config.value_coef * terms.value_loss - config.entropy_coef * terms.entropy;

  if (grad) {
    grad->setZero(static_cast<Eigen::Index>(net.parameter_count()));
    // d logp / d mean = z / sigma ; d logp / d log_std = z^2 - 1
    const Mat d_mean = ((z.array().colwise() * inv_std.array()).rowwise() * d_logp.transpose().array()).matrix();
    Vec d_log_std = ((z.array().square() - S(1)).matrix() * d_logp);
    d_log_std.array() -= static_cast<S>(config.entropy_coef);
    const Vec d_value = verr * (S(2) * static_cast<S>(config.value_coef) * invB);
    net.backward(cache, out, d_mean, d_value, d_log_std, *grad);
  }
  return terms;
}

template LossTerms ppo_loss<float>(const ActorCritic<float>&, const MiniBatch<float>&, const PpoConfig&,
                                   Eigen::VectorXf*);
template LossTerms ppo_loss<double>(const ActorCritic<double>&, const MiniBatch<double>&, const PpoConfig&,
                                    Eigen::VectorXd*);

void AdamState::reset(std::size_t n) {
  m = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(n));
  v = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(n));
  step = 0;
}

void AdamState::update(Eigen::VectorXf& params, const Eigen::VectorXf& grad, double lr, double epsilon, double beta1,
                       double beta2) {
  if (m.size() != params.size()) reset(static_cast<std::size_t>(params.size()));
  ++step;
  const auto b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
  m = b1 * m + (1.0f - b1) * grad;
  v = b2 * v + (1.0f - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const auto step_size = static_cast<float>(lr / c1);
  const auto sqrt_c2 = static_cast<float>(std::sqrt(c2));
  const auto eps = static_cast<float>(epsilon);
  params.array() -= step_size * m.array() / (v.array().sqrt() / sqrt_c2 + eps);
}

UpdateMetrics ppo_update(Network& net, AdamState& adam, const RolloutBuffer& buffer, const PpoConfig& config,
                         double lr, std::mt19937_64& rng) {
  if (!buffer.full()) throw UsageError("ppo_update needs a full rollout buffer");
  const std::size_t cap = buffer.capacity();
  const auto mb = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), cap);
  std::vector<std::size_t> order(cap);
  for (std::size_t i = 0; i < cap; ++i) order[i] = i;
  if (adam.m.size() != static_cast<Eigen::Index>(net.parameter_count())) adam.reset(net.parameter_count());

  UpdateMetrics metrics;
  std::size_t count = 0;
  Eigen::VectorXf grad;
  MiniBatch<float> batch;
  std::vector<double> adv;
  for (int epoch = 0; epoch < config.epochs_per_update; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < cap; start += mb) {
      const std::size_t n = std::min(mb, cap - start);
      const auto nn = static_cast<Eigen::Index>(n);
      batch.obs.resize(buffer.observations.rows(), nn);
      batch.actions.resize(buffer.actions.rows(), nn);
      batch.old_log_probs.resize(nn);
      batch.advantages.resize(nn);
      batch.returns.resize(nn);
      adv.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[start + k];
        const auto col = static_cast<Eigen::Index>(i);
        const auto kk = static_cast<Eigen::Index>(k);
        batch.obs.col(kk) = buffer.observations.col(col);
        batch.actions.col(kk) = buffer.actions.col(col);
        batch.old_log_probs(kk) = static_cast<float>(buffer.log_probs[i]);
        batch.returns(kk) = static_cast<float>(buffer.returns[i]);
        adv[k] = buffer.advantages[i];
      }
      normalize_advantages(adv);
      for (std::size_t k = 0; k < n; ++k) batch.advantages(static_cast<Eigen::Index>(k)) = static_cast<float>(adv[k]);

      const auto terms = ppo_loss(net, batch, config, &grad);
      const double norm = static_cast<double>(grad.norm());
      if (!std::isfinite(terms.total) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "non-finite PPO loss (epoch " << epoch << ", mini-batch at " << start << "): policy "
            << terms.policy_loss << ", value " << terms.value_loss << ", kl " << terms.approx_kl << ", grad norm "
            << norm << ", log_std [" << net.log_std().transpose() << "]";
        throw TrainingError(msg.str());
      }
      if (norm > config.max_grad_norm) grad *= static_cast<float>(config.max_grad_norm / norm);
      adam.update(net.parameters(), grad, lr, config.adam_epsilon);

      metrics.policy_loss += terms.policy_loss;
      metrics.value_loss += terms.value_loss;
      metrics.entropy += terms.entropy;
      metrics.approx_kl += terms.approx_kl;
      metrics.clip_fraction += terms.clip_fraction;
      metrics.grad_norm += norm;
      ++count;
    }
  }
  if (count > 0) {
    const double inv = 1.0 / static_cast<double>(count);
    metrics.policy_loss *= inv;
    metrics.value_loss *= inv;
    metrics.entropy *= inv;
    metrics.approx_kl *= inv;
    metrics.clip_fraction *= inv;
    metrics.grad_norm *= inv;
  }
  return metrics;
}

namespace {

constexpr char kMagic[8] = {'A', 'P', 'E', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void block(const std::string& name, std::size_t rows, std::size_t cols, const float* data) {
    u16(static_cast<std::uint16_t>(name.size()));
    raw(name.data(), name.size());
    u32(static_cast<std::uint32_t>(rows));
    u32(static_cast<std::uint32_t>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i) f32(data[i]);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::string text() { return str(u32()); }
  void floats(float* out, std::size_t n) {
    need(n * 4);
    for (std::size_t i = 0; i < n; ++i) out[i] = f32();
  }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError("checkpoint is truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_sizes(ByteWriter& w, const std::vector<std::size_t>& sizes) {
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (auto s : sizes) w.u32(static_cast<std::uint32_t>(s));
}

std::vector<std::size_t> read_sizes(ByteReader& r) {
  const std::uint32_t n = r.u32();
  if (n > 64) throw CheckpointError("checkpoint header is corrupt");
  std::vector<std::size_t> out(n);
  for (auto& s : out) {
    s = r.u32();
    if (s == 0 || s > (1u << 16)) throw CheckpointError("checkpoint header is corrupt");
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState& adam,
                     const TrainingState& state, const std::string& config_text) {
  const auto& shape = net.shape();
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(shape.obs_dim));
  w.u32(static_cast<std::uint32_t>(shape.action_dim));
  write_sizes(w, shape.actor_hidden);
  write_sizes(w, shape.critic_hidden);
  w.f64(shape.leaky_slope);
  w.f64(shape.init_log_std);
  w.i64(state.env_steps);
  w.i64(state.updates);
  w.i64(adam.step);
  const bool has_moments = adam.m.size() == static_cast<Eigen::Index>(net.parameter_count());
  const auto& blocks = net.blocks();
  w.u32(static_cast<std::uint32_t>(blocks.size() + (has_moments ? 2 : 0)));
  for (const auto& b : blocks) w.block(b.name, b.rows, b.cols, net.parameters().data() + b.offset);
  if (has_moments) {
    w.block("adam.m", net.parameter_count(), 1, adam.m.data());
    w.block("adam.v", net.parameter_count(), 1, adam.v.data());
  }
  w.text(config_text);
  w.u64(fnv1a(w.bytes().data(), w.bytes().size()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::size_t> expected_obs_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 1 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    if (bytes.size() < sizeof kMagic + 1 && std::memcmp(bytes.data(), kMagic, std::min(bytes.size(), sizeof kMagic)) == 0) {
      throw CheckpointError("checkpoint is truncated");
    }
    throw CheckpointError(path.string() + " is not an apex checkpoint");
  }
  if (bytes[sizeof kMagic] != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(bytes[sizeof kMagic]));
  }
  if (bytes.size() < sizeof kMagic + 1 + 8) throw CheckpointError("checkpoint is truncated");
  const std::size_t body = bytes.size() - 8;
  ByteReader tail(bytes.data() + body, 8);
  ByteReader r(bytes.data() + sizeof kMagic + 1, body - sizeof kMagic - 1);
  NetworkShape shape;
  shape.obs_dim = r.u32();
  shape.action_dim = r.u32();
  shape.actor_hidden = read_sizes(r);
  shape.critic_hidden = read_sizes(r);
  shape.leaky_slope = r.f64();
  shape.init_log_std = r.f64();
  if (shape.obs_dim == 0 || shape.obs_dim > (1u << 16) || shape.action_dim == 0 || shape.action_dim > 64) {
    throw CheckpointError("checkpoint header is corrupt");
  }
  Checkpoint ck;
  ck.state.env_steps = r.i64();
  ck.state.updates = r.i64();
  ck.adam.step = r.i64();
  ck.network = Network(shape);
  const auto n_params = ck.network.parameter_count();
  const std::uint32_t n_blocks = r.u32();
  std::size_t seen = 0;
  for (std::uint32_t k = 0; k < n_blocks; ++k) {
    const std::string name = r.str(r.u16());
    const std::size_t rows = r.u32(), cols = r.u32();
    float* dest = nullptr;
    if (name == "adam.m" || name == "adam.v") {
      if (rows != n_params || cols != 1) throw CheckpointError("optimizer block " + name + " has the wrong size");
      auto& vec = name == "adam.m" ? ck.adam.m : ck.adam.v;
      vec.resize(static_cast<Eigen::Index>(n_params));
      dest = vec.data();
    } else {
      const auto& blocks = ck.network.blocks();
      auto it = std::find_if(blocks.begin(), blocks.end(), [&](const ParameterBlock& b) { return b.name == name; });
      if (it == blocks.end()) throw CheckpointError("unknown checkpoint block " + name);
      if (it->rows != rows || it->cols != cols) {
        throw CheckpointError("block " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                              ", expected " + std::to_string(it->rows) + "x" + std::to_string(it->cols));
      }
      dest = ck.network.parameters().data() + it->offset;
      ++seen;
    }
    r.floats(dest, rows * cols);
  }
  if (seen != ck.network.blocks().size()) throw CheckpointError("checkpoint is missing network blocks");
  ck.config_text = r.text();
  if (tail.u64() != fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");
  if (ck.adam.m.size() != static_cast<Eigen::Index>(n_params) || ck.adam.v.size() != ck.adam.m.size()) {
    ck.adam.reset(n_params);
  }
  if (expected_obs_dim && *expected_obs_dim != shape.obs_dim) {
    throw DimensionMismatchError("checkpoint expects observations of size " + std::to_string(shape.obs_dim) +
                                 ", environment produces " + std::to_string(*expected_obs_dim));
  }
  return ck;
}

std::string training_log_header() {
  return "update,env_steps,mean_reward,mean_ep_progress,policy_loss,value_loss,clip_frac,lr";
}

std::string format_log_row(const UpdateLog& r) {
  return std::to_string(r.update) + ',' + std::to_string(r.env_steps) + ',' + format_double(r.mean_reward) + ',' +
         format_double(r.mean_ep_progress) + ',' + format_double(r.policy_loss) + ',' + format_double(r.value_loss) +
         ',' + format_double(r.clip_frac) + ',' + format_double(r.lr);
}

env::Action Policy::act(const env::Observation& obs) const {
  Eigen::MatrixXf x(static_cast<Eigen::Index>(obs.size()), 1);
  for (std::size_t i = 0; i < obs.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<float>(obs[i]);
  const auto mean = net_.actor_mean(x);
  return {static_cast<double>(mean(0, 0)), static_cast<double>(mean(1, 0))};
}

TrainResult train(std::shared_ptr<const track::TrackDefinition> track, const dynamics::VehicleParams& nominal,
                  const env::EnvConfig& env_config, const PpoConfig& config, const TrainOptions& options) {
  config.validate();
  env_config.validate();
  const std::size_t obs_dim = env_config.observation_size();
  const auto n_envs = static_cast<std::size_t>(config.n_envs);
  const auto n_steps = static_cast<std::size_t>(config.n_steps);

  TrainResult result;
  result.network = Network(network_shape(config, obs_dim));
  result.network.initialize(derive_seed(config.seed, 0));
  result.adam.reset(result.network.parameter_count());
  if (options.resume_from) {
    auto ckpt = load_checkpoint(*options.resume_from, obs_dim);
    if (!(ckpt.network.shape().actor_hidden == config.actor_hidden &&
          ckpt.network.shape().critic_hidden == config.critic_hidden)) {
      throw DimensionMismatchError("checkpoint network layout differs from the training configuration");
    }
    result.network = std::move(ckpt.network);
    result.adam = std::move(ckpt.adam);
    result.state = ckpt.state;
  }

  const std::int64_t per_update = static_cast<std::int64_t>(n_envs * n_steps);
  const std::int64_t total_updates = config.total_steps / per_update;
  if (result.state.updates >= total_updates) return result;

  std::ofstream log_file;
  if (!options.log_path.empty()) {
    const bool append = options.resume_from.has_value() && std::filesystem::exists(options.log_path);
    log_file.open(options.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write training log " + options.log_path.string());
    if (!append) log_file << training_log_header() << '\n';
  }
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);
  const std::string config_text = [&] {
    std::ostringstream out;
    auto kv = config_to_keyvalues(config);
    kv.merge(env::config_to_keyvalues(env_config));
    kv.write(out);
    return out.str();
  }();

  const auto resume_salt = static_cast<std::uint64_t>(result.state.updates);
  auto envs = env::make_envs(track, nominal, env_config, n_envs, derive_seed(derive_seed(config.seed, 1), resume_salt));
  std::mt19937_64 action_rng(derive_seed(derive_seed(config.seed, 2), resume_salt));
  std::mt19937_64 update_rng(derive_seed(derive_seed(config.seed, 3), resume_salt));
  std::unique_ptr<ThreadPool> pool;
  if (config.threads > 1) pool = std::make_unique<ThreadPool>(static_cast<unsigned>(config.threads));

  Eigen::MatrixXf obs(static_cast<Eigen::Index>(obs_dim), static_cast<Eigen::Index>(n_envs));
  auto set_obs = [&](std::size_t e, const env::Observation& o) {
    for (std::size_t k = 0; k < obs_dim; ++k) {
      obs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(e)) = static_cast<float>(o[k]);
    }
  };
  for (std::size_t e = 0; e < n_envs; ++e) set_obs(e, envs[e].reset());

  std::deque<double> recent_progress;
  RolloutBuffer buffer(n_envs, n_steps, obs_dim);
  std::vector<env::Action> actions(n_envs);
  std::vector<double> mean(2), log_std(2);
  std::vector<double> raw_rewards(buffer.capacity());

  while (result.state.updates < total_updates) {
    auto& net = result.network;
    const Eigen::VectorXf ls = net.log_std();
    log_std = {static_cast<double>(ls(0)), static_cast<double>(ls(1))};
    buffer.filled = 0;
    for (std::size_t t = 0; t < n_steps; ++t) {
      const auto out = net.forward(obs);
      const std::size_t base = t * n_envs;
      buffer.observations.middleCols(static_cast<Eigen::Index>(base), static_cast<Eigen::Index>(n_envs)) = obs;
      for (std::size_t e = 0; e < n_envs; ++e) {
        const auto col = static_cast<Eigen::Index>(e);
        mean = {static_cast<double>(out.mean(0, col)), static_cast<double>(out.mean(1, col))};
        const auto s = sample_action(mean, log_std, action_rng);
        actions[e] = {s.clipped[0], s.clipped[1]};
        buffer.actions(0, static_cast<Eigen::Index>(base + e)) = static_cast<float>(s.raw[0]);
        buffer.actions(1, static_cast<Eigen::Index>(base + e)) = static_cast<float>(s.raw[1]);
        buffer.log_probs[base + e] = s.log_prob;
        buffer.values[base + e] = static_cast<double>(out.value(col));
      }
      auto results = env::step_batch(envs, actions, pool.get());

      // Truncated (time-limit) episodes bootstrap from the value of the final observation.
      std::vector<std::size_t> truncated;
      for (std::size_t e = 0; e < n_envs; ++e) {
        if (results[e].truncated && !results[e].terminated) truncated.push_back(e);
      }
      Eigen::VectorXf tail_values;
      if (!truncated.empty()) {
        Eigen::MatrixXf tail(static_cast<Eigen::Index>(obs_dim), static_cast<Eigen::Index>(truncated.size()));
        for (std::size_t k = 0; k < truncated.size(); ++k) {
          const auto& o = *results[truncated[k]].terminal_observation;
          for (std::size_t j = 0; j < obs_dim; ++j) {
            tail(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = static_cast<float>(o[j]);
          }
        }
        tail_values = net.value(tail);
      }
      std::size_t tk = 0;
      for (std::size_t e = 0; e < n_envs; ++e) {
        const auto& r = results[e];
        const bool done = r.terminated || r.truncated;
        double reward = r.reward;
        raw_rewards[base + e] = r.reward;
        if (r.truncated && !r.terminated) reward += config.gamma * static_cast<double>(tail_values(static_cast<Eigen::Index>(tk++)));
        buffer.rewards[base + e] = reward;
        buffer.dones[base + e] = done ? 1.0 : 0.0;
        if (done) {
          recent_progress.push_back(r.info.episode_progress);
          if (recent_progress.size() > static_cast<std::size_t>(config.progress_window)) recent_progress.pop_front();
        }
        set_obs(e, r.observation);
      }
      buffer.filled += n_envs;
    }
    const Eigen::VectorXf last = net.value(obs);
    std::vector<double> last_values(n_envs);
    for (std::size_t e = 0; e < n_envs; ++e) last_values[e] = static_cast<double>(last(static_cast<Eigen::Index>(e)));
    buffer.finish(last_values, config.gamma, config.gae_lambda);

    const double progress = total_updates > 1 ? static_cast<double>(result.state.updates) / static_cast<double>(total_updates - 1) : 0.0;
    const double lr = lr_schedule(progress, config);
    const auto metrics = ppo_update(net, result.adam, buffer, config, lr, update_rng);
    ++result.state.updates;
    result.state.env_steps += per_update;

    UpdateLog row;
    row.update = result.state.updates;
    row.env_steps = result.state.env_steps;
    double sum = 0.0;
    for (double r : raw_rewards) sum += r;
    row.mean_reward = sum / static_cast<double>(raw_rewards.size());
    double psum = 0.0;
    for (double p : recent_progress) psum += p;
    row.mean_ep_progress = recent_progress.empty() ? 0.0 : psum / static_cast<double>(recent_progress.size());
    row.policy_loss = metrics.policy_loss;
    row.value_loss = metrics.value_loss;
    row.clip_frac = metrics.clip_fraction;
    row.lr = lr;
    result.log.push_back(row);
    if (log_file.is_open()) {
      log_file << format_log_row(row) << '\n';
      log_file.flush();
    }
    if (options.on_update) options.on_update(row);
    if (!options.checkpoint_dir.empty()) {
      const bool last_update = result.state.updates == total_updates;
      if (last_update || (config.checkpoint_every > 0 && result.state.updates % config.checkpoint_every == 0)) {
        save_checkpoint(options.checkpoint_dir / "latest.ckpt", net, result.adam, result.state, config_text);
      }
      if (config.checkpoint_every > 0 && result.state.updates % config.checkpoint_every == 0) {
        save_checkpoint(options.checkpoint_dir / ("update_" + std::to_string(result.state.updates) + ".ckpt"), net,
                        result.adam, result.state, config_text);
      }
    }
  }
  return result;
}

}  // namespace apex::trainer
