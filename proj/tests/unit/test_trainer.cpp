#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "apex/errors.hpp"
#include "apex/trainer.hpp"
#include "apex/track.hpp"

using namespace apex;
using namespace apex::trainer;

namespace {

NetworkShape small_shape(std::size_t obs = 5) {
  NetworkShape s;
  s.obs_dim = obs;
  s.actor_hidden = {6, 4};
  s.critic_hidden = {7};
  return s;
}

ActorCritic<double> random_network(std::uint64_t seed) {
  ActorCritic<double> net(small_shape());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.7);
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) net.parameters()(i) = n(rng);
  return net;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

std::vector<double> brute_force_advantages(const std::vector<double>& r, const std::vector<double>& v,
                                           const std::vector<double>& d, double bootstrap, double gamma,
                                           double lambda) {
  const std::size_t n = r.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double weight = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      const double next = d[k] > 0.5 ? 0.0 : (k + 1 < n ? v[k + 1] : bootstrap);
      const double delta = r[k] + gamma * next - v[k];
      out[t] += weight * delta;
      if (d[k] > 0.5) break;
      weight *= gamma * lambda;
    }
  }
  return out;
}

PpoConfig tiny_config() {
  PpoConfig c;
  c.n_envs = 2;
  c.n_steps = 16;
  c.batch_size = 16;
  c.epochs_per_update = 2;
  c.total_steps = 64;
  c.actor_hidden = {8};
  c.critic_hidden = {8};
  c.seed = 11;
  c.checkpoint_every = 0;
  return c;
}

std::shared_ptr<const track::TrackDefinition> oval() {
  static auto t = std::make_shared<const track::TrackDefinition>(
      track::TrackDefinition::from_waypoints(track::generate_oval(17.0, 1.0)));
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("apex_trainer_" + name);
}

}  // namespace

TEST(Network, LeakyReluNegativeSlope) {
  EXPECT_DOUBLE_EQ(leaky_relu(-1.0, 0.2), -0.2);
  EXPECT_DOUBLE_EQ(leaky_relu(3.0, 0.2), 3.0);
  EXPECT_DOUBLE_EQ(leaky_relu(0.0, 0.2), 0.0);
}

TEST(Network, ZeroParametersGiveZeroOutputs) {
  ActorCritic<float> net(small_shape());
  std::mt19937_64 rng(1);
  const Eigen::MatrixXf obs = random_matrix(5, 7, rng).cast<float>();
  const auto out = net.forward(obs);
  EXPECT_EQ(out.mean.cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(out.value.cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_NEAR(net.log_std()(0), std::log(0.3f), 1e-6);
}

TEST(Network, MeansStayInUnitInterval) {
  auto net = random_network(3);
  net.parameters() *= 20.0;
  std::mt19937_64 rng(2);
  const auto out = net.forward(random_matrix(5, 50, rng, 10.0));
  EXPECT_LE(out.mean.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Network, RejectsWrongObservationSize) {
  ActorCritic<float> net(small_shape());
  EXPECT_THROW(net.forward(Eigen::MatrixXf::Zero(4, 1)), UsageError);
}

TEST(Network, OrthogonalInitialization) {
  NetworkShape s = small_shape(6);
  s.actor_hidden = {6};
  ActorCritic<double> net(s);
  net.initialize(5);
  const auto& b = net.blocks()[0];
  Eigen::Map<const Eigen::MatrixXd> w(net.parameters().data() + b.offset, 6, 6);
  EXPECT_LT((w.transpose() * w - 2.0 * Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  auto net = random_network(7);
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd obs = random_matrix(5, 4, rng);
  const Eigen::MatrixXd wm = random_matrix(2, 4, rng);
  const Eigen::VectorXd wv = random_matrix(4, 1, rng);
  const Eigen::VectorXd wl = random_matrix(2, 1, rng);
  auto objective = [&](const ActorCritic<double>& n) {
    const auto o = n.forward(obs);
    return (o.mean.array() * wm.array()).sum() + o.value.dot(wv) + Eigen::VectorXd(n.log_std()).dot(wl);
  };
  ActorCritic<double>::Cache cache;
  const auto out = net.forward(obs, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.parameters().size());
  net.backward(cache, out, wm, wv, wl, grad);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) {
    auto plus = net, minus = net;
    plus.parameters()(i) += h;
    minus.parameters()(i) -= h;
    const double fd = (objective(plus) - objective(minus)) / (2 * h);
    EXPECT_NEAR(grad(i), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "parameter " << i;
  }
}

TEST(Sampling, TinyStdReturnsMean) {
  std::mt19937_64 rng(1);
  const std::vector<double> mean{0.3, -0.4}, log_std{-20.0, -20.0};
  const auto s = sample_action(mean, log_std, rng);
  EXPECT_NEAR(s.raw[0], 0.3, 1e-8);
  EXPECT_NEAR(s.raw[1], -0.4, 1e-8);
}

TEST(Sampling, EmpiricalStdMatches) {
  std::mt19937_64 rng(2);
  const std::vector<double> mean{0.0, 0.5}, log_std{std::log(0.3), std::log(0.1)};
  double s0 = 0, s1 = 0, q0 = 0, q1 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto a = sample_action(mean, log_std, rng);
    s0 += a.raw[0];
    s1 += a.raw[1];
    q0 += a.raw[0] * a.raw[0];
    q1 += a.raw[1] * a.raw[1];
  }
  const double sd0 = std::sqrt(q0 / n - (s0 / n) * (s0 / n));
  const double sd1 = std::sqrt(q1 / n - (s1 / n) * (s1 / n));
  EXPECT_NEAR(sd0, 0.3, 0.003);
  EXPECT_NEAR(sd1, 0.1, 0.001);
}

TEST(Sampling, ClippedActionsInRange) {
  std::mt19937_64 rng(3);
  const std::vector<double> mean{0.95, -0.95}, log_std{0.0, 0.0};
  for (int i = 0; i < 1000; ++i) {
    const auto a = sample_action(mean, log_std, rng);
    for (double c : a.clipped) {
      EXPECT_GE(c, -1.0);
      EXPECT_LE(c, 1.0);
    }
    EXPECT_NEAR(a.log_prob, gaussian_log_prob(a.raw, mean, log_std), 1e-12);
  }
}

TEST(Sampling, LogProbAtMean) {
  const std::vector<double> x{0.1, 0.2}, log_std{std::log(0.5), std::log(2.0)};
  const double expected = -std::log(2 * M_PI) - std::log(0.5) - std::log(2.0);
  EXPECT_NEAR(gaussian_log_prob(x, x, log_std), expected, 1e-12);
}

TEST(Gae, ThreeStepExample) {
  const std::vector<double> r{1, 1, 1}, v{0, 0, 0}, d{0, 0, 0};
  const auto g = compute_gae(r, v, d, 0.0, 0.99, 1.0);
  EXPECT_NEAR(g.advantages[0], 2.9701, 1e-12);
  EXPECT_NEAR(g.advantages[1], 1.99, 1e-12);
  EXPECT_NEAR(g.advantages[2], 1.0, 1e-12);
}

TEST(Gae, LambdaZeroIsTemporalDifference) {
  const std::vector<double> r{0.5, -1.0, 2.0}, v{0.3, 0.1, -0.2}, d{0, 1, 0};
  const auto g = compute_gae(r, v, d, 0.7, 0.9, 0.0);
  EXPECT_NEAR(g.advantages[0], 0.5 + 0.9 * 0.1 - 0.3, 1e-12);
  EXPECT_NEAR(g.advantages[1], -1.0 - 0.1, 1e-12);
  EXPECT_NEAR(g.advantages[2], 2.0 + 0.9 * 0.7 + 0.2, 1e-12);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(g.returns[t], g.advantages[t] + v[t], 1e-12);
}

TEST(Gae, MatchesBruteForceOnAllDonePatterns) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t len = 1; len <= 6; ++len) {
    for (unsigned mask = 0; mask < (1u << len); ++mask) {
      std::vector<double> r(len), v(len), d(len);
      for (std::size_t t = 0; t < len; ++t) {
        r[t] = n(rng);
        v[t] = n(rng);
        d[t] = (mask >> t) & 1u ? 1.0 : 0.0;
      }
      const double boot = n(rng);
      for (double gamma : {0.0, 0.5, 0.99}) {
        for (double lambda : {0.0, 0.95, 1.0}) {
          const auto g = compute_gae(r, v, d, boot, gamma, lambda);
          const auto expected = brute_force_advantages(r, v, d, boot, gamma, lambda);
          for (std::size_t t = 0; t < len; ++t) ASSERT_NEAR(g.advantages[t], expected[t], 1e-10);
        }
      }
    }
  }
}

TEST(Gae, RejectsLengthMismatch) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(compute_gae(a, b, a, 0.0, 0.9, 0.9), UsageError);
}

TEST(Advantages, NormalizedMoments) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(3.0, 7.0);
  std::vector<double> a(1000);
  for (auto& x : a) x = n(rng);
  normalize_advantages(a);
  double mean = 0, sq = 0;
  for (double x : a) mean += x;
  mean /= a.size();
  for (double x : a) sq += (x - mean) * (x - mean);
  EXPECT_LT(std::abs(mean), 1e-6);
  EXPECT_NEAR(std::sqrt(sq / a.size()), 1.0, 1e-6);
}

TEST(Advantages, ConstantBecomesZero) {
  std::vector<double> a(10, 4.0);
  normalize_advantages(a);
  for (double x : a) EXPECT_EQ(x, 0.0);
}

TEST(RolloutBuffer, PerEnvironmentGae) {
  RolloutBuffer buf(2, 3, 1);
  buf.rewards = {1, 10, 1, 10, 1, 10};
  buf.values.assign(6, 0.0);
  buf.dones = {0, 0, 0, 1, 0, 0};
  buf.filled = 6;
  const std::vector<double> last{0.0, 0.0};
  buf.finish(last, 0.5, 1.0);
  EXPECT_NEAR(buf.advantages[0], 1 + 0.5 + 0.25, 1e-12);
  EXPECT_NEAR(buf.advantages[1], 10 + 0.5 * 10, 1e-12);
  EXPECT_NEAR(buf.advantages[3], 10, 1e-12);
  EXPECT_NEAR(buf.advantages[5], 10, 1e-12);
}

TEST(PpoLoss, GradientMatchesFiniteDifferences) {
  auto net = random_network(9);
  std::mt19937_64 rng(10);
  const Eigen::Index B = 12;
  MiniBatch<double> batch;
  batch.obs = random_matrix(5, B, rng);
  batch.actions = random_matrix(2, B, rng, 0.5);
  batch.returns = random_matrix(B, 1, rng);
  batch.advantages = random_matrix(B, 1, rng);
  batch.old_log_probs.resize(B);
  const auto out = net.forward(batch.obs);
  const Eigen::VectorXd ls = net.log_std();
  std::uniform_real_distribution<double> shift(-0.6, 0.6);
  for (Eigen::Index i = 0; i < B; ++i) {
    const std::vector<double> a{batch.actions(0, i), batch.actions(1, i)};
    const std::vector<double> m{out.mean(0, i), out.mean(1, i)};
    const std::vector<double> s{ls(0), ls(1)};
    batch.old_log_probs(i) = gaussian_log_prob(a, m, s) + shift(rng);
  }
  PpoConfig config;
  config.entropy_coef = 0.01;
  Eigen::VectorXd grad;
  const auto terms = ppo_loss(net, batch, config, &grad);
  EXPECT_GT(terms.clip_fraction, 0.0);
  EXPECT_LT(terms.clip_fraction, 1.0);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) {
    auto plus = net, minus = net;
    plus.parameters()(i) += h;
    minus.parameters()(i) -= h;
    const double fd = (ppo_loss(plus, batch, config).total - ppo_loss(minus, batch, config).total) / (2 * h);
    EXPECT_NEAR(grad(i), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "parameter " << i;
  }
}

TEST(PpoLoss, OnPolicyRatioIsOne) {
  auto net = random_network(12);
  std::mt19937_64 rng(13);
  MiniBatch<double> batch;
  batch.obs = random_matrix(5, 6, rng);
  const auto out = net.forward(batch.obs);
  batch.actions = out.mean;
  batch.returns = out.value;
  batch.advantages = random_matrix(6, 1, rng);
  batch.old_log_probs.resize(6);
  const Eigen::VectorXd ls = net.log_std();
  for (Eigen::Index i = 0; i < 6; ++i) {
    batch.old_log_probs(i) = -ls.sum() - std::log(2 * M_PI);
  }
  PpoConfig config;
  const auto terms = ppo_loss(net, batch, config);
  EXPECT_NEAR(terms.policy_loss, -batch.advantages.mean(), 1e-12);
  EXPECT_NEAR(terms.value_loss, 0.0, 1e-12);
  EXPECT_NEAR(terms.approx_kl, 0.0, 1e-12);
  EXPECT_EQ(terms.clip_fraction, 0.0);
}

TEST(LearningRate, LinearSchedule) {
  PpoConfig c;
  EXPECT_DOUBLE_EQ(lr_schedule(0.0, c), 1e-3);
  EXPECT_NEAR(lr_schedule(0.5, c), 5.5e-4, 1e-15);
  EXPECT_DOUBLE_EQ(lr_schedule(1.0, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(2.0, c), 1e-4);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  AdamState adam;
  Eigen::VectorXf p = Eigen::VectorXf::Zero(3);
  Eigen::VectorXf g(3);
  g << 2.0f, -0.5f, 0.0f;
  adam.update(p, g, 0.01, 1e-12);
  EXPECT_NEAR(p(0), -0.01f, 1e-6);
  EXPECT_NEAR(p(1), 0.01f, 1e-6);
  EXPECT_EQ(p(2), 0.0f);
  EXPECT_EQ(adam.step, 1);
}

TEST(PpoUpdate, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto cfg = tiny_config();
  Network net(network_shape(cfg, 5));
  net.initialize(1);
  RolloutBuffer buf(2, 16, 5);
  std::mt19937_64 rng(2);
  buf.observations = random_matrix(5, 32, rng).cast<float>();
  buf.actions = random_matrix(2, 32, rng, 0.3).cast<float>();
  for (std::size_t i = 0; i < 32; ++i) {
    buf.rewards[i] = std::sin(static_cast<double>(i));
    buf.log_probs[i] = -1.0;
  }
  buf.filled = 32;
  buf.finish(std::vector<double>{0.0, 0.0}, 0.99, 0.95);
  const Eigen::VectorXf before = net.parameters();
  AdamState adam;
  ppo_update(net, adam, buf, cfg, 0.0, rng);
  EXPECT_EQ((net.parameters() - before).cwiseAbs().maxCoeff(), 0.0f);
  ppo_update(net, adam, buf, cfg, 1e-3, rng);
  EXPECT_GT((net.parameters() - before).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(PpoUpdate, NonFiniteLossRaises) {
  const auto cfg = tiny_config();
  Network net(network_shape(cfg, 5));
  net.initialize(1);
  RolloutBuffer buf(2, 16, 5);
  buf.filled = 32;
  buf.returns.assign(32, std::numeric_limits<double>::quiet_NaN());
  AdamState adam;
  std::mt19937_64 rng(1);
  EXPECT_THROW(ppo_update(net, adam, buf, cfg, 1e-3, rng), TrainingError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Network net(small_shape(30));
  net.initialize(4);
  AdamState adam;
  adam.reset(net.parameter_count());
  adam.m.setRandom();
  adam.v = adam.m.cwiseAbs();
  adam.step = 17;
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, net, adam, {123456, 42}, "gamma = 0.99\n");
  const auto ck = load_checkpoint(path, 30);
  EXPECT_EQ(ck.network.shape(), net.shape());
  EXPECT_EQ(ck.network.parameters(), net.parameters());
  EXPECT_EQ(ck.adam.m, adam.m);
  EXPECT_EQ(ck.adam.v, adam.v);
  EXPECT_EQ(ck.adam.step, 17);
  EXPECT_EQ(ck.state.env_steps, 123456);
  EXPECT_EQ(ck.state.updates, 42);
  EXPECT_EQ(ck.config_text, "gamma = 0.99\n");
  std::ifstream in(path, std::ios::binary);
  char magic[9] = {};
  in.read(magic, 8);
  EXPECT_STREQ(magic, "APEXCKPT");
  EXPECT_EQ(in.get(), 1);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ObservationMismatchRaises) {
  Network net(small_shape(30));
  const auto path = temp_path("mismatch.ckpt");
  save_checkpoint(path, net, {}, {});
  EXPECT_THROW(load_checkpoint(path, 11), DimensionMismatchError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncationAndCorruptionRaise) {
  Network net(small_shape(11));
  net.initialize(2);
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(path, net, {}, {});
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{9}, std::size_t{40}, bytes.size() / 2,
                          bytes.size() - 1}) {
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(cut));
    EXPECT_THROW(load_checkpoint(path), CheckpointError) << "cut at " << cut;
  }
  std::string flipped = bytes;
  flipped[bytes.size() - 40] ^= 0x10;
  std::ofstream(path, std::ios::binary | std::ios::trunc).write(flipped.data(),
                                                                static_cast<std::streamsize>(flipped.size()));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Config, KeyValueRoundTrip) {
  PpoConfig c = tiny_config();
  c.gamma = 0.97;
  c.actor_hidden = {32, 16};
  const auto back = config_from_keyvalues(config_to_keyvalues(c));
  EXPECT_EQ(back.gamma, 0.97);
  EXPECT_EQ(back.actor_hidden, c.actor_hidden);
  EXPECT_EQ(back.n_envs, c.n_envs);
  EXPECT_EQ(back.total_steps, c.total_steps);
  KeyValueFile bad;
  bad.set("gamma", 1.5);
  EXPECT_THROW(config_from_keyvalues(bad), ConfigError);
}

TEST(Train, ZeroStepsLeavesInitialNetwork) {
  auto cfg = tiny_config();
  cfg.total_steps = 0;
  const auto result = train(oval(), {}, {}, cfg);
  Network fresh(network_shape(cfg, 30));
  fresh.initialize(derive_seed(cfg.seed, 0));
  EXPECT_EQ(result.network.parameters(), fresh.parameters());
  EXPECT_TRUE(result.log.empty());
}

TEST(Train, DeterministicForSeed) {
  const auto cfg = tiny_config();
  const auto a = train(oval(), {}, {}, cfg);
  const auto b = train(oval(), {}, {}, cfg);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.network.parameters(), b.network.parameters());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].mean_reward, b.log[i].mean_reward);
    EXPECT_EQ(a.log[i].policy_loss, b.log[i].policy_loss);
  }
  EXPECT_EQ(a.state.env_steps, 64);
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(train(oval(), {}, {}, other).network.parameters(), a.network.parameters());
}

TEST(Train, WritesLogAndResumes) {
  auto cfg = tiny_config();
  const auto dir = temp_path("run");
  std::filesystem::remove_all(dir);
  TrainOptions opts;
  opts.checkpoint_dir = dir;
  opts.log_path = dir / "train.csv";
  std::filesystem::create_directories(dir);
  train(oval(), {}, {}, cfg, opts);
  ASSERT_TRUE(std::filesystem::exists(dir / "latest.ckpt"));
  cfg.total_steps = 128;
  opts.resume_from = dir / "latest.ckpt";
  const auto resumed = train(oval(), {}, {}, cfg, opts);
  ASSERT_EQ(resumed.log.size(), 2u);
  EXPECT_EQ(resumed.log.front().update, 3);
  EXPECT_EQ(resumed.state.env_steps, 128);
  std::ifstream in(opts.log_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "update,env_steps,mean_reward,mean_ep_progress,policy_loss,value_loss,clip_frac,lr");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  std::filesystem::remove_all(dir);
}

TEST(Policy, ActsWithMean) {
  const auto cfg = tiny_config();
  Network net(network_shape(cfg, 30));
  net.initialize(3);
  Policy policy(net);
  const env::Observation obs(30, 0.1);
  const auto a = policy.act(obs);
  Eigen::MatrixXf x = Eigen::MatrixXf::Constant(30, 1, 0.1f);
  const auto mean = net.actor_mean(x);
  EXPECT_FLOAT_EQ(static_cast<float>(a.steer), mean(0, 0));
  EXPECT_FLOAT_EQ(static_cast<float>(a.throttle), mean(1, 0));
}
