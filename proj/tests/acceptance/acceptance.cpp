#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "apex/dynamics.hpp"
#include "apex/env.hpp"
#include "apex/errors.hpp"
#include "apex/evalkit.hpp"
#include "apex/sysid.hpp"
#include "apex/track.hpp"
#include "apex/trainer.hpp"

namespace fs = std::filesystem;
using namespace apex;

namespace {

// Tolerances and budgets.
constexpr double kFrenetTolerance = 1e-4;
constexpr double kFrenetRuntime = 1.0;
constexpr double kActuatorTolerance = 1e-4;
constexpr double kEoffTolerance = 1e-9;
constexpr double kEoffRefinement = 0.01;
constexpr double kSavgolTolerance = 1e-10;
constexpr double kSysIdTolerance = 0.02;
constexpr double kSysIdRuntime = 600.0;
constexpr double kNetworkGradTolerance = 1e-4;
constexpr double kSysIdGradTolerance = 1e-3;
constexpr double kGaeTolerance = 1e-10;
constexpr double kLearningLaps = 2.0;
constexpr double kLearningGain = 5.0;
constexpr double kLearningRuntime = 3600.0;
constexpr int kSmoothingWindow = 20;
constexpr double kWarmupFraction = 0.25;
constexpr double kMaxDip = 0.10;
constexpr double kHeldOutFriction = 0.9;  // held-out mu relative to nominal
constexpr int kEvalLaps = 20;
constexpr double kThroughputReference = 2e5;  // env steps/s with 8 cores
constexpr int kThroughputEnvs = 400;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  Outcome outcome;
};

std::shared_ptr<const track::TrackDefinition> make_track(const std::vector<track::Waypoint>& pts) {
  return std::make_shared<const track::TrackDefinition>(track::TrackDefinition::from_waypoints(pts));
}

std::shared_ptr<const track::TrackDefinition> desk_oval() { return make_track(track::generate_oval(17.0, 1.0)); }

Outcome frenet_round_trip() {
  std::vector<std::shared_ptr<const track::TrackDefinition>> tracks{
      desk_oval(), make_track(track::generate_lshape(17.0, 1.0)), make_track(track::generate_random(20.0, 1.2, 1)),
      make_track(track::generate_random(25.0, 1.0, 2)), make_track(track::generate_random(30.0, 1.5, 3))};
  std::mt19937_64 rng(2024);
  double worst_s = 0.0, worst_n = 0.0, worst_u = 0.0;
  const auto t0 = Clock::now();
  for (const auto& tr : tracks) {
    std::uniform_real_distribution<double> s_dist(0.0, tr->total_length());
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const double s = s_dist(rng);
      const double n = 0.95 * unit(rng) * tr->half_width_at(s);
      const double u = 0.5 * unit(rng);
      const auto g = track::frenet_to_global(*tr, s, n);
      const auto f = track::global_to_frenet(*tr, g.x, g.y, g.yaw + u);
      worst_s = std::max(worst_s, std::abs(track::progress_delta(s, f.s, tr->total_length())));
      worst_n = std::max(worst_n, std::abs(f.n - n));
      worst_u = std::max(worst_u, std::abs(track::wrap_angle(f.u - u)));
    }
  }
  const double runtime = seconds_since(t0);
  const bool pass = worst_s < kFrenetTolerance && worst_n < kFrenetTolerance && worst_u < kFrenetTolerance &&
                    runtime < kFrenetRuntime;
  return {pass, "max |ds| " + fmt(worst_s) + " m, |dn| " + fmt(worst_n) + " m, |du| " + fmt(worst_u) +
                    " rad over 5000 points in " + fmt(runtime, 3) + " s"};
}

Outcome actuator_fidelity() {
  double worst = 0.0;
  for (double tau : {0.05, 0.1, 0.2}) {
    dynamics::VehicleParams p;
    p.T_delta = tau;
    p.T_omega = tau;
    const dynamics::ActuatorCommand cmd{0.3, 60.0};
    dynamics::VehicleState x;
    const double dt = 0.01;
    for (int k = 1; k <= 100; ++k) {
      x = dynamics::integrate_step(x, cmd, p, {dt, 10, false});
      const double t = k * dt;
      const double expected = 1.0 - std::exp(-t / tau);
      worst = std::max(worst, std::abs(x.delta - cmd.delta_ref * expected));
      worst = std::max(worst, std::abs(x.omega - cmd.omega_ref * expected) / cmd.omega_ref);
    }
  }
  return {worst < kActuatorTolerance, "max deviation " + fmt(worst) + " (delta in rad, omega relative)"};
}

Outcome reward_telescoping() {
  const auto tr = desk_oval();
  env::RacingEnv e(tr, {}, {}, 0);
  e.reset_at(0.5, 1.0);
  evalkit::BaselineOptions bo;
  double total = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const auto r = e.step_command(evalkit::baseline_controller(e.state(), e.frenet(), *tr, e.params(), bo));
    if (r.terminated) return {false, "baseline left the track at step " + std::to_string(k)};
    total += r.reward;
    if (r.info.lap_count == 1) {
      total -= track::progress_delta(0.5, e.frenet().s, tr->total_length());
      const double err = std::abs(total - tr->total_length());
      return {err <= 2.0 * tr->resolution(), "lap reward " + fmt(total, 8) + " vs length " +
                                                 fmt(tr->total_length(), 8) + " (|err| " + fmt(err) + " m)"};
    }
  }
  return {false, "no lap completed"};
}

Outcome e_off_correctness() {
  std::vector<double> t, e;
  for (int k = 0; k <= 40; ++k) {
    t.push_back(0.05 * k);
    e.push_back(0.1);
  }
  const double rect = evalkit::integrate_off_track(t, e, 1);

  const auto tr = desk_oval();
  auto excursion = [&](double dt) {
    evalkit::TrajectoryLog log;
    log.dt = dt;
    for (int k = 0; k * dt <= 6.0 + 1e-12; ++k) {
      const double time = k * dt;
      evalkit::TrajectorySample p;
      p.t = time;
      p.s = std::fmod(2.0 * time, tr->total_length());
      p.n = tr->half_width_at(p.s) * (0.9 + 0.25 * std::sin(1.3 * time) + 0.1 * std::sin(4.1 * time));
      log.samples.push_back(p);
    }
    return evalkit::compute_e_off(log, *tr, 1);
  };
  const double coarse = excursion(0.05), fine = excursion(0.025);
  const double change = std::abs(coarse - fine) / fine;
  const bool pass = std::abs(rect - 0.2) < kEoffTolerance && change < kEoffRefinement;
  return {pass, "rectangle " + fmt(rect, 12) + " m*s; halving dt changes E_off by " + fmt(100.0 * change, 3) + "%"};
}

Outcome savgol_exactness() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> coef(0.0, 1.0);
  double worst = 0.0;
  for (int degree = 0; degree <= 3; ++degree) {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> cx(degree + 1), cy(degree + 1), cyaw(degree + 1);
      for (int i = 0; i <= degree; ++i) {
        cx[i] = coef(rng);
        cy[i] = coef(rng);
        cyaw[i] = 0.5 * coef(rng);
      }
      auto poly = [](const std::vector<double>& c, double t) {
        double v = 0.0;
        for (std::size_t i = c.size(); i-- > 0;) v = v * t + c[i];
        return v;
      };
      auto dpoly = [](const std::vector<double>& c, double t) {
        double v = 0.0;
        for (std::size_t i = c.size(); i-- > 1;) v = v * t + static_cast<double>(i) * c[i];
        return v;
      };
      sysid::DriveLog log;
      for (int k = 0; k < 200; ++k) {
        const double t = 0.01 * k;
        log.t.push_back(t);
        log.x.push_back(poly(cx, t));
        log.y.push_back(poly(cy, t));
        log.yaw.push_back(poly(cyaw, t));
        log.omega.push_back(0.0);
        log.delta.push_back(0.0);
        log.delta_ref.push_back(0.0);
        log.omega_ref.push_back(0.0);
      }
      const auto v = sysid::estimate_velocities(log, 11, 3);
      for (std::size_t k = 5; k + 5 < log.size(); ++k) {
        const double t = log.t[k], yaw = log.yaw[k];
        const double xd = dpoly(cx, t), yd = dpoly(cy, t);
        worst = std::max(worst, std::abs(v.vx[k] - (std::cos(yaw) * xd + std::sin(yaw) * yd)));
        worst = std::max(worst, std::abs(v.vy[k] - (-std::sin(yaw) * xd + std::cos(yaw) * yd)));
        worst = std::max(worst, std::abs(v.r[k] - dpoly(cyaw, t)));
      }
    }
  }
  return {worst < kSavgolTolerance, "max interior error " + fmt(worst) + " for polynomials of degree 0-3"};
}

Outcome sysid_recovery(const fs::path& dir) {
  const dynamics::VehicleParams truth;
  const auto syn = sysid::simulate_log(truth, 60.0, 7);
  const auto log_path = dir / "sysid_log.csv";
  sysid::write_log(log_path, syn.log);
  auto init = truth;
  init.m *= 1.2;
  init.Iz *= 0.8;
  init.mu *= 1.2;
  init.T_delta *= 0.8;
  init.T_omega *= 1.2;
  sysid::SysIdConfig cfg;
  const auto t0 = Clock::now();
  const auto log = sysid::ingest_log(log_path);
  const auto vel = sysid::estimate_velocities(log);
  const auto segments = sysid::make_segments(log, vel, cfg.horizon);
  const auto result = sysid::fit(segments, init, cfg);
  const double runtime = seconds_since(t0);
  sysid::write_loss_history(dir / "sysid_loss.csv", result.loss_history);
  double worst = 0.0;
  std::string detail;
  for (const auto& name : cfg.fit_params) {
    const double rel = sysid::get_parameter(result.params, name) / sysid::get_parameter(truth, name) - 1.0;
    worst = std::max(worst, std::abs(rel));
    detail += name + " " + fmt(100.0 * rel, 3) + "% ";
  }
  return {worst < kSysIdTolerance && runtime < kSysIdRuntime,
          detail + "in " + fmt(runtime, 3) + " s single-threaded"};
}

Outcome gradient_oracles() {
  trainer::NetworkShape shape;
  shape.obs_dim = 6;
  shape.actor_hidden = {5, 4};
  shape.critic_hidden = {6, 3};
  trainer::ActorCritic<double> net(shape);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 0.6);
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) net.parameters()(i) = normal(rng);
  const Eigen::Index B = 10;
  trainer::MiniBatch<double> batch;
  batch.obs.resize(6, B);
  batch.actions.resize(2, B);
  batch.old_log_probs.resize(B);
  batch.advantages.resize(B);
  batch.returns.resize(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    for (Eigen::Index i = 0; i < 6; ++i) batch.obs(i, j) = normal(rng);
    batch.actions(0, j) = 0.5 * normal(rng);
    batch.actions(1, j) = 0.5 * normal(rng);
    batch.advantages(j) = normal(rng);
    batch.returns(j) = normal(rng);
  }
  const auto out = net.forward(batch.obs);
  for (Eigen::Index j = 0; j < B; ++j) {
    const std::vector<double> a{batch.actions(0, j), batch.actions(1, j)};
    const std::vector<double> m{out.mean(0, j), out.mean(1, j)};
    const std::vector<double> ls{net.log_std()(0), net.log_std()(1)};
    batch.old_log_probs(j) = trainer::gaussian_log_prob(a, m, ls) + 0.3 * normal(rng);
  }
  trainer::PpoConfig ppo;
  ppo.entropy_coef = 0.01;
  Eigen::VectorXd grad;
  trainer::ppo_loss(net, batch, ppo, &grad);
  double worst_net = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.parameters().size(); ++i) {
    auto plus = net, minus = net;
    plus.parameters()(i) += h;
    minus.parameters()(i) -= h;
    const double fd = (trainer::ppo_loss(plus, batch, ppo).total - trainer::ppo_loss(minus, batch, ppo).total) / (2 * h);
    worst_net = std::max(worst_net, std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)));
  }

  const dynamics::VehicleParams truth;
  const auto syn = sysid::simulate_log(truth, 3.0, 3);
  const auto segments = sysid::make_segments(syn.states, syn.commands, 85);
  std::vector<const sysid::TrainingSegment*> seg_batch;
  for (const auto& s : segments) seg_batch.push_back(&s);
  sysid::SysIdConfig cfg;
  cfg.fit_params = {"m", "Iz", "lf", "mu", "T_delta", "T_omega", "c_drag", "tire_B_front"};
  double worst_sysid = 0.0;
  std::uniform_real_distribution<double> zdist(-0.2, 0.2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> z(cfg.fit_params.size());
    for (auto& v : z) v = zdist(rng);
    const auto lg = sysid::loss_and_gradient(truth, z, seg_batch, cfg);
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      const double hz = 1e-5;
      zp[i] += hz;
      zm[i] -= hz;
      const double fd = (sysid::loss_and_gradient(truth, zp, seg_batch, cfg).loss -
                         sysid::loss_and_gradient(truth, zm, seg_batch, cfg).loss) /
                        (2 * hz);
      worst_sysid = std::max(worst_sysid, std::abs(lg.gradient[i] - fd) / std::max(std::abs(fd), 1e-6));
    }
  }
  return {worst_net < kNetworkGradTolerance && worst_sysid < kSysIdGradTolerance,
          "network+PPO max rel err " + fmt(worst_net) + ", sysid rollout max rel err " + fmt(worst_sysid)};
}

Outcome gae_oracle() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  long cases = 0;
  for (int repeat = 0; repeat < 4; ++repeat) {
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
            const auto g = trainer::compute_gae(r, v, d, boot, gamma, lambda);
            for (std::size_t t = 0; t < len; ++t) {
              double sum = 0.0, w = 1.0;
              for (std::size_t k = t; k < len; ++k) {
                const double next = d[k] > 0.5 ? 0.0 : (k + 1 < len ? v[k + 1] : boot);
                sum += w * (r[k] + gamma * next - v[k]);
                if (d[k] > 0.5) break;
                w *= gamma * lambda;
              }
              worst = std::max(worst, std::abs(g.advantages[t] - sum));
            }
            ++cases;
          }
        }
      }
    }
  }
  return {worst < kGaeTolerance, std::to_string(cases) + " sequences, max |error| " + fmt(worst)};
}

struct TrainingRun {
  std::uint64_t seed = 0;
  double sigma = 0.0;
  trainer::TrainResult result;
  double seconds = 0.0;
  fs::path dir;
};

trainer::PpoConfig desk_config(std::uint64_t seed) {
  trainer::PpoConfig c;
  c.n_envs = 16;
  c.n_steps = 256;
  c.batch_size = 1024;
  c.total_steps = 2'000'000;
  c.seed = seed;
  c.threads = 1;
  c.checkpoint_every = 0;
  return c;
}

TrainingRun desk_training(const std::shared_ptr<const track::TrackDefinition>& tr, std::uint64_t seed, double sigma,
                          const fs::path& root) {
  TrainingRun run;
  run.seed = seed;
  run.sigma = sigma;
  run.dir = root / ("train_seed" + std::to_string(seed) + "_sigma" + fmt(sigma, 3));
  fs::create_directories(run.dir);
  env::EnvConfig ec;
  if (sigma > 0.0) env::apply_ablation(ec, "dr-friction-" + fmt(sigma, 3));
  trainer::TrainOptions opts;
  opts.log_path = run.dir / "train_log.csv";
  opts.checkpoint_dir = run.dir;
  opts.on_update = [&](const trainer::UpdateLog& r) {
    if (r.update % 50 == 0) {
      std::cerr << "  [seed " << seed << ", sigma " << sigma << "] update " << r.update << " mean_ep_progress "
                << fmt(r.mean_ep_progress) << '\n';
    }
  };
  const auto t0 = Clock::now();
  run.result = trainer::train(tr, {}, ec, desk_config(seed), opts);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome desk_learning(const TrainingRun& run, double track_length) {
  const auto& log = run.result.log;
  if (log.empty()) return {false, "no updates"};
  double initial = 0.0;
  for (const auto& row : log) {
    if (row.mean_ep_progress != 0.0) {
      initial = row.mean_ep_progress;
      break;
    }
  }
  const double final_progress = log.back().mean_ep_progress;
  const auto warmup = static_cast<std::size_t>(kWarmupFraction * static_cast<double>(log.size()));
  double running_max = -1e300, worst_dip = 0.0;
  std::size_t worst_at = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(kSmoothingWindow) ? i + 1 - kSmoothingWindow : 0;
    double sum = 0.0;
    for (std::size_t j = lo; j <= i; ++j) sum += log[j].mean_ep_progress;
    const double smooth = sum / static_cast<double>(i - lo + 1);
    running_max = std::max(running_max, smooth);
    if (i >= warmup && running_max > 0.0) {
      const double dip = 1.0 - smooth / running_max;
      if (dip > worst_dip) {
        worst_dip = dip;
        worst_at = i + 1;
      }
    }
  }
  const bool laps_ok = final_progress >= kLearningLaps * track_length;
  const bool gain_ok = initial > 0.0 && final_progress >= kLearningGain * initial;
  const bool runtime_ok = run.seconds < kLearningRuntime;
  const bool smooth_ok = worst_dip <= kMaxDip;
  return {laps_ok && gain_ok && runtime_ok && smooth_ok,
          "final progress " + fmt(final_progress) + " m (" + fmt(final_progress / track_length, 3) +
              " laps, need " + fmt(kLearningLaps) + "), initial " + fmt(initial) + " m (gain " +
              fmt(final_progress / std::max(initial, 1e-9), 3) + "x), runtime " + fmt(run.seconds / 60.0, 3) +
              " min, worst smoothed dip after warmup " + fmt(100.0 * worst_dip, 3) + "% at update " +
              std::to_string(worst_at)};
}

evalkit::EvalReport held_out_eval(const TrainingRun& run, const std::shared_ptr<const track::TrackDefinition>& tr) {
  dynamics::VehicleParams held_out;
  held_out.mu *= kHeldOutFriction;
  evalkit::PolicyController controller{trainer::Policy(run.result.network)};
  evalkit::EvalOptions opts;
  opts.n_laps = kEvalLaps;
  const auto log = evalkit::run_eval(controller, tr, held_out, {}, opts);
  auto report = evalkit::make_report(log, *tr, kEvalLaps);
  std::ofstream(run.dir / "held_out_report.json") << evalkit::report_to_json(report);
  return report;
}

Outcome dr_trend(const std::vector<TrainingRun>& runs, const std::shared_ptr<const track::TrackDefinition>& tr) {
  int wins = 0, seeds = 0;
  std::string detail;
  for (const auto& base : runs) {
    if (base.sigma != 0.0) continue;
    for (const auto& dr : runs) {
      if (dr.sigma == 0.0 || dr.seed != base.seed) continue;
      const auto rb = held_out_eval(base, tr);
      const auto rd = held_out_eval(dr, tr);
      ++seeds;
      if (rd.crash_rate < rb.crash_rate) ++wins;
      detail += "seed " + std::to_string(base.seed) + ": " + fmt(rd.crash_rate, 3) + " vs " + fmt(rb.crash_rate, 3) +
                "; ";
    }
  }
  return {seeds > 0 && 2 * wins > seeds,
          "crash rate on held-out model (mu x" + fmt(kHeldOutFriction) + ", " + std::to_string(kEvalLaps) +
              " laps), sigma 0.05 vs sigma 0: " + detail + std::to_string(wins) + "/" + std::to_string(seeds) +
              " seeds lower"};
}

Outcome throughput() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const double threshold = kThroughputReference * std::min(hw, 8u) / 8.0;
  auto envs = env::make_envs(desk_oval(), {}, {}, kThroughputEnvs, 1);
  for (auto& e : envs) e.reset();
  ThreadPool pool(hw);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<env::Action> actions(envs.size());
  auto batch = [&] {
    for (auto& a : actions) a = {u(rng), u(rng)};
    env::step_batch(envs, actions, &pool);
  };
  for (int i = 0; i < 5; ++i) batch();
  const int iters = 100;
  const auto t0 = Clock::now();
  for (int i = 0; i < iters; ++i) batch();
  const double rate = iters * static_cast<double>(envs.size()) / seconds_since(t0);
  return {rate >= threshold, fmt(rate, 6) + " steps/s with " + std::to_string(kThroughputEnvs) + " envs on " +
                                 std::to_string(hw) + " hardware threads (threshold " + fmt(threshold, 6) +
                                 " = 2e5 x min(threads, 8) / 8)"};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome determinism(const fs::path& root) {
  const auto tr = desk_oval();
  std::vector<std::string> logs, ckpts, reports;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = root / ("determinism_" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto cfg = desk_config(17);
    cfg.total_steps = 8 * 16 * 256;
    trainer::TrainOptions opts;
    opts.log_path = dir / "train_log.csv";
    opts.checkpoint_dir = dir;
    const auto result = trainer::train(tr, {}, {}, cfg, opts);
    evalkit::PolicyController controller{trainer::Policy(result.network)};
    evalkit::EvalOptions eo;
    eo.n_laps = 2;
    eo.max_time_per_lap = 20.0;
    const auto log = evalkit::run_eval(controller, tr, {}, {}, eo);
    const auto report = evalkit::make_report(log, *tr, eo.n_laps);
    evalkit::export_report(log, report, evalkit::velocity_profile(log, *tr), dir / "eval");
    logs.push_back(read_file(opts.log_path));
    ckpts.push_back(read_file(dir / "latest.ckpt"));
    reports.push_back(read_file(dir / "eval" / "report.json") + read_file(dir / "eval" / "trajectory.csv"));
  }
  const bool pass = !logs[0].empty() && logs[0] == logs[1] && ckpts[0] == ckpts[1] && reports[0] == reports[1];
  return {pass, std::string("training log ") + (logs[0] == logs[1] ? "identical" : "differs") + ", checkpoint " +
                    (ckpts[0] == ckpts[1] ? "identical" : "differs") + ", eval report and trajectory " +
                    (reports[0] == reports[1] ? "identical" : "differ")};
}

Outcome guarded(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  fs::path root = fs::temp_directory_path() / "apex_acceptance";
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = argv[++i];
    } else {
      root = arg;
    }
  }
  fs::create_directories(root);
  std::vector<Criterion> results;
  auto selected = [&](const std::string& name) { return only.empty() || name.find(only) != std::string::npos; };
  auto run = [&](const std::string& name, const std::function<Outcome()>& body) {
    if (!selected(name)) return;
    std::cerr << "running: " << name << '\n';
    results.push_back({name, guarded(body)});
  };

  run("frenet round-trip", frenet_round_trip);
  run("actuator fidelity", actuator_fidelity);
  run("reward telescoping", reward_telescoping);
  run("E_off correctness", e_off_correctness);
  run("Savitzky-Golay exactness", savgol_exactness);
  run("sysid recovery", [&] { return sysid_recovery(root); });
  run("gradient oracles", gradient_oracles);
  run("GAE oracle", gae_oracle);

  const auto tr = desk_oval();
  std::vector<TrainingRun> runs;
  Outcome training_failure{true, ""};
  try {
    const bool needs_training = selected("desk-scale learning") || selected("domain-randomization trend");
    for (std::uint64_t seed : {0, 1, 2}) {
      if (!needs_training) break;
      for (double sigma : {0.0, 0.05}) runs.push_back(desk_training(tr, seed, sigma, root));
    }
  } catch (const std::exception& e) {
    training_failure = {false, std::string("training failed: ") + e.what()};
  }
  run("desk-scale learning", [&] {
    if (!training_failure.pass) return training_failure;
    return desk_learning(runs.front(), tr->total_length());
  });
  run("domain-randomization trend", [&] {
    if (!training_failure.pass) return training_failure;
    return dr_trend(runs, tr);
  });
  run("throughput", throughput);
  run("determinism", [&] { return determinism(root); });

  int failed = 0;
  for (const auto& c : results) {
    std::cout << (c.outcome.pass ? "PASS " : "FAIL ") << c.name << ": " << c.outcome.detail << '\n';
    failed += c.outcome.pass ? 0 : 1;
  }
  std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
