#include "apex/sysid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "apex/autodiff.hpp"
#include "apex/csv.hpp"
#include "apex/detail/vehicle_model.hpp"
#include "apex/errors.hpp"

namespace apex::sysid {

using dynamics::ActuatorCommand;
using dynamics::VehicleParams;
using dynamics::VehicleState;
namespace model = dynamics::model;

void check_log(const DriveLog& log) {
  const std::size_t n = log.t.size();
  for (const auto* ch : {&log.x, &log.y, &log.yaw, &log.omega, &log.delta, &log.delta_ref, &log.omega_ref}) {
    if (ch->size() != n) throw ParseError("drive log channels have different lengths");
  }
  if (n == 0) throw ParseError("drive log is empty");
  for (std::size_t i = 1; i < n; ++i) {
    const double gap = log.t[i] - log.t[i - 1];
    if (!(gap > 0.0)) {
      throw LogGapError("timestamps not strictly increasing at t = " + format_double(log.t[i]), log.t[i]);
    }
    if (gap > kMaxLogGap + 1e-9) {
      throw LogGapError("gap of " + format_double(std::round(gap * 1e6) / 1e3) + " ms before t = " +
                            format_double(log.t[i]),
                        log.t[i]);
    }
  }
}

DriveLog ingest_log(const std::filesystem::path& path) {
  const auto table =
      read_numeric_csv(path, {"t", "x", "y", "yaw", "omega", "delta", "delta_ref", "omega_ref"});
  if (table.rows.empty()) throw ParseError(path.string() + ": drive log has no samples");
  DriveLog log;
  for (const auto& row : table.rows) {
    log.t.push_back(row[0]);
    log.x.push_back(row[1]);
    log.y.push_back(row[2]);
    log.yaw.push_back(row[3]);
    log.omega.push_back(row[4]);
    log.delta.push_back(row[5]);
    log.delta_ref.push_back(row[6]);
    log.omega_ref.push_back(row[7]);
  }
  check_log(log);
  return log;
}

void write_log(const std::filesystem::path& path, const DriveLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,x,y,yaw,omega,delta,delta_ref,omega_ref\n";
  for (std::size_t i = 0; i < log.size(); ++i) {
    out << format_double(log.t[i]) << ',' << format_double(log.x[i]) << ',' << format_double(log.y[i])
        << ',' << format_double(log.yaw[i]) << ',' << format_double(log.omega[i]) << ','
        << format_double(log.delta[i]) << ',' << format_double(log.delta_ref[i]) << ','
        << format_double(log.omega_ref[i]) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> unwrap(const std::vector<double>& angles) {
  std::vector<double> out(angles.size());
  double offset = 0.0;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (i > 0) {
      const double jump = angles[i] - angles[i - 1];
      if (jump > std::numbers::pi) offset -= 2.0 * std::numbers::pi;
      if (jump < -std::numbers::pi) offset += 2.0 * std::numbers::pi;
    }
    out[i] = angles[i] + offset;
  }
  return out;
}

namespace {

// Rows of the least-squares polynomial fit operator for sample offsets `u`:
// coefficient vector a = P * y.
Eigen::MatrixXd fit_operator(const Eigen::VectorXd& u, int polyorder) {
  Eigen::MatrixXd A(u.size(), polyorder + 1);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    double p = 1.0;
    for (int j = 0; j <= polyorder; ++j) {
      A(i, j) = p;
      p *= u(i);
    }
  }
  return A.completeOrthogonalDecomposition().pseudoInverse();
}

// Derivative weights at offset `pos` given the fit operator.
Eigen::VectorXd derivative_weights(const Eigen::MatrixXd& P, double pos) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(P.cols());
  double p = 1.0;
  for (Eigen::Index j = 1; j < P.rows(); ++j) {
    w += static_cast<double>(j) * p * P.row(j).transpose();
    p *= pos;
  }
  return w;
}

double median_step(const std::vector<double>& t) {
  if (t.size() < 2) return 0.0;
  std::vector<double> d(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) d[i - 1] = t[i] - t[i - 1];
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

void check_window(int window, int polyorder) {
  if (window < 1 || window % 2 == 0) throw ConfigError("Savitzky-Golay window must be odd");
  if (polyorder < 1 || window <= polyorder) {
    throw ConfigError("Savitzky-Golay window must exceed the polynomial order (>= 1)");
  }
}

}  // namespace

std::vector<double> savgol_derivative_coeffs(int window, int polyorder) {
  check_window(window, polyorder);
  const int half = window / 2;
  Eigen::VectorXd u(window);
  for (int i = 0; i < window; ++i) u(i) = i - half;
  const Eigen::VectorXd w = derivative_weights(fit_operator(u, polyorder), 0.0);
  return {w.data(), w.data() + w.size()};
}

BodyVelocities estimate_velocities(const DriveLog& log, int window, int polyorder) {
  check_window(window, polyorder);
  const std::size_t n = log.size();
  if (n < static_cast<std::size_t>(window)) {
    throw UsageError("drive log has " + std::to_string(n) + " samples, fewer than the filter window " +
                     std::to_string(window));
  }
  const auto yaw = unwrap(log.yaw);
  const int half = window / 2;
  const double dt = median_step(log.t);

  // Uniform-grid operator in units of samples.
  Eigen::VectorXd u(window);
  for (int i = 0; i < window; ++i) u(i) = i - half;
  const Eigen::MatrixXd uniform = fit_operator(u, polyorder);

  BodyVelocities v;
  v.vx.resize(n);
  v.vy.resize(n);
  v.r.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Window start: centred where possible, clamped at the ends.
    const std::size_t start = std::min(i >= static_cast<std::size_t>(half) ? i - static_cast<std::size_t>(half) : 0,
                                       n - static_cast<std::size_t>(window));
    const double t0 = log.t[start + static_cast<std::size_t>(half)];
    bool is_uniform = true;
    for (int k = 0; k < window; ++k) {
      const double expected = t0 + (k - half) * dt;
      if (std::abs(log.t[start + static_cast<std::size_t>(k)] - expected) > 1e-6 * dt + 1e-12) {
        is_uniform = false;
        break;
      }
    }
    Eigen::VectorXd w;
    if (is_uniform) {
      const double pos = (log.t[i] - t0) / dt;
      w = derivative_weights(uniform, std::round(pos)) / dt;
    } else {
      Eigen::VectorXd tu(window);
      for (int k = 0; k < window; ++k) tu(k) = (log.t[start + static_cast<std::size_t>(k)] - t0) / dt;
      w = derivative_weights(fit_operator(tu, polyorder), (log.t[i] - t0) / dt) / dt;
    }
    double dx = 0.0, dy = 0.0, dyaw = 0.0;
    for (int k = 0; k < window; ++k) {
      const std::size_t j = start + static_cast<std::size_t>(k);
      dx += w(k) * log.x[j];
      dy += w(k) * log.y[j];
      dyaw += w(k) * yaw[j];
    }
    const double c = std::cos(yaw[i]), s = std::sin(yaw[i]);
    v.vx[i] = c * dx + s * dy;
    v.vy[i] = -s * dx + c * dy;
    v.r[i] = dyaw;
  }
  return v;
}

std::vector<TrainingSegment> make_segments(const DriveLog& log, const BodyVelocities& velocities,
                                           int horizon) {
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  const std::size_t n = log.size();
  const auto h = static_cast<std::size_t>(horizon);
  const auto stride = std::max<std::size_t>(1, h / 2);
  std::vector<TrainingSegment> out;
  if (h > n) return out;
  const auto yaw = unwrap(log.yaw);
  const double dt = median_step(log.t);
  auto state_at = [&](std::size_t i) {
    VehicleState s;
    s.x = log.x[i];
    s.y = log.y[i];
    s.yaw = yaw[i];
    s.vx = velocities.vx[i];
    s.vy = velocities.vy[i];
    s.yaw_rate = velocities.r[i];
    s.delta = log.delta[i];
    s.omega = log.omega[i];
    return s;
  };
  for (std::size_t k = 0; k + h <= n; k += stride) {
    bool contiguous = true;
    for (std::size_t i = k + 1; i < k + h; ++i) {
      if (log.t[i] - log.t[i - 1] > 1.5 * dt) {
        contiguous = false;
        break;
      }
    }
    if (!contiguous) continue;
    TrainingSegment seg;
    seg.initial_state = state_at(k);
    for (std::size_t j = 0; j < h; ++j) {
      seg.commands.push_back({log.delta_ref[k + j], log.omega_ref[k + j]});
      seg.targets.push_back(state_at(k + j));
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<TrainingSegment> make_segments(const std::vector<VehicleState>& states,
                                           const std::vector<ActuatorCommand>& commands, int horizon) {
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  if (commands.size() < states.size()) throw UsageError("need one command per state");
  const auto h = static_cast<std::size_t>(horizon);
  const auto stride = std::max<std::size_t>(1, h / 2);
  std::vector<TrainingSegment> out;
  for (std::size_t k = 0; k + h <= states.size(); k += stride) {
    TrainingSegment seg;
    seg.initial_state = states[k];
    seg.commands.assign(commands.begin() + static_cast<std::ptrdiff_t>(k),
                        commands.begin() + static_cast<std::ptrdiff_t>(k + h));
    seg.targets.assign(states.begin() + static_cast<std::ptrdiff_t>(k),
                       states.begin() + static_cast<std::ptrdiff_t>(k + h));
    out.push_back(std::move(seg));
  }
  return out;
}

std::string to_string(GradientMode mode) {
  return mode == GradientMode::analytic_reverse ? "analytic_reverse" : "central_difference";
}

GradientMode parse_gradient_mode(const std::string& name) {
  if (name == "analytic_reverse" || name == "reverse" || name == "analytic") {
    return GradientMode::analytic_reverse;
  }
  if (name == "central_difference" || name == "fd" || name == "finite_difference") {
    return GradientMode::central_difference;
  }
  throw ConfigError("unknown gradient mode '" + name + "'");
}

const std::vector<std::string>& fittable_parameters() {
  static const std::vector<std::string> names{
      "m",       "Iz",           "lf",           "lr",          "R_w",         "mu",
      "T_delta", "T_omega",      "c_drag",       "c_roll",      "tire_B_front", "tire_D_front",
      "tire_B_rear", "tire_D_rear"};
  return names;
}

namespace {

template <class T>
T& model_field(model::Params<T>& p, const std::string& name) {
  if (name == "m") return p.m;
  if (name == "Iz") return p.Iz;
  if (name == "lf") return p.lf;
  if (name == "lr") return p.lr;
  if (name == "R_w") return p.R_w;
  if (name == "mu") return p.mu;
  if (name == "T_delta") return p.T_delta;
  if (name == "T_omega") return p.T_omega;
  if (name == "c_drag") return p.c_drag;
  if (name == "c_roll") return p.c_roll;
  if (name == "tire_B_front") return p.Bf;
  if (name == "tire_D_front") return p.Df;
  if (name == "tire_B_rear") return p.Br;
  if (name == "tire_D_rear") return p.Dr;
  throw ConfigError("parameter '" + name + "' cannot be identified");
}

}  // namespace

double get_parameter(const VehicleParams& params, const std::string& name) {
  auto p = model::lift<double>(params);
  return model_field(p, name);
}

void set_parameter(VehicleParams& params, const std::string& name, double value) {
  if (name == "m") params.m = value;
  else if (name == "Iz") params.Iz = value;
  else if (name == "lf") params.lf = value;
  else if (name == "lr") params.lr = value;
  else if (name == "R_w") params.R_w = value;
  else if (name == "mu") params.mu = value;
  else if (name == "T_delta") params.T_delta = value;
  else if (name == "T_omega") params.T_omega = value;
  else if (name == "c_drag") params.c_drag = value;
  else if (name == "c_roll") params.c_roll = value;
  else if (name == "tire_B_front") params.front.B = value;
  else if (name == "tire_D_front") params.front.D = value;
  else if (name == "tire_B_rear") params.rear.B = value;
  else if (name == "tire_D_rear") params.rear.D = value;
  else throw ConfigError("parameter '" + name + "' cannot be identified");
}

void SysIdConfig::validate() const {
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  if (!(dt > 0.0) || substeps < 1) throw ConfigError("dt must be positive and substeps >= 1");
  if (!(learning_rate > 0.0) || final_learning_rate < 0.0) throw ConfigError("learning rates must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(fd_step > 0.0)) throw ConfigError("fd_step must be positive");
  const auto& w = state_weights;
  bool any = false;
  for (double v : {w.x, w.y, w.yaw, w.vx, w.vy, w.r, w.delta, w.omega}) {
    if (v < 0.0) throw ConfigError("state weights must be non-negative");
    any = any || v > 0.0;
  }
  if (!any) throw ConfigError("at least one state weight must be positive");
  if (fit_params.empty()) throw ConfigError("no parameters selected for fitting");
  for (const auto& name : fit_params) {
    const auto& all = fittable_parameters();
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw ConfigError("parameter '" + name + "' cannot be identified");
    }
  }
}

KeyValueFile config_to_keyvalues(const SysIdConfig& c) {
  KeyValueFile kv;
  kv.set("horizon", c.horizon);
  kv.set("dt", c.dt);
  kv.set("substeps", c.substeps);
  kv.set("learning_rate", c.learning_rate);
  kv.set("final_learning_rate", c.final_learning_rate);
  kv.set("weight_decay", c.weight_decay);
  kv.set("beta1", c.beta1);
  kv.set("beta2", c.beta2);
  kv.set("epsilon", c.epsilon);
  kv.set("batch_size", c.batch_size);
  kv.set("epochs", c.epochs);
  kv.set("weight_x", c.state_weights.x);
  kv.set("weight_y", c.state_weights.y);
  kv.set("weight_yaw", c.state_weights.yaw);
  kv.set("weight_vx", c.state_weights.vx);
  kv.set("weight_vy", c.state_weights.vy);
  kv.set("weight_r", c.state_weights.r);
  kv.set("weight_delta", c.state_weights.delta);
  kv.set("weight_omega", c.state_weights.omega);
  kv.set("gradient_mode", to_string(c.gradient_mode));
  kv.set("fd_step", c.fd_step);
  std::string names;
  for (const auto& n : c.fit_params) names += (names.empty() ? "" : ",") + n;
  kv.set("fit_params", names);
  kv.set("seed", static_cast<std::int64_t>(c.seed));
  return kv;
}

SysIdConfig config_from_keyvalues(const KeyValueFile& kv, const SysIdConfig& d) {
  SysIdConfig c = d;
  c.horizon = static_cast<int>(kv.get_int("horizon", d.horizon));
  c.dt = kv.get_double("dt", d.dt);
  c.substeps = static_cast<int>(kv.get_int("substeps", d.substeps));
  c.learning_rate = kv.get_double("learning_rate", d.learning_rate);
  c.final_learning_rate = kv.get_double("final_learning_rate", d.final_learning_rate);
  c.weight_decay = kv.get_double("weight_decay", d.weight_decay);
  c.beta1 = kv.get_double("beta1", d.beta1);
  c.beta2 = kv.get_double("beta2", d.beta2);
  c.epsilon = kv.get_double("epsilon", d.epsilon);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", d.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", d.epochs));
  auto& w = c.state_weights;
  w.x = kv.get_double("weight_x", d.state_weights.x);
  w.y = kv.get_double("weight_y", d.state_weights.y);
  w.yaw = kv.get_double("weight_yaw", d.state_weights.yaw);
  w.vx = kv.get_double("weight_vx", d.state_weights.vx);
  w.vy = kv.get_double("weight_vy", d.state_weights.vy);
  w.r = kv.get_double("weight_r", d.state_weights.r);
  w.delta = kv.get_double("weight_delta", d.state_weights.delta);
  w.omega = kv.get_double("weight_omega", d.state_weights.omega);
  if (auto mode = kv.get("gradient_mode")) c.gradient_mode = parse_gradient_mode(*mode);
  c.fd_step = kv.get_double("fd_step", d.fd_step);
  if (auto names = kv.get("fit_params")) {
    c.fit_params.clear();
    std::stringstream ss(*names);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto t = std::string(trim(item));
      if (!t.empty()) c.fit_params.push_back(t);
    }
  }
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(d.seed)));
  c.validate();
  return c;
}

namespace {

template <class T>
T rollout(const model::Params<T>& p, const TrainingSegment& seg, const StateWeights& w,
          const dynamics::IntegratorOptions& opt) {
  const auto weighted = [&](const model::State<T>& s, const VehicleState& target) {
    T e(0.0);
    const std::array<std::pair<double, double>, 8> channels{{{w.x, target.x},
                                                             {w.y, target.y},
                                                             {w.yaw, target.yaw},
                                                             {w.vx, target.vx},
                                                             {w.vy, target.vy},
                                                             {w.r, target.yaw_rate},
                                                             {w.delta, target.delta},
                                                             {w.omega, target.omega}}};
    for (std::size_t c = 0; c < 8; ++c) {
      if (channels[c].first == 0.0) continue;
      const T d = s[c] - channels[c].second;
      e = e + channels[c].first * (d * d);
    }
    return e;
  };
  model::State<T> s;
  const auto init = seg.initial_state.to_array();
  for (std::size_t i = 0; i < 8; ++i) s[i] = T(init[i]);
  T total = weighted(s, seg.targets.front());
  for (std::size_t j = 1; j < seg.targets.size(); ++j) {
    const auto& cmd = seg.commands[j - 1];
    s = model::step(s, T(cmd.delta_ref), T(cmd.omega_ref), p, opt);
    total = total + weighted(s, seg.targets[j]);
  }
  return total / static_cast<double>(seg.targets.size());
}

bool all_zero(const StateWeights& w) {
  return w.x == 0.0 && w.y == 0.0 && w.yaw == 0.0 && w.vx == 0.0 && w.vy == 0.0 && w.r == 0.0 &&
         w.delta == 0.0 && w.omega == 0.0;
}

VehicleParams apply_z(const VehicleParams& base, const std::vector<std::string>& names,
                      const std::vector<double>& z) {
  VehicleParams p = base;
  for (std::size_t i = 0; i < names.size(); ++i) {
    set_parameter(p, names[i], get_parameter(base, names[i]) * std::exp(z[i]));
  }
  return p;
}

void for_each_index(std::size_t count, ThreadPool* pool, const std::function<void(std::size_t)>& fn) {
  if (pool) {
    pool->parallel_for(count, fn);
  } else {
    for (std::size_t i = 0; i < count; ++i) fn(i);
  }
}

double batch_loss(const VehicleParams& params, const std::vector<const TrainingSegment*>& batch,
                  const SysIdConfig& config, ThreadPool* pool) {
  std::vector<double> losses(batch.size());
  for_each_index(batch.size(), pool, [&](std::size_t i) {
    losses[i] = rollout_loss(params, *batch[i], config.state_weights, config.dt, config.substeps);
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(batch.size());
}

}  // namespace

double rollout_loss(const VehicleParams& params, const TrainingSegment& segment, const StateWeights& weights,
                    double dt, int substeps) {
  if (all_zero(weights) || segment.targets.empty()) return 0.0;
  const dynamics::IntegratorOptions opt{dt, substeps, false};
  try {
    const double loss = rollout(model::lift<double>(params), segment, weights, opt);
    return std::isfinite(loss) ? loss : kFailedRolloutLoss;
  } catch (const NumericalError&) {
    return kFailedRolloutLoss;
  }
}

LossGradient loss_and_gradient(const VehicleParams& base, const std::vector<double>& z,
                               const std::vector<const TrainingSegment*>& batch, const SysIdConfig& config,
                               ThreadPool* pool) {
  const auto& names = config.fit_params;
  if (z.size() != names.size()) throw UsageError("parameter vector size does not match fit_params");
  if (batch.empty()) throw UsageError("empty mini-batch");
  LossGradient out;
  out.gradient.assign(names.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());

  if (config.gradient_mode == GradientMode::central_difference) {
    out.loss = batch_loss(apply_z(base, names, z), batch, config, pool);
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += config.fd_step;
      zm[i] -= config.fd_step;
      const double lp = batch_loss(apply_z(base, names, zp), batch, config, pool);
      const double lm = batch_loss(apply_z(base, names, zm), batch, config, pool);
      out.gradient[i] = (lp - lm) / (2.0 * config.fd_step);
    }
    return out;
  }

  const dynamics::IntegratorOptions opt{config.dt, config.substeps, false};
  std::vector<double> losses(batch.size());
  std::vector<std::vector<double>> grads(batch.size(), std::vector<double>(names.size(), 0.0));
  for_each_index(batch.size(), pool, [&](std::size_t b) {
    if (all_zero(config.state_weights)) return;
    ad::TapeScope scope;
    auto p = model::lift<ad::Var>(base);
    std::vector<ad::Var> leaves;
    for (std::size_t i = 0; i < names.size(); ++i) {
      leaves.push_back(ad::Var::variable(z[i]));
      model_field(p, names[i]) = ad::Var(get_parameter(base, names[i])) * ad::exp(leaves.back());
    }
    try {
      const ad::Var loss = rollout(p, *batch[b], config.state_weights, opt);
      if (!std::isfinite(loss.value())) {
        losses[b] = kFailedRolloutLoss;
        return;
      }
      losses[b] = loss.value();
      const auto adj = ad::Tape::current().backward(loss.index());
      for (std::size_t i = 0; i < names.size(); ++i) {
        grads[b][i] = adj[static_cast<std::size_t>(leaves[i].index())];
      }
    } catch (const NumericalError&) {
      losses[b] = kFailedRolloutLoss;
    }
  });
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.loss += losses[b] * inv;
    for (std::size_t i = 0; i < names.size(); ++i) out.gradient[i] += grads[b][i] * inv;
  }
  return out;
}

double mean_loss(const VehicleParams& params, const std::vector<TrainingSegment>& segments,
                 const SysIdConfig& config, ThreadPool* pool) {
  if (segments.empty()) return 0.0;
  std::vector<const TrainingSegment*> all;
  for (const auto& s : segments) all.push_back(&s);
  return batch_loss(params, all, config, pool);
}

FitResult fit(const std::vector<TrainingSegment>& segments, const VehicleParams& init,
              const SysIdConfig& config, ThreadPool* pool, const EpochCallback& on_epoch) {
  config.validate();
  init.validate();
  if (segments.empty()) throw UsageError("system identification needs at least one segment");
  for (const auto& seg : segments) {
    if (seg.targets.size() != static_cast<std::size_t>(config.horizon) ||
        seg.commands.size() < seg.targets.size() - 1) {
      throw UsageError("segment length does not match the configured horizon");
    }
  }
  const auto& names = config.fit_params;
  const std::size_t P = names.size();
  std::vector<double> z(P, 0.0), m(P, 0.0), v(P, 0.0);

  FitResult result;
  result.params = init;
  result.best_loss = mean_loss(init, segments, config, pool);
  result.loss_history.push_back(result.best_loss);
  if (on_epoch) on_epoch(0, result.best_loss);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double frac = config.epochs > 1 ? static_cast<double>(epoch - 1) / (config.epochs - 1) : 0.0;
    const double lr = config.learning_rate + (config.final_learning_rate - config.learning_rate) * frac;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<const TrainingSegment*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size)); ++k) {
        batch.push_back(&segments[order[k]]);
      }
      const auto lg = loss_and_gradient(init, z, batch, config, pool);
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < P; ++i) {
        const double g = lg.gradient[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        z[i] -= lr * (mhat / (std::sqrt(vhat) + config.epsilon) + config.weight_decay * z[i]);
      }
    }
    const VehicleParams current = apply_z(init, names, z);
    const double loss = mean_loss(current, segments, config, pool);
    result.loss_history.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_epoch = epoch;
      result.params = current;
    }
    const auto e = static_cast<std::size_t>(epoch);
    if (!std::isfinite(loss) || (e >= 20 && loss > 10.0 * result.loss_history[e - 20])) {
      throw DivergenceError("system identification diverged at epoch " + std::to_string(epoch) +
                            " (loss " + format_double(loss) + "); try a smaller learning rate");
    }
  }
  return result;
}

void write_loss_history(const std::filesystem::path& path, const std::vector<double>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) out << i << ',' << format_double(history[i]) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

SyntheticLog simulate_log(const VehicleParams& params, double duration, std::uint64_t seed, double dt,
                          int substeps) {
  params.validate();
  if (!(duration > 0.0) || !(dt > 0.0)) throw UsageError("duration and dt must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double two_pi = 2.0 * std::numbers::pi;
  const std::array<double, 4> steer_freq{0.23, 0.51, 0.87, 1.43};
  const std::array<double, 4> steer_amp{0.16, 0.10, 0.07, 0.04};
  const std::array<double, 3> speed_freq{0.07, 0.19, 0.83};
  const std::array<double, 3> speed_amp{1.0, 0.6, 0.25};
  std::array<double, 4> sp{};
  std::array<double, 3> vp{};
  for (auto& p : sp) p = phase(rng);
  for (auto& p : vp) p = phase(rng);

  auto command_at = [&](double t) {
    double d = 0.0;
    for (std::size_t k = 0; k < steer_freq.size(); ++k) d += steer_amp[k] * std::sin(two_pi * steer_freq[k] * t + sp[k]);
    double v = 2.6;
    for (std::size_t k = 0; k < speed_freq.size(); ++k) v += speed_amp[k] * std::sin(two_pi * speed_freq[k] * t + vp[k]);
    v = std::clamp(v, 0.6, 4.5);
    return ActuatorCommand{std::clamp(d, -params.delta_max, params.delta_max),
                           std::min(v / params.R_w, params.omega_max)};
  };

  const auto n = static_cast<std::size_t>(std::llround(duration / dt));
  SyntheticLog out;
  VehicleState s;
  const auto c0 = command_at(0.0);
  s.vx = c0.omega_ref * params.R_w;
  s.omega = c0.omega_ref;
  s.delta = c0.delta_ref;
  const dynamics::IntegratorOptions opt{dt, substeps, false};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const auto cmd = command_at(t);
    out.states.push_back(s);
    out.commands.push_back(cmd);
    out.log.t.push_back(t);
    out.log.x.push_back(s.x);
    out.log.y.push_back(s.y);
    out.log.yaw.push_back(std::remainder(s.yaw, 2.0 * std::numbers::pi));
    out.log.omega.push_back(s.omega);
    out.log.delta.push_back(s.delta);
    out.log.delta_ref.push_back(cmd.delta_ref);
    out.log.omega_ref.push_back(cmd.omega_ref);
    s = dynamics::integrate_step(s, cmd, params, opt);
  }
  return out;
}

}  // namespace apex::sysid
