#include "apex/evalkit.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "apex/csv.hpp"
#include "apex/errors.hpp"
#include "apex/keyvalue.hpp"

namespace apex::evalkit {

namespace {

using json = nlohmann::ordered_json;

struct Boundary {
  double time = 0.0;
  std::size_t index = 0;  // first sample strictly after the crossing point
  double vx = 0.0;
};

bool on_line(double s, double length) { return s < 1e-9 || length - s < 1e-9; }

std::vector<Boundary> boundaries(const TrajectoryLog& log, double length) {
  std::vector<Boundary> out;
  const auto& xs = log.samples;
  if (xs.empty()) return out;
  if (on_line(xs.front().s, length)) out.push_back({xs.front().t, 1, xs.front().vx});
  int net = 0;
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const double d = track::progress_delta(xs[k - 1].s, xs[k].s, length);
    if (d > 0.0 && xs[k].s < xs[k - 1].s) {
      if (++net == 1) {
        const double frac = std::clamp((length - xs[k - 1].s) / d, 0.0, 1.0);
        out.push_back({xs[k - 1].t + frac * (xs[k].t - xs[k - 1].t), k, xs[k - 1].vx + frac * (xs[k].vx - xs[k - 1].vx)});
        net = 0;
      }
    } else if (d < 0.0 && xs[k].s > xs[k - 1].s) {
      --net;
    }
  }
  return out;
}

bool any_violation(const TrajectoryLog& log, std::size_t first, std::size_t last) {
  for (std::size_t k = first; k <= last && k < log.samples.size(); ++k) {
    if (log.samples[k].terminated) return true;
  }
  return false;
}

TrajectorySample sample_from(double t, const dynamics::VehicleState& x, const track::FrenetPose& f, double reward,
                             bool terminated) {
  return {t, x.x, x.y, x.yaw, x.vx, x.vy, x.yaw_rate, x.delta, x.omega, f.s, f.n, reward, terminated};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string trajectory_text(const TrajectoryLog& log) {
  std::ostringstream out;
  out << trajectory_header() << '\n';
  for (const auto& p : log.samples) {
    out << format_double(p.t) << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
        << format_double(p.yaw) << ',' << format_double(p.vx) << ',' << format_double(p.vy) << ','
        << format_double(p.r) << ',' << format_double(p.delta) << ',' << format_double(p.omega) << ','
        << format_double(p.s) << ',' << format_double(p.n) << ',' << format_double(p.reward) << ','
        << (p.terminated ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string profile_text(std::span<const ProfileRow> rows) {
  std::ostringstream out;
  out << "s,vx,time\n";
  for (const auto& r : rows) out << format_double(r.s) << ',' << format_double(r.vx) << ',' << format_double(r.time) << '\n';
  return out.str();
}

}  // namespace

std::string trajectory_header() { return "t,x,y,yaw,vx,vy,r,delta,omega,s,n,reward,terminated"; }

void write_trajectory(const std::filesystem::path& path, const TrajectoryLog& log) {
  write_text_atomically(path, trajectory_text(log));
}

TrajectoryLog read_trajectory(const std::filesystem::path& path, double track_length) {
  const auto table = read_numeric_csv(
      path, {"t", "x", "y", "yaw", "vx", "vy", "r", "delta", "omega", "s", "n", "reward", "terminated"});
  TrajectoryLog log;
  log.track_length = track_length;
  for (const auto& r : table.rows) {
    log.samples.push_back({r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9], r[10], r[11], r[12] != 0.0});
  }
  if (log.samples.size() > 1) log.dt = log.samples[1].t - log.samples[0].t;
  return log;
}

double baseline_speed(double preview_curvature, const BaselineOptions& o) {
  return std::min(o.v_cap, std::sqrt(o.a_lat_max / std::max(std::abs(preview_curvature), o.curvature_floor)));
}

dynamics::ActuatorCommand baseline_controller(const dynamics::VehicleState& state, const track::FrenetPose& pose,
                                              const track::TrackDefinition& track,
                                              const dynamics::VehicleParams& params, const BaselineOptions& o) {
  const double lookahead = std::max(o.lookahead_min, o.lookahead_gain * std::max(state.vx, 0.0));
  const auto target = track::frenet_to_global(track, track.wrap_s(pose.s + lookahead), 0.0);
  const double dx = target.x - state.x, dy = target.y - state.y;
  const double dist = std::max(std::hypot(dx, dy), 1e-6);
  const double alpha = track::wrap_angle(std::atan2(dy, dx) - state.yaw);
  const double wheelbase = params.lf + params.lr;
  const double delta = std::clamp(std::atan(2.0 * wheelbase * std::sin(alpha) / dist), -params.delta_max,
                                  params.delta_max);
  double kmax = 0.0;
  const double step = track.resolution();
  for (double d = 0.0; d <= o.preview + 1e-12; d += step) {
    kmax = std::max(kmax, std::abs(track.curvature_at(track.wrap_s(pose.s + d))));
  }
  return {delta, baseline_speed(kmax, o) / params.R_w};
}

env::StepResult PolicyController::drive(env::RacingEnv& env, const env::Observation& obs) {
  return env.step(policy_.act(obs));
}

env::StepResult BaselineController::drive(env::RacingEnv& env, const env::Observation&) {
  return env.step_command(baseline_controller(env.state(), env.frenet(), env.track(), env.params(), options_));
}

TrajectoryLog run_eval(Controller& controller, std::shared_ptr<const track::TrackDefinition> track,
                       const dynamics::VehicleParams& params, const env::EnvConfig& config,
                       const EvalOptions& options) {
  if (options.n_laps < 1) throw UsageError("n_laps must be >= 1");
  if (!track) throw UsageError("evaluation needs a track");
  env::EnvConfig cfg = config;
  cfg.episode_steps = INT_MAX;
  cfg.randomization.sigma_dr = 0.0;
  env::RacingEnv env(track, params, cfg, options.seed);
  const double length = track->total_length();

  TrajectoryLog log;
  log.dt = cfg.dt;
  log.track_length = length;
  auto obs = env.reset_at(options.start_s, options.start_speed);
  log.samples.push_back(sample_from(0.0, env.state(), env.frenet(), 0.0, false));

  int completed = 0;
  int net = 0;
  bool started = on_line(env.frenet().s, length);
  const auto max_steps = static_cast<std::int64_t>(std::ceil(options.n_laps * options.max_time_per_lap / cfg.dt));
  for (std::int64_t k = 1; k <= max_steps && completed < options.n_laps; ++k) {
    const double s_prev = log.samples.back().s;
    const auto r = controller.drive(env, obs);
    log.samples.push_back(
        sample_from(static_cast<double>(k) * cfg.dt, r.info.state, r.info.frenet, r.reward, r.terminated));
    const double s_now = r.info.frenet.s;
    const double d = track::progress_delta(s_prev, s_now, length);
    if (d > 0.0 && s_now < s_prev) {
      if (++net == 1) {
        net = 0;
        if (started) ++completed;
        started = true;
      }
    } else if (d < 0.0 && s_now > s_prev) {
      --net;
    }
    obs = r.terminated ? env.reset_at(r.info.frenet.s, 0.0) : r.observation;
  }
  return log;
}

std::vector<Lap> lap_times(const TrajectoryLog& log, double track_length) {
  const auto b = boundaries(log, track_length);
  std::vector<Lap> laps;
  for (std::size_t i = 1; i < b.size(); ++i) {
    Lap lap;
    lap.start_time = b[i - 1].time;
    lap.end_time = b[i].time;
    lap.time = lap.end_time - lap.start_time;
    lap.begin_index = b[i - 1].index;
    lap.end_index = b[i].index;
    lap.clean = !any_violation(log, lap.begin_index, lap.end_index);
    laps.push_back(lap);
  }
  return laps;
}

double integrate_off_track(std::span<const double> times, std::span<const double> excess, int n_laps) {
  if (n_laps < 1) throw UsageError("n_laps must be >= 1");
  if (times.size() != excess.size()) throw UsageError("time and excess sequences differ in length");
  double total = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) total += 0.5 * (excess[i] + excess[i - 1]) * (times[i] - times[i - 1]);
  return total / static_cast<double>(n_laps);
}

double compute_e_off(const TrajectoryLog& log, const track::TrackDefinition& track, int n_laps) {
  std::vector<double> t, e;
  t.reserve(log.samples.size());
  e.reserve(log.samples.size());
  for (const auto& p : log.samples) {
    t.push_back(p.t);
    e.push_back(track::off_track_distance(track, {p.s, p.n, 0.0}));
  }
  return integrate_off_track(t, e, n_laps);
}

bool EvalReport::operator==(const EvalReport& o) const {
  if (laps.size() != o.laps.size()) return false;
  for (std::size_t i = 0; i < laps.size(); ++i) {
    if (laps[i].time != o.laps[i].time || laps[i].clean != o.laps[i].clean ||
        laps[i].start_time != o.laps[i].start_time || laps[i].end_time != o.laps[i].end_time) {
      return false;
    }
  }
  return fastest_clean_lap == o.fastest_clean_lap && mean_lap == o.mean_lap && lap_std == o.lap_std &&
         mean_clean_lap == o.mean_clean_lap && e_off == o.e_off && crash_rate == o.crash_rate &&
         lap_count == o.lap_count && clean_lap_count == o.clean_lap_count && crash_count == o.crash_count &&
         total_time == o.total_time;
}

EvalReport make_report(const TrajectoryLog& log, const track::TrackDefinition& track, int n_laps) {
  EvalReport rep;
  rep.laps = lap_times(log, track.total_length());
  rep.lap_count = static_cast<int>(rep.laps.size());
  rep.total_time = log.samples.empty() ? 0.0 : log.samples.back().t - log.samples.front().t;
  for (const auto& p : log.samples) rep.crash_count += p.terminated ? 1 : 0;
  rep.e_off = log.samples.empty() ? 0.0 : compute_e_off(log, track, n_laps);

  double sum = 0.0, clean_sum = 0.0;
  int crashed_laps = 0;
  for (const auto& lap : rep.laps) {
    sum += lap.time;
    if (lap.clean) {
      ++rep.clean_lap_count;
      clean_sum += lap.time;
      rep.fastest_clean_lap = rep.fastest_clean_lap ? std::min(*rep.fastest_clean_lap, lap.time) : lap.time;
    } else {
      ++crashed_laps;
    }
  }
  if (rep.lap_count > 0) {
    const double mean = sum / rep.lap_count;
    double var = 0.0;
    for (const auto& lap : rep.laps) var += (lap.time - mean) * (lap.time - mean);
    rep.mean_lap = mean;
    rep.lap_std = std::sqrt(var / rep.lap_count);
  }
  if (rep.clean_lap_count > 0) rep.mean_clean_lap = clean_sum / rep.clean_lap_count;

  // Violations outside completed laps count as additional (crashed) laps.
  int driven = rep.lap_count;
  if (!log.samples.empty()) {
    const auto b = boundaries(log, track.total_length());
    const std::size_t last = log.samples.size() - 1;
    if (b.empty()) {
      if (any_violation(log, 0, last)) ++driven, ++crashed_laps;
    } else {
      if (b.front().index > 1 && any_violation(log, 0, b.front().index - 1)) ++driven, ++crashed_laps;
      if (b.back().index <= last && any_violation(log, b.back().index + 1, last)) ++driven, ++crashed_laps;
    }
  }
  rep.crash_rate = driven > 0 ? static_cast<double>(crashed_laps) / driven : 0.0;
  return rep;
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["fastest_clean_lap"] = optional_json(r.fastest_clean_lap);
  j["mean_lap"] = optional_json(r.mean_lap);
  j["lap_std"] = optional_json(r.lap_std);
  j["mean_clean_lap"] = optional_json(r.mean_clean_lap);
  j["E_off"] = r.e_off;
  j["crash_rate"] = r.crash_rate;
  j["lap_count"] = r.lap_count;
  j["clean_lap_count"] = r.clean_lap_count;
  j["crash_count"] = r.crash_count;
  j["total_time"] = r.total_time;
  json laps = json::array();
  for (const auto& lap : r.laps) {
    laps.push_back({{"time", lap.time}, {"clean", lap.clean}, {"start_time", lap.start_time}, {"end_time", lap.end_time}});
  }
  j["laps"] = laps;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    EvalReport r;
    r.fastest_clean_lap = optional_from(j, "fastest_clean_lap");
    r.mean_lap = optional_from(j, "mean_lap");
    r.lap_std = optional_from(j, "lap_std");
    r.mean_clean_lap = optional_from(j, "mean_clean_lap");
    r.e_off = j.at("E_off").get<double>();
    r.crash_rate = j.at("crash_rate").get<double>();
    r.lap_count = j.at("lap_count").get<int>();
    r.clean_lap_count = j.at("clean_lap_count").get<int>();
    r.crash_count = j.at("crash_count").get<int>();
    r.total_time = j.at("total_time").get<double>();
    for (const auto& l : j.at("laps")) {
      Lap lap;
      lap.time = l.at("time").get<double>();
      lap.clean = l.at("clean").get<bool>();
      lap.start_time = l.at("start_time").get<double>();
      lap.end_time = l.at("end_time").get<double>();
      r.laps.push_back(lap);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid evaluation report: ") + e.what());
  }
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return report_from_json(buf.str());
}

std::vector<ProfileRow> lap_profile(const TrajectoryLog& log, const Lap& lap, const track::TrackDefinition& track) {
  const double length = track.total_length();
  const auto& xs = log.samples;
  if (lap.end_index >= xs.size() || lap.begin_index > lap.end_index) throw UsageError("lap is outside the trajectory");
  struct Point {
    double p, t, vx;
  };
  std::vector<Point> pts;
  const auto& e = xs[lap.end_index];
  const auto& e0 = xs[lap.end_index - 1];
  const double end_frac = std::clamp(lap.end_time - e0.t, 0.0, e.t - e0.t) / std::max(e.t - e0.t, 1e-300);
  double start_vx = xs[lap.begin_index - 1].vx;
  if (lap.begin_index >= 2 || !on_line(xs[0].s, length)) {
    const auto& a = xs[lap.begin_index - 1];
    const auto& b = xs[lap.begin_index];
    const double frac = (lap.start_time - a.t) / std::max(b.t - a.t, 1e-300);
    start_vx = a.vx + frac * (b.vx - a.vx);
  }
  pts.push_back({0.0, 0.0, start_vx});
  double p = 0.0, s_prev = 0.0;
  for (std::size_t k = lap.begin_index; k < lap.end_index; ++k) {
    p += track::progress_delta(s_prev, xs[k].s, length);
    s_prev = xs[k].s;
    pts.push_back({p, xs[k].t - lap.start_time, xs[k].vx});
  }
  pts.push_back({length, lap.time, e0.vx + end_frac * (e.vx - e0.vx)});

  std::vector<ProfileRow> rows;
  const std::size_t n = track.size();
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) * length / static_cast<double>(n);
    while (j + 1 < pts.size() && pts[j + 1].p < s) ++j;
    if (j + 1 >= pts.size()) {
      rows.push_back({s, pts.back().vx, pts.back().t});
      continue;
    }
    const auto& a = pts[j];
    const auto& b = pts[j + 1];
    const double span = b.p - a.p;
    const double f = span > 0.0 ? std::clamp((s - a.p) / span, 0.0, 1.0) : 0.0;
    rows.push_back({s, a.vx + f * (b.vx - a.vx), a.t + f * (b.t - a.t)});
  }
  return rows;
}

std::vector<ProfileRow> velocity_profile(const TrajectoryLog& log, const track::TrackDefinition& track) {
  const auto laps = lap_times(log, track.total_length());
  if (laps.empty()) return {};
  const Lap* best = nullptr;
  for (const auto& lap : laps) {
    if (lap.clean && (!best || lap.time < best->time)) best = &lap;
  }
  return lap_profile(log, best ? *best : laps.front(), track);
}

std::vector<DeltaRow> compare_profiles(std::span<const ProfileRow> a, std::span<const ProfileRow> b) {
  if (a.size() != b.size()) throw UsageError("profiles have different grids");
  std::vector<DeltaRow> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i].s - b[i].s) > 1e-6) throw UsageError("profiles have different grids");
    out.push_back({a[i].s, b[i].time - a[i].time});
  }
  return out;
}

void write_profile(const std::filesystem::path& path, std::span<const ProfileRow> rows) {
  write_text_atomically(path, profile_text(rows));
}

std::vector<ProfileRow> read_profile(const std::filesystem::path& path) {
  const auto table = read_numeric_csv(path, {"s", "vx", "time"});
  std::vector<ProfileRow> rows;
  for (const auto& r : table.rows) rows.push_back({r[0], r[1], r[2]});
  return rows;
}

void write_delta(const std::filesystem::path& path, std::span<const DeltaRow> rows) {
  std::ostringstream out;
  out << "s,delta_time\n";
  for (const auto& r : rows) out << format_double(r.s) << ',' << format_double(r.delta_time) << '\n';
  write_text_atomically(path, out.str());
}

ExportPaths export_report(const TrajectoryLog& log, const EvalReport& report, std::span<const ProfileRow> profile,
                          const std::filesystem::path& dir) {
  if (log.empty()) throw UsageError("cannot export an empty trajectory");
  const std::string traj = trajectory_text(log);
  const std::string rep = report_to_json(report);
  const std::string prof = profile_text(profile);
  std::filesystem::create_directories(dir);
  ExportPaths paths{dir / "trajectory.csv", dir / "report.json", dir / "profile.csv"};
  write_text_atomically(paths.trajectory, traj);
  write_text_atomically(paths.report, rep);
  write_text_atomically(paths.profile, prof);
  return paths;
}

}  // namespace apex::evalkit
