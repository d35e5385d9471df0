#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "apex/dynamics.hpp"
#include "apex/env.hpp"
#include "apex/errors.hpp"
#include "apex/evalkit.hpp"
#include "apex/keyvalue.hpp"
#include "apex/manifest.hpp"
#include "apex/sysid.hpp"
#include "apex/track.hpp"
#include "apex/trainer.hpp"

#ifndef APEX_VERSION
#define APEX_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace apex;

namespace {

KeyValueFile load_config(const fs::path& path) {
  try {
    return KeyValueFile::load(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t from_config) {
  if (flag) return *flag;
  if (const char* env = std::getenv("APEX_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("APEX_SEED is not a non-negative integer: ") + env);
    }
  }
  return from_config;
}

RunManifest start_manifest(const std::string& command, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.tool_version = APEX_VERSION;
  m.seed = seed;
  return m;
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  return fs::path(file.string() + suffix);
}

// Environment assembled from an optional setup file plus command-line overrides.
struct EnvInputs {
  std::string setup_path;
  std::string track_path;
  std::string params_path;
  std::vector<std::string> ablations;
};

struct ResolvedEnv {
  env::EnvSetup setup;
  std::shared_ptr<const track::TrackDefinition> track;
  dynamics::VehicleParams params;
};

void add_env_options(CLI::App* cmd, EnvInputs& in) {
  cmd->add_option("--env", in.setup_path, "Environment setup file (track, params, env keys)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--track", in.track_path, "Track CSV (overrides the setup file)")->check(CLI::ExistingFile);
  cmd->add_option("--params", in.params_path, "Vehicle parameter file (overrides the setup file)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--ablation", in.ablations,
                  "Variant preset: obs-s, wheel-speed, no-actuators, dr-friction-<sigma>, dr-all-<sigma>");
}

ResolvedEnv resolve_env(const EnvInputs& in, RunManifest& manifest) {
  ResolvedEnv r;
  if (!in.setup_path.empty()) {
    try {
      r.setup = env::load_env_setup(in.setup_path);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
    manifest.add_input(in.setup_path);
  }
  if (!in.track_path.empty()) r.setup.track_path = in.track_path;
  if (!in.params_path.empty()) r.setup.params_path = in.params_path;
  if (r.setup.track_path.empty()) throw UsageError("a track is required (--track or a setup file with 'track')");
  for (const auto& a : in.ablations) env::apply_ablation(r.setup.config, a);
  r.setup.config.validate();
  r.track = std::make_shared<const track::TrackDefinition>(track::load_track(r.setup.track_path, r.setup.track_options));
  manifest.add_input(r.setup.track_path);
  if (!r.setup.params_path.empty()) {
    r.params = dynamics::load_params(r.setup.params_path);
    manifest.add_input(r.setup.params_path);
  }
  manifest.add_config(env::setup_to_keyvalues(r.setup), "env.");
  return r;
}

int cmd_track_gen(const std::string& shape, double length, double width, std::uint64_t seed, double spacing,
                  const fs::path& out) {
  const auto pts = track::generate(track::parse_shape(shape), length, width, seed, spacing);
  const auto def = track::TrackDefinition::from_waypoints(pts);
  track::write_waypoints(out, pts);
  std::cout << "wrote " << out.string() << " (" << pts.size() << " waypoints, length " << format_double(def.total_length())
            << " m)\n";
  return 0;
}

int cmd_track_validate(const fs::path& path, const track::TrackOptions& options) {
  const auto def = track::load_track(path, options);
  const auto problems = track::validate(def);
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "error: " << path.string() << ": " << p << '\n';
    return 1;
  }
  std::cout << "ok: " << path.string() << " length " << format_double(def.total_length()) << " m, " << def.size()
            << " resampled points\n";
  return 0;
}

int cmd_track_resample(const fs::path& path, const track::TrackOptions& options, const fs::path& out) {
  const auto def = track::load_track(path, options);
  track::export_resampled(out, def);
  std::cout << "wrote " << out.string() << " (" << def.size() << " points)\n";
  return 0;
}

int cmd_params(const std::string& from, const std::vector<std::string>& sets, const fs::path& out) {
  dynamics::VehicleParams p = from.empty() ? dynamics::VehicleParams{} : dynamics::load_params(from);
  if (!sets.empty()) {
    auto kv = dynamics::params_to_keyvalues(p);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      const auto key = std::string(trim(std::string_view(s).substr(0, eq)));
      if (!kv.contains(key)) throw UsageError("unknown parameter '" + key + "'");
      kv.set(key, std::string(trim(std::string_view(s).substr(eq + 1))));
    }
    try {
      p = dynamics::params_from_keyvalues(kv);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }
  dynamics::save_params(out, p);
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_simlog(const std::string& params_path, double duration, const std::optional<std::uint64_t>& seed_flag,
               const fs::path& out) {
  const auto seed = resolve_seed(seed_flag, 0);
  auto manifest = start_manifest("simlog", seed);
  dynamics::VehicleParams p;
  if (!params_path.empty()) {
    p = dynamics::load_params(params_path);
    manifest.add_input(params_path);
  }
  manifest.add_config(dynamics::params_to_keyvalues(p), "params.");
  manifest.config.emplace_back("duration", format_double(duration));
  manifest.outputs.push_back(out.string());
  manifest.save(sibling(out, ".manifest.json"));
  const auto sim = sysid::simulate_log(p, duration, seed);
  sysid::write_log(out, sim.log);
  std::cout << "wrote " << out.string() << " (" << sim.log.size() << " samples)\n";
  return 0;
}

int cmd_sysid(const fs::path& log_path, const fs::path& init_path, const std::string& config_path,
              const fs::path& out, std::string loss_path, const std::optional<int>& epochs, int threads,
              const std::optional<std::uint64_t>& seed_flag, bool quiet) {
  KeyValueFile kv;
  if (!config_path.empty()) kv = load_config(config_path);
  auto cfg = sysid::config_from_keyvalues(kv);
  if (epochs) cfg.epochs = *epochs;
  cfg.seed = resolve_seed(seed_flag, cfg.seed);
  if (threads < 1) throw UsageError("--threads must be >= 1");

  const auto log = sysid::ingest_log(log_path);
  if (!kv.contains("dt") && log.size() > 1) {
    std::vector<double> d;
    for (std::size_t i = 1; i < log.size(); ++i) d.push_back(log.t[i] - log.t[i - 1]);
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    cfg.dt = d[d.size() / 2];
  }
  cfg.validate();
  const auto init = dynamics::load_params(init_path);
  if (loss_path.empty()) loss_path = sibling(out, ".loss.csv").string();

  auto manifest = start_manifest("sysid", cfg.seed);
  manifest.add_input(log_path);
  manifest.add_input(init_path);
  if (!config_path.empty()) manifest.add_input(config_path);
  manifest.add_config(sysid::config_to_keyvalues(cfg), "sysid.");
  manifest.outputs = {out.string(), loss_path};
  manifest.save(sibling(out, ".manifest.json"));

  const auto vel = sysid::estimate_velocities(log);
  const auto segments = sysid::make_segments(log, vel, cfg.horizon);
  if (segments.empty()) throw UsageError("log too short for one training segment of " + std::to_string(cfg.horizon) + " samples");
  std::unique_ptr<ThreadPool> pool;
  if (threads > 1) pool = std::make_unique<ThreadPool>(static_cast<unsigned>(threads));
  const auto result = sysid::fit(segments, init, cfg, pool.get(), [&](int epoch, double loss) {
    if (!quiet && (epoch % 10 == 0 || epoch == cfg.epochs)) {
      std::cout << "epoch " << epoch << " loss " << format_double(loss) << '\n' << std::flush;
    }
  });
  dynamics::save_params(out, result.params);
  sysid::write_loss_history(loss_path, result.loss_history);
  std::cout << "wrote " << out.string() << " (best loss " << format_double(result.best_loss) << " at epoch "
            << result.best_epoch << ", " << segments.size() << " segments)\n";
  for (const auto& name : cfg.fit_params) {
    std::cout << "  " << name << " = " << format_double(sysid::get_parameter(result.params, name)) << '\n';
  }
  return 0;
}

int cmd_train(const EnvInputs& env_in, const std::string& config_path, const fs::path& out_dir,
              const std::optional<std::int64_t>& steps, const std::string& resume, const std::optional<int>& threads,
              const std::optional<std::uint64_t>& seed_flag, bool quiet) {
  KeyValueFile kv;
  if (!config_path.empty()) kv = load_config(config_path);
  auto cfg = trainer::config_from_keyvalues(kv);
  if (steps) cfg.total_steps = *steps;
  if (threads) cfg.threads = *threads;
  cfg.seed = resolve_seed(seed_flag, cfg.seed);
  cfg.validate();

  auto manifest = start_manifest("train", cfg.seed);
  const auto env = resolve_env(env_in, manifest);
  if (!config_path.empty()) manifest.add_input(config_path);
  if (!resume.empty()) manifest.add_input(resume);
  manifest.add_config(trainer::config_to_keyvalues(cfg), "ppo.");
  trainer::TrainOptions opts;
  opts.checkpoint_dir = out_dir / "checkpoints";
  opts.log_path = out_dir / "train_log.csv";
  if (!resume.empty()) opts.resume_from = fs::path(resume);
  const auto final_path = out_dir / "policy.ckpt";
  manifest.outputs = {opts.log_path.string(), opts.checkpoint_dir.string(), final_path.string()};
  fs::create_directories(out_dir);
  manifest.save(out_dir / "manifest.json");
  env::setup_to_keyvalues(env.setup).save(out_dir / "env.cfg");
  trainer::config_to_keyvalues(cfg).save(out_dir / "ppo.cfg");

  opts.on_update = [&](const trainer::UpdateLog& r) {
    if (!quiet && (r.update % 10 == 0 || r.update == 1)) {
      std::cout << "update " << r.update << " env_steps " << r.env_steps << " mean_ep_progress "
                << format_double(r.mean_ep_progress) << " lr " << format_double(r.lr) << '\n'
                << std::flush;
    }
  };
  const auto result = trainer::train(env.track, env.params, env.setup.config, cfg, opts);
  std::ostringstream cfg_text;
  auto snapshot = trainer::config_to_keyvalues(cfg);
  snapshot.merge(env::config_to_keyvalues(env.setup.config));
  snapshot.write(cfg_text);
  trainer::save_checkpoint(final_path, result.network, result.adam, result.state, cfg_text.str());
  std::cout << "wrote " << final_path.string() << " (" << result.state.updates << " updates, " << result.state.env_steps
            << " env steps)\n";
  return 0;
}

int cmd_eval(const EnvInputs& env_in, const std::string& checkpoint, bool baseline, int laps, const fs::path& out_dir,
             const std::string& compare, double v_cap, double a_lat, const std::optional<std::uint64_t>& seed_flag) {
  if (laps < 1) throw UsageError("--laps must be >= 1");
  const auto seed = resolve_seed(seed_flag, 0);
  auto manifest = start_manifest("eval", seed);
  const auto env = resolve_env(env_in, manifest);
  std::unique_ptr<evalkit::Controller> controller;
  if (baseline) {
    evalkit::BaselineOptions bo;
    bo.v_cap = v_cap;
    bo.a_lat_max = a_lat;
    controller = std::make_unique<evalkit::BaselineController>(bo);
    manifest.config.emplace_back("controller", "baseline");
    manifest.config.emplace_back("baseline.v_cap", format_double(v_cap));
    manifest.config.emplace_back("baseline.a_lat_max", format_double(a_lat));
  } else {
    auto ck = trainer::load_checkpoint(checkpoint, env.setup.config.observation_size());
    manifest.add_input(checkpoint);
    manifest.config.emplace_back("controller", "policy");
    controller = std::make_unique<evalkit::PolicyController>(trainer::Policy(std::move(ck.network)));
  }
  if (!compare.empty()) manifest.add_input(compare);
  manifest.config.emplace_back("laps", std::to_string(laps));
  manifest.outputs = {(out_dir / "trajectory.csv").string(), (out_dir / "report.json").string(),
                      (out_dir / "profile.csv").string()};
  if (!compare.empty()) manifest.outputs.push_back((out_dir / "delta_time.csv").string());
  fs::create_directories(out_dir);
  manifest.save(out_dir / "manifest.json");

  evalkit::EvalOptions eo;
  eo.n_laps = laps;
  eo.seed = seed;
  const auto log = evalkit::run_eval(*controller, env.track, env.params, env.setup.config, eo);
  const auto report = evalkit::make_report(log, *env.track, laps);
  const auto profile = evalkit::velocity_profile(log, *env.track);
  evalkit::export_report(log, report, profile, out_dir);
  if (!compare.empty()) {
    const auto reference = evalkit::read_profile(compare);
    evalkit::write_delta(out_dir / "delta_time.csv", evalkit::compare_profiles(reference, profile));
  }
  std::cout << "laps " << report.lap_count << " clean " << report.clean_lap_count << " crash_rate "
            << format_double(report.crash_rate) << " E_off " << format_double(report.e_off);
  if (report.fastest_clean_lap) std::cout << " fastest_clean_lap " << format_double(*report.fastest_clean_lap);
  std::cout << '\n';
  return 0;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"apex: track tools, system identification, policy training and evaluation"};
  app.set_version_flag("--version", APEX_VERSION);
  app.require_subcommand(1);

  auto* track_cmd = app.add_subcommand("track", "Generate, validate or resample tracks");
  track_cmd->require_subcommand(1);
  std::string shape, track_file, track_out;
  double length = 17.0, width = 1.0, spacing = 0.05;
  std::optional<std::uint64_t> seed;
  track::TrackOptions track_options;
  auto* gen = track_cmd->add_subcommand("gen", "Write a generated track CSV");
  gen->add_option("--shape", shape, "oval, lshape or random")->required()->check(CLI::IsMember({"oval", "lshape", "random"}));
  gen->add_option("--length", length, "Centerline length (m)")->check(CLI::PositiveNumber);
  gen->add_option("--width", width, "Track width (m)")->check(CLI::PositiveNumber);
  gen->add_option("--spacing", spacing, "Waypoint spacing (m)")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Seed for random shapes (falls back to APEX_SEED)");
  gen->add_option("--out", track_out, "Output CSV")->required();
  auto* validate_cmd = track_cmd->add_subcommand("validate", "Check track invariants");
  validate_cmd->add_option("track", track_file, "Track CSV")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--resolution", track_options.resolution, "Resampling step (m)")->check(CLI::PositiveNumber);
  auto* resample = track_cmd->add_subcommand("resample", "Write the resampled centerline (s,x,y,curvature,width)");
  resample->add_option("track", track_file, "Track CSV")->required()->check(CLI::ExistingFile);
  resample->add_option("--resolution", track_options.resolution, "Resampling step (m)")->check(CLI::PositiveNumber);
  resample->add_option("--out", track_out, "Output CSV")->required();

  auto* params_cmd = app.add_subcommand("params", "Write a vehicle parameter file");
  std::string params_from, params_out;
  std::vector<std::string> params_set;
  params_cmd->add_option("--from", params_from, "Start from this file instead of the nominal values")
      ->check(CLI::ExistingFile);
  params_cmd->add_option("--set", params_set, "Override one value, key=value (repeatable)");
  params_cmd->add_option("--out", params_out, "Output file")->required();

  auto* simlog_cmd = app.add_subcommand("simlog", "Simulate a synthetic drive log");
  std::string simlog_params, simlog_out;
  double duration = 60.0;
  simlog_cmd->add_option("--params", simlog_params, "Vehicle parameter file")->check(CLI::ExistingFile);
  simlog_cmd->add_option("--duration", duration, "Seconds of driving")->check(CLI::PositiveNumber);
  simlog_cmd->add_option("--seed", seed, "Seed (falls back to APEX_SEED)");
  simlog_cmd->add_option("--out", simlog_out, "Output drive log CSV")->required();

  auto* sysid_cmd = app.add_subcommand("sysid", "Identify vehicle parameters from a drive log");
  std::string log_path, init_path, sysid_config, sysid_out, loss_path;
  std::optional<int> epochs;
  int sysid_threads = 1;
  bool quiet = false;
  sysid_cmd->add_option("--log", log_path, "Drive log CSV")->required()->check(CLI::ExistingFile);
  sysid_cmd->add_option("--init", init_path, "Initial parameter file")->required()->check(CLI::ExistingFile);
  sysid_cmd->add_option("--config", sysid_config, "Identification config file")->check(CLI::ExistingFile);
  sysid_cmd->add_option("--out", sysid_out, "Fitted parameter file")->required();
  sysid_cmd->add_option("--loss", loss_path, "Loss CSV (default: <out>.loss.csv)");
  sysid_cmd->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  sysid_cmd->add_option("--threads", sysid_threads, "Worker threads")->check(CLI::PositiveNumber);
  sysid_cmd->add_option("--seed", seed, "Mini-batch shuffling seed (falls back to APEX_SEED)");
  sysid_cmd->add_flag("--quiet", quiet, "Suppress per-epoch output");

  EnvInputs train_env, eval_env;
  auto* train_cmd = app.add_subcommand("train", "Train a policy with PPO");
  std::string ppo_config, train_out, resume;
  std::optional<std::int64_t> steps;
  std::optional<int> train_threads;
  add_env_options(train_cmd, train_env);
  train_cmd->add_option("--config", ppo_config, "PPO config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--steps", steps, "Override total environment steps")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--resume", resume, "Resume from checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--threads", train_threads, "Rollout threads (1 is fully deterministic)")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", seed, "Seed (falls back to APEX_SEED)");
  train_cmd->add_flag("--quiet", quiet, "Suppress progress output");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy or the baseline controller");
  std::string checkpoint, eval_out, compare;
  bool baseline = false;
  int laps = 20;
  double v_cap = evalkit::BaselineOptions{}.v_cap, a_lat = evalkit::BaselineOptions{}.a_lat_max;
  add_env_options(eval_cmd, eval_env);
  auto* ck_opt = eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint")->check(CLI::ExistingFile);
  auto* bl_opt = eval_cmd->add_flag("--baseline", baseline, "Use the pure-pursuit baseline");
  ck_opt->excludes(bl_opt);
  eval_cmd->add_option("--laps", laps, "Laps to drive")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  eval_cmd->add_option("--compare", compare, "Reference profile CSV for a delta-time curve")->check(CLI::ExistingFile);
  eval_cmd->add_option("--v-cap", v_cap, "Baseline speed cap (m/s)")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--a-lat", a_lat, "Baseline lateral acceleration limit (m/s^2)")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", seed, "Seed (falls back to APEX_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_track_gen(shape, length, width, resolve_seed(seed, 0), spacing, track_out);
    if (*validate_cmd) return cmd_track_validate(track_file, track_options);
    if (*resample) return cmd_track_resample(track_file, track_options, track_out);
    if (*params_cmd) return cmd_params(params_from, params_set, params_out);
    if (*simlog_cmd) return cmd_simlog(simlog_params, duration, seed, simlog_out);
    if (*sysid_cmd) {
      return cmd_sysid(log_path, init_path, sysid_config, sysid_out, loss_path, epochs, sysid_threads, seed, quiet);
    }
    if (*train_cmd) return cmd_train(train_env, ppo_config, train_out, steps, resume, train_threads, seed, quiet);
    if (*eval_cmd) {
      if (checkpoint.empty() && !baseline) throw UsageError("eval needs --checkpoint or --baseline");
      return cmd_eval(eval_env, checkpoint, baseline, laps, eval_out, compare, v_cap, a_lat, seed);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}
