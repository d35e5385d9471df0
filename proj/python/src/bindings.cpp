#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "apex/dynamics.hpp"
#include "apex/env.hpp"
#include "apex/errors.hpp"
#include "apex/evalkit.hpp"
#include "apex/sysid.hpp"
#include "apex/track.hpp"
#include "apex/trainer.hpp"

namespace py = pybind11;
using namespace apex;

namespace {

using TrackPtr = std::shared_ptr<track::TrackDefinition>;

TrackPtr make_track(std::vector<track::Waypoint> waypoints, double resolution) {
  track::TrackOptions options;
  options.resolution = resolution;
  return std::make_shared<track::TrackDefinition>(track::TrackDefinition::from_waypoints(waypoints, options));
}

py::dict step_info(const env::StepInfo& info) {
  py::dict d;
  d["lap_count"] = info.lap_count;
  d["s"] = info.frenet.s;
  d["n"] = info.frenet.n;
  d["u"] = info.frenet.u;
  d["progress"] = info.progress;
  d["episode_progress"] = info.episode_progress;
  d["episode_steps"] = info.episode_steps;
  return d;
}

py::tuple step_tuple(const env::StepResult& r) {
  return py::make_tuple(r.observation, r.reward, r.terminated, r.truncated, step_info(r.info));
}

evalkit::EvalReport evaluate(evalkit::Controller& controller, const TrackPtr& tr, const dynamics::VehicleParams& params,
                             const env::EnvConfig& config, int n_laps,
                             const std::optional<std::filesystem::path>& out_dir) {
  evalkit::EvalOptions options;
  options.n_laps = n_laps;
  const auto log = evalkit::run_eval(controller, tr, params, config, options);
  auto report = evalkit::make_report(log, *tr, n_laps);
  if (out_dir) evalkit::export_report(log, report, evalkit::velocity_profile(log, *tr), *out_dir);
  return report;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Autonomous racing toolkit: tracks, vehicle dynamics, racing environment and evaluation";

  static py::exception<Error> apex_error(m, "ApexError", PyExc_RuntimeError);
  static py::exception<ParseError> parse_error(m, "ParseError", apex_error.ptr());
  static py::exception<ConfigError> config_error(m, "ConfigError", apex_error.ptr());
  static py::exception<UsageError> usage_error(m, "UsageError", apex_error.ptr());
  static py::exception<CheckpointError> checkpoint_error(m, "CheckpointError", apex_error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      parse_error(e.what());
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const UsageError& e) {
      usage_error(e.what());
    } catch (const CheckpointError& e) {
      checkpoint_error(e.what());
    } catch (const Error& e) {
      apex_error(e.what());
    }
  });

  py::class_<track::FrenetPose>(m, "FrenetPose")
      .def(py::init<>())
      .def(py::init([](double s, double n, double u) { return track::FrenetPose{s, n, u}; }), py::arg("s"),
           py::arg("n"), py::arg("u") = 0.0)
      .def_readwrite("s", &track::FrenetPose::s)
      .def_readwrite("n", &track::FrenetPose::n)
      .def_readwrite("u", &track::FrenetPose::u)
      .def("__repr__", [](const track::FrenetPose& p) {
        return "FrenetPose(s=" + std::to_string(p.s) + ", n=" + std::to_string(p.n) + ", u=" + std::to_string(p.u) +
               ")";
      });

  py::class_<track::TrackDefinition, TrackPtr>(m, "Track")
      .def_static(
          "generate",
          [](const std::string& shape, double length, double width, std::uint64_t seed, double resolution) {
            return make_track(track::generate(track::parse_shape(shape), length, width, seed), resolution);
          },
          py::arg("shape"), py::arg("length"), py::arg("width"), py::arg("seed") = 0, py::arg("resolution") = 0.05)
      .def_static(
          "load",
          [](const std::filesystem::path& path, double resolution) {
            return make_track(track::read_waypoints(path), resolution);
          },
          py::arg("path"), py::arg("resolution") = 0.05)
      .def_static(
          "from_waypoints",
          [](const std::vector<std::tuple<double, double, double>>& rows, double resolution) {
            std::vector<track::Waypoint> waypoints;
            for (const auto& [x, y, w] : rows) waypoints.push_back({x, y, w});
            return make_track(std::move(waypoints), resolution);
          },
          py::arg("waypoints"), py::arg("resolution") = 0.05)
      .def_property_readonly("total_length", &track::TrackDefinition::total_length)
      .def_property_readonly("resolution", &track::TrackDefinition::resolution)
      .def("__len__", &track::TrackDefinition::size)
      .def("curvature_at", &track::TrackDefinition::curvature_at, py::arg("s"))
      .def("half_width_at", &track::TrackDefinition::half_width_at, py::arg("s"))
      .def("width_at", &track::TrackDefinition::width_at, py::arg("s"))
      .def("heading_at", &track::TrackDefinition::heading_at, py::arg("s"))
      .def("position_at",
           [](const track::TrackDefinition& t, double s) {
             const auto p = t.position_at(s);
             return py::make_tuple(p.x, p.y);
           },
           py::arg("s"))
      .def("to_frenet",
           [](const track::TrackDefinition& t, double x, double y, double yaw) {
             return track::global_to_frenet(t, x, y, yaw);
           },
           py::arg("x"), py::arg("y"), py::arg("yaw") = 0.0)
      .def("to_global",
           [](const track::TrackDefinition& t, double s, double n) {
             const auto g = track::frenet_to_global(t, s, n);
             return py::make_tuple(g.x, g.y, g.yaw);
           },
           py::arg("s"), py::arg("n") = 0.0)
      .def("validate", [](const track::TrackDefinition& t) { return track::validate(t); })
      .def("export_resampled", [](const track::TrackDefinition& t, const std::filesystem::path& path) {
        track::export_resampled(path, t);
      });

  py::class_<dynamics::TireCoeffs>(m, "TireCoeffs")
      .def(py::init<>())
      .def_readwrite("B", &dynamics::TireCoeffs::B)
      .def_readwrite("C", &dynamics::TireCoeffs::C)
      .def_readwrite("D", &dynamics::TireCoeffs::D)
      .def_readwrite("E", &dynamics::TireCoeffs::E);

  py::class_<dynamics::VehicleParams>(m, "VehicleParams")
      .def(py::init<>())
      .def_readwrite("m", &dynamics::VehicleParams::m)
      .def_readwrite("Iz", &dynamics::VehicleParams::Iz)
      .def_readwrite("lf", &dynamics::VehicleParams::lf)
      .def_readwrite("lr", &dynamics::VehicleParams::lr)
      .def_readwrite("R_w", &dynamics::VehicleParams::R_w)
      .def_readwrite("mu", &dynamics::VehicleParams::mu)
      .def_readwrite("front", &dynamics::VehicleParams::front)
      .def_readwrite("rear", &dynamics::VehicleParams::rear)
      .def_readwrite("T_delta", &dynamics::VehicleParams::T_delta)
      .def_readwrite("T_omega", &dynamics::VehicleParams::T_omega)
      .def_readwrite("c_drag", &dynamics::VehicleParams::c_drag)
      .def_readwrite("c_roll", &dynamics::VehicleParams::c_roll)
      .def_readwrite("delta_max", &dynamics::VehicleParams::delta_max)
      .def_readwrite("omega_max", &dynamics::VehicleParams::omega_max)
      .def("validate", &dynamics::VehicleParams::validate)
      .def(py::self == py::self);

  py::class_<dynamics::VehicleState>(m, "VehicleState")
      .def(py::init<>())
      .def_readwrite("x", &dynamics::VehicleState::x)
      .def_readwrite("y", &dynamics::VehicleState::y)
      .def_readwrite("yaw", &dynamics::VehicleState::yaw)
      .def_readwrite("vx", &dynamics::VehicleState::vx)
      .def_readwrite("vy", &dynamics::VehicleState::vy)
      .def_readwrite("yaw_rate", &dynamics::VehicleState::yaw_rate)
      .def_readwrite("delta", &dynamics::VehicleState::delta)
      .def_readwrite("omega", &dynamics::VehicleState::omega)
      .def("to_list", [](const dynamics::VehicleState& s) {
        const auto a = s.to_array();
        return std::vector<double>(a.begin(), a.end());
      });

  m.def("load_params", &dynamics::load_params, py::arg("path"));
  m.def("save_params", &dynamics::save_params, py::arg("path"), py::arg("params"));
  m.def(
      "integrate_step",
      [](const dynamics::VehicleState& state, double delta_ref, double omega_ref, const dynamics::VehicleParams& params,
         double dt, int substeps) {
        return dynamics::integrate_step(state, {delta_ref, omega_ref}, params, {dt, substeps, false});
      },
      py::arg("state"), py::arg("delta_ref"), py::arg("omega_ref"), py::arg("params") = dynamics::VehicleParams{},
      py::arg("dt") = 0.05, py::arg("substeps") = 10);
  m.def(
      "simulate_log",
      [](const dynamics::VehicleParams& params, double duration, std::uint64_t seed,
         const std::optional<std::filesystem::path>& path) {
        const auto syn = sysid::simulate_log(params, duration, seed);
        if (path) sysid::write_log(*path, syn.log);
        py::dict d;
        d["t"] = syn.log.t;
        d["x"] = syn.log.x;
        d["y"] = syn.log.y;
        d["yaw"] = syn.log.yaw;
        d["omega"] = syn.log.omega;
        d["delta"] = syn.log.delta;
        d["delta_ref"] = syn.log.delta_ref;
        d["omega_ref"] = syn.log.omega_ref;
        return d;
      },
      py::arg("params"), py::arg("duration"), py::arg("seed") = 0, py::arg("path") = std::nullopt);

  py::class_<env::EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("dt", &env::EnvConfig::dt)
      .def_readwrite("substeps", &env::EnvConfig::substeps)
      .def_readwrite("n_lookahead", &env::EnvConfig::n_lookahead)
      .def_readwrite("lookahead_spacing", &env::EnvConfig::lookahead_spacing)
      .def_readwrite("episode_steps", &env::EnvConfig::episode_steps)
      .def_readwrite("model_actuators", &env::EnvConfig::model_actuators)
      .def_property(
          "sigma_dr", [](const env::EnvConfig& c) { return c.randomization.sigma_dr; },
          [](env::EnvConfig& c, double v) { c.randomization.sigma_dr = v; })
      .def("apply_ablation", &env::apply_ablation, py::arg("preset"))
      .def("observation_size", &env::EnvConfig::observation_size)
      .def("validate", &env::EnvConfig::validate);

  py::class_<env::Action>(m, "Action")
      .def(py::init([](double steer, double throttle) { return env::Action{steer, throttle}; }), py::arg("steer"),
           py::arg("throttle"))
      .def_readwrite("steer", &env::Action::steer)
      .def_readwrite("throttle", &env::Action::throttle);

  py::class_<env::RacingEnv>(m, "RacingEnv")
      .def(py::init([](const TrackPtr& tr, const dynamics::VehicleParams& params, const env::EnvConfig& config,
                       std::uint64_t seed) { return env::RacingEnv(tr, params, config, seed); }),
           py::arg("track"), py::arg("params") = dynamics::VehicleParams{}, py::arg("config") = env::EnvConfig{},
           py::arg("seed") = 0)
      .def("reset", &env::RacingEnv::reset)
      .def("reset_at", &env::RacingEnv::reset_at, py::arg("s"), py::arg("vx") = 0.0)
      .def(
          "step", [](env::RacingEnv& e, double steer, double throttle) { return step_tuple(e.step({steer, throttle})); },
          py::arg("steer"), py::arg("throttle"))
      .def("observe", &env::RacingEnv::observe)
      .def_property_readonly("state", &env::RacingEnv::state)
      .def_property_readonly("frenet", &env::RacingEnv::frenet)
      .def_property_readonly("params", &env::RacingEnv::params)
      .def_property_readonly("observation_size", &env::RacingEnv::observation_size)
      .def_property_readonly("lap_count", &env::RacingEnv::lap_count);

  py::class_<trainer::Policy>(m, "Policy")
      .def_static(
          "load",
          [](const std::filesystem::path& path, std::optional<std::size_t> obs_dim) {
            return trainer::Policy(trainer::load_checkpoint(path, obs_dim).network);
          },
          py::arg("path"), py::arg("obs_dim") = std::nullopt)
      .def(
          "act",
          [](const trainer::Policy& p, const env::Observation& obs) {
            const auto a = p.act(obs);
            return py::make_tuple(a.steer, a.throttle);
          },
          py::arg("observation"));

  py::class_<evalkit::BaselineOptions>(m, "BaselineOptions")
      .def(py::init<>())
      .def_readwrite("v_cap", &evalkit::BaselineOptions::v_cap)
      .def_readwrite("a_lat_max", &evalkit::BaselineOptions::a_lat_max)
      .def_readwrite("lookahead_min", &evalkit::BaselineOptions::lookahead_min)
      .def_readwrite("lookahead_gain", &evalkit::BaselineOptions::lookahead_gain);

  py::class_<evalkit::EvalReport>(m, "EvalReport")
      .def_readonly("fastest_clean_lap", &evalkit::EvalReport::fastest_clean_lap)
      .def_readonly("mean_lap", &evalkit::EvalReport::mean_lap)
      .def_readonly("lap_std", &evalkit::EvalReport::lap_std)
      .def_readonly("mean_clean_lap", &evalkit::EvalReport::mean_clean_lap)
      .def_readonly("e_off", &evalkit::EvalReport::e_off)
      .def_readonly("crash_rate", &evalkit::EvalReport::crash_rate)
      .def_readonly("lap_count", &evalkit::EvalReport::lap_count)
      .def_readonly("clean_lap_count", &evalkit::EvalReport::clean_lap_count)
      .def_readonly("crash_count", &evalkit::EvalReport::crash_count)
      .def_readonly("total_time", &evalkit::EvalReport::total_time)
      .def_property_readonly("lap_times",
                             [](const evalkit::EvalReport& r) {
                               std::vector<double> t;
                               for (const auto& lap : r.laps) t.push_back(lap.time);
                               return t;
                             })
      .def("to_json", &evalkit::report_to_json)
      .def_static("from_json", &evalkit::report_from_json, py::arg("text"));

  m.def(
      "evaluate_baseline",
      [](const TrackPtr& tr, const dynamics::VehicleParams& params, const env::EnvConfig& config, int n_laps,
         const evalkit::BaselineOptions& options, const std::optional<std::filesystem::path>& out_dir) {
        evalkit::BaselineController controller(options);
        return evaluate(controller, tr, params, config, n_laps, out_dir);
      },
      py::arg("track"), py::arg("params") = dynamics::VehicleParams{}, py::arg("config") = env::EnvConfig{},
      py::arg("n_laps") = 20, py::arg("options") = evalkit::BaselineOptions{}, py::arg("out_dir") = std::nullopt);
  m.def(
      "evaluate_policy",
      [](const trainer::Policy& policy, const TrackPtr& tr, const dynamics::VehicleParams& params,
         const env::EnvConfig& config, int n_laps, const std::optional<std::filesystem::path>& out_dir) {
        evalkit::PolicyController controller(policy);
        return evaluate(controller, tr, params, config, n_laps, out_dir);
      },
      py::arg("policy"), py::arg("track"), py::arg("params") = dynamics::VehicleParams{},
      py::arg("config") = env::EnvConfig{}, py::arg("n_laps") = 20, py::arg("out_dir") = std::nullopt);
}
