#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace apex::track {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// One row of a track file: centerline point and full track width.
struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
};

struct TrackOptions {
  double resolution = 0.05;          // uniform spacing of the resampled centerline (m)
  double vehicle_half_width = 0.1;   // subtracted from the geometric half-width (m)
  double curvature_span = 0.15;      // heading-difference stencil length (m)
};

// Progress s (m, in [0, L)), signed lateral offset n (m, positive left) and
// heading error u (rad, wrapped to (-pi, pi]).
struct FrenetPose {
  double s = 0.0;
  double n = 0.0;
  double u = 0.0;
};

struct GlobalPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

struct Lookahead {
  std::vector<double> curvature;  // 1/m
  std::vector<double> width;      // full width, m
};

// Closed centerline resampled at uniform arc-length spacing. Arrays hold
// size() + 1 entries; the last entry repeats the first so the loop is closed.
// Immutable after construction and safe to share between threads.
class TrackDefinition {
 public:
  static TrackDefinition from_waypoints(std::span<const Waypoint> waypoints,
                                        const TrackOptions& options = {});

  std::size_t size() const { return points_.size() - 1; }
  const std::vector<Vec2>& points() const { return points_; }
  const std::vector<double>& arc_length() const { return arc_length_; }
  const std::vector<double>& curvature() const { return curvature_; }
  const std::vector<double>& half_width() const { return half_width_; }
  const std::vector<double>& width() const { return width_; }
  const std::vector<double>& heading() const { return heading_; }
  double total_length() const { return total_length_; }
  double resolution() const { return resolution_; }
  const TrackOptions& options() const { return options_; }

  double wrap_s(double s) const;
  double curvature_at(double s) const;
  double half_width_at(double s) const;
  double width_at(double s) const;
  double heading_at(double s) const;
  Vec2 position_at(double s) const;

  // Segment index i and fraction t in [0, 1) such that s = (i + t) * ds.
  std::size_t locate(double s, double& t) const;

 private:
  TrackDefinition() = default;

  std::vector<Vec2> points_;
  std::vector<double> arc_length_;
  std::vector<double> curvature_;
  std::vector<double> half_width_;
  std::vector<double> width_;
  std::vector<double> heading_;  // vertex tangent heading, wrapped
  double total_length_ = 0.0;
  double resolution_ = 0.0;
  TrackOptions options_;
};

std::vector<Waypoint> read_waypoints(const std::filesystem::path& path);
void write_waypoints(const std::filesystem::path& path, std::span<const Waypoint> waypoints);
TrackDefinition load_track(const std::filesystem::path& path, const TrackOptions& options = {});

// Writes `s,x,y,curvature,width` for every resampled point.
void export_resampled(const std::filesystem::path& path, const TrackDefinition& track);

double wrap_angle(double angle);

// `s_hint` restricts the nearest-point search to a window around the previous
// progress value, which keeps sequential queries O(1) and avoids jumping to
// an adjacent section of a self-near track.
FrenetPose global_to_frenet(const TrackDefinition& track, double x, double y, double yaw,
                            std::optional<double> s_hint = std::nullopt);
GlobalPose frenet_to_global(const TrackDefinition& track, double s, double n);

Lookahead sample_lookahead(const TrackDefinition& track, double s, int count,
                           double spacing = 0.3);

// Wrapped difference s_now - s_prev in (-L/2, L/2].
double progress_delta(double s_prev, double s_now, double length);

bool is_inside(const TrackDefinition& track, const FrenetPose& pose);

// max(|n| - W(s), 0)
double off_track_distance(const TrackDefinition& track, const FrenetPose& pose);

// Checks the structural invariants of a resampled track; returns one message per violation.
std::vector<std::string> validate(const TrackDefinition& track);

enum class Shape { oval, lshape, random };

Shape parse_shape(const std::string& name);

// Counter-clockwise centerlines sampled every `spacing` metres.
std::vector<Waypoint> generate_oval(double length, double width, double spacing = 0.05);
std::vector<Waypoint> generate_lshape(double length, double width, double spacing = 0.05);
std::vector<Waypoint> generate_random(double length, double width, std::uint64_t seed,
                                      double spacing = 0.05);
std::vector<Waypoint> generate(Shape shape, double length, double width, std::uint64_t seed = 0,
                               double spacing = 0.05);

}  // namespace apex::track
