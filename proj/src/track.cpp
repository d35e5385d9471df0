#include "apex/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "apex/csv.hpp"
#include "apex/errors.hpp"
#include "apex/keyvalue.hpp"

namespace apex::track {

namespace {

constexpr double kPi = std::numbers::pi;

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

double wrap_angle(double angle) {
  angle = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
  if (angle <= -kPi) angle += 2.0 * kPi;
  return angle;
}

TrackDefinition TrackDefinition::from_waypoints(std::span<const Waypoint> waypoints,
                                                const TrackOptions& options) {
  if (!(options.resolution > 0.0)) throw GeometryError("track resolution must be positive");
  std::vector<Waypoint> wp(waypoints.begin(), waypoints.end());
  if (wp.size() >= 2 && std::hypot(wp.back().x - wp.front().x, wp.back().y - wp.front().y) < 1e-9) {
    wp.pop_back();
  }
  if (wp.size() < 4) throw GeometryError("track needs at least 4 distinct waypoints");
  for (const auto& w : wp) {
    if (!(w.width > 0.0)) throw GeometryError("track width must be positive");
  }

  const std::size_t m = wp.size();
  std::vector<double> seg(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = wp[i];
    const auto& b = wp[(i + 1) % m];
    seg[i] = std::hypot(b.x - a.x, b.y - a.y);
    if (i + 1 < m && seg[i] < 1e-12) throw GeometryError("duplicate consecutive waypoints");
  }
  // The closing edge is implicit. A file whose closing edge is much longer
  // than its typical spacing describes an open curve, not a loop.
  std::vector<double> interior(seg.begin(), seg.end() - 1);
  std::nth_element(interior.begin(), interior.begin() + interior.size() / 2, interior.end());
  const double median = interior[interior.size() / 2];
  const double gap = seg.back();
  if (gap > 0.5 && gap > 3.0 * median) {
    throw GeometryError("open loop: endpoint gap of " + format_double(gap) + " m");
  }

  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) cum[i + 1] = cum[i] + seg[i];
  const double length = cum[m];

  TrackDefinition t;
  t.options_ = options;
  const auto n = static_cast<std::size_t>(std::max<long>(8, std::lround(length / options.resolution)));
  t.total_length_ = length;
  t.resolution_ = length / static_cast<double>(n);

  t.points_.resize(n + 1);
  t.width_.resize(n + 1);
  t.arc_length_.resize(n + 1);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) * t.resolution_;
    while (k + 1 < m && cum[k + 1] <= s) ++k;
    const double f = (s - cum[k]) / seg[k];
    const auto& a = wp[k];
    const auto& b = wp[(k + 1) % m];
    t.points_[i] = {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
    t.width_[i] = a.width + f * (b.width - a.width);
    t.arc_length_[i] = s;
  }
  t.points_[n] = t.points_[0];
  t.width_[n] = t.width_[0];
  t.arc_length_[n] = length;

  t.half_width_.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    t.half_width_[i] = 0.5 * t.width_[i] - options.vehicle_half_width;
    if (!(t.half_width_[i] > 0.0)) {
      throw GeometryError("track narrower than the vehicle at s = " + format_double(t.arc_length_[i]));
    }
  }

  // Segment headings, then turning angle between consecutive segments.
  std::vector<double> seg_heading(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = t.points_[i];
    const auto& b = t.points_[i + 1];
    seg_heading[i] = std::atan2(b.y - a.y, b.x - a.x);
  }
  std::vector<double> turn(n);  // turn[i]: from segment i-1 to segment i (at vertex i)
  for (std::size_t i = 0; i < n; ++i) {
    turn[i] = wrap_angle(seg_heading[i] - seg_heading[(i + n - 1) % n]);
  }

  t.heading_.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    t.heading_[i] = wrap_angle(seg_heading[(i + n - 1) % n] + 0.5 * turn[i]);
  }
  t.heading_[n] = t.heading_[0];

  // Central difference of chord headings: the chords (i-k, i) and (i, i+k)
  // have midpoints k*ds apart in arc length.
  const auto span = static_cast<long>(std::max<long>(1, std::lround(options.curvature_span / t.resolution_)));
  const long nl = static_cast<long>(n);
  auto at = [&](long j) -> const Vec2& { return t.points_[static_cast<std::size_t>(((j % nl) + nl) % nl)]; };
  t.curvature_.resize(n + 1);
  for (long i = 0; i < nl; ++i) {
    const Vec2& a = at(i - span);
    const Vec2& b = at(i);
    const Vec2& c = at(i + span);
    const double back = std::atan2(b.y - a.y, b.x - a.x);
    const double ahead = std::atan2(c.y - b.y, c.x - b.x);
    t.curvature_[static_cast<std::size_t>(i)] =
        wrap_angle(ahead - back) / (static_cast<double>(span) * t.resolution_);
  }
  t.curvature_[n] = t.curvature_[0];
  return t;
}

double TrackDefinition::wrap_s(double s) const {
  double r = std::fmod(s, total_length_);
  if (r < 0.0) r += total_length_;
  if (r >= total_length_) r = 0.0;
  return r;
}

std::size_t TrackDefinition::locate(double s, double& t) const {
  const double x = wrap_s(s) / resolution_;
  auto i = static_cast<std::size_t>(x);
  if (i >= size()) i = size() - 1;
  t = std::clamp(x - static_cast<double>(i), 0.0, 1.0);
  return i;
}

double TrackDefinition::curvature_at(double s) const {
  double t;
  auto i = locate(s, t);
  return curvature_[i] + t * (curvature_[i + 1] - curvature_[i]);
}

double TrackDefinition::half_width_at(double s) const {
  double t;
  auto i = locate(s, t);
  return half_width_[i] + t * (half_width_[i + 1] - half_width_[i]);
}

double TrackDefinition::width_at(double s) const {
  double t;
  auto i = locate(s, t);
  return width_[i] + t * (width_[i + 1] - width_[i]);
}

double TrackDefinition::heading_at(double s) const {
  double t;
  auto i = locate(s, t);
  return wrap_angle(heading_[i] + t * wrap_angle(heading_[i + 1] - heading_[i]));
}

Vec2 TrackDefinition::position_at(double s) const {
  double t;
  auto i = locate(s, t);
  const auto& a = points_[i];
  const auto& b = points_[i + 1];
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

std::vector<Waypoint> read_waypoints(const std::filesystem::path& path) {
  auto table = read_numeric_csv(path, {"x", "y", "width"});
  std::vector<Waypoint> wp;
  wp.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (!(row[2] > 0.0)) {
      throw ParseError(path.filename().string() + ": width must be positive", table.line_numbers[r]);
    }
    wp.push_back({row[0], row[1], row[2]});
  }
  return wp;
}

void write_waypoints(const std::filesystem::path& path, std::span<const Waypoint> waypoints) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,y,width\n";
  for (const auto& w : waypoints) {
    out << format_double(w.x) << ',' << format_double(w.y) << ',' << format_double(w.width) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TrackDefinition load_track(const std::filesystem::path& path, const TrackOptions& options) {
  auto wp = read_waypoints(path);
  return TrackDefinition::from_waypoints(wp, options);
}

void export_resampled(const std::filesystem::path& path, const TrackDefinition& track) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "s,x,y,curvature,width\n";
  for (std::size_t i = 0; i <= track.size(); ++i) {
    out << format_double(track.arc_length()[i]) << ',' << format_double(track.points()[i].x) << ','
        << format_double(track.points()[i].y) << ',' << format_double(track.curvature()[i]) << ','
        << format_double(track.width()[i]) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

struct Projection {
  bool found = false;
  double s = 0.0;
  double n = 0.0;
  double heading = 0.0;
};

// Solves (p - P(t)) . T(theta(t)) = 0 on segment j, where the tangent heading
// is interpolated linearly between the vertex headings.
Projection project_on_segment(const TrackDefinition& track, std::size_t j, double px, double py) {
  const auto& a = track.points()[j];
  const auto& b = track.points()[j + 1];
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double h0 = track.heading()[j];
  const double dh = wrap_angle(track.heading()[j + 1] - h0);

  auto g = [&](double t, double& dg) {
    const double h = h0 + t * dh;
    const double c = std::cos(h), s = std::sin(h);
    const double rx = px - (a.x + t * dx);
    const double ry = py - (a.y + t * dy);
    dg = -(dx * c + dy * s) + dh * (-rx * s + ry * c);
    return rx * c + ry * s;
  };

  double dg;
  const double g0 = g(0.0, dg);
  const double g1 = g(1.0, dg);
  constexpr double eps = 1e-12;
  Projection out;
  if (g0 < -eps || g1 > eps) return out;

  double lo = 0.0, hi = 1.0;
  double t = (g0 - g1) > 0.0 ? std::clamp(g0 / (g0 - g1), 0.0, 1.0) : 0.0;
  for (int it = 0; it < 50; ++it) {
    const double v = g(t, dg);
    if (v > 0.0) lo = t; else hi = t;
    if (std::abs(v) < 1e-15) break;
    double next = (dg != 0.0) ? t - v / dg : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-16) {
      t = next;
      break;
    }
    t = next;
  }
  const double h = h0 + t * dh;
  const double rx = px - (a.x + t * dx);
  const double ry = py - (a.y + t * dy);
  out.found = true;
  out.s = track.wrap_s((static_cast<double>(j) + t) * track.resolution());
  out.n = -rx * std::sin(h) + ry * std::cos(h);
  out.heading = h;
  return out;
}

double circular_distance(double a, double b, double length) {
  return std::abs(progress_delta(a, b, length));
}

}  // namespace

FrenetPose global_to_frenet(const TrackDefinition& track, double x, double y, double yaw,
                            std::optional<double> s_hint) {
  const std::size_t n = track.size();
  const auto& pts = track.points();
  auto d2 = [&](std::size_t i) {
    const double ex = pts[i].x - x, ey = pts[i].y - y;
    return ex * ex + ey * ey;
  };

  std::size_t best = 0;
  bool resolved = false;
  if (s_hint) {
    const long nl = static_cast<long>(n);
    const long center = std::lround(track.wrap_s(*s_hint) / track.resolution());
    const long window = std::min<long>(nl / 2 - 1, std::max<long>(8, std::lround(2.0 / track.resolution())));
    double best_d = std::numeric_limits<double>::infinity();
    long best_off = 0;
    for (long off = -window; off <= window; ++off) {
      auto i = static_cast<std::size_t>((((center + off) % nl) + nl) % nl);
      const double d = d2(i);
      if (d < best_d) {
        best_d = d;
        best = i;
        best_off = off;
      }
    }
    // A minimum on the window edge means the car moved further than the
    // window since the hint was taken; fall back to a global search.
    resolved = std::abs(best_off) < window;
  }
  if (!resolved) {
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = d2(i);
      if (d < best_d - 1e-12) {
        best_d = d;
        best = i;
      } else if (s_hint && std::abs(d - best_d) <= 1e-12 &&
                 circular_distance(track.arc_length()[i], *s_hint, track.total_length()) <
                     circular_distance(track.arc_length()[best], *s_hint, track.total_length())) {
        best = i;
      }
    }
  }

  Projection chosen;
  const long nl = static_cast<long>(n);
  for (long off = -3; off <= 2; ++off) {
    auto j = static_cast<std::size_t>((((static_cast<long>(best) + off) % nl) + nl) % nl);
    auto p = project_on_segment(track, j, x, y);
    if (!p.found) continue;
    if (!chosen.found || std::abs(p.n) < std::abs(chosen.n) - 1e-12) {
      chosen = p;
    } else if (s_hint && std::abs(std::abs(p.n) - std::abs(chosen.n)) <= 1e-12 &&
               circular_distance(p.s, *s_hint, track.total_length()) <
                   circular_distance(chosen.s, *s_hint, track.total_length())) {
      chosen = p;
    }
  }
  if (!chosen.found || std::abs(chosen.n) > 5.0 * track.width_at(chosen.s)) {
    throw OutOfDomainError("point (" + format_double(x) + ", " + format_double(y) +
                           ") is too far from the track centerline");
  }
  return {chosen.s, chosen.n, wrap_angle(yaw - chosen.heading)};
}

GlobalPose frenet_to_global(const TrackDefinition& track, double s, double n) {
  const double c = track.curvature_at(s);
  if (std::abs(n * c) >= 1.0) {
    throw DegenerateOffsetError("offset " + format_double(n) +
                                " m reaches the local radius of curvature at s = " + format_double(s));
  }
  const auto p = track.position_at(s);
  const double h = track.heading_at(s);
  return {p.x - n * std::sin(h), p.y + n * std::cos(h), h};
}

Lookahead sample_lookahead(const TrackDefinition& track, double s, int count, double spacing) {
  if (count < 1) throw UsageError("lookahead count must be >= 1");
  if (!(spacing > 0.0)) throw UsageError("lookahead spacing must be positive");
  Lookahead out;
  out.curvature.resize(static_cast<std::size_t>(count));
  out.width.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double si = track.wrap_s(s + i * spacing);
    out.curvature[static_cast<std::size_t>(i)] = track.curvature_at(si);
    out.width[static_cast<std::size_t>(i)] = track.width_at(si);
  }
  return out;
}

double progress_delta(double s_prev, double s_now, double length) {
  double d = std::fmod(s_now - s_prev, length);
  if (d > 0.5 * length) d -= length;
  if (d <= -0.5 * length) d += length;
  return d;
}

bool is_inside(const TrackDefinition& track, const FrenetPose& pose) {
  return std::abs(pose.n) <= track.half_width_at(pose.s);
}

double off_track_distance(const TrackDefinition& track, const FrenetPose& pose) {
  return std::max(std::abs(pose.n) - track.half_width_at(pose.s), 0.0);
}

std::vector<std::string> validate(const TrackDefinition& track) {
  std::vector<std::string> problems;
  const auto n = track.size();
  if (dist(track.points().front(), track.points()[n]) > 1e-6) {
    problems.emplace_back("loop not closed");
  }
  for (std::size_t i = 1; i <= n; ++i) {
    if (!(track.arc_length()[i] > track.arc_length()[i - 1])) {
      problems.emplace_back("arc length not strictly increasing at index " + std::to_string(i));
      break;
    }
  }
  if (std::abs(track.arc_length()[n] - track.total_length()) > 1e-6) {
    problems.emplace_back("final arc length differs from total length");
  }
  for (std::size_t i = 0; i <= n; ++i) {
    if (!(track.half_width()[i] > 0.0)) {
      problems.emplace_back("non-positive half-width at index " + std::to_string(i));
      break;
    }
  }
  for (std::size_t i = 0; i <= n; ++i) {
    if (!std::isfinite(track.curvature()[i]) || !std::isfinite(track.points()[i].x) ||
        !std::isfinite(track.points()[i].y)) {
      problems.emplace_back("non-finite geometry at index " + std::to_string(i));
      break;
    }
  }
  return problems;
}

}  // namespace apex::track
