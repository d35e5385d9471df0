#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "apex/errors.hpp"
#include "apex/track.hpp"

namespace apex::track {

namespace {

constexpr double kPi = std::numbers::pi;

// Emits points along straights and circular arcs; the final point is dropped
// because track files close the loop implicitly.
class Turtle {
 public:
  Turtle(double x, double y, double heading, double width, double spacing)
      : x_(x), y_(y), h_(heading), width_(width), spacing_(spacing) {
    points_.push_back({x_, y_, width_});
  }

  void straight(double length) {
    if (length <= 0.0) return;
    const int steps = std::max(1, static_cast<int>(std::ceil(length / spacing_)));
    const double x0 = x_, y0 = y_;
    for (int k = 1; k <= steps; ++k) {
      const double d = length * k / steps;
      x_ = x0 + d * std::cos(h_);
      y_ = y0 + d * std::sin(h_);
      points_.push_back({x_, y_, width_});
    }
  }

  // Positive angle turns left.
  void arc(double radius, double angle) {
    const double sign = angle >= 0.0 ? 1.0 : -1.0;
    const double cx = x_ - sign * radius * std::sin(h_);
    const double cy = y_ + sign * radius * std::cos(h_);
    const int steps = std::max(2, static_cast<int>(std::ceil(radius * std::abs(angle) / spacing_)));
    const double h0 = h_;
    for (int k = 1; k <= steps; ++k) {
      const double h = h0 + angle * k / steps;
      x_ = cx + sign * radius * std::sin(h);
      y_ = cy - sign * radius * std::cos(h);
      points_.push_back({x_, y_, width_});
    }
    h_ = h0 + angle;
  }

  std::vector<Waypoint> finish() {
    points_.pop_back();
    return std::move(points_);
  }

 private:
  double x_, y_, h_, width_, spacing_;
  std::vector<Waypoint> points_;
};

void check_args(double length, double width, double spacing) {
  if (!(length > 0.0)) throw UsageError("track length must be positive");
  if (!(width > 0.0)) throw UsageError("track width must be positive");
  if (!(spacing > 0.0)) throw UsageError("waypoint spacing must be positive");
}

}  // namespace

Shape parse_shape(const std::string& name) {
  if (name == "oval") return Shape::oval;
  if (name == "lshape") return Shape::lshape;
  if (name == "random") return Shape::random;
  throw UsageError("unknown track shape '" + name + "' (expected oval|lshape|random)");
}

std::vector<Waypoint> generate_oval(double length, double width, double spacing) {
  check_args(length, width, spacing);
  double radius = length / 12.0;
  double straight = 0.5 * (length - 2.0 * kPi * radius);
  if (straight < 0.0) {
    radius = length / (2.0 * kPi);
    straight = 0.0;
  }
  // Start in the middle of the bottom straight.
  Turtle t(0.0, 0.0, 0.0, width, spacing);
  t.straight(0.5 * straight);
  t.arc(radius, kPi);
  t.straight(straight);
  t.arc(radius, kPi);
  t.straight(0.5 * straight);
  return t.finish();
}

std::vector<Waypoint> generate_lshape(double length, double width, double spacing) {
  check_args(length, width, spacing);
  // Reference outline at 17 m: 5.6 x 3.8 m bounding box with a 3.0 x 1.9 m
  // notch removed from the upper right, all corners filleted.
  constexpr double A = 5.6, H = 3.8, C = 2.6, B = 1.9;
  const double radius = 0.7 * std::min(1.0, length / 17.0);
  const double fillet_loss = 6.0 * (2.0 - kPi / 2.0) * radius;
  const double k = (length + fillet_loss) / (2.0 * (A + H));
  const double r = radius;
  const double bottom = A * k - 2.0 * r;
  Turtle t(r + 0.5 * bottom, 0.0, 0.0, width, spacing);
  t.straight(0.5 * bottom);
  t.arc(r, kPi / 2);
  t.straight(B * k - 2.0 * r);
  t.arc(r, kPi / 2);
  t.straight((A - C) * k - 2.0 * r);
  t.arc(r, -kPi / 2);
  t.straight((H - B) * k - 2.0 * r);
  t.arc(r, kPi / 2);
  t.straight(C * k - 2.0 * r);
  t.arc(r, kPi / 2);
  t.straight(H * k - 2.0 * r);
  t.arc(r, kPi / 2);
  t.straight(0.5 * bottom);
  return t.finish();
}

std::vector<Waypoint> generate_random(double length, double width, std::uint64_t seed,
                                      double spacing) {
  check_args(length, width, spacing);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.0, 0.06);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  double a[3], p[3];
  for (int i = 0; i < 3; ++i) {
    a[i] = amp(rng);
    p[i] = phase(rng);
  }
  auto radius = [&](double th) {
    double r = 1.0;
    for (int i = 0; i < 3; ++i) r += a[i] * std::cos((i + 2) * th + p[i]);
    return r;
  };
  const int count = std::max(64, static_cast<int>(std::ceil(length / spacing)));
  std::vector<Waypoint> pts(static_cast<std::size_t>(count));
  double perimeter = 0.0;
  for (int i = 0; i < count; ++i) {
    const double th = 2.0 * kPi * i / count;
    const double r = radius(th);
    pts[static_cast<std::size_t>(i)] = {r * std::cos(th), r * std::sin(th), width};
  }
  for (int i = 0; i < count; ++i) {
    const auto& u = pts[static_cast<std::size_t>(i)];
    const auto& v = pts[static_cast<std::size_t>((i + 1) % count)];
    perimeter += std::hypot(v.x - u.x, v.y - u.y);
  }
  const double scale = length / perimeter;
  for (auto& q : pts) {
    q.x *= scale;
    q.y *= scale;
  }
  return pts;
}

std::vector<Waypoint> generate(Shape shape, double length, double width, std::uint64_t seed,
                               double spacing) {
  switch (shape) {
    case Shape::oval:
      return generate_oval(length, width, spacing);
    case Shape::lshape:
      return generate_lshape(length, width, spacing);
    case Shape::random:
      return generate_random(length, width, seed, spacing);
  }
  throw UsageError("unknown track shape");
}

}  // namespace apex::track
