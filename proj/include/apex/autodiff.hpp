#pragma once

// Minimal tape-based reverse-mode automatic differentiation. Every operation
// on a Var records its local partial derivatives on a thread-local tape; a
// single backward sweep then yields the gradient of one output with respect
// to every recorded variable.

#include <cmath>
#include <cstdint>
#include <vector>

namespace apex::ad {

struct Node {
  std::int32_t a = -1;
  std::int32_t b = -1;
  double da = 0.0;
  double db = 0.0;
};

class Tape {
 public:
  std::int32_t push(std::int32_t a, double da, std::int32_t b = -1, double db = 0.0) {
    nodes_.push_back({a, b, da, db});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  // Adjoints of every node for d(output)/d(node).
  std::vector<double> backward(std::int32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (std::size_t i = static_cast<std::size_t>(output) + 1; i-- > 0;) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += n.da * g;
      if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += n.db * g;
    }
    return adj;
  }

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

 private:
  std::vector<Node> nodes_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constants keep model code generic

  static Var variable(double v) { return Var(v, Tape::current().push(-1, 0.0)); }

  double value() const { return value_; }
  std::int32_t index() const { return index_; }
  bool is_constant() const { return index_ < 0; }

  // Builds a node from up to two operands with the given local partials.
  static Var unary(double v, const Var& x, double dx) {
    if (x.is_constant()) return Var(v);
    return Var(v, Tape::current().push(x.index_, dx));
  }
  static Var binary(double v, const Var& x, double dx, const Var& y, double dy) {
    if (x.is_constant()) return unary(v, y, dy);
    if (y.is_constant()) return unary(v, x, dx);
    return Var(v, Tape::current().push(x.index_, dx, y.index_, dy));
  }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& x, const Var& y) { return binary(x.value_ + y.value_, x, 1.0, y, 1.0); }
  friend Var operator-(const Var& x, const Var& y) { return binary(x.value_ - y.value_, x, 1.0, y, -1.0); }
  friend Var operator*(const Var& x, const Var& y) {
    return binary(x.value_ * y.value_, x, y.value_, y, x.value_);
  }
  friend Var operator/(const Var& x, const Var& y) {
    const double q = x.value_ / y.value_;
    return binary(q, x, 1.0 / y.value_, y, -q / y.value_);
  }
  friend Var operator-(const Var& x) { return unary(-x.value_, x, -1.0); }

 private:
  Var(double v, std::int32_t index) : value_(v), index_(index) {}

  double value_ = 0.0;
  std::int32_t index_ = -1;
};

inline double value_of(const Var& x) { return x.value(); }

inline Var sin(const Var& x) { return Var::unary(std::sin(x.value()), x, std::cos(x.value())); }
inline Var cos(const Var& x) { return Var::unary(std::cos(x.value()), x, -std::sin(x.value())); }
inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return Var::unary(e, x, e);
}
inline Var log(const Var& x) { return Var::unary(std::log(x.value()), x, 1.0 / x.value()); }
inline Var sqrt(const Var& x) {
  const double r = std::sqrt(x.value());
  return Var::unary(r, x, 0.5 / r);
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return Var::unary(t, x, 1.0 - t * t);
}
inline Var atan(const Var& x) {
  const double v = x.value();
  return Var::unary(std::atan(v), x, 1.0 / (1.0 + v * v));
}
inline Var atan2(const Var& y, const Var& x) {
  const double yv = y.value(), xv = x.value();
  const double d = xv * xv + yv * yv;
  return Var::binary(std::atan2(yv, xv), y, xv / d, x, -yv / d);
}

// Clears the thread-local tape on entry and exit.
class TapeScope {
 public:
  TapeScope() { Tape::current().clear(); }
  ~TapeScope() { Tape::current().clear(); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

}  // namespace apex::ad
