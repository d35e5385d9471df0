#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace apex::trainer {

struct NetworkShape {
  std::size_t obs_dim = 0;
  std::size_t action_dim = 2;
  std::vector<std::size_t> actor_hidden{256, 256};
  std::vector<std::size_t> critic_hidden{512, 512};
  double leaky_slope = 0.2;
  double init_log_std = -1.2039728043259361;  // log(0.3)

  bool operator==(const NetworkShape&) const = default;
};

template <class S>
S leaky_relu(S x, S slope) {
  return x >= S(0) ? x : slope * x;
}

// One dense layer inside the flat parameter vector. The weight block is a
// column-major (out x in) matrix followed by the bias.
struct LayerSlot {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

// Named view of the flat parameter vector, used for serialization.
struct ParameterBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
};

// Actor: observation -> hidden (LeakyReLU) -> action means (tanh).
// Critic: observation -> hidden (LeakyReLU) -> scalar value.
// A state-independent log standard deviation per action dimension.
// All parameters live in one contiguous vector.
template <class S>
class ActorCritic {
 public:
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  struct Cache {
    std::vector<Mat> actor_inputs;  // input of each actor layer
    std::vector<Mat> actor_pre;     // pre-activation of each actor layer
    std::vector<Mat> critic_inputs;
    std::vector<Mat> critic_pre;
  };

  struct Output {
    Mat mean;   // action_dim x batch, in [-1, 1]
    Vec value;  // batch
  };

  ActorCritic() = default;
  explicit ActorCritic(NetworkShape shape);

  // Orthogonal weights (gain sqrt(2) in hidden layers, 0.01 on the actor head,
  // 1 on the critic head), zero biases, log_std at its initial value.
  void initialize(std::uint64_t seed);

  const NetworkShape& shape() const { return shape_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }

  Eigen::Map<const Vec> log_std() const;
  Eigen::Map<Vec> log_std();

  // obs: obs_dim x batch. Throws UsageError on a dimension mismatch.
  Output forward(const Mat& obs, Cache* cache = nullptr) const;
  Mat actor_mean(const Mat& obs) const;
  Vec value(const Mat& obs) const;

  // Accumulates parameter gradients for upstream derivatives with respect to
  // the action means, the values and log_std.
  void backward(const Cache& cache, const Output& out, const Mat& d_mean, const Vec& d_value,
                const Vec& d_log_std, Vec& grad) const;

  template <class T>
  ActorCritic<T> cast() const {
    ActorCritic<T> other(shape_);
    other.parameters() = params_.template cast<T>();
    return other;
  }

 private:
  std::size_t add_layer(std::vector<LayerSlot>& layers, const std::string& prefix, std::size_t in,
                        std::size_t out, std::size_t offset);
  Mat mlp_forward(const std::vector<LayerSlot>& layers, const Mat& x, std::vector<Mat>* inputs,
                  std::vector<Mat>* pre) const;
  void mlp_backward(const std::vector<LayerSlot>& layers, const std::vector<Mat>& inputs,
                    const std::vector<Mat>& pre, Mat d_out, Vec& grad) const;

  NetworkShape shape_;
  std::vector<LayerSlot> actor_;
  std::vector<LayerSlot> critic_;
  std::size_t log_std_offset_ = 0;
  std::vector<ParameterBlock> blocks_;
  Vec params_;
};

extern template class ActorCritic<float>;
extern template class ActorCritic<double>;

}  // namespace apex::trainer
