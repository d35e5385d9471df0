#include "apex/network.hpp"

#include <cmath>
#include <random>

#include "apex/errors.hpp"

namespace apex::trainer {

template <class S>
ActorCritic<S>::ActorCritic(NetworkShape shape) : shape_(std::move(shape)) {
  if (shape_.obs_dim == 0 || shape_.action_dim == 0) throw UsageError("network dimensions must be positive");
  std::size_t offset = 0;
  std::size_t in = shape_.obs_dim;
  for (std::size_t i = 0; i < shape_.actor_hidden.size(); ++i) {
    offset = add_layer(actor_, "actor." + std::to_string(i), in, shape_.actor_hidden[i], offset);
    in = shape_.actor_hidden[i];
  }
  offset = add_layer(actor_, "actor." + std::to_string(shape_.actor_hidden.size()), in, shape_.action_dim, offset);
  log_std_offset_ = offset;
  blocks_.push_back({"log_std", shape_.action_dim, 1, offset});
  offset += shape_.action_dim;
  in = shape_.obs_dim;
  for (std::size_t i = 0; i < shape_.critic_hidden.size(); ++i) {
    offset = add_layer(critic_, "critic." + std::to_string(i), in, shape_.critic_hidden[i], offset);
    in = shape_.critic_hidden[i];
  }
  offset = add_layer(critic_, "critic." + std::to_string(shape_.critic_hidden.size()), in, 1, offset);
  params_ = Vec::Zero(static_cast<Eigen::Index>(offset));
  log_std().setConstant(static_cast<S>(shape_.init_log_std));
}

template <class S>
std::size_t ActorCritic<S>::add_layer(std::vector<LayerSlot>& layers, const std::string& prefix, std::size_t in,
                                      std::size_t out, std::size_t offset) {
  LayerSlot slot{in, out, offset, offset + in * out};
  layers.push_back(slot);
  blocks_.push_back({prefix + ".weight", out, in, slot.weight_offset});
  blocks_.push_back({prefix + ".bias", out, 1, slot.bias_offset});
  return slot.bias_offset + out;
}

template <class S>
Eigen::Map<const typename ActorCritic<S>::Vec> ActorCritic<S>::log_std() const {
  return Eigen::Map<const Vec>(params_.data() + log_std_offset_, static_cast<Eigen::Index>(shape_.action_dim));
}

template <class S>
Eigen::Map<typename ActorCritic<S>::Vec> ActorCritic<S>::log_std() {
  return Eigen::Map<Vec>(params_.data() + log_std_offset_, static_cast<Eigen::Index>(shape_.action_dim));
}

template <class S>
void ActorCritic<S>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto orthogonal = [&](const LayerSlot& l, double gain) {
    const auto rows = static_cast<Eigen::Index>(l.out), cols = static_cast<Eigen::Index>(l.in);
    const bool tall = rows >= cols;
    Eigen::MatrixXd a(tall ? rows : cols, tall ? cols : rows);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    // Sign correction makes the distribution uniform over orthogonal matrices.
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    const Eigen::MatrixXd w = tall ? q : Eigen::MatrixXd(q.transpose());
    Eigen::Map<Mat>(params_.data() + l.weight_offset, rows, cols) = (gain * w).template cast<S>();
    Eigen::Map<Vec>(params_.data() + l.bias_offset, rows).setZero();
  };
  const double hidden_gain = std::sqrt(2.0);
  for (std::size_t i = 0; i < actor_.size(); ++i) orthogonal(actor_[i], i + 1 == actor_.size() ? 0.01 : hidden_gain);
  for (std::size_t i = 0; i < critic_.size(); ++i) orthogonal(critic_[i], i + 1 == critic_.size() ? 1.0 : hidden_gain);
  log_std().setConstant(static_cast<S>(shape_.init_log_std));
}

template <class S>
typename ActorCritic<S>::Mat ActorCritic<S>::mlp_forward(const std::vector<LayerSlot>& layers, const Mat& x,
                                                         std::vector<Mat>* inputs, std::vector<Mat>* pre) const {
  const S slope = static_cast<S>(shape_.leaky_slope);
  Mat a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Eigen::Map<const Mat> W(params_.data() + l.weight_offset, static_cast<Eigen::Index>(l.out),
                            static_cast<Eigen::Index>(l.in));
    Eigen::Map<const Vec> b(params_.data() + l.bias_offset, static_cast<Eigen::Index>(l.out));
    Mat z = W * a;
    z.colwise() += b;
    if (inputs) inputs->push_back(std::move(a));
    if (i + 1 == layers.size()) {
      if (pre) pre->push_back(z);
      return z;
    }
    a = z.unaryExpr([slope](S v) { return leaky_relu(v, slope); });
    if (pre) pre->push_back(std::move(z));
  }
  return a;
}

template <class S>
void ActorCritic<S>::mlp_backward(const std::vector<LayerSlot>& layers, const std::vector<Mat>& inputs,
                                  const std::vector<Mat>& pre, Mat d_out, Vec& grad) const {
  const S slope = static_cast<S>(shape_.leaky_slope);
  Mat dz = std::move(d_out);
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    const auto rows = static_cast<Eigen::Index>(l.out), cols = static_cast<Eigen::Index>(l.in);
    Eigen::Map<Mat>(grad.data() + l.weight_offset, rows, cols).noalias() += dz * inputs[k].transpose();
    Eigen::Map<Vec>(grad.data() + l.bias_offset, rows) += dz.rowwise().sum();
    if (k == 0) break;
    Eigen::Map<const Mat> W(params_.data() + l.weight_offset, rows, cols);
    Mat da = W.transpose() * dz;
    const Mat& z = pre[k - 1];
    dz = da.binaryExpr(z, [slope](S g, S v) { return v >= S(0) ? g : slope * g; });
  }
}

template <class S>
typename ActorCritic<S>::Output ActorCritic<S>::forward(const Mat& obs, Cache* cache) const {
  if (static_cast<std::size_t>(obs.rows()) != shape_.obs_dim) {
    throw UsageError("observation has " + std::to_string(obs.rows()) + " elements, network expects " +
                     std::to_string(shape_.obs_dim));
  }
  Output out;
  if (cache) *cache = Cache{};
  Mat head = mlp_forward(actor_, obs, cache ? &cache->actor_inputs : nullptr, cache ? &cache->actor_pre : nullptr);
  out.mean = head.array().tanh().matrix();
  Mat v = mlp_forward(critic_, obs, cache ? &cache->critic_inputs : nullptr, cache ? &cache->critic_pre : nullptr);
  out.value = v.row(0).transpose();
  return out;
}

template <class S>
typename ActorCritic<S>::Mat ActorCritic<S>::actor_mean(const Mat& obs) const {
  if (static_cast<std::size_t>(obs.rows()) != shape_.obs_dim) {
    throw UsageError("observation has " + std::to_string(obs.rows()) + " elements, network expects " +
                     std::to_string(shape_.obs_dim));
  }
  return mlp_forward(actor_, obs, nullptr, nullptr).array().tanh().matrix();
}

template <class S>
typename ActorCritic<S>::Vec ActorCritic<S>::value(const Mat& obs) const {
  if (static_cast<std::size_t>(obs.rows()) != shape_.obs_dim) {
    throw UsageError("observation has " + std::to_string(obs.rows()) + " elements, network expects " +
                     std::to_string(shape_.obs_dim));
  }
  return mlp_forward(critic_, obs, nullptr, nullptr).row(0).transpose();
}

template <class S>
void ActorCritic<S>::backward(const Cache& cache, const Output& out, const Mat& d_mean, const Vec& d_value,
                              const Vec& d_log_std, Vec& grad) const {
  if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
  Mat d_head = d_mean.array() * (S(1) - out.mean.array().square());
  mlp_backward(actor_, cache.actor_inputs, cache.actor_pre, std::move(d_head), grad);
  Mat d_v = d_value.transpose();
  mlp_backward(critic_, cache.critic_inputs, cache.critic_pre, std::move(d_v), grad);
  Eigen::Map<Vec>(grad.data() + log_std_offset_, static_cast<Eigen::Index>(shape_.action_dim)) += d_log_std;
}

template class ActorCritic<float>;
template class ActorCritic<double>;

}  // namespace apex::trainer
