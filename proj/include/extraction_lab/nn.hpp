#pragma once

// Dense feed-forward classifier: ReLU hidden layers, linear output layer,
// softmax cross-entropy loss, Adam and step-decay training.
//
// Samples are stored one per row (m x input_dim); targets are probability
// rows (m x num_classes). Layer weights are fan_out x fan_in.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "extraction_lab/errors.hpp"
#include "extraction_lab/random.hpp"

namespace extraction_lab {

enum class Activation { relu };

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden_sizes;
  int num_classes = 0;
  Activation activation = Activation::relu;

  int latent_dim() const { return hidden_sizes.empty() ? 0 : hidden_sizes.back(); }
  int num_layers() const { return static_cast<int>(hidden_sizes.size()) + 1; }

  // Throws std::invalid_argument on a malformed spec.
  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("NetworkSpec: input_dim must be >= 1");
    if (hidden_sizes.empty()) throw std::invalid_argument("NetworkSpec: at least one hidden layer required");
    for (int h : hidden_sizes)
      if (h < 1) throw std::invalid_argument("NetworkSpec: hidden sizes must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("NetworkSpec: num_classes must be >= 2");
  }

  // (fan_in, fan_out) of layer l.
  std::pair<int, int> layer_shape(int l) const {
    const int fan_in = l == 0 ? input_dim : hidden_sizes[l - 1];
    const int fan_out = l == num_layers() - 1 ? num_classes : hidden_sizes[l];
    return {fan_in, fan_out};
  }

  bool operator==(const NetworkSpec&) const = default;
};

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct BasicNetwork {
  NetworkSpec spec;
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;

  static BasicNetwork zeros(const NetworkSpec& spec) {
    spec.validate();
    BasicNetwork net;
    net.spec = spec;
    for (int l = 0; l < spec.num_layers(); ++l) {
      auto [fan_in, fan_out] = spec.layer_shape(l);
      net.weights.push_back(MatrixX<Scalar>::Zero(fan_out, fan_in));
      net.biases.push_back(VectorX<Scalar>::Zero(fan_out));
    }
    return net;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  bool operator==(const BasicNetwork& other) const {
    if (!(spec == other.spec) || weights.size() != other.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
    }
    return true;
  }
};

// Gradients share the parameter layout.
template <typename Scalar>
using BasicGradients = BasicNetwork<Scalar>;

template <typename Scalar>
struct BasicForwardResult {
  VectorX<Scalar> logits;
  VectorX<Scalar> latent;
};

/// Glorot-normal weights, N(0, 2/(fan_in+fan_out)); zero biases.
template <typename Scalar, typename Rng>
BasicNetwork<Scalar> xavier_init(const NetworkSpec& spec, Rng& rng) {
  auto net = BasicNetwork<Scalar>::zeros(spec);
  for (int l = 0; l < spec.num_layers(); ++l) {
    auto [fan_in, fan_out] = spec.layer_shape(l);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    auto& w = net.weights[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(stddev * rng.normal());
  }
  return net;
}

template <typename Scalar, typename Derived>
BasicForwardResult<Scalar> forward(const BasicNetwork<Scalar>& net, const Eigen::MatrixBase<Derived>& sample) {
  if (sample.size() != net.spec.input_dim)
    throw DimensionMismatch("forward", net.spec.input_dim, static_cast<int>(sample.size()));
  VectorX<Scalar> h = sample.template cast<Scalar>();
  const int hidden = net.spec.num_layers() - 1;
  for (int l = 0; l < hidden; ++l) {
    VectorX<Scalar> z = net.weights[l] * h + net.biases[l];
    h = z.cwiseMax(Scalar(0));
  }
  BasicForwardResult<Scalar> out;
  out.logits = net.weights[hidden] * h + net.biases[hidden];
  out.latent = std::move(h);
  return out;
}

/// Row-wise latents for a batch of samples (one sample per row).
template <typename Scalar, typename Derived>
MatrixX<Scalar> latents(const BasicNetwork<Scalar>& net, const Eigen::MatrixBase<Derived>& samples) {
  MatrixX<Scalar> out(samples.rows(), net.spec.latent_dim());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) out.row(i) = forward(net, samples.row(i).transpose()).latent.transpose();
  return out;
}

template <typename Scalar, typename Derived>
MatrixX<Scalar> logits(const BasicNetwork<Scalar>& net, const Eigen::MatrixBase<Derived>& samples) {
  MatrixX<Scalar> out(samples.rows(), net.spec.num_classes);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) out.row(i) = forward(net, samples.row(i).transpose()).logits.transpose();
  return out;
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  VectorX<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Lowest index wins ties.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

template <typename DerivedP, typename DerivedT>
typename DerivedP::Scalar cross_entropy(const Eigen::MatrixBase<DerivedP>& predicted, const Eigen::MatrixBase<DerivedT>& target) {
  using Scalar = typename DerivedP::Scalar;
  constexpr Scalar kLogGuard = Scalar(1e-12);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < predicted.size(); ++i) loss -= target(i) * std::log(predicted(i) + kLogGuard);
  return loss;
}

template <typename Scalar>
VectorX<Scalar> one_hot(int label, int num_classes) {
  VectorX<Scalar> v = VectorX<Scalar>::Zero(num_classes);
  v(label) = Scalar(1);
  return v;
}

/// Mean cross-entropy of softmax(logits) against target rows.
template <typename Scalar, typename DerivedX, typename DerivedY>
Scalar mean_loss(const BasicNetwork<Scalar>& net, const Eigen::MatrixBase<DerivedX>& samples, const Eigen::MatrixBase<DerivedY>& targets) {
  if (samples.rows() == 0) return Scalar(0);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    auto fr = forward(net, samples.row(i).transpose());
    total += cross_entropy(softmax(fr.logits), targets.row(i).transpose());
  }
  return total / static_cast<Scalar>(samples.rows());
}

/// Mean-over-batch gradient of softmax cross-entropy. Batch is column-stacked
/// internally so each layer is one matrix product.
template <typename Scalar, typename DerivedX, typename DerivedY>
BasicGradients<Scalar> backward(const BasicNetwork<Scalar>& net, const Eigen::MatrixBase<DerivedX>& samples,
                                const Eigen::MatrixBase<DerivedY>& targets, Scalar* mean_loss_out = nullptr) {
  const auto batch = samples.rows();
  if (batch == 0) throw std::invalid_argument("backward: empty batch");
  if (samples.cols() != net.spec.input_dim)
    throw DimensionMismatch("backward", net.spec.input_dim, static_cast<int>(samples.cols()));
  if (targets.rows() != batch || targets.cols() != net.spec.num_classes)
    throw DimensionMismatch("backward targets", net.spec.num_classes, static_cast<int>(targets.cols()));

  const int layers = net.spec.num_layers();
  std::vector<MatrixX<Scalar>> acts;  // acts[l] is the input to layer l
  acts.reserve(layers + 1);
  acts.push_back(samples.transpose().template cast<Scalar>());
  for (int l = 0; l < layers; ++l) {
    MatrixX<Scalar> z = net.weights[l] * acts.back();
    z.colwise() += net.biases[l];
    if (l < layers - 1) z = z.cwiseMax(Scalar(0));
    acts.push_back(std::move(z));
  }

  // dL/dlogits = (softmax - target) / batch, per column
  MatrixX<Scalar> delta(net.spec.num_classes, batch);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    VectorX<Scalar> probs = softmax(acts.back().col(i));
    VectorX<Scalar> target = targets.row(i).transpose().template cast<Scalar>();
    loss += cross_entropy(probs, target);
    delta.col(i) = probs - target;
  }
  delta /= static_cast<Scalar>(batch);
  if (mean_loss_out) *mean_loss_out = loss / static_cast<Scalar>(batch);

  auto grads = BasicGradients<Scalar>::zeros(net.spec);
  for (int l = layers - 1; l >= 0; --l) {
    grads.weights[l].noalias() = delta * acts[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      MatrixX<Scalar> upstream = net.weights[l].transpose() * delta;
      delta = (acts[l].array() > Scalar(0)).select(upstream, Scalar(0));
    }
  }
  return grads;
}

template <typename Scalar>
struct BasicAdamState {
  std::vector<MatrixX<Scalar>> first_moment_w, second_moment_w;
  std::vector<VectorX<Scalar>> first_moment_b, second_moment_b;
  std::int64_t step_count = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  static BasicAdamState for_network(const BasicNetwork<Scalar>& net) {
    BasicAdamState s;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      s.first_moment_w.push_back(MatrixX<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols()));
      s.second_moment_w.push_back(s.first_moment_w.back());
      s.first_moment_b.push_back(VectorX<Scalar>::Zero(net.biases[l].size()));
      s.second_moment_b.push_back(s.first_moment_b.back());
    }
    return s;
  }
};

namespace detail {
template <typename Param, typename Scalar>
void adam_update(Param& param, const Param& grad, Param& m, Param& v, const BasicAdamState<Scalar>& st, Scalar lr,
                 Scalar bias1, Scalar bias2) {
  m = st.beta1 * m + (Scalar(1) - st.beta1) * grad;
  v = st.beta2 * v + (Scalar(1) - st.beta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + st.epsilon);
}
}  // namespace detail

/// Adam with bias correction.
template <typename Scalar>
void adam_step(BasicNetwork<Scalar>& net, const BasicGradients<Scalar>& grads, BasicAdamState<Scalar>& state, Scalar lr) {
  if (state.first_moment_w.size() != net.weights.size()) throw std::invalid_argument("adam_step: state/network shape mismatch");
  state.step_count += 1;
  const Scalar bias1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step_count));
  const Scalar bias2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step_count));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    detail::adam_update(net.weights[l], grads.weights[l], state.first_moment_w[l], state.second_moment_w[l], state, lr, bias1, bias2);
    detail::adam_update(net.biases[l], grads.biases[l], state.first_moment_b[l], state.second_moment_b[l], state, lr, bias1, bias2);
  }
}

/// lr0 * gamma^floor(epoch / step_size)
inline double step_decay_lr(double lr0, int step_size, double gamma, int epoch) {
  if (step_size < 1) throw std::invalid_argument("step_decay_lr: step_size must be >= 1");
  if (epoch < 0) throw std::invalid_argument("step_decay_lr: epoch must be >= 0");
  return lr0 * std::pow(gamma, epoch / step_size);
}

struct TrainConfig {
  double learning_rate = 9e-4;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;
  int lr_step_size = 20;
  double lr_gamma = 0.95;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs) throw std::invalid_argument("TrainConfig: patience must be in [1, max_epochs]");
    if (lr_step_size < 1) throw std::invalid_argument("TrainConfig: lr_step_size must be >= 1");
    if (!(lr_gamma > 0 && lr_gamma <= 1)) throw std::invalid_argument("TrainConfig: lr_gamma must be in (0, 1]");
  }
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
};

template <typename Scalar>
struct BasicTrainResult {
  BasicNetwork<Scalar> network;
  std::vector<EpochRecord> history;
  int best_epoch = -1;  // -1 when no validation set
  bool stopped_early = false;
};

/// Mini-batch Adam with step-decay learning rate. With a non-empty validation
/// set, stops after `patience` epochs without improvement in validation
/// cross-entropy and returns the best snapshot; otherwise runs max_epochs and
/// returns the final weights. Shuffling draws from `rng`.
template <typename Scalar, typename Rng>
BasicTrainResult<Scalar> train_until_convergence(BasicNetwork<Scalar> net, const MatrixX<Scalar>& train_x,
                                                 const MatrixX<Scalar>& train_y,
                                                 const std::type_identity_t<MatrixX<Scalar>>* val_x,
                                                 const std::type_identity_t<MatrixX<Scalar>>* val_y, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::Index m = train_x.rows();
  if (m == 0) throw std::invalid_argument("train_until_convergence: empty training set");
  if (train_y.rows() != m) throw std::invalid_argument("train_until_convergence: sample/target count mismatch");
  const bool has_val = val_x != nullptr && val_y != nullptr && val_x->rows() > 0;

  const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, m);
  auto adam = BasicAdamState<Scalar>::for_network(net);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;

  BasicTrainResult<Scalar> result;
  Scalar best_val = std::numeric_limits<Scalar>::infinity();
  std::optional<BasicNetwork<Scalar>> best_net;
  int since_best = 0;

  MatrixX<Scalar> bx(batch, train_x.cols()), by(batch, train_y.cols());
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = step_decay_lr(cfg.learning_rate, cfg.lr_step_size, cfg.lr_gamma, epoch);
    rng.shuffle(order);
    Scalar loss_sum = 0;
    for (Eigen::Index start = 0; start < m; start += batch) {
      const Eigen::Index len = std::min(batch, m - start);
      bx.resize(len, train_x.cols());
      by.resize(len, train_y.cols());
      for (Eigen::Index r = 0; r < len; ++r) {
        bx.row(r) = train_x.row(order[static_cast<std::size_t>(start + r)]);
        by.row(r) = train_y.row(order[static_cast<std::size_t>(start + r)]);
      }
      Scalar batch_loss = 0;
      auto grads = backward(net, bx, by, &batch_loss);
      adam_step(net, grads, adam, static_cast<Scalar>(lr));
      loss_sum += batch_loss * static_cast<Scalar>(len);
    }

    EpochRecord rec{epoch, lr, static_cast<double>(loss_sum / static_cast<Scalar>(m)), std::nullopt};
    if (has_val) {
      const Scalar vl = mean_loss(net, *val_x, *val_y);
      rec.val_loss = static_cast<double>(vl);
      if (vl < best_val) {
        best_val = vl;
        best_net = net;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.history.push_back(rec);
        result.stopped_early = true;
        break;
      }
    }
    result.history.push_back(rec);
  }

  result.network = has_val && best_net ? std::move(*best_net) : std::move(net);
  return result;
}

using Network = BasicNetwork<double>;
using Gradients = BasicGradients<double>;
using ForwardResult = BasicForwardResult<double>;
using AdamState = BasicAdamState<double>;
using TrainResult = BasicTrainResult<double>;

}  // namespace extraction_lab
