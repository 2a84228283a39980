#pragma once

#include "wss/numerics/layers.hpp"

namespace wss {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled: p <- p - lr * weight_decay * p, applied before the moment update.
  double weight_decay = 0.1;
};

/// Adam with decoupled weight decay. Moments are kept in double regardless of Scalar.
template <typename S>
class Adam {
 public:
  Adam(NamedTensors<S> params, AdamConfig config);

  /// Applies one update from the populated gradients. Gradients are left untouched.
  void step();
  void zero_grad();

  const AdamConfig& config() const { return config_; }
  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  long step_count() const { return step_count_; }

 private:
  NamedTensors<S> params_;
  AdamConfig config_;
  std::vector<Eigen::ArrayXd> first_moment_, second_moment_;
  long step_count_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace wss
