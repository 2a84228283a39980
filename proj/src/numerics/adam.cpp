#include "wss/numerics/adam.hpp"

#include <cmath>

namespace wss {

template <typename S>
Adam<S>::Adam(NamedTensors<S> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (config_.learning_rate < 0 || config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 ||
      config_.beta2 >= 1 || config_.epsilon <= 0 || config_.weight_decay < 0) {
    throw ValidationError("adam: invalid hyperparameters");
  }
  for (const auto& [name, t] : params_.items) {
    first_moment_.push_back(Eigen::ArrayXd::Zero(t.numel()));
    second_moment_.push_back(Eigen::ArrayXd::Zero(t.numel()));
  }
}

template <typename S>
void Adam<S>::step() {
  for (const auto& [name, t] : params_.items) {
    if (!t.has_grad()) throw Error("adam: parameter '" + name + "' has no gradient");
  }
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.items.size(); ++i) {
    Tensor<S>& t = params_.items[i].second;
    auto& p = t.mutable_value();
    const Eigen::ArrayXd g = t.grad().template cast<double>();
    Eigen::ArrayXd& m = first_moment_[i];
    Eigen::ArrayXd& v = second_moment_[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.square();
    Eigen::ArrayXd pd = p.template cast<double>();
    pd -= lr * config_.weight_decay * pd;
    pd -= lr * (m / correction1) / ((v / correction2).sqrt() + config_.epsilon);
    p = pd.cast<S>();
  }
}

template <typename S>
void Adam<S>::zero_grad() {
  for (auto& [name, t] : params_.items) t.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace wss
