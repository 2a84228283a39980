#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

#include "wss/classifier/gate_classifier.hpp"
#include "wss/numerics/adam.hpp"

namespace wss {

/// Divides the learning rate by `factor` once `patience` consecutive epochs fail to lower the
/// best validation loss by more than `threshold`.
class PlateauScheduler {
 public:
  PlateauScheduler(double threshold = 1e-4, double factor = 10.0, int patience = 1)
      : threshold_(threshold), factor_(factor), patience_(patience) {}

  /// Returns the learning rate to use for the next epoch.
  double update(double val_loss, double lr);
  double best() const { return best_; }

 private:
  double threshold_, factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

struct ClassifierTrainConfig {
  int epochs = 100;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  double plateau_threshold = 1e-4;
  int plateau_patience = 1;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, val_acc = 0, lr = 0;
};

struct ClassifierTrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_loss = 0;
};

/// Mean BCE and accuracy at 0.5 over a slice set in eval mode.
template <typename S>
std::pair<double, double> evaluate_classifier(GateClassifier<S>& model, const std::vector<SliceSample>& slices);

/// BCE + Adam with a plateau schedule; the model ends holding its best-validation-loss state.
/// A non-finite loss restores that state and raises DivergenceError.
template <typename S>
ClassifierTrainResult train_classifier(GateClassifier<S>& model, const std::vector<SliceSample>& train,
                                       const std::vector<SliceSample>& validation,
                                       const ClassifierTrainConfig& config,
                                       const std::function<void(const EpochLog&)>& on_epoch = {});

/// CSV with header epoch,train_loss,val_loss,val_acc,lr.
std::string training_log_csv(const std::vector<EpochLog>& log);

}  // namespace wss
