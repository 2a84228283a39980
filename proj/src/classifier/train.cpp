#include "wss/classifier/train.hpp"

#include <cmath>
#include <cstdio>

#include "wss/dataio/cohort.hpp"
#include "wss/error.hpp"

namespace wss {

double PlateauScheduler::update(double val_loss, double lr) {
  if (val_loss < best_ - threshold_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return lr;
  }
  if (++bad_epochs_ >= patience_) {
    bad_epochs_ = 0;
    return lr / factor_;
  }
  return lr;
}

template <typename S>
std::pair<double, double> evaluate_classifier(GateClassifier<S>& model, const std::vector<SliceSample>& slices) {
  if (slices.empty()) throw ValidationError("evaluate_classifier: empty slice set");
  const auto probs = classify(model, slices);
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1 - 1e-7);
    loss -= slices[i].label ? std::log(p) : std::log1p(-p);
    correct += (probs[i] >= 0.5) == (slices[i].label == 1);
  }
  const auto n = static_cast<double>(slices.size());
  return {loss / n, static_cast<double>(correct) / n};
}

template <typename S>
ClassifierTrainResult train_classifier(GateClassifier<S>& model, const std::vector<SliceSample>& train,
                                       const std::vector<SliceSample>& validation,
                                       const ClassifierTrainConfig& config,
                                       const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty() || validation.empty()) throw ValidationError("train_classifier: train and validation cohorts must be non-empty");
  Adam<S> optimizer(model.parameters(), config.adam);
  PlateauScheduler scheduler(config.plateau_threshold, 10.0, config.plateau_patience);
  const BatchIterator batches(train.size(), config.batch_size, derive_seed(config.seed, 1),
                              train.size() > config.batch_size);
  ClassifierTrainResult result;
  Checkpoint best = model.to_checkpoint();
  result.best_val_loss = std::numeric_limits<double>::infinity();
  double lr = config.adam.learning_rate;

  auto diverge = [&](int epoch, const std::string& what) {
    model.load(best);
    throw DivergenceError("classifier training diverged at epoch " + std::to_string(epoch) + " (" + what +
                          "); restored the checkpoint from epoch " + std::to_string(result.best_epoch));
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double total = 0;
    std::size_t seen = 0;
    for (const auto& batch : batches.epoch(static_cast<std::uint64_t>(epoch))) {
      typename Tensor<S>::Array y(static_cast<Index>(batch.size()));
      for (std::size_t i = 0; i < batch.size(); ++i) y[static_cast<Index>(i)] = static_cast<S>(train[batch[i]].label);
      Tensor<S> loss;
      try {
        const Tensor<S> p = model.forward(stack_images<S>(train, batch), true);
        loss = binary_cross_entropy(p, Tensor<S>({static_cast<Index>(batch.size())}, std::move(y)));
      } catch (const NumericError& e) {
        diverge(epoch, e.what());
      }
      optimizer.zero_grad();
      backward(loss);
      optimizer.step();
      total += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const auto [val_loss, val_acc] = evaluate_classifier(model, validation);
    if (!std::isfinite(val_loss)) diverge(epoch, "validation loss is not finite");
    EpochLog entry{epoch, total / static_cast<double>(seen), val_loss, val_acc, lr};
    result.log.push_back(entry);
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = model.to_checkpoint();
    }
    if (on_epoch) on_epoch(entry);
    lr = scheduler.update(val_loss, lr);
    optimizer.set_learning_rate(lr);
  }
  model.load(best);
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr\n";
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.6f,%.6g\n", e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr);
    out += line;
  }
  return out;
}

template std::pair<double, double> evaluate_classifier(GateClassifier<float>&, const std::vector<SliceSample>&);
template std::pair<double, double> evaluate_classifier(GateClassifier<double>&, const std::vector<SliceSample>&);
template ClassifierTrainResult train_classifier(GateClassifier<float>&, const std::vector<SliceSample>&,
                                                const std::vector<SliceSample>&, const ClassifierTrainConfig&,
                                                const std::function<void(const EpochLog&)>&);
template ClassifierTrainResult train_classifier(GateClassifier<double>&, const std::vector<SliceSample>&,
                                                const std::vector<SliceSample>&, const ClassifierTrainConfig&,
                                                const std::function<void(const EpochLog&)>&);

}  // namespace wss
