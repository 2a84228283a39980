#include "wss/superpix/train.hpp"

#include <cmath>
#include <cstdio>

#include "wss/binary_io.hpp"
#include "wss/dataio/cohort.hpp"
#include "wss/error.hpp"
#include "wss/png.hpp"

namespace wss {

namespace {

std::vector<SeedMap> gather(const std::vector<SeedMap>& seeds, const std::vector<std::size_t>& batch) {
  std::vector<SeedMap> out;
  out.reserve(batch.size());
  for (std::size_t i : batch) out.push_back(seeds[i]);
  return out;
}

void check_inputs(const std::vector<SliceSample>& images, const std::vector<SeedMap>& seeds,
                  const SpixelTrainConfig& config) {
  if (images.empty()) throw ValidationError("superpixel training: no gated training images");
  if (images.size() != seeds.size()) {
    throw ValidationError("superpixel training: " + std::to_string(images.size()) + " images but " +
                          std::to_string(seeds.size()) + " seed maps");
  }
  if (config.halve_every < 1 || config.epochs < 0) throw ValidationError("superpixel training: bad schedule");
  config.loss.validate();
}

/// Shared epoch loop. `step` returns {total, spixel, seed} for one batch after its backward pass.
template <typename S, typename Model, typename StepFn>
SpixelTrainResult run_training(Model& model, const std::vector<SliceSample>& images, const SpixelTrainConfig& config,
                               const char* what, StepFn step, const EpochCallback& on_epoch,
                               const CheckpointCallback& on_checkpoint) {
  Adam<S> optimizer(model.parameters(), config.adam);
  const BatchIterator batches(images.size(), config.batch_size, derive_seed(config.seed, 2),
                              images.size() > config.batch_size);
  SpixelTrainResult result;
  Checkpoint last = model.to_checkpoint();
  int last_epoch = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.adam.learning_rate * std::pow(0.5, (epoch - 1) / config.halve_every);
    optimizer.set_learning_rate(lr);
    double total = 0, spixel = 0, seed = 0;
    std::size_t seen = 0;
    for (const auto& batch : batches.epoch(static_cast<std::uint64_t>(epoch))) {
      std::array<double, 3> losses{};
      try {
        optimizer.zero_grad();
        losses = step(batch);
      } catch (const NumericError& e) {
        model.load(last);
        throw DivergenceError(std::string(what) + " training diverged at epoch " + std::to_string(epoch) + " (" +
                              e.what() + "); restored the checkpoint from epoch " + std::to_string(last_epoch));
      }
      optimizer.step();
      const auto b = static_cast<double>(batch.size());
      total += losses[0] * b;
      spixel += losses[1] * b;
      seed += losses[2] * b;
      seen += batch.size();
      result.step_losses.push_back(losses[0]);
    }
    const auto n = static_cast<double>(seen);
    const SpixelEpochLog entry{epoch, total / n, spixel / n, seed / n, lr};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (epoch % config.halve_every == 0 || epoch == config.epochs) {
      last = model.to_checkpoint();
      last_epoch = epoch;
      if (on_checkpoint) on_checkpoint(epoch, last);
    }
  }
  return result;
}

}  // namespace

template <typename S>
SpixelTrainResult train_superpixel(SpixelModel<S>& model, const std::vector<SliceSample>& images,
                                   const std::vector<SeedMap>& seeds, const SpixelTrainConfig& config,
                                   const EpochCallback& on_epoch, const CheckpointCallback& on_checkpoint) {
  check_inputs(images, seeds, config);
  auto step = [&](const std::vector<std::size_t>& batch) {
    const Tensor<S> x = stack_images<S>(images, batch);
    const auto out = model.forward(x, true);
    const CombinedLoss<S> loss = combined_loss(x, out.Q, out.R, gather(seeds, batch), config.loss);
    backward(loss.total);
    return std::array<double, 3>{static_cast<double>(loss.total.item()), static_cast<double>(loss.spixel.item()),
                                 static_cast<double>(loss.seed.item())};
  };
  return run_training<S>(model, images, config, "superpixel", step, on_epoch, on_checkpoint);
}

template <typename S>
SpixelTrainResult train_ablation(AblationModel<S>& model, const std::vector<SliceSample>& images,
                                 const std::vector<SeedMap>& seeds, const SpixelTrainConfig& config,
                                 const EpochCallback& on_epoch, const CheckpointCallback& on_checkpoint) {
  check_inputs(images, seeds, config);
  auto step = [&](const std::vector<std::size_t>& batch) {
    const Tensor<S> heat = model.forward(stack_images<S>(images, batch), true);
    const Tensor<S> seed = seed_loss(heat, gather(seeds, batch));
    const Tensor<S> total = seed * static_cast<S>(config.loss.alpha);
    backward(total);
    return std::array<double, 3>{static_cast<double>(total.item()), 0.0, static_cast<double>(seed.item())};
  };
  return run_training<S>(model, images, config, "ablation", step, on_epoch, on_checkpoint);
}

namespace {

template <typename Fn>
void for_chunks(std::size_t count, std::size_t chunk, Fn fn) {
  for (std::size_t first = 0; first < count; first += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(count, first + chunk); ++i) idx.push_back(i);
    fn(idx);
  }
}

}  // namespace

template <typename S>
HeatmapSet spixel_heatmaps(SpixelModel<S>& model, const std::vector<SliceSample>& slices, std::size_t chunk) {
  NoGradGuard no_grad;
  HeatmapSet out;
  const Index Ns = model.arch().superpixels;
  for_chunks(slices.size(), chunk, [&](const std::vector<std::size_t>& idx) {
    const auto res = model.forward(stack_images<S>(slices, idx), false);
    const Index P = res.heat.dim(1) * res.heat.dim(2);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto k = static_cast<Index>(i);
      out.heat.push_back(res.heat.value().segment(k * P, P).template cast<double>());
      out.effective.push_back(
          effective_superpixel_count(res.Q.value().segment(k * Ns * P, Ns * P).template cast<double>(), Ns));
    }
  });
  return out;
}

template <typename S>
HeatmapSet ablation_heatmaps(AblationModel<S>& model, const std::vector<SliceSample>& slices, std::size_t chunk) {
  NoGradGuard no_grad;
  HeatmapSet out;
  for_chunks(slices.size(), chunk, [&](const std::vector<std::size_t>& idx) {
    const Tensor<S> heat = model.forward(stack_images<S>(slices, idx), false);
    const Index P = heat.dim(1) * heat.dim(2);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.heat.push_back(heat.value().segment(static_cast<Index>(i) * P, P).template cast<double>());
    }
  });
  return out;
}

std::string spixel_log_csv(const std::vector<SpixelEpochLog>& log) {
  std::string out = "epoch,loss,spixel_loss,seed_loss,lr\n";
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.6g\n", e.epoch, e.loss, e.spixel, e.seed, e.lr);
    out += line;
  }
  return out;
}

void write_heatmap_png16(const std::filesystem::path& path, const Eigen::ArrayXd& heat, Index height, Index width) {
  if (heat.size() != height * width) throw ShapeError("heat map png: size mismatch");
  std::vector<std::uint16_t> gray(static_cast<std::size_t>(heat.size()));
  for (Index i = 0; i < heat.size(); ++i) {
    gray[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(std::clamp(heat[i], 0.0, 1.0) * 65535.0));
  }
  write_png_gray16(path, static_cast<int>(width), static_cast<int>(height), gray);
}

void write_heatmap_f32(const std::filesystem::path& path, const Eigen::ArrayXd& heat) {
  ByteWriter w;
  for (Index i = 0; i < heat.size(); ++i) w.f32(static_cast<float>(heat[i]));
  write_file(path, w.bytes);
}

#define WSS_INSTANTIATE_SPIXEL_TRAIN(S)                                                                       \
  template SpixelTrainResult train_superpixel(SpixelModel<S>&, const std::vector<SliceSample>&,               \
                                              const std::vector<SeedMap>&, const SpixelTrainConfig&,          \
                                              const EpochCallback&, const CheckpointCallback&);               \
  template SpixelTrainResult train_ablation(AblationModel<S>&, const std::vector<SliceSample>&,               \
                                            const std::vector<SeedMap>&, const SpixelTrainConfig&,            \
                                            const EpochCallback&, const CheckpointCallback&);                 \
  template HeatmapSet spixel_heatmaps(SpixelModel<S>&, const std::vector<SliceSample>&, std::size_t);         \
  template HeatmapSet ablation_heatmaps(AblationModel<S>&, const std::vector<SliceSample>&, std::size_t);

WSS_INSTANTIATE_SPIXEL_TRAIN(float)
WSS_INSTANTIATE_SPIXEL_TRAIN(double)

}  // namespace wss
