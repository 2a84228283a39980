#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "wss/dataio/volume.hpp"
#include "wss/numerics/adam.hpp"
#include "wss/superpix/losses.hpp"
#include "wss/superpix/networks.hpp"

namespace wss {

struct SpixelTrainConfig {
  int epochs = 100;
  std::size_t batch_size = 32;
  AdamConfig adam{};
  /// The learning rate halves after every `halve_every` epochs.
  int halve_every = 25;
  SpixelLossConfig loss{};
  std::uint64_t seed = 0;
};

struct SpixelEpochLog {
  int epoch = 0;
  double loss = 0, spixel = 0, seed = 0, lr = 0;
};

struct SpixelTrainResult {
  std::vector<SpixelEpochLog> log;
  std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const SpixelEpochLog&)>;
/// Receives the model state at every schedule boundary and after the final epoch.
using CheckpointCallback = std::function<void(int epoch, const Checkpoint&)>;

/// Generator and clusterer updated together from L_spixel + alpha * L_seed. A non-finite loss
/// restores the last boundary checkpoint and raises DivergenceError.
template <typename S>
SpixelTrainResult train_superpixel(SpixelModel<S>& model, const std::vector<SliceSample>& images,
                                   const std::vector<SeedMap>& seeds, const SpixelTrainConfig& config,
                                   const EpochCallback& on_epoch = {}, const CheckpointCallback& on_checkpoint = {});

/// Ablation baseline: the trunk alone trained on alpha * L_seed.
template <typename S>
SpixelTrainResult train_ablation(AblationModel<S>& model, const std::vector<SliceSample>& images,
                                 const std::vector<SeedMap>& seeds, const SpixelTrainConfig& config,
                                 const EpochCallback& on_epoch = {}, const CheckpointCallback& on_checkpoint = {});

struct HeatmapSet {
  /// One H x W map per slice, values in [0,1].
  std::vector<Eigen::ArrayXd> heat;
  /// Effective superpixel count per slice (empty for the ablation model).
  std::vector<Index> effective;
};

template <typename S>
HeatmapSet spixel_heatmaps(SpixelModel<S>& model, const std::vector<SliceSample>& slices, std::size_t chunk = 32);
template <typename S>
HeatmapSet ablation_heatmaps(AblationModel<S>& model, const std::vector<SliceSample>& slices, std::size_t chunk = 32);

/// CSV with header epoch,loss,spixel_loss,seed_loss,lr.
std::string spixel_log_csv(const std::vector<SpixelEpochLog>& log);

/// 16-bit grayscale PNG of a [0,1] heat map (value * 65535).
void write_heatmap_png16(const std::filesystem::path& path, const Eigen::ArrayXd& heat, Index height, Index width);
/// Raw little-endian f32 dump, row-major, no header.
void write_heatmap_f32(const std::filesystem::path& path, const Eigen::ArrayXd& heat);

}  // namespace wss
