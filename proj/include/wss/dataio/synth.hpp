#pragma once

#include <cstdint>
#include <vector>

#include "wss/dataio/volume.hpp"

namespace wss {

struct SynthConfig {
  std::size_t count = 100;
  /// In-plane extent H = W.
  Index extent = 64;
  /// Axial extent; 0 means equal to extent.
  Index depth = 0;
  double tumor_probability = 0.5;
  std::uint64_t seed = 0;
};

/// Synthetic 4-channel volumes: smooth tissue on an ellipsoidal brain support, with a
/// feathered hyperintense lesion in exactly round(p * count) of them. Lesions span every
/// axial slice of their volume. The truth mask is where the feathered lesion weight is at
/// least 0.5. Intensities are positive integers, as scanners store them. Deterministic by seed.
std::vector<Volume> synth_generate(const SynthConfig& config);

}  // namespace wss
