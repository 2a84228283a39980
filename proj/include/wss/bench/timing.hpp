#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wss/dataio/volume.hpp"
#include "wss/superpix/networks.hpp"

namespace wss {

struct TimingReport {
  std::string method;
  /// What the timed region covers.
  std::string composition;
  std::size_t warmup_count = 0;
  /// Post-warmup wall times in milliseconds, in run order.
  std::vector<double> samples_ms;
  double mean_ms = 0, median_ms = 0, p95_ms = 0, min_ms = 0, max_ms = 0;
};

/// Order statistics of the samples (linear-interpolation percentiles).
void summarize_samples(TimingReport& report);

/// Times `run(i)` for i = 0..count-1 on the calling thread; the first `warmup` calls are discarded.
TimingReport time_inference(const std::string& method, const std::function<void(std::size_t)>& run, std::size_t count,
                            std::size_t warmup = 10, std::size_t min_samples = 30);

/// Generator + clusterer forward and heat-map assembly for one slice at a time.
TimingReport time_spixel_pipeline(SpixelModel<float>& model, const std::vector<SliceSample>& slices,
                                  std::size_t warmup = 10);

/// Felzenszwalb superpixels on the FLAIR channel, then per-superpixel mean features scored by a
/// fixed logistic stand-in and painted back to pixels.
TimingReport time_felzenszwalb_pipeline(const std::vector<SliceSample>& slices, std::size_t warmup = 10,
                                        double scale = 100.0, double sigma = 0.8, Index min_size = 20);

/// Channel fed to the classical pipeline (T2-FLAIR in t1, t1ce, t2, flair order).
inline constexpr Index kFlairChannel = 3;

std::string timing_json(const std::vector<TimingReport>& reports);
std::string timing_table(const std::vector<TimingReport>& reports);
/// Header method,sample,ms.
std::string timing_samples_csv(const std::vector<TimingReport>& reports);

}  // namespace wss
