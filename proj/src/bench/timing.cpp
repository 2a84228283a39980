#include "wss/bench/timing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "wss/bench/felzenszwalb.hpp"
#include "wss/dataio/preprocess.hpp"
#include "wss/error.hpp"

namespace wss {

void summarize_samples(TimingReport& report) {
  std::vector<double> s = report.samples_ms;
  if (s.empty()) throw ValidationError("timing: no samples for " + report.method);
  std::sort(s.begin(), s.end());
  double total = 0;
  for (double v : s) total += v;
  report.mean_ms = total / static_cast<double>(s.size());
  report.median_ms = percentile_sorted(s, 50.0);
  report.p95_ms = percentile_sorted(s, 95.0);
  report.min_ms = s.front();
  report.max_ms = s.back();
}

TimingReport time_inference(const std::string& method, const std::function<void(std::size_t)>& run, std::size_t count,
                            std::size_t warmup, std::size_t min_samples) {
  if (count < warmup + min_samples) {
    throw ValidationError("timing " + method + ": " + std::to_string(count) + " images leave fewer than " +
                          std::to_string(min_samples) + " samples after " + std::to_string(warmup) + " warmup runs");
  }
  TimingReport r;
  r.method = method;
  r.warmup_count = warmup;
  using Clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < count; ++i) {
    const auto t0 = Clock::now();
    run(i);
    const auto t1 = Clock::now();
    if (i >= warmup) r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  summarize_samples(r);
  return r;
}

TimingReport time_spixel_pipeline(SpixelModel<float>& model, const std::vector<SliceSample>& slices, std::size_t warmup) {
  NoGradGuard no_grad;
  // Inputs are staged before timing so that only inference is measured.
  std::vector<Tensor<float>> inputs;
  inputs.reserve(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) inputs.push_back(stack_images<float>(slices, {i}));
  float sink = 0;
  TimingReport r = time_inference(
      "deep_superpixel", [&](std::size_t i) { sink += model.forward(inputs[i], false).heat.value()[0]; }, slices.size(),
      warmup);
  r.composition = "generator forward + clusterer forward + heat-map assembly, batch 1, single thread";
  if (!std::isfinite(sink)) throw NumericError("timing: non-finite heat map");
  return r;
}

TimingReport time_felzenszwalb_pipeline(const std::vector<SliceSample>& slices, std::size_t warmup, double scale,
                                        double sigma, Index min_size) {
  FelzenszwalbConfig cfg;
  cfg.scale = scale;
  cfg.sigma = sigma;
  cfg.min_size = min_size;
  std::vector<Eigen::ArrayXf> flair;
  for (const auto& s : slices) {
    if (s.channels <= kFlairChannel) throw ShapeError("timing: slice " + s.id() + " has no FLAIR channel");
    flair.emplace_back(s.image.segment(kFlairChannel * s.pixels(), s.pixels()));
  }
  // Fixed stand-in scorer over per-superpixel channel means.
  const double weights[4] = {-0.5, 0.8, 1.2, 2.0}, bias = -2.0;
  double sink = 0;
  TimingReport r = time_inference(
      "felzenszwalb",
      [&](std::size_t i) {
        const SliceSample& s = slices[i];
        const Index P = s.pixels();
        const std::vector<int> labels = felzenszwalb_segment(flair[i], s.size, s.size, cfg);
        const int n = segment_count(labels);
        std::vector<double> feat(static_cast<std::size_t>(n * s.channels), 0.0), count(static_cast<std::size_t>(n), 0.0);
        for (Index c = 0; c < s.channels; ++c) {
          for (Index p = 0; p < P; ++p) feat[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)] * s.channels + c)] += s.image[c * P + p];
        }
        for (int l : labels) count[static_cast<std::size_t>(l)] += 1;
        std::vector<double> score(static_cast<std::size_t>(n));
        for (int l = 0; l < n; ++l) {
          double z = bias;
          for (Index c = 0; c < std::min<Index>(s.channels, 4); ++c) {
            z += weights[c] * feat[static_cast<std::size_t>(l * s.channels + c)] / count[static_cast<std::size_t>(l)];
          }
          score[static_cast<std::size_t>(l)] = 1.0 / (1.0 + std::exp(-z));
        }
        Eigen::ArrayXd heat(P);
        for (Index p = 0; p < P; ++p) heat[p] = score[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)])];
        sink += heat[0];
      },
      slices.size(), warmup);
  r.composition = "gaussian blur + felzenszwalb graph segmentation on FLAIR + per-superpixel mean features + fixed "
                  "logistic scoring painted to pixels, single thread";
  if (!std::isfinite(sink)) throw NumericError("timing: non-finite heat map");
  return r;
}

std::string timing_json(const std::vector<TimingReport>& reports) {
  nlohmann::json root;
  root["note"] = "absolute times are machine-dependent; compare methods by their ratio";
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : reports) {
    list.push_back({{"method", r.method},
                    {"composition", r.composition},
                    {"warmup_count", r.warmup_count},
                    {"sample_count", r.samples_ms.size()},
                    {"mean_ms", r.mean_ms},
                    {"median_ms", r.median_ms},
                    {"p95_ms", r.p95_ms},
                    {"min_ms", r.min_ms},
                    {"max_ms", r.max_ms}});
  }
  root["methods"] = std::move(list);
  if (reports.size() >= 2 && reports[0].mean_ms > 0) {
    nlohmann::json rel = nlohmann::json::object();
    for (const auto& r : reports) rel[r.method] = r.mean_ms / reports[0].mean_ms;
    root["mean_relative_to_" + reports[0].method] = std::move(rel);
    const auto fastest = std::min_element(reports.begin(), reports.end(),
                                          [](const TimingReport& a, const TimingReport& b) { return a.mean_ms < b.mean_ms; });
    root["fastest"] = fastest->method;
  }
  return root.dump(2) + "\n";
}

std::string timing_table(const std::vector<TimingReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %8s %10s %10s %10s\n", "method", "samples", "mean ms", "median ms", "p95 ms");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-18s %8zu %10.3f %10.3f %10.3f\n", r.method.c_str(), r.samples_ms.size(),
                  r.mean_ms, r.median_ms, r.p95_ms);
    out += line;
  }
  out += "(absolute times are machine-dependent)\n";
  return out;
}

std::string timing_samples_csv(const std::vector<TimingReport>& reports) {
  std::string out = "method,sample,ms\n";
  char line[160];
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.samples_ms.size(); ++i) {
      std::snprintf(line, sizeof line, "%s,%zu,%.17g\n", r.method.c_str(), i, r.samples_ms[i]);
      out += line;
    }
  }
  return out;
}

}  // namespace wss
