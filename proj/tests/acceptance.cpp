// Acceptance harness: one PASS/FAIL line per criterion at pinned tolerances. Criteria 6, 8, 9
// and 10 share one desk-scale pipeline run driven through the CLI library.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pipeline.hpp"
#include "stage_manifest.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "wss/binary_io.hpp"
#include "wss/classifier/gate_classifier.hpp"
#include "wss/dataio/preprocess.hpp"
#include "wss/evalseg/metrics.hpp"
#include "wss/saliency/seeds.hpp"
#include "wss/superpix/losses.hpp"
#include "wss/superpix/networks.hpp"

using namespace wss;
using namespace wss::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;
using T = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

T random_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad = false) {
  T::Array v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = uniform(rng, lo, hi);
  return T(std::move(shape), std::move(v), grad);
}

SeedMap random_seeds(Index h, Index w, Rng& rng) {
  Eigen::ArrayXd heat(h * w);
  for (Index i = 0; i < heat.size(); ++i) heat[i] = uniform01(rng);
  return extract_seeds(heat, h, w);
}

// ---------------------------------------------------------------- 1

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const Index Ns = 4;
  const T F = random_tensor({2, 4, 8, 8}, rng, 0, 1);
  const std::vector<SeedMap> seeds{random_seeds(8, 8, rng), random_seeds(8, 8, rng)};
  T logits_q = random_tensor({2, Ns, 8, 8}, rng, -2, 2, true);
  T logits_r = random_tensor({2, Ns}, rng, -2, 2, true);
  T heat = random_tensor({2, 8, 8}, rng, 0.05, 0.95, true);

  std::map<std::string, GradCheckResult> results;
  results["spixel"] = grad_check(
      [&] { return spixel_loss(F, softmax(logits_q, 1), 3.0 / 160, SpixelLossForm::Reconstruction); }, {logits_q});
  results["seed"] = grad_check([&] { return seed_loss(heat, seeds); }, {heat});
  results["combined(Q,R)"] = grad_check(
      [&] { return combined_loss(F, softmax(logits_q, 1), softmax(logits_r, 1), seeds, SpixelLossConfig{}).total; },
      {logits_q, logits_r});

  SpixelArch arch;
  arch.superpixels = Ns;
  arch.generator_widths = {4, 8};
  arch.clusterer_widths = {4, 8};
  SpixelModel<double> model(arch, 102);
  std::vector<T> params;
  for (const auto& [_, p] : model.parameters().items) params.push_back(p);
  results["combined(networks)"] = grad_check(
      [&] {
        const auto out = model.forward(F, true);
        return combined_loss(F, out.Q, out.R, seeds, SpixelLossConfig{}).total;
      },
      params);

  ClassifierConfig gc;
  gc.widths = {4, 8};
  gc.upsample = 1;
  GateClassifier<double> gate(gc, 103);
  const T images = random_tensor({4, 4, 8, 8}, rng, 0, 1);
  const T target({4}, T::Array((T::Array(4) << 1, 0, 1, 0).finished()));
  std::vector<T> gparams;
  for (const auto& [_, p] : gate.parameters().items) gparams.push_back(p);
  results["bce(classifier)"] =
      grad_check([&] { return binary_cross_entropy(gate.forward(images, true), target); }, gparams);

  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::size_t checked = 0;
  std::string parts;
  for (const auto& [name, r] : results) {
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    parts += " " + name + "=" + fmt("%.1e", r.max_rel_error);
  }
  return {worst < 1e-4 && elapsed < 120.0, "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
                                               " entries (" + parts.substr(1) + "), " + fmt("%.1f s", elapsed)};
}

// ---------------------------------------------------------------- 2

Outcome normalization_invariants() {
  Rng rng(201);
  double worst_q = 0, worst_r = 0;
  std::size_t heat_outside = 0, complement_inexact = 0, values = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    SpixelArch arch;
    arch.superpixels = 2 + static_cast<Index>(uniform_index(rng, 15));
    arch.generator_widths = {4, 8};
    arch.clusterer_widths = {4, 8};
    SpixelModel<float> model(arch, rng());
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 3)), size = trial % 2 ? 8 : 16, P = size * size;
    Tensor<float>::Array x(n * 4 * P);
    const double scale = uniform(rng, 0.1, 10.0);
    for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(scale * standard_normal(rng));
    NoGradGuard ng;
    const auto out = model.forward(Tensor<float>({n, 4, size, size}, x), trial % 3 == 0);
    const Index Ns = arch.superpixels;
    for (Index i = 0; i < n; ++i) {
      for (Index p = 0; p < P; ++p) {
        double s = 0;
        for (Index k = 0; k < Ns; ++k) s += out.Q.value()[(i * Ns + k) * P + p];
        worst_q = std::max(worst_q, std::abs(s - 1.0));
      }
      double r = 0;
      for (Index k = 0; k < Ns; ++k) r += out.R.value()[i * Ns + k];
      worst_r = std::max(worst_r, std::abs(r - 1.0));
    }
    for (float h : out.heat.value()) {
      ++values;
      heat_outside += !(h >= 0.0f && h <= 1.0f);
      const float negative = 1.0f - h;
      complement_inexact += (h + negative != 1.0f);
    }
  }
  return {worst_q <= 1e-5 && worst_r <= 1e-5 && heat_outside == 0 && complement_inexact == 0,
          "max |sum Q - 1| " + fmt("%.2e", worst_q) + ", max |sum R - 1| " + fmt("%.2e", worst_r) + ", H+ outside [0,1]: " +
              std::to_string(heat_outside) + ", H+ + H- != 1: " + std::to_string(complement_inexact) + " of " +
              std::to_string(values) + " pixels"};
}

// ---------------------------------------------------------------- 3

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(301);
  std::size_t dice_mismatch = 0;
  double worst_hd = 0;
  for (int i = 0; i < 200; ++i) {
    BinaryMask a, b;
    switch (i % 4) {
      case 0: a = random_mask(16, 16, 0.3, rng); b = random_mask(16, 16, 0.3, rng); break;
      case 1: a = blob(16, 16, rng); b = blob(16, 16, rng); break;
      case 2: a = blob(16, 16, rng); b = random_mask(16, 16, 0.1, rng); break;
      default: a = random_mask(16, 16, 0.05, rng); b = blob(16, 16, rng); break;
    }
    dice_mismatch += dice(a, b) != oracle_dice(a, b);
    worst_hd = std::max(worst_hd, std::abs(hd95(a, b) - oracle_hd95(a, b)));
  }
  const double elapsed = seconds_since(t0);
  return {dice_mismatch == 0 && worst_hd < 1e-9 && elapsed < 60.0,
          "dice mismatches " + std::to_string(dice_mismatch) + "/200, max |hd95 - oracle| " + fmt("%.1e", worst_hd) + ", " +
              fmt("%.2f s", elapsed)};
}

// ---------------------------------------------------------------- 4

Outcome seed_construction() {
  Rng rng(401);
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index H = 4 + static_cast<Index>(uniform_index(rng, 29)), W = 4 + static_cast<Index>(uniform_index(rng, 29));
    Eigen::ArrayXd h(H * W);
    for (Index i = 0; i < h.size(); ++i) {
      h[i] = trial % 4 == 0 ? static_cast<double>(uniform_index(rng, 5)) : uniform01(rng);
    }
    if (h.maxCoeff() == h.minCoeff()) h[0] += 1;
    const SeedMap s = extract_seeds(h, H, W, 0.2);
    const auto k = static_cast<Index>(std::floor(0.2 * static_cast<double>(H * W)));
    const auto [pos, neg] = oracle_seeds(h, 0.2);
    const bool ok = s.positive.cast<Index>().sum() == k && s.negative.cast<Index>().sum() == k &&
                    (s.positive.cast<int>() * s.negative.cast<int>()).sum() == 0 && members(s.positive) == pos &&
                    members(s.negative) == neg;
    bad += !ok;
  }
  return {bad == 0, std::to_string(100 - bad) + "/100 heat maps disjoint, of size floor(0.2 HW), equal to the sort oracle"};
}

// ---------------------------------------------------------------- 5

Outcome rise_sanity() {
  Rng rng(501);
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index h = 3 + static_cast<Index>(uniform_index(rng, 4)), w = 3 + static_cast<Index>(uniform_index(rng, 4));
    const Region r{static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(16 - h + 1))),
                   static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(16 - w + 1))), h, w};
    const MaskBank bank = build_mask_bank({50, 7, 0.5, rng()}, 16, 16);
    const auto heat = rise_heatmap(region_mean(r, 16), random_image(4, 256, rng), 4, bank);
    Index best;
    heat.maxCoeff(&best);
    hits += r.contains(best / 16, best % 16);
  }
  return {hits >= 95, "argmax inside the planted region in " + std::to_string(hits) + "/100 trials"};
}

// ---------------------------------------------------------------- 7

Outcome threshold_search_peak() {
  Rng rng(701);
  std::vector<Eigen::ArrayXd> heat;
  std::vector<BinaryMask> truth;
  for (int i = 0; i < 30; ++i) {
    const BinaryMask t = blob(16, 16, rng);
    Eigen::ArrayXd h(256);
    for (Index p = 0; p < 256; ++p) {
      h[p] = t.pixels[p] ? uniform(rng, 0.605, 0.695)
                         : (bernoulli(rng, 0.3) ? uniform(rng, 0.505, 0.595) : uniform(rng, 0.0, 0.1));
    }
    truth.push_back(t);
    heat.push_back(h);
  }
  // The oracle curve must peak at 0.6 for the construction to be meaningful.
  std::vector<double> curve;
  std::vector<double> candidates;
  for (int k = 1; k <= 9; ++k) candidates.push_back(k / 10.0);
  for (double c : candidates) {
    double total = 0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      total += oracle_dice(BinaryMask(16, 16, (heat[i] >= c).cast<std::uint8_t>()), truth[i]);
    }
    curve.push_back(total / static_cast<double>(heat.size()));
  }
  const auto peak = std::max_element(curve.begin(), curve.end()) - curve.begin();
  const auto r = threshold_search(heat, truth, 0.1);
  return {candidates[static_cast<std::size_t>(peak)] == 0.6 && r.best == 0.6,
          "oracle curve peaks at " + fmt("%.1f", candidates[static_cast<std::size_t>(peak)]) + ", threshold_search returns " +
              fmt("%g", r.best)};
}

// ---------------------------------------------------------------- 6, 8, 9, 10

struct DeskRun {
  fs::path dir;
  cli::Options options;
  double seconds = 0;
  std::string error;
};

DeskRun desk_run(const fs::path& work, const fs::path& config) {
  DeskRun d;
  d.dir = work / "desk";
  fs::remove_all(d.dir);
  d.options.config = cli::RunConfig::load(config);
  d.options.run_dir = d.dir;
  d.options.log = &std::cerr;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (const auto& stage : cli::stage_names()) cli::run_stage(d.options, stage);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = seconds_since(t0);
  return d;
}

Outcome end_to_end(const DeskRun& d) {
  if (!d.error.empty()) return {false, "pipeline failed: " + d.error};
  const auto cfg = d.options.config;
  const auto cmp = json::parse(read_text(d.dir / "eval/comparison.json"));
  const auto summary = json::parse(read_text(d.dir / "eval/summary.json"));
  const double ours = cmp["superpixel"]["test_dice_mean"].get<double>();
  const double seeds = cmp["positive_seeds"]["test_dice_mean"].get<double>();
  const auto& test = summary["cohorts"]["test"];
  const bool shape = cfg.integer("synth.count") == 200 && cfg.integer("slice.patch") == 64 &&
                     cfg.integer("spix.superpixels") == 16 && cfg.integer("gate.epochs") == 15 &&
                     cfg.integer("spix.epochs") == 15;
  std::string detail = fmt("%.1f min", d.seconds / 60) + "; test Dice " + fmt("%.4f", ours) + " vs positive seeds " +
                       fmt("%.4f", seeds) + " (cancerous slices only: " +
                       fmt("%.4f", test["dice_cancerous_only"]["mean"].get<double>()) + "; HD95 " +
                       fmt("%.3f", test["hd95"]["mean"].get<double>()) + ")";
  if (!shape) detail += "; desk configuration does not match 200 volumes / 64x64 / N_S 16 / 15 epochs";
  return {shape && d.seconds < 45 * 60 && ours >= 0.5 && ours > seeds, detail};
}

Outcome effective_superpixels(const DeskRun& d) {
  if (!d.error.empty()) return {false, "pipeline failed"};
  const auto summary = json::parse(read_text(d.dir / "eval/summary.json"));
  const auto& e = summary["cohorts"]["test"]["effective_superpixels"];
  std::vector<long long> per_image;
  for (const auto& [id, v] : e["per_image"].items()) per_image.push_back(v.get<long long>());
  const auto test_count = summary["cohorts"]["test"]["count"].get<std::size_t>();
  const long long ns = d.options.config.integer("spix.superpixels");
  const bool bounded = std::all_of(per_image.begin(), per_image.end(), [&](long long v) { return v >= 1 && v <= ns; });
  return {bounded && per_image.size() == test_count,
          std::to_string(per_image.size()) + " test images, effective count mean " + fmt("%.2f", e["mean"].get<double>()) +
              ", min " + std::to_string(e["min"].get<long long>()) + ", max " + std::to_string(e["max"].get<long long>()) +
              " of N_S = " + std::to_string(ns)};
}

Outcome benchmark(const DeskRun& d) {
  if (!d.error.empty()) return {false, "pipeline failed"};
  const auto timing = json::parse(read_text(d.dir / "bench/timing.json"));
  std::map<std::string, std::vector<double>> samples;
  std::istringstream csv(read_text(d.dir / "bench/samples.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    samples[line.substr(0, a)].push_back(std::stod(line.substr(b + 1)));
  }
  bool ok = timing["methods"].size() == 2;
  std::string detail;
  for (const auto& m : timing["methods"]) {
    const std::string name = m["method"];
    auto s = samples[name];
    std::sort(s.begin(), s.end());
    auto pct = [&](double q) {
      const double rank = q / 100.0 * static_cast<double>(s.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(rank)), hi = static_cast<std::size_t>(std::ceil(rank));
      return s[lo] + (rank - static_cast<double>(lo)) * (s[hi] - s[lo]);
    };
    double mean = 0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    const bool stats = s.size() >= 30 && m["sample_count"].get<std::size_t>() == s.size() &&
                       close(m["min_ms"], s.front()) && close(m["max_ms"], s.back()) &&
                       close(m["median_ms"], pct(50)) && close(m["p95_ms"], pct(95)) && close(m["mean_ms"], mean);
    ok = ok && stats;
    detail += (detail.empty() ? "" : "; ") + name + ": " + std::to_string(s.size()) + " samples, mean " +
              fmt("%.3f", m["mean_ms"].get<double>()) + " ms, median " + fmt("%.3f", m["median_ms"].get<double>()) +
              " ms, p95 " + fmt("%.3f", m["p95_ms"].get<double>()) + " ms" + (stats ? "" : " (statistics disagree with the oracle)");
  }
  return {ok, detail};
}

std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = cli::sha256_file(e.path());
  }
  return out;
}

Outcome reproducibility(const DeskRun& d, const fs::path& work) {
  if (!d.error.empty()) return {false, "pipeline failed"};
  const fs::path twin = work / "desk_repeat";
  fs::remove_all(twin);
  for (const char* stage : {"prep", "gate", "seeds"}) {
    fs::create_directories(twin / stage);
    fs::copy(d.dir / stage, twin / stage, fs::copy_options::recursive);
  }
  cli::Options o = d.options;
  o.run_dir = twin;
  try {
    cli::run_stage(o, "train-spix");
  } catch (const std::exception& e) {
    return {false, std::string("second train-spix failed: ") + e.what()};
  }
  std::size_t files = 0, differ = 0;
  std::string first;
  for (const char* sub : {"spix", "ablation"}) {
    const auto a = tree_hashes(d.dir / sub), b = tree_hashes(twin / sub);
    for (const auto& [rel, h] : a) {
      ++files;
      auto it = b.find(rel);
      if (it == b.end() || it->second != h) {
        ++differ;
        if (first.empty()) first = std::string(sub) + "/" + rel;
      }
    }
    differ += b.size() > a.size() ? b.size() - a.size() : 0;
  }
  return {files > 0 && differ == 0, std::to_string(files - differ) + "/" + std::to_string(files) +
                                        " checkpoint, loss-trace and log files bit-identical" +
                                        (first.empty() ? "" : " (first difference: " + first + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  fs::path config = WSS_DESK_CONFIG;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--work") == 0) work = argv[i + 1];
    if (std::strcmp(argv[i], "--config") == 0) config = argv[i + 1];
  }
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "normalization invariants", normalization_invariants);
  report(3, "metric oracles", metric_oracles);
  report(4, "seed construction", seed_construction);
  report(5, "RISE sanity", rise_sanity);
  report(7, "threshold search", threshold_search_peak);
  std::cout << "running the desk-scale pipeline with " << config.string() << " ..." << std::endl;
  const DeskRun desk = desk_run(work, config);
  report(6, "end-to-end desk run", [&] { return end_to_end(desk); });
  report(8, "effective superpixel report", [&] { return effective_superpixels(desk); });
  report(9, "benchmark harness", [&] { return benchmark(desk); });
  report(10, "reproducibility", [&] { return reproducibility(desk, work); });
  std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
