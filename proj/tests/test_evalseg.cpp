#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "doctest.h"
#include "support/oracles.hpp"
#include "wss/error.hpp"
#include "wss/evalseg/evaluate.hpp"
#include "wss/numerics/random.hpp"

using namespace wss;
using namespace wss::testing;

namespace {

SliceSample slice_with_mask(const std::string& vol, int index, const BinaryMask& truth) {
  SliceSample s;
  s.volume_id = vol;
  s.slice_index = index;
  s.channels = 4;
  s.size = truth.height;
  s.image = Eigen::ArrayXf::Zero(4 * truth.height * truth.width);
  s.label = truth.empty() ? 0 : 1;
  s.truth_mask = truth.pixels;
  return s;
}

}  // namespace

TEST_CASE("dice examples") {
  BinaryMask a(2, 5), b(2, 5);
  for (Index i : {0, 1, 2, 3}) a.pixels[i] = 1;
  for (Index i : {1, 2, 3, 5, 6, 7}) b.pixels[i] = 1;
  CHECK(dice(a, b) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(BinaryMask(2, 5), BinaryMask(2, 5)) == 1.0);
  CHECK(dice(a, BinaryMask(2, 5)) == 0.0);
  CHECK_THROWS_AS(dice(a, BinaryMask(5, 2)), ShapeError);
}

TEST_CASE("dice equals a bitset oracle on 200 random pairs and is symmetric") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_mask(16, 16, uniform01(rng), rng), b = random_mask(16, 16, uniform01(rng), rng);
    CHECK(dice(a, b) == oracle_dice(a, b));
    CHECK(dice(a, b) == dice(b, a));
    CHECK(dice(a, b) >= 0.0);
    CHECK(dice(a, b) <= 1.0);
  }
}

TEST_CASE("hd95 examples") {
  BinaryMask a(8, 10), b(8, 10);
  a.pixels[3 * 10 + 1] = 1;
  b.pixels[3 * 10 + 6] = 1;
  CHECK(hd95(a, b) == 5.0);
  CHECK(hd95(a, a) == 0.0);
  CHECK(hd95(BinaryMask(8, 10), BinaryMask(8, 10)) == 0.0);
  CHECK(hd95(a, BinaryMask(8, 10)) == doctest::Approx(std::sqrt(164.0)));
  CHECK(hd95_is_sentinel(a, BinaryMask(8, 10)));
  EmptyMaskPolicy p;
  p.diagonal_sentinel = false;
  p.one_empty_hd95 = 99;
  CHECK(hd95(BinaryMask(8, 10), b, p) == 99.0);
}

TEST_CASE("boundary uses 4-connectivity and treats the outside as background") {
  BinaryMask m(5, 5);
  for (Index i = 0; i < 25; ++i) m.pixels[i] = 1;
  const BinaryMask b = boundary(m);
  CHECK(b.count() == 16);
  CHECK(!b(2, 2));
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto r = random_mask(9, 7, 0.6, rng);
    const auto o = oracle_boundary(r);
    const BinaryMask got = boundary(r);
    CHECK(got.count() == static_cast<Index>(o.size()));
    for (const auto& [y, x] : o) CHECK(got(y, x));
  }
}

TEST_CASE("distance transform is exact") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Index h = 1 + static_cast<Index>(uniform_index(rng, 20)), w = 1 + static_cast<Index>(uniform_index(rng, 20));
    const auto sites = random_mask(h, w, uniform01(rng) * 0.3, rng);
    const Eigen::ArrayXd d = squared_distance_transform(sites);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (Index v = 0; v < h; ++v) {
          for (Index u = 0; u < w; ++u) {
            if (sites(v, u)) best = std::min(best, static_cast<double>((y - v) * (y - v) + (x - u) * (x - u)));
          }
        }
        CHECK(d[y * w + x] == best);
      }
    }
  }
}

TEST_CASE("hd95 matches the all-pairs oracle on 200 random pairs") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const bool blobs = i % 2 == 0;
    const auto a = blobs ? blob(16, 16, rng) : random_mask(16, 16, uniform01(rng) * 0.5, rng);
    const auto b = blobs ? blob(16, 16, rng) : random_mask(16, 16, uniform01(rng) * 0.5, rng);
    CHECK(std::abs(hd95(a, b) - oracle_hd95(a, b)) <= 1e-9);
    CHECK(hd95(a, b) == hd95(b, a));
    CHECK(hd95(a, a) == 0.0);
  }
}

TEST_CASE("segment applies the gate and the threshold") {
  const Eigen::ArrayXd heat = Eigen::ArrayXd::Constant(16, 0.7);
  CHECK(segment(0.3, heat, 4, 4, 0.6).empty());
  CHECK(segment(0.9, heat, 4, 4, 0.6).count() == 16);
  CHECK(segment(0.5, heat, 4, 4, 0.7).count() == 16);
  CHECK(segment(0.5, heat, 4, 4, 0.71).empty());
  Rng rng(5);
  Eigen::ArrayXd r(16);
  for (Index i = 0; i < 16; ++i) r[i] = uniform01(rng);
  CHECK(segment(0.6, r, 4, 4, 0.0).count() == 16);
  CHECK_THROWS_AS(segment(0.6, r, 4, 4, 1.5), ValidationError);
}

TEST_CASE("threshold search on binary maps picks the lowest threshold") {
  Rng rng(6);
  std::vector<Eigen::ArrayXd> heat;
  std::vector<BinaryMask> truth;
  for (int i = 0; i < 5; ++i) {
    truth.push_back(blob(8, 8, rng));
    heat.push_back(random_mask(8, 8, 0.4, rng).pixels.cast<double>());
  }
  const auto r = threshold_search(heat, truth);
  CHECK(r.best == 0.1);
  REQUIRE(r.candidates.size() == 9);
  for (std::size_t k = 0; k < 9; ++k) CHECK(r.candidates[k] == static_cast<double>(k + 1) / 10);
  CHECK_THROWS_AS(threshold_search({}, {}), ValidationError);
}

TEST_CASE("threshold search finds a planted peak at 0.6") {
  Rng rng(7);
  std::vector<Eigen::ArrayXd> heat;
  std::vector<BinaryMask> truth;
  for (int i = 0; i < 20; ++i) {
    const BinaryMask t = blob(16, 16, rng);
    Eigen::ArrayXd h(256);
    for (Index p = 0; p < 256; ++p) {
      // tumour in (0.6, 0.7); a halo in (0.5, 0.6) that the lower thresholds include
      h[p] = t.pixels[p] ? uniform(rng, 0.605, 0.695) : (bernoulli(rng, 0.3) ? uniform(rng, 0.505, 0.595) : uniform(rng, 0.0, 0.1));
    }
    truth.push_back(t);
    heat.push_back(h);
  }
  const auto r = threshold_search(heat, truth);
  for (std::size_t k = 0; k < r.candidates.size(); ++k) {
    double oracle = 0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      BinaryMask pred(16, 16, (heat[i] >= r.candidates[k]).cast<std::uint8_t>());
      oracle += oracle_dice(pred, truth[i]);
    }
    CHECK(r.mean_dice[k] == doctest::Approx(oracle / 20).epsilon(1e-12));
  }
  CHECK(r.best == 0.6);
  CHECK(r.mean_dice[5] == 1.0);
}

TEST_CASE("cohort evaluation, csv and summary") {
  Rng rng(8);
  std::vector<SliceSample> slices;
  std::vector<double> gate;
  std::vector<Eigen::ArrayXd> heat;
  for (int i = 0; i < 6; ++i) {
    const BinaryMask t = i < 4 ? blob(16, 16, rng) : BinaryMask(16, 16);
    slices.push_back(slice_with_mask("vol", i, t));
    gate.push_back(i < 4 ? 0.9 : 0.1);
    heat.push_back(t.pixels.cast<double>());
  }
  const CohortInputs in{&slices, gate, heat};
  const auto records = evaluate_cohort(in, Cohort::Test, 0.6);
  REQUIRE(records.size() == 6);
  for (const auto& r : records) {
    CHECK(r.dice == 1.0);
    CHECK(r.hd95 == 0.0);
    CHECK(r.predicted_label == r.true_label);
  }
  CHECK(records[5].both_empty);
  CHECK(records[0].image_id == "vol_s000");

  const std::string csv = metrics_csv(records);
  CHECK(csv.rfind("image_id,cohort,dice,hd95,pred_label,true_label,threshold\nvol_s000,test,1,0,1,1,0.6\n", 0) == 0);
  const auto parsed = parse_metrics_csv(csv);
  REQUIRE(parsed.size() == 6);
  CHECK(parsed[3].image_id == "vol_s003");
  CHECK(parsed[4].true_label == 0);

  SummaryExtras extras;
  extras.effective_superpixels = {3, 4, 5, 6, 7, 8};
  extras.threshold = 0.6;
  const auto j = nlohmann::json::parse(summary_json(records, extras));
  CHECK(j["cohorts"]["test"]["dice"]["mean"] == 1.0);
  CHECK(j["cohorts"]["test"]["hd95"]["mean"] == 0.0);
  CHECK(j["cohorts"]["test"]["effective_superpixels"]["max"] == 8);
  CHECK(j["cohorts"]["test"]["effective_superpixels"]["per_image"]["vol_s002"] == 5);
  CHECK(j["threshold"] == 0.6);

  // a missed tumour becomes a sentinel row
  auto gate_miss = gate;
  gate_miss[0] = 0.2;
  const auto miss = evaluate_cohort(CohortInputs{&slices, gate_miss, heat}, Cohort::Test, 0.6);
  CHECK(miss[0].hd95_sentinel);
  CHECK(miss[0].dice == 0.0);
  const auto js = nlohmann::json::parse(summary_json(miss));
  CHECK(js["cohorts"]["test"]["hd95_sentinel_count"] == 1);
  CHECK(js["cohorts"]["test"]["hd95_excluding_sentinel"]["count"] == 5);

  slices[2].truth_mask.reset();
  slices[4].truth_mask.reset();
  try {
    evaluate_cohort(in, Cohort::Test, 0.6);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("vol_s002") != std::string::npos);
    CHECK(msg.find("vol_s004") != std::string::npos);
  }
}

TEST_CASE("mean dice is independent of record order") {
  Rng rng(9);
  std::vector<EvalRecord> records;
  for (int i = 0; i < 30; ++i) {
    EvalRecord r;
    r.image_id = "x" + std::to_string(i);
    r.dice = uniform01(rng);
    records.push_back(r);
  }
  const auto a = nlohmann::json::parse(summary_json(records));
  std::reverse(records.begin(), records.end());
  const auto b = nlohmann::json::parse(summary_json(records));
  CHECK(a["cohorts"]["test"]["dice"]["median"] == b["cohorts"]["test"]["dice"]["median"]);
  CHECK(std::abs(a["cohorts"]["test"]["dice"]["mean"].get<double>() - b["cohorts"]["test"]["dice"]["mean"].get<double>()) <= 1e-15);
}

TEST_CASE("describe uses the population standard deviation") {
  const Stats s = describe({1, 2, 3, 4});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
}
