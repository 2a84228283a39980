#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "wss/binary_io.hpp"
#include "wss/dataio/preprocess.hpp"
#include "wss/dataio/synth.hpp"
#include "wss/error.hpp"
#include "wss/superpix/train.hpp"

using namespace wss;
using wss::testing::grad_check;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = 0, double hi = 1, bool grad = false) {
  T::Array v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = uniform(rng, lo, hi);
  return T(std::move(shape), std::move(v), grad);
}

T random_simplex(Shape shape, int axis, Rng& rng) {
  NoGradGuard ng;
  return softmax(random_tensor(shape, rng, -3, 3), axis).detach();
}

SeedMap random_seeds(Index h, Index w, Rng& rng) {
  Eigen::ArrayXd heat(h * w);
  for (Index i = 0; i < heat.size(); ++i) heat[i] = uniform01(rng);
  return extract_seeds(heat, h, w);
}

/// Direct per-pixel evaluation of the reconstruction loss for one image.
double loop_spixel_loss(const T& F, const T& Q, Index n, double m) {
  const Index C = F.dim(1), Ns = Q.dim(1), H = F.dim(2), W = F.dim(3), P = H * W;
  auto f = [&](Index c, Index p) { return F.value()[(n * C + c) * P + p]; };
  auto q = [&](Index s, Index p) { return Q.value()[(n * Ns + s) * P + p]; };
  std::vector<std::vector<double>> u(Ns, std::vector<double>(C, 0.0)), l(Ns, std::vector<double>(2, 0.0));
  for (Index s = 0; s < Ns; ++s) {
    double mass = 0;
    for (Index p = 0; p < P; ++p) mass += q(s, p);
    if (mass < kEmptySuperpixel) continue;
    for (Index p = 0; p < P; ++p) {
      for (Index c = 0; c < C; ++c) u[s][c] += f(c, p) * q(s, p) / mass;
      l[s][0] += static_cast<double>(p / W + 1) * q(s, p) / mass;
      l[s][1] += static_cast<double>(p % W + 1) * q(s, p) / mass;
    }
  }
  double total = 0;
  for (Index p = 0; p < P; ++p) {
    double a = 0, b = 0;
    for (Index c = 0; c < C; ++c) {
      double r = f(c, p);
      for (Index s = 0; s < Ns; ++s) r -= u[s][c] * q(s, p);
      a += r * r;
    }
    const double coord[2] = {static_cast<double>(p / W + 1), static_cast<double>(p % W + 1)};
    for (int k = 0; k < 2; ++k) {
      double r = coord[k];
      for (Index s = 0; s < Ns; ++s) r -= l[s][k] * q(s, p);
      b += r * r;
    }
    total += std::sqrt(a) + m * std::sqrt(b);
  }
  return total;
}

SpixelArch tiny_arch(Index superpixels) {
  SpixelArch a;
  a.superpixels = superpixels;
  a.generator_widths = {4, 8};
  a.clusterer_widths = {4, 8};
  return a;
}

std::vector<SliceSample> synthetic_slices(std::size_t volumes, Index size, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.count = volumes;
  cfg.extent = 32;
  cfg.depth = 12;
  cfg.tumor_probability = 1.0;
  cfg.seed = seed;
  std::vector<SliceSample> out;
  Rng rng(seed);
  for (const auto& v : synth_generate(cfg)) {
    auto s = volume_to_slices(preprocess_volume(v), SliceOptions{2, size, CropMode::Center}, rng);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

/// Seeds from the truth mask blurred by distance to its centroid; stands in for RISE output.
std::vector<SeedMap> mask_seeds(const std::vector<SliceSample>& slices) {
  std::vector<SeedMap> out;
  for (const auto& s : slices) {
    Eigen::ArrayXd heat(s.pixels());
    for (Index p = 0; p < heat.size(); ++p) heat[p] = (*s.truth_mask)[p] + 1e-3 * static_cast<double>(p % 7);
    out.push_back(extract_seeds(heat, s.size, s.size));
  }
  return out;
}

}  // namespace

TEST_CASE("one-hot associations select the cluster score") {
  T Q({1, 2, 1, 2}, T::Array((T::Array(4) << 1, 0, 0, 1).finished()));
  T R({1, 2}, T::Array((T::Array(2) << 0.9, 0.1).finished()));
  const T h = assemble_heatmap(Q, R);
  CHECK(h.value()[0] == doctest::Approx(0.9));
  CHECK(h.value()[1] == doctest::Approx(0.1));
}

TEST_CASE("uniform associations give 1/N_S everywhere") {
  Rng rng(1);
  const T Q({2, 8, 3, 3}, 1.0 / 8);
  const T R = random_simplex({2, 8}, 1, rng);
  for (double v : assemble_heatmap(Q, R).value()) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-12));
}

TEST_CASE("heat map is a convex combination of the cluster scores and permutation invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Index Ns = 2 + static_cast<Index>(uniform_index(rng, 7));
    const T Q = random_simplex({1, Ns, 4, 5}, 1, rng);
    const T R = random_simplex({1, Ns}, 1, rng);
    const T h = assemble_heatmap(Q, R);
    const double lo = R.value().minCoeff(), hi = R.value().maxCoeff();
    for (double v : h.value()) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
    std::vector<Index> perm(static_cast<std::size_t>(Ns));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    T::Array qp(Q.numel()), rp(Ns);
    for (Index s = 0; s < Ns; ++s) {
      const Index t = perm[static_cast<std::size_t>(s)];
      qp.segment(s * 20, 20) = Q.value().segment(t * 20, 20);
      rp[s] = R.value()[t];
    }
    const T hp = assemble_heatmap(T(Q.shape(), qp), T(R.shape(), rp));
    CHECK((hp.value() - h.value()).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("assemble_heatmap rejects mismatched shapes") {
  CHECK_THROWS_AS(assemble_heatmap(T({1, 3, 2, 2}), T({1, 4})), ShapeError);
  CHECK_THROWS_AS(assemble_heatmap(T({2, 3, 2, 2}), T({1, 3})), ShapeError);
}

TEST_CASE("spixel loss of a two-pixel image with one superpixel") {
  const T F({1, 1, 1, 2}, T::Array((T::Array(2) << 0, 1).finished()));
  const T Q({1, 1, 1, 2}, 1.0);
  CHECK(spixel_loss(F, Q, 3.0 / 160).item() == doctest::Approx(1.01875).epsilon(1e-12));
}

TEST_CASE("identity partition reconstructs exactly") {
  Rng rng(3);
  const T F = random_tensor({1, 4, 2, 3}, rng);
  T::Array q = T::Array::Zero(6 * 6);
  for (Index s = 0; s < 6; ++s) q[s * 6 + s] = 1;
  CHECK(spixel_loss(F, T({1, 6, 2, 3}, q), 3.0 / 160).item() <= 1e-12);
}

TEST_CASE("constant image with one active superpixel leaves only the location term") {
  const Index H = 3, W = 4;
  const T F({1, 4, H, W}, 0.7);
  T::Array q = T::Array::Zero(2 * H * W);
  q.head(H * W).setOnes();
  const double m = 0.25;
  double expected = 0;
  for (Index y = 1; y <= H; ++y) {
    for (Index x = 1; x <= W; ++x) expected += std::hypot(y - 2.0, x - 2.5);
  }
  CHECK(spixel_loss(F, T({1, 2, H, W}, q), m).item() == doctest::Approx(m * expected).epsilon(1e-12));
}

TEST_CASE("spixel loss matches a per-pixel loop on random instances") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const T F = random_tensor({2, 4, 5, 6}, rng);
    const T Q = random_simplex({2, 5, 5, 6}, 1, rng);
    const double m = uniform(rng, 0.01, 1.0);
    const double oracle = (loop_spixel_loss(F, Q, 0, m) + loop_spixel_loss(F, Q, 1, m)) / 2;
    CHECK(spixel_loss(F, Q, m).item() == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("printed form drops the residual") {
  const T F({1, 1, 1, 2}, T::Array((T::Array(2) << 0, 1).finished()));
  const T Q({1, 1, 1, 2}, 1.0);
  // reconstructions: intensity 0.5 at both pixels, location (1, 1.5) at both
  const double expected = 2 * 0.5 + 3.0 / 160 * 2 * std::hypot(1.0, 1.5);
  CHECK(spixel_loss(F, Q, 3.0 / 160, SpixelLossForm::Printed).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("empty superpixels contribute nothing") {
  Rng rng(5);
  const T F = random_tensor({1, 4, 3, 3}, rng);
  const T Q1 = random_simplex({1, 3, 3, 3}, 1, rng);
  T::Array padded = T::Array::Zero(5 * 9);
  padded.head(27) = Q1.value();
  CHECK(spixel_loss(F, T({1, 5, 3, 3}, padded), 0.1).item() ==
        doctest::Approx(spixel_loss(F, Q1, 0.1).item()).epsilon(1e-12));
}

TEST_CASE("non-finite associations name the superpixel") {
  T::Array q = T::Array::Constant(3 * 4, 1.0 / 3);
  q[2 * 4 + 1] = std::numeric_limits<double>::quiet_NaN();
  try {
    spixel_loss(T({1, 4, 2, 2}, 0.5), T({1, 3, 2, 2}, q), 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("superpixel 2") != std::string::npos);
  }
}

TEST_CASE("seed loss at H = 0.5 is log 2") {
  SeedMap s{1, 2, MaskArray::Zero(2), MaskArray::Zero(2)};
  s.positive[0] = 1;
  s.negative[1] = 1;
  CHECK(seed_loss(T({1, 1, 2}, 0.5), {s}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("perfect seeds give a loss near zero") {
  SeedMap s{1, 2, MaskArray::Zero(2), MaskArray::Zero(2)};
  s.positive[0] = 1;
  s.negative[1] = 1;
  const double loss = seed_loss(T({1, 1, 2}, T::Array((T::Array(2) << 1, 0).finished())), {s}).item();
  CHECK(loss >= 0);
  CHECK(loss <= 1.1e-7);
}

TEST_CASE("seed loss matches a scalar loop") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const T heat = random_tensor({3, 6, 5}, rng);
    std::vector<SeedMap> seeds;
    for (int i = 0; i < 3; ++i) seeds.push_back(random_seeds(6, 5, rng));
    double oracle = 0;
    for (Index n = 0; n < 3; ++n) {
      const SeedMap& s = seeds[static_cast<std::size_t>(n)];
      double acc = 0, count = 0;
      for (Index p = 0; p < 30; ++p) {
        const double h = std::clamp(heat.value()[n * 30 + p], 1e-7, 1 - 1e-7);
        const double hn = std::clamp(1 - heat.value()[n * 30 + p], 1e-7, 1 - 1e-7);
        if (s.positive[p]) acc += std::log(h), ++count;
        if (s.negative[p]) acc += std::log(hn), ++count;
      }
      oracle += -acc / count / 3;
    }
    CHECK(std::abs(seed_loss(heat, seeds).item() - oracle) <= 1e-6);
  }
}

TEST_CASE("seed loss rejects an image without seeds") {
  SeedMap s{1, 2, MaskArray::Zero(2), MaskArray::Zero(2)};
  CHECK_THROWS_AS(seed_loss(T({1, 1, 2}, 0.5), {s}), ValidationError);
}

TEST_CASE("combined loss") {
  const T F({1, 1, 1, 2}, T::Array((T::Array(2) << 0, 1).finished()));
  const T Q({1, 1, 1, 2}, 1.0);
  const T R({1, 1}, 0.5);  // H = 0.5 at both pixels
  SeedMap s{1, 2, MaskArray::Zero(2), MaskArray::Zero(2)};
  s.positive[0] = 1;
  s.negative[1] = 1;
  SpixelLossConfig cfg;
  const auto l = combined_loss(F, Q, R, {s}, cfg);
  CHECK(l.total.item() == doctest::Approx(1.01875 + 50 * std::log(2.0)).epsilon(1e-12));
  CHECK(l.total.item() == doctest::Approx(35.67).epsilon(5e-4));
  cfg.alpha = 0;
  const auto l0 = combined_loss(F, Q, R, {s}, cfg);
  CHECK(l0.total.item() == l0.spixel.item());
  cfg.m = 0;
  CHECK_THROWS_AS(combined_loss(F, Q, R, {s}, cfg), ValidationError);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(7);
  const double tol = 1e-4;
  const T F = random_tensor({2, 4, 8, 8}, rng);
  const std::vector<SeedMap> seeds{random_seeds(8, 8, rng), random_seeds(8, 8, rng)};
  T logits_q = random_tensor({2, 4, 8, 8}, rng, -2, 2, true);
  T logits_r = random_tensor({2, 4}, rng, -2, 2, true);
  SUBCASE("spixel loss wrt associations, both forms") {
    for (auto form : {SpixelLossForm::Reconstruction, SpixelLossForm::Printed}) {
      auto r = grad_check([&] { return spixel_loss(F, softmax(logits_q, 1), 3.0 / 160, form); }, {logits_q});
      CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
    }
  }
  SUBCASE("seed loss wrt heat map") {
    T h = random_tensor({2, 8, 8}, rng, 0.05, 0.95, true);
    auto r = grad_check([&] { return seed_loss(h, seeds); }, {h});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("combined loss wrt Q and R logits") {
    auto r = grad_check(
        [&] {
          return combined_loss(F, softmax(logits_q, 1), softmax(logits_r, 1), seeds, SpixelLossConfig{}).total;
        },
        {logits_q, logits_r});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("combined loss wrt generator and clusterer parameters") {
    SpixelModel<double> model(tiny_arch(4), 8);
    std::vector<T> params;
    for (const auto& [_, p] : model.parameters().items) params.push_back(p);
    auto r = grad_check(
        [&] {
          const auto out = model.forward(F, true);
          return combined_loss(F, out.Q, out.R, seeds, SpixelLossConfig{}).total;
        },
        params, 1e-5, 3);
    MESSAGE("checked " << r.checked << " parameter entries");
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
}

TEST_CASE("network outputs are normalized and complementary") {
  SpixelModel<float> model(tiny_arch(6), 9);
  Rng rng(10);
  Tensor<float>::Array x(3 * 4 * 16 * 16);
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(uniform01(rng));
  const auto out = model.forward(Tensor<float>({3, 4, 16, 16}, x), false);
  CHECK(out.Q.shape() == Shape{3, 6, 16, 16});
  CHECK(out.heat.shape() == Shape{3, 16, 16});
  for (Index n = 0; n < 3; ++n) {
    for (Index p = 0; p < 256; ++p) {
      double s = 0;
      for (Index k = 0; k < 6; ++k) s += out.Q.value()[(n * 6 + k) * 256 + p];
      CHECK(std::abs(s - 1) <= 1e-5);
    }
    CHECK(std::abs(out.R.value().segment(n * 6, 6).sum() - 1.0f) <= 1e-5);
  }
  for (float h : out.heat.value()) {
    CHECK(h >= 0.0f);
    CHECK(h <= 1.0f);
    CHECK((1.0f - h) + h == 1.0f);
  }
}

TEST_CASE("generator requires extents divisible by its pooling depth") {
  SpixelModel<float> model(tiny_arch(4), 1);
  CHECK_THROWS_AS(model.forward(Tensor<float>({1, 4, 10, 10}, 0.5f), false), ShapeError);
}

TEST_CASE("effective superpixel count") {
  Eigen::ArrayXd q = Eigen::ArrayXd::Zero(5 * 6);
  const int owner[6] = {0, 0, 3, 3, 4, 0};
  for (Index p = 0; p < 6; ++p) q[owner[p] * 6 + p] = 1;
  CHECK(effective_superpixel_count(q, 5) == 3);
  CHECK(effective_superpixel_count(Eigen::ArrayXd::Constant(4 * 9, 0.25), 4) == 1);
}

TEST_CASE("ablation zero head gives 0.5 everywhere") {
  AblationModel<float> model(4, {4, 8}, 2);
  model.zero_head();
  for (float v : model.forward(Tensor<float>({2, 4, 8, 8}, 0.3f), false).value()) CHECK(v == 0.5f);
}

TEST_CASE("checkpoints round-trip both models") {
  SpixelModel<float> model(tiny_arch(4), 11);
  const Tensor<float> x({2, 4, 8, 8}, 0.4f);
  const auto before = model.forward(x, false).heat.value();
  const Checkpoint ckpt = decode_checkpoint(encode_checkpoint(model.to_checkpoint()));
  bool gen = false, clu = false;
  for (const auto& [name, _] : ckpt) {
    gen |= name.rfind("gen.", 0) == 0;
    clu |= name.rfind("clu.", 0) == 0;
  }
  CHECK(gen);
  CHECK(clu);
  auto copy = SpixelModel<float>::from_checkpoint(ckpt);
  CHECK((copy.forward(x, false).heat.value() == before).all());
  CHECK(copy.arch().superpixels == 4);

  AblationModel<float> abl(4, {4, 8}, 12);
  auto abl_copy = AblationModel<float>::from_checkpoint(decode_checkpoint(encode_checkpoint(abl.to_checkpoint())));
  CHECK((abl_copy.forward(x, false).value() == abl.forward(x, false).value()).all());
}

TEST_CASE("two epochs on 64 images give a bit-identical trace") {
  const auto slices = synthetic_slices(8, 16, 21);
  REQUIRE(slices.size() == 64);
  const auto seeds = mask_seeds(slices);
  SpixelTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 5;
  std::vector<std::pair<int, Checkpoint>> ckpts_a, ckpts_b;
  SpixelModel<float> a(tiny_arch(8), 3), b(tiny_arch(8), 3);
  const auto ra = train_superpixel(a, slices, seeds, cfg, {}, [&](int e, const Checkpoint& c) { ckpts_a.emplace_back(e, c); });
  const auto rb = train_superpixel(b, slices, seeds, cfg, {}, [&](int e, const Checkpoint& c) { ckpts_b.emplace_back(e, c); });
  CHECK(ra.step_losses == rb.step_losses);
  CHECK(ra.step_losses.size() == 8);
  REQUIRE(ckpts_a.size() == 1);
  CHECK(ckpts_a[0].first == 2);
  CHECK(encode_checkpoint(ckpts_a[0].second) == encode_checkpoint(ckpts_b[0].second));
  CHECK(spixel_log_csv(ra.log).rfind("epoch,loss,spixel_loss,seed_loss,lr\n1,", 0) == 0);
}

TEST_CASE("training lowers the combined loss and halves the rate on schedule") {
  const auto slices = synthetic_slices(8, 16, 22);
  const auto seeds = mask_seeds(slices);
  SpixelTrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.halve_every = 4;
  cfg.adam.learning_rate = 2e-3;
  std::vector<int> boundaries;
  SpixelModel<float> model(tiny_arch(8), 4);
  const auto r = train_superpixel(model, slices, seeds, cfg, {}, [&](int e, const Checkpoint&) { boundaries.push_back(e); });
  REQUIRE(r.log.size() == 10);
  MESSAGE("loss epoch 1 " << r.log[0].loss << " epoch 10 " << r.log[9].loss);
  CHECK(r.log[9].loss < r.log[0].loss);
  CHECK(r.log[0].lr == doctest::Approx(2e-3));
  CHECK(r.log[4].lr == doctest::Approx(1e-3));
  CHECK(r.log[8].lr == doctest::Approx(5e-4));
  CHECK(boundaries == std::vector<int>{4, 8, 10});

  AblationModel<float> abl(4, {4, 8}, 4);
  const auto ra = train_ablation(abl, slices, seeds, cfg);
  CHECK(ra.log[9].loss < ra.log[0].loss);
  CHECK(ra.log[0].spixel == 0.0);
}

TEST_CASE("a non-finite image aborts training with the last checkpoint restored") {
  auto slices = synthetic_slices(2, 16, 23);
  const auto seeds = mask_seeds(slices);
  slices[3].image[5] = std::numeric_limits<float>::quiet_NaN();
  SpixelModel<float> model(tiny_arch(4), 6);
  const Checkpoint initial = model.to_checkpoint();
  SpixelTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = slices.size();
  CHECK_THROWS_AS(train_superpixel(model, slices, seeds, cfg), DivergenceError);
  const Checkpoint after = model.to_checkpoint();
  for (const auto& [name, t] : initial) CHECK(after.at(name).values == t.values);
}

TEST_CASE("inference helpers and heat map exports") {
  const auto slices = synthetic_slices(1, 16, 24);
  SpixelModel<float> model(tiny_arch(4), 7);
  const HeatmapSet set = spixel_heatmaps(model, slices, 5);
  REQUIRE(set.heat.size() == slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    CHECK(set.effective[i] >= 1);
    CHECK(set.effective[i] <= 4);
    CHECK(set.heat[i].size() == 256);
  }
  const auto dir = std::filesystem::temp_directory_path() / "wss_superpix_test";
  std::filesystem::create_directories(dir);
  write_heatmap_f32(dir / "h.f32", set.heat[0]);
  const auto bytes = read_file(dir / "h.f32");
  REQUIRE(bytes.size() == 256 * 4);
  float first;
  std::memcpy(&first, bytes.data(), 4);
  CHECK(first == static_cast<float>(set.heat[0][0]));
  write_heatmap_png16(dir / "h.png", set.heat[0], 16, 16);
  const auto png = read_file(dir / "h.png");
  REQUIRE(png.size() > 33);
  CHECK(png[24] == 16);  // IHDR bit depth
  CHECK(png[25] == 0);   // grayscale
  std::filesystem::remove_all(dir);
}
