#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "wss/binary_io.hpp"
#include "wss/numerics/adam.hpp"
#include "wss/numerics/checkpoint.hpp"
#include "wss/numerics/layers.hpp"
#include "wss/numerics/ops.hpp"

using namespace wss;
using wss::testing::grad_check;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = true) {
  T::Array v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = uniform(rng, lo, hi);
  return T(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor<float> x({3}, 0.0f);
  auto y = softmax(x, 0);
  for (Index i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows are distributions for arbitrary finite input") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({2, 5, 3, 4}, rng, -30, 30, false);
    auto y = softmax(x, 1);
    for (Index n = 0; n < 2; ++n) {
      for (Index p = 0; p < 12; ++p) {
        double s = 0;
        for (Index c = 0; c < 5; ++c) {
          const double v = y.value()[(n * 5 + c) * 12 + p];
          CHECK(v >= 0);
          s += v;
        }
        CHECK(std::abs(s - 1) < 1e-6);
      }
    }
  }
}

TEST_CASE("1x1 identity kernel reproduces the image") {
  Rng rng(1);
  auto x = random_tensor({2, 3, 5, 6}, rng, 0, 1, false);
  T w({3, 3, 1, 1}, 0.0);
  for (Index c = 0; c < 3; ++c) w.mutable_value()[c * 3 + c] = 1;
  auto y = conv2d(x, w, T{}, 1, 0);
  CHECK(y.shape() == x.shape());
  CHECK((y.value() - x.value()).abs().maxCoeff() == 0.0);
}

TEST_CASE("3x3 conv with centred delta kernel and padding 1 is the identity") {
  Rng rng(2);
  auto x = random_tensor({1, 2, 4, 4}, rng, 0, 1, false);
  T w({2, 2, 3, 3}, 0.0);
  for (Index c = 0; c < 2; ++c) w.mutable_value()[(c * 2 + c) * 9 + 4] = 1;
  auto y = conv2d(x, w, T{}, 1, 1);
  CHECK((y.value() - x.value()).abs().maxCoeff() == 0.0);
}

TEST_CASE("bilinear upsampling preserves constants") {
  Tensor<float> x({1, 2, 3, 5}, 0.25f);
  auto y = upsample_bilinear(x, 2);
  CHECK(y.shape() == Shape{1, 2, 6, 10});
  CHECK((y.value() - 0.25f).abs().maxCoeff() < 1e-7f);
}

TEST_CASE("shape mismatches name the op and shapes") {
  T a({2, 3}, 1.0), b({4}, 1.0);
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
  T x({1, 3, 4, 4}, 1.0), w({2, 2, 3, 3}, 1.0);
  CHECK_THROWS_AS(conv2d(x, w, T{}, 1, 1), ShapeError);
}

TEST_CASE("non-finite forward values raise") {
  T x({2}, -1.0);
  CHECK_THROWS_AS(log(x), NumericError);
}

TEST_CASE("backward of sum gives ones, of sum(p*p) gives 2p") {
  T p({3, 2}, 0.5, true);
  backward(sum(p));
  CHECK((p.grad() - 1.0).abs().maxCoeff() == 0.0);

  T q({2}, T::Array{{1.0, 2.0}}, true);
  backward(sum(q * q));
  CHECK(q.grad()[0] == 2.0);
  CHECK(q.grad()[1] == 4.0);
}

TEST_CASE("backward errors: non-scalar loss, released graph") {
  T p({2}, 1.0, true);
  CHECK_THROWS_AS(backward(p * 2.0), ShapeError);
  auto loss = sum(p * p);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), Error);
}

TEST_CASE("gradients accumulate across calls until reset") {
  T p({2}, T::Array{{1.0, -2.0}}, true);
  auto loss = sum(p * p);
  backward(loss, true);
  backward(loss, true);
  CHECK(p.grad()[0] == 4.0);
  CHECK(p.grad()[1] == -8.0);
  backward(sum(p));
  CHECK(p.grad()[0] == 5.0);
  p.zero_grad();
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng(11);
  const double tol = 1e-4;

  SUBCASE("elementwise and broadcasting arithmetic") {
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({1, 3, 1}, rng, 0.5, 1.5);
    auto r = grad_check([&] { return sum((a * b + a) / b - b * a * a); }, {a, b});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("scalar ops, sigmoid, log, clamp, safe reciprocal") {
    auto a = random_tensor({12}, rng, 0.1, 2.0);
    auto r = grad_check(
        [&] { return sum(log(sigmoid(a) + 0.5) * clamp(a, 0.3, 1.7) + safe_reciprocal(a, 1e-8) - (2.0 - a) * 3.0); },
        {a});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("relu") {
    auto a = random_tensor({20}, rng);
    auto r = grad_check([&] { return sum(relu(a) * a); }, {a});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("softmax, l2 norm, axis sums") {
    auto a = random_tensor({2, 4, 3}, rng, -2, 2);
    auto w = random_tensor({2, 4, 3}, rng, -1, 1, false);
    auto r = grad_check(
        [&] { return sum(l2_norm(softmax(a, 1) * w, 2)) + sum(sum(a * a, 0, false)) * sum(sum(a, 2, true)); },
        {a});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("weighted reductions") {
    auto a = random_tensor({3, 5}, rng);
    auto w = random_tensor({3, 5}, rng, 0, 1, false);
    auto r = grad_check([&] { return weighted_sum(a * a, w) + weighted_mean(a, w); }, {a});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("matmul with transposes, reshape, concat") {
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 5, 4}, rng);
    auto c = random_tensor({2, 3, 5}, rng);
    auto r = grad_check(
        [&] {
          auto ab = matmul(a, b, false, true);                       // [2,3,5]
          auto ba = matmul(b, c, true, true);                        // [2,4,3]
          auto cat = concat(std::vector<T>{ab, c}, 2);               // [2,3,10]
          auto m2 = matmul(reshape(a, {6, 4}), reshape(ba, {6, 4}), true, false);  // [4,4]
          return sum(cat * cat) + sum(m2 * m2) * 0.1 + sum(matmul(c, c, true, false));
        },
        {a, b, c});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("linear") {
    auto x = random_tensor({4, 6}, rng);
    auto w = random_tensor({3, 6}, rng);
    auto bias = random_tensor({3}, rng);
    auto r = grad_check([&] { auto y = linear(x, w, bias); return sum(y * y); }, {x, w, bias});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("conv2d stride 1 and 2, pointwise") {
    auto x = random_tensor({2, 3, 6, 5}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto bias = random_tensor({4}, rng);
    auto w1 = random_tensor({2, 4, 1, 1}, rng);
    auto r = grad_check(
        [&] {
          auto y = conv2d(x, w, bias, 1, 1);
          auto z = conv2d(x, w, T{}, 2, 1);
          auto p = conv2d(y, w1, T{}, 1, 0);
          return sum(y * y) + sum(z) + sum(p * p);
        },
        {x, w, bias, w1});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("upsampling, pooling, global average pooling") {
    auto x = random_tensor({2, 2, 4, 6}, rng);
    auto wts = random_tensor({2, 2, 8, 12}, rng, -1, 1, false);
    auto r = grad_check(
        [&] {
          return sum(upsample_bilinear(x, 2) * wts) + sum(upsample_nearest(x, 2) * wts * 0.5) +
                 sum(max_pool2x2(x) * max_pool2x2(x)) + sum(global_avg_pool(x * x));
        },
        {x});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
  SUBCASE("batch norm, training and eval") {
    auto x = random_tensor({3, 2, 3, 3}, rng);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    T rm({2}, 0.1), rv({2}, 1.3);
    auto wts = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
    auto r = grad_check([&] { return sum(batch_norm2d(x, gamma, beta, rm, rv, true, 0.9, 1e-5) * wts); },
                        {x, gamma, beta});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
    auto r2 = grad_check([&] { auto y = batch_norm2d(x, gamma, beta, rm, rv, false, 0.9, 1e-5); return sum(y * y); },
                         {x, gamma, beta});
    CHECK_MESSAGE(r2.max_rel_error < tol, r2.worst);
  }
  SUBCASE("binary cross-entropy") {
    auto logits = random_tensor({8}, rng, -3, 3);
    T::Array y(8);
    y << 1, 0, 1, 1, 0, 0, 1, 0;
    T target({8}, y);
    auto r = grad_check([&] { return binary_cross_entropy(sigmoid(logits), target); }, {logits});
    CHECK_MESSAGE(r.max_rel_error < tol, r.worst);
  }
}

TEST_CASE("batch norm in eval mode is a fixed affine map; training updates running stats") {
  BatchNorm2d<float> bn(2);
  Rng rng(3);
  Tensor<float>::Array v(2 * 2 * 3 * 3);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(uniform(rng, 0, 4));
  Tensor<float> x({2, 2, 3, 3}, v);
  auto before = bn.running_mean.value();
  (void)bn(x, true);
  CHECK((bn.running_mean.value() - before).abs().maxCoeff() > 0);
  auto y1 = bn(x, false);
  auto y2 = bn(x, false);
  CHECK((y1.value() - y2.value()).abs().maxCoeff() == 0.0f);
}

TEST_CASE("forward and backward are bit-reproducible") {
  auto run = [] {
    Rng rng(5);
    ConvBnRelu<float> block(3, 4, rng);
    Linear<float> head(4, 1, rng);
    Tensor<float>::Array v(2 * 3 * 8 * 8);
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(uniform(rng, 0, 1));
    Tensor<float> x({2, 3, 8, 8}, v);
    auto loss = sum(head(global_avg_pool(block(x, true))));
    backward(loss);
    return std::make_pair(loss.item(), block.conv.weight.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK((g1 - g2).abs().maxCoeff() == 0.0f);
}

TEST_CASE("adam: zero gradient and zero decay leaves parameters unchanged") {
  T p({3}, T::Array{{1.0, -2.0, 0.5}}, true);
  NamedTensors<double> params;
  params.add("p", p);
  Adam<double> opt(params, {.learning_rate = 0.1, .weight_decay = 0.0});
  backward(sum(p) * 0.0);
  opt.step();
  CHECK(p.value()[0] == 1.0);
  CHECK(p.value()[1] == -2.0);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: one step on a positive gradient decreases the parameter") {
  T p({1}, 1.0, true);
  NamedTensors<double> params;
  params.add("p", p);
  Adam<double> opt(params, {.learning_rate = 0.1});
  backward(sum(p));
  opt.step();
  CHECK(p.value()[0] < 1.0);
}

TEST_CASE("adam: 100 steps on (p-3)^2 follow the scalar recurrence") {
  // Scalar recurrence evaluated independently of the optimizer class.
  double ref = 0, m = 0, v = 0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2 * (ref - 3);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(ref == doctest::Approx(2.9806554375278123).epsilon(1e-12));

  T p({1}, 0.0, true);
  NamedTensors<double> params;
  params.add("p", p);
  Adam<double> opt(params, {.learning_rate = 0.1, .weight_decay = 0.0});
  for (int t = 0; t < 100; ++t) {
    opt.zero_grad();
    auto d = p + (-3.0);
    backward(sum(d * d));
    opt.step();
  }
  CHECK(std::abs(p.value()[0] - 3) < 0.1);
  CHECK(p.value()[0] == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("adam: decoupled weight decay shrinks parameters without touching moments") {
  T p({1}, 2.0, true);
  NamedTensors<double> params;
  params.add("p", p);
  Adam<double> opt(params, {.learning_rate = 0.01, .weight_decay = 0.1});
  backward(sum(p) * 0.0);
  opt.step();
  CHECK(p.value()[0] == doctest::Approx(2.0 * (1 - 0.01 * 0.1)).epsilon(1e-15));
}

TEST_CASE("adam: missing gradient names the parameter") {
  T p({1}, 1.0, true);
  NamedTensors<double> params;
  params.add("head.weight", p);
  Adam<double> opt(params, {});
  try {
    opt.step();
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
  }
}

TEST_CASE("checkpoint container layout is exact") {
  Checkpoint ck;
  ck["b"] = StoredTensor{{2}, {1.0f, -2.0f}};
  ck["a"] = StoredTensor{{}, {0.5f}};
  const auto bytes = encode_checkpoint(ck);
  std::vector<unsigned char> expect = {'W', 'S', 'S', 'C', 'K', 'P', 'T', '1',
                                       1, 0, 0, 0, 'a', 0, 0, 0, 0, 0x00, 0x00, 0x00, 0x3f,
                                       1, 0, 0, 0, 'b', 1, 0, 0, 0, 2, 0, 0, 0,
                                       0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  REQUIRE(bytes.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(static_cast<unsigned char>(bytes[i]) == expect[i]);
  auto back = decode_checkpoint(bytes);
  CHECK(back.at("b").values == std::vector<float>{1.0f, -2.0f});
  CHECK(back.at("a").shape.empty());
}

TEST_CASE("checkpoint restore validates names and shapes") {
  Rng rng(9);
  Conv2d<float> conv(2, 3, 3, rng);
  NamedTensors<float> params;
  conv.collect("c", params);
  Checkpoint ck;
  store(ck, params, "gen.");
  auto path = std::filesystem::temp_directory_path() / "wss_test_ckpt.bin";
  write_checkpoint(path, ck);
  Conv2d<float> other(2, 3, 3, rng);
  NamedTensors<float> dst;
  other.collect("c", dst);
  restore(read_checkpoint(path), dst, "gen.");
  CHECK((other.weight.value() - conv.weight.value()).abs().maxCoeff() == 0.0f);
  Conv2d<float> wrong(2, 4, 3, rng);
  NamedTensors<float> bad;
  wrong.collect("c", bad);
  CHECK_THROWS_AS(restore(ck, bad, "gen."), ValidationError);
  CHECK_THROWS_AS(decode_checkpoint(std::vector<char>{'W', 'S', 'S'}), ValidationError);
  std::filesystem::remove(path);
}
