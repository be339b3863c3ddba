#include <cmath>
#include <random>

#include "doctest.h"
#include "mdseg/gradcheck.hpp"
#include "mdseg/layers.hpp"
#include "mdseg/model.hpp"
#include "oracles.hpp"

using namespace mdseg;

namespace {

std::span<const double> sp(const std::vector<double>& v) { return {v.data(), v.size()}; }

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.storage()[i] - b.storage()[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor rejects zero extents and mismatched data") {
  CHECK_THROWS_AS(Tensor<float>({1, 0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>({1, 2, 2}, std::vector<float>(3)), DimensionError);
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
}

TEST_CASE("conv2d: pointwise scaling, 2x2 diagonal kernel, zero kernel") {
  Tensor<double> ones({1, 3, 3}, 1.0);
  Tensor<double> k2({1, 1, 1, 1}, 2.0);
  std::vector<double> b0{0.0};
  auto y = conv2d_forward<double>(ones, k2, sp(b0), 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 3, 3});
  for (double v : y.storage()) CHECK(v == 2.0);

  Tensor<double> x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> diag({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  auto z = conv2d_forward<double>(x, diag, sp(b0), 1, 0);
  CHECK(z.shape() == std::vector<int>{1, 1, 1});
  CHECK(z.storage()[0] == 5.0);

  std::mt19937_64 rng(3);
  auto r = oracle::random_tensor(rng, {2, 5, 5});
  Tensor<double> zero({3, 2, 3, 3}, 0.0);
  std::vector<double> b{0.5, -1.25, 2.0};
  auto c = conv2d_forward<double>(r, zero, sp(b), 1, 1);
  for (int o = 0; o < 3; ++o)
    for (double v : c.plane(o)) CHECK(v == b[o]);
}

TEST_CASE("conv2d matches nested-loop oracle across strides and padding") {
  std::mt19937_64 rng(11);
  struct Case { int ci, co, h, w, k, s, p; };
  for (const Case c : {Case{1, 2, 7, 7, 3, 1, 1}, Case{3, 4, 8, 6, 3, 1, 0}, Case{2, 3, 9, 9, 3, 2, 1},
                       Case{2, 2, 6, 6, 1, 1, 0}, Case{1, 1, 5, 8, 2, 1, 0}}) {
    auto x = oracle::random_tensor(rng, {c.ci, c.h, c.w});
    auto w = oracle::random_tensor(rng, {c.co, c.ci, c.k, c.k});
    std::vector<double> b(c.co);
    for (auto& v : b) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    auto got = conv2d_forward<double>(x, w, sp(b), c.s, c.p);
    CHECK(max_abs_diff(got, oracle::conv(x, w, b, c.s, c.p)) < 1e-12);
  }
}

TEST_CASE("conv2d errors") {
  Tensor<double> x({2, 5, 5});
  Tensor<double> w({1, 3, 3, 3});
  std::vector<double> b{0};
  CHECK_THROWS_AS(conv2d_forward<double>(x, w, sp(b), 1, 0), DimensionError);
  Tensor<double> w2({1, 2, 2, 2});
  CHECK_THROWS_AS(conv2d_forward<double>(x, w2, sp(b), 2, 0), ConfigError);
}

TEST_CASE("conv2d backward: zero upstream, 1x1 weight gradient, finite differences") {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor(rng, {1, 4, 4});
  auto w = oracle::random_tensor(rng, {2, 1, 3, 3});
  std::vector<double> b{0.1, -0.2};
  auto y = conv2d_forward<double>(x, w, sp(b), 1, 1);
  Tensor<double> zero(y.shape(), 0.0);
  auto g0 = conv2d_backward<double>(x, w, zero, 1, 1);
  for (double v : g0.weights.storage()) CHECK(v == 0.0);
  for (double v : g0.bias) CHECK(v == 0.0);
  for (double v : g0.input.storage()) CHECK(v == 0.0);

  Tensor<double> k({1, 1, 1, 1}, 0.7);
  std::vector<double> b1{0.0};
  auto g = oracle::random_tensor(rng, {1, 4, 4});
  auto g1 = conv2d_backward<double>(x, k, g, 1, 0);
  double expect = 0;
  for (std::size_t i = 0; i < x.size(); ++i) expect += x.storage()[i] * g.storage()[i];
  CHECK(g1.weights.storage()[0] == doctest::Approx(expect).epsilon(1e-12));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto rep = grad_check(LayerSpec::conv(1, 2, 3, 1, 1), seed, 1e-3, {1e-4, 4, 256});
    CHECK_MESSAGE(rep.pass, describe(rep));
  }
}

TEST_CASE("maxpool forward, tie-break and backward routing") {
  Tensor<double> x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto r = maxpool_forward<double>(x, 2, 2);
  CHECK(r.output.storage() == std::vector<double>{4});
  CHECK(r.argmax == std::vector<std::int32_t>{3});

  Tensor<double> c({1, 4, 4}, 7.0);
  auto rc = maxpool_forward<double>(c, 2, 2);
  CHECK(rc.argmax == std::vector<std::int32_t>{0, 2, 8, 10});
  for (double v : rc.output.storage()) CHECK(v == 7.0);

  std::mt19937_64 rng(9);
  auto big = oracle::random_tensor(rng, {2, 6, 6});
  CHECK(max_abs_diff(maxpool_forward<double>(big, 2, 2).output, oracle::maxpool(big, 2, 2)) == 0.0);

  Tensor<double> g({1, 1, 1}, 2.5);
  auto gi = maxpool_backward<double>(r.argmax, g, x.shape());
  CHECK(gi.storage() == std::vector<double>{0, 0, 0, 2.5});
  Tensor<double> gz({1, 1, 1}, 0.0);
  const auto gzi = maxpool_backward<double>(r.argmax, gz, x.shape());
  for (double v : gzi.storage()) CHECK(v == 0.0);

  CHECK_THROWS_AS(maxpool_forward<double>(x, 3, 1), DimensionError);
}

TEST_CASE("maxpool one-hot upstream moves exactly one unit per window") {
  std::mt19937_64 rng(21);
  auto x = oracle::random_tensor(rng, {3, 8, 8});
  auto r = maxpool_forward<double>(x, 2, 2);
  for (std::size_t k = 0; k < r.output.size(); ++k) {
    Tensor<double> g(r.output.shape(), 0.0);
    g.storage()[k] = 1.0;
    auto gi = maxpool_backward<double>(r.argmax, g, x.shape());
    double sum = 0;
    int nonzero = 0;
    for (double v : gi.storage()) {
      sum += v;
      nonzero += v != 0;
    }
    CHECK(sum == 1.0);
    CHECK(nonzero == 1);
  }
}

TEST_CASE("deconv2d forward: scatter oracle, bias-only, 1x1 transpose") {
  Tensor<double> v({1, 1, 1}, std::vector<double>{3.0});
  Tensor<double> k({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  std::vector<double> b0{0.0};
  auto y = deconv2d_forward<double>(v, k, sp(b0), 2);
  CHECK(y.storage() == std::vector<double>{3, 6, 9, 12});

  std::mt19937_64 rng(4);
  Tensor<double> zin({2, 3, 3}, 0.0);
  auto w = oracle::random_tensor(rng, {2, 3, 4, 4});
  std::vector<double> b{0.5, -0.5, 1.5};
  auto yz = deconv2d_forward<double>(zin, w, sp(b), 2);
  CHECK(yz.shape() == std::vector<int>{3, 8, 8});
  for (int o = 0; o < 3; ++o)
    for (double val : yz.plane(o)) CHECK(val == b[o]);

  auto x = oracle::random_tensor(rng, {2, 5, 4});
  auto w1 = oracle::random_tensor(rng, {2, 3, 1, 1});
  Tensor<double> wt({3, 2, 1, 1});
  for (int i = 0; i < 2; ++i)
    for (int o = 0; o < 3; ++o) wt.storage()[o * 2 + i] = w1.storage()[i * 3 + o];
  CHECK(max_abs_diff(deconv2d_forward<double>(x, w1, sp(b), 1), conv2d_forward<double>(x, wt, sp(b), 1, 0)) < 1e-12);

  for (int s : {1, 2, 3}) {
    auto xi = oracle::random_tensor(rng, {2, 4, 5});
    auto wi = oracle::random_tensor(rng, {2, 3, 4, 3});
    CHECK(max_abs_diff(deconv2d_forward<double>(xi, wi, sp(b), s), oracle::deconv(xi, wi, b, s)) < 1e-12);
  }
}

TEST_CASE("deconv output extent for every default-preset deconv") {
  for (const auto& l : ArchPreset::default_preset().head) {
    if (l.kind != LayerKind::Deconv) continue;
    for (int in : {4, 8, 16, 32}) {
      Tensor<double> x({l.in_channels, in, in}, 0.0);
      Tensor<double> w(l.weight_shape(), 0.0);
      std::vector<double> b(l.out_channels, 0.0);
      auto y = deconv2d_forward<double>(x, w, sp(b), l.stride);
      CHECK(y.dim(1) == (in - 1) * l.stride + l.kernel_h);
      CHECK(l.output_extent(in) == (in - 1) * l.stride + l.kernel_h - 2 * l.padding);
    }
  }
}

TEST_CASE("deconv backward: zero upstream and adjoint identity") {
  std::mt19937_64 rng(8);
  auto x = oracle::random_tensor(rng, {2, 4, 4});
  auto w = oracle::random_tensor(rng, {2, 3, 4, 4});
  auto y = deconv2d_forward<double>(x, w, sp(std::vector<double>(3, 0.0)), 2);
  Tensor<double> gz(y.shape(), 0.0);
  auto g0 = deconv2d_backward<double>(x, w, gz, 2);
  for (double v : g0.weights.storage()) CHECK(v == 0.0);
  for (double v : g0.input.storage()) CHECK(v == 0.0);

  // grad_input equals the strided convolution of grad_out with the same kernel read as (C_out=in, C_in=out).
  auto g = oracle::random_tensor(rng, y.shape());
  auto gi = deconv2d_backward<double>(x, w, g, 2).input;
  auto conv = conv2d_forward<double>(g, w, sp(std::vector<double>(2, 0.0)), 2, 0);
  CHECK(max_abs_diff(gi, conv) < 1e-12);
}

TEST_CASE("relu and relu backward") {
  Tensor<double> x({1, 1, 3}, std::vector<double>{-1, 0, 2});
  CHECK(relu(x).storage() == std::vector<double>{0, 0, 2});
  Tensor<double> g({1, 1, 3}, std::vector<double>{5, 6, 7});
  CHECK(relu_backward(x, g).storage() == std::vector<double>{0, 0, 7});
  Tensor<double> pos({1, 2, 2}, std::vector<double>{0.1, 2, 3, 4});
  CHECK(relu(pos) == pos);
}

TEST_CASE("softmax cross entropy") {
  Tensor<double> eq({2, 1, 1}, 0.0);
  Mask lab(1, 1, 0);
  auto r = softmax_cross_entropy(eq, lab);
  CHECK(r.prob.storage()[0] == doctest::Approx(0.5));
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor<double> gap({2, 1, 1}, std::vector<double>{-400.0, 400.0});
  Mask one(1, 1, 1);
  auto rg = softmax_cross_entropy(gap, one);
  CHECK(rg.loss >= 0.0);
  CHECK(rg.loss < 1e-12);

  std::mt19937_64 rng(13);
  auto logits = oracle::random_tensor(rng, {2, 4, 4}, -3, 3);
  auto m = oracle::random_mask(rng, 4, 4, 0.5);
  auto rr = softmax_cross_entropy(logits, m);
  long double expect = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const long double a = logits.at(0, y, x), b = logits.at(1, y, x);
      const long double lse = std::log(std::exp(a) + std::exp(b));
      expect -= (m(y, x) ? b : a) - lse;
      for (int c = 0; c < 2; ++c) {
        const long double p = std::exp((c ? b : a) - lse);
        CHECK(rr.grad_logits.at(c, y, x) == doctest::Approx(static_cast<double>(p - (m(y, x) == c))).epsilon(1e-12));
      }
    }
  CHECK(rr.loss == doctest::Approx(static_cast<double>(expect)).epsilon(1e-12));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(std::abs(rr.prob.at(0, y, x) + rr.prob.at(1, y, x) - 1.0) < 1e-6);

  Mask bad(4, 4, 0);
  bad(2, 3) = 5;
  try {
    softmax_cross_entropy(logits, bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(y=2, x=3)") != std::string::npos);
  }
}

TEST_CASE("softmax columns sum to one for float and double") {
  std::mt19937_64 rng(2);
  auto l = oracle::random_tensor(rng, {5, 6, 7}, -20, 20);
  auto p = softmax(l);
  auto pf = softmax(l.cast<float>());
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      double s = 0, sf = 0;
      for (int c = 0; c < 5; ++c) {
        s += p.at(c, y, x);
        sf += pf.at(c, y, x);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
      CHECK(std::abs(sf - 1.0) < 1e-6);
    }
}

TEST_CASE("bilinear resize") {
  std::mt19937_64 rng(1);
  auto img = oracle::random_tensor(rng, {2, 5, 7}).cast<float>();
  CHECK(bilinear_resize(img, 5, 7) == img);
  Tensor<float> c({1, 4, 4}, 0.375f);
  const auto cr = bilinear_resize(c, 9, 3);
  for (float v : cr.storage()) CHECK(v == doctest::Approx(0.375f));
  Tensor<double> p({1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  auto r = bilinear_resize(p, 2, 3);
  CHECK(r.storage() == std::vector<double>{0, 0.5, 1, 0, 0.5, 1});
}

TEST_CASE("nearest resize of masks keeps binary labels") {
  Mask m(2, 2);
  m(0, 1) = 1;
  auto r = nearest_resize(m, 4, 4);
  for (auto v : r.data) CHECK(v <= 1);
  CHECK(r(0, 3) == 1);
  CHECK(r(3, 0) == 0);
  CHECK(nearest_resize(m, 2, 2) == m);
}

TEST_CASE("grad_check: every preset layer kind over five seeds") {
  auto layers = ArchPreset::default_preset().trunk;
  for (auto l : ArchPreset::default_preset().head) layers.push_back(l);
  layers.back().out_channels = 2;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& l : layers) {
      auto rep = grad_check(l, seed, 1e-3);
      CHECK_MESSAGE(rep.pass, describe(rep));
      CHECK(rep.pass == (rep.max_rel_error <= rep.tolerance));
    }
  CHECK(grad_check(LayerSpec::deconv(2, 3, 4, 2), 0, 1e-3).pass);
  CHECK(grad_check(LayerSpec::relu(), 0, 1e-3).pass);
}

TEST_CASE("grad_check reports failure at an unattainable tolerance") {
  auto rep = grad_check(LayerSpec::conv(2, 2, 3, 1, 1), 0, 1e-14);
  CHECK_FALSE(rep.pass);
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
}
