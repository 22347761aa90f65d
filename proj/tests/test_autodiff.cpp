#include "doctest.h"

#include <cmath>
#include <functional>

#include "ctseg/autodiff.hpp"
#include "ctseg/rng.hpp"

using namespace ctseg;
using ad::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(Tensor<double>::count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(v));
}

// direct nested-loop cross-correlation oracle
std::vector<double> conv_oracle(const std::vector<double>& x, int n, int c, int h, int w,
                                const std::vector<double>& wts, int f, int k,
                                const std::vector<double>& b, int stride, int padding,
                                int& ho, int& wo) {
  ho = (h + 2 * padding - k) / stride + 1;
  wo = (w + 2 * padding - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n) * f * ho * wo, 0.0);
  for (int ni = 0; ni < n; ++ni)
    for (int fi = 0; fi < f; ++fi)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b[fi];
          for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - padding + ky;
                const int ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += wts[((static_cast<size_t>(fi) * c + ci) * k + ky) * k + kx] *
                       x[((static_cast<size_t>(ni) * c + ci) * h + iy) * w + ix];
              }
          out[((static_cast<size_t>(ni) * f + fi) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d: centered delta kernel is the identity") {
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto xt = Tensor<double>::from_data({1, 1, 3, 3}, x);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;  // center tap
  auto wt = Tensor<double>::from_data({1, 1, 3, 3}, w);
  auto bt = Tensor<double>::zeros({1});
  auto out = ad::conv2d(xt, wt, bt, 1, 1);
  CHECK(out.shape() == std::vector<int>{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d: stride 2 output matches nested-loop oracle") {
  Rng rng(42);
  auto xt = random_tensor({1, 1, 4, 4}, rng);
  auto wt = random_tensor({1, 1, 3, 3}, rng);
  auto bt = random_tensor({1}, rng);
  auto out = ad::conv2d(xt, wt, bt, 2, 1);
  REQUIRE(out.shape() == std::vector<int>{1, 1, 2, 2});
  int ho, wo;
  const auto oracle = conv_oracle(xt.data(), 1, 1, 4, 4, wt.data(), 1, 3, bt.data(), 2, 1, ho, wo);
  for (size_t i = 0; i < oracle.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("conv2d: zero weights give constant bias output") {
  Rng rng(1);
  auto xt = random_tensor({2, 3, 5, 5}, rng);
  auto wt = Tensor<double>::zeros({4, 3, 3, 3});
  auto bt = Tensor<double>::from_data({4}, {0.5, -1.0, 2.0, 0.0});
  auto out = ad::conv2d(xt, wt, bt, 1, 1);
  for (int ni = 0; ni < 2; ++ni)
    for (int fi = 0; fi < 4; ++fi)
      for (int i = 0; i < 25; ++i)
        CHECK(out.data()[(static_cast<size_t>(ni) * 4 + fi) * 25 + i] ==
              doctest::Approx(bt.data()[fi]));
}

TEST_CASE("conv2d: output shape formula over (k, stride, padding) sweep") {
  Rng rng(2);
  for (int k : {3, 4})
    for (int stride : {1, 2})
      for (int padding : {0, 1}) {
        const int h = 8, w = 8;
        if (h + 2 * padding < k) continue;
        auto xt = random_tensor({1, 2, h, w}, rng);
        auto wt = random_tensor({3, 2, k, k}, rng);
        auto bt = random_tensor({3}, rng);
        auto out = ad::conv2d(xt, wt, bt, stride, padding);
        const int expect = (h + 2 * padding - k) / stride + 1;
        CHECK(out.dim(2) == expect);
        CHECK(out.dim(3) == expect);
        int ho, wo;
        const auto oracle =
            conv_oracle(xt.data(), 1, 2, h, w, wt.data(), 3, k, bt.data(), stride, padding, ho, wo);
        for (size_t i = 0; i < oracle.size(); ++i)
          CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
      }
}

TEST_CASE("conv2d rejects channel mismatch") {
  auto xt = Tensor<double>::zeros({1, 2, 4, 4});
  auto wt = Tensor<double>::zeros({1, 3, 3, 3});
  auto bt = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(ad::conv2d(xt, wt, bt, 1, 1), std::invalid_argument);
}

TEST_CASE("upsample_conv: identity kernel block-replicates") {
  auto xt = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  auto wt = Tensor<double>::from_data({1, 1, 3, 3}, w);
  auto bt = Tensor<double>::zeros({1});
  auto out = ad::upsample_conv(xt, wt, bt);
  REQUIRE(out.shape() == std::vector<int>{1, 1, 4, 4});
  const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(out.data()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("upsample_conv matches composed upsample+conv oracle") {
  Rng rng(3);
  auto xt = random_tensor({1, 2, 3, 3}, rng);
  auto wt = random_tensor({2, 2, 3, 3}, rng);
  auto bt = random_tensor({2}, rng);
  auto out = ad::upsample_conv(xt, wt, bt);
  // oracle: explicit 2x replication then nested-loop conv
  std::vector<double> up(static_cast<size_t>(2) * 6 * 6);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        up[(static_cast<size_t>(c) * 6 + y) * 6 + x] =
            xt.data()[(static_cast<size_t>(c) * 3 + y / 2) * 3 + x / 2];
  int ho, wo;
  const auto oracle = conv_oracle(up, 1, 2, 6, 6, wt.data(), 2, 3, bt.data(), 1, 1, ho, wo);
  REQUIRE(out.size() == oracle.size());
  for (size_t i = 0; i < oracle.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("upsample_conv: zero input leaves only bias") {
  auto xt = Tensor<double>::zeros({1, 1, 2, 2});
  auto wt = Tensor<double>::from_data({1, 1, 3, 3}, std::vector<double>(9, 0.7));
  auto bt = Tensor<double>::from_data({1}, {1.25});
  auto out = ad::upsample_conv(xt, wt, bt);
  for (double v : out.data()) CHECK(v == doctest::Approx(1.25));
}

TEST_CASE("instance_norm: normalized plane statistics") {
  Rng rng(4);
  auto xt = random_tensor({2, 3, 6, 6}, rng, -2, 5);
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  auto out = ad::instance_norm(xt, gamma, beta, 1e-5);
  for (int pc = 0; pc < 6; ++pc) {
    double mean = 0, var = 0;
    for (int i = 0; i < 36; ++i) mean += out.data()[pc * 36 + i];
    mean /= 36;
    for (int i = 0; i < 36; ++i) {
      const double d = out.data()[pc * 36 + i] - mean;
      var += d * d;
    }
    var /= 36;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("instance_norm: constant plane collapses to beta") {
  auto xt = Tensor<double>::full({1, 1, 4, 4}, 3.7);
  auto gamma = Tensor<double>::full({1}, 2.0);
  auto beta = Tensor<double>::full({1}, 0.25);
  auto out = ad::instance_norm(xt, gamma, beta, 1e-5);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("instance_norm: affine output matches plane-statistics oracle") {
  Rng rng(5);
  auto xt = random_tensor({1, 2, 4, 4}, rng, -3, 3);
  auto gamma = Tensor<double>::full({2}, 2.0);
  auto beta = Tensor<double>::full({2}, 3.0);
  const double eps = 1e-5;
  auto out = ad::instance_norm(xt, gamma, beta, eps);
  for (int pc = 0; pc < 2; ++pc) {
    double mean = 0, var = 0;
    for (int i = 0; i < 16; ++i) mean += xt.data()[pc * 16 + i];
    mean /= 16;
    for (int i = 0; i < 16; ++i) {
      const double d = xt.data()[pc * 16 + i] - mean;
      var += d * d;
    }
    var /= 16;
    for (int i = 0; i < 16; ++i) {
      const double expect = (xt.data()[pc * 16 + i] - mean) / std::sqrt(var + eps) * 2.0 + 3.0;
      CHECK(out.data()[pc * 16 + i] == doctest::Approx(expect).epsilon(1e-10));
    }
  }
}

TEST_CASE("instance_norm rejects single-element planes") {
  auto xt = Tensor<double>::zeros({1, 1, 1, 1});
  auto gamma = Tensor<double>::full({1}, 1.0);
  auto beta = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(ad::instance_norm(xt, gamma, beta, 1e-5), std::invalid_argument);
}

TEST_CASE("activations: pointwise values") {
  auto xt = Tensor<double>::from_data({3}, {-1.0, 0.0, 3.0});
  auto lr = ad::leaky_relu(xt, 0.2);
  CHECK(lr.data()[0] == doctest::Approx(-0.2));
  CHECK(lr.data()[1] == 0.0);
  CHECK(lr.data()[2] == doctest::Approx(3.0));
  auto r = ad::relu(xt);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[2] == 3.0);
  auto t = ad::tanh(xt);
  CHECK(t.data()[1] == 0.0);
  CHECK(t.data()[2] == doctest::Approx(std::tanh(3.0)));
}

TEST_CASE("concat_channels: shapes and empty case") {
  Rng rng(6);
  auto a = random_tensor({1, 2, 4, 4}, rng);
  auto b = random_tensor({1, 3, 4, 4}, rng);
  auto out = ad::concat_channels(a, b);
  CHECK(out.shape() == std::vector<int>{1, 5, 4, 4});
  for (int i = 0; i < 32; ++i) CHECK(out.data()[i] == a.data()[i]);
  for (int i = 0; i < 48; ++i) CHECK(out.data()[32 + i] == b.data()[i]);

  auto empty = Tensor<double>::zeros({1, 0, 4, 4});
  auto same = ad::concat_channels(a, empty);
  CHECK(same.shape() == a.shape());

  auto bad = random_tensor({1, 1, 3, 4}, rng);
  CHECK_THROWS_AS(ad::concat_channels(a, bad), std::invalid_argument);
}

TEST_CASE("losses: trivial values") {
  auto x = Tensor<double>::from_data({2}, {0.0, 2.0});
  auto z = Tensor<double>::zeros({2});
  CHECK(ad::l1_loss(x, x).item() == 0.0);
  CHECK(ad::mse_loss(x, z).item() == doctest::Approx(2.0));  // mean of {0, 4}
}

TEST_CASE("losses: random pair vs elementwise oracle") {
  Rng rng(7);
  auto a = random_tensor({2, 3, 4, 4}, rng);
  auto b = random_tensor({2, 3, 4, 4}, rng);
  double l1 = 0, l2 = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    l1 += std::abs(a.data()[i] - b.data()[i]);
    l2 += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  }
  l1 /= static_cast<double>(a.size());
  l2 /= static_cast<double>(a.size());
  CHECK(ad::l1_loss(a, b).item() == doctest::Approx(l1).epsilon(1e-12));
  CHECK(ad::mse_loss(a, b).item() == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("backward: sum yields ones; mse yields 2v; misuse rejected") {
  auto x = Tensor<double>::from_data({4}, {1, 2, 3, 4}, true);
  auto loss = ad::sum(x);
  ad::backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
  CHECK_THROWS_AS(ad::backward(loss), std::logic_error);  // repeated call

  auto v = Tensor<double>::from_data({1}, {1.5}, true);
  auto zero = Tensor<double>::zeros({1});
  auto l2 = ad::mse_loss(v, zero);
  ad::backward(l2);
  CHECK(v.grad()[0] == doctest::Approx(3.0));  // d/dv v^2 = 2v

  auto detached = Tensor<double>::from_data({1}, {1.0});
  CHECK_THROWS_AS(ad::backward(detached), std::invalid_argument);
  auto nonscalar = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  auto y = ad::scale(nonscalar, 2.0);
  CHECK_THROWS_AS(ad::backward(y), std::invalid_argument);
}

TEST_CASE("backward: reuse of a tensor accumulates gradients") {
  // f(x) = sum(x * x) + sum(x): x used three times
  auto fn = [](const Tensor<double>& x) {
    return ad::add(ad::sum(ad::mul(x, x)), ad::sum(x));
  };
  Rng rng(8);
  auto x = random_tensor({5}, rng);
  const double err = ad::gradcheck<double>(fn, x, 1e-4);
  CHECK(err < 1e-6);
  // analytic check too: grad = 2x + 1
  auto x2 = random_tensor({5}, rng);
  x2.set_requires_grad(true);
  auto loss = fn(x2);
  ad::backward(loss);
  for (size_t i = 0; i < x2.size(); ++i)
    CHECK(x2.grad()[i] == doctest::Approx(2 * x2.data()[i] + 1).epsilon(1e-10));
}

TEST_CASE("gradcheck: sum of squares and linear functions") {
  Rng rng(9);
  auto quad = [](const Tensor<double>& x) { return ad::sum(ad::mul(x, x)); };
  auto x = random_tensor({6}, rng);
  CHECK(ad::gradcheck<double>(quad, x, 1e-4) < 1e-6);

  auto lin = [](const Tensor<double>& x) { return ad::sum(ad::scale(x, 3.0)); };
  auto x2 = random_tensor({6}, rng);
  CHECK(ad::gradcheck<double>(lin, x2, 1e-4) < 1e-9);
}

TEST_CASE("gradcheck: every op under randomized small shapes, 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 977 + 13);
    const int c = 1 + static_cast<int>(rng.integer(4));
    const int h = 2 + static_cast<int>(rng.integer(7));
    const int w = 2 + static_cast<int>(rng.integer(7));

    // conv2d w.r.t. input, weights and bias
    {
      const int f = 1 + static_cast<int>(rng.integer(3));
      const int stride = 1 + static_cast<int>(rng.integer(2));
      auto x = random_tensor({1, c, h, w}, rng);
      auto wt = random_tensor({f, c, 3, 3}, rng);
      auto bt = random_tensor({f}, rng);
      auto tgt = random_tensor({1}, rng);
      auto via_x = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::sum(ad::conv2d(v, wt, bt, stride, 1)), tgt);
      };
      CHECK(ad::gradcheck<double>(via_x, x, 1e-4) < 1e-3);
      auto via_w = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::sum(ad::conv2d(x, v, bt, stride, 1)), tgt);
      };
      CHECK(ad::gradcheck<double>(via_w, wt, 1e-4) < 1e-3);
      auto via_b = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::sum(ad::conv2d(x, wt, v, stride, 1)), tgt);
      };
      CHECK(ad::gradcheck<double>(via_b, bt, 1e-4) < 1e-3);
    }

    // instance_norm w.r.t. input, gamma, beta
    {
      auto x = random_tensor({1, c, h, w}, rng);
      auto gamma = random_tensor({c}, rng, 0.5, 2.0);
      auto beta = random_tensor({c}, rng);
      auto target = random_tensor({1, c, h, w}, rng);
      auto via_x = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::instance_norm(v, gamma, beta, 1e-5), target);
      };
      CHECK(ad::gradcheck<double>(via_x, x, 1e-4) < 1e-3);
      auto via_g = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::instance_norm(x, v, beta, 1e-5), target);
      };
      CHECK(ad::gradcheck<double>(via_g, gamma, 1e-4) < 1e-3);
      auto via_b = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::instance_norm(x, gamma, v, 1e-5), target);
      };
      CHECK(ad::gradcheck<double>(via_b, beta, 1e-4) < 1e-3);
    }

    // activations, upsample, concat, losses
    {
      auto x = random_tensor({1, c, h, w}, rng);
      auto other = random_tensor({1, c, h, w}, rng);
      auto act = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::tanh(ad::leaky_relu(v, 0.2)), other);
      };
      CHECK(ad::gradcheck<double>(act, x, 1e-4) < 1e-3);

      // l1 gradient away from the |.| kink: targets offset by 3 so the
      // difference never changes sign under the probe step
      auto far = random_tensor({1, c, h, w}, rng, 3.0, 4.0);
      auto l1 = [&](const Tensor<double>& v) { return ad::l1_loss(ad::tanh(v), far); };
      CHECK(ad::gradcheck<double>(l1, x, 1e-4) < 1e-3);

      auto up = [&](const Tensor<double>& v) { return ad::sum(ad::upsample_nearest2x(v)); };
      CHECK(ad::gradcheck<double>(up, x, 1e-4) < 1e-3);

      auto cat = [&](const Tensor<double>& v) {
        return ad::mse_loss(ad::concat_channels(v, other),
                            ad::Tensor<double>::zeros({1, 2 * c, h, w}));
      };
      CHECK(ad::gradcheck<double>(cat, x, 1e-4) < 1e-3);
    }
  }
}

TEST_CASE("gradient of sum over concat routes ones to both inputs") {
  Rng rng(10);
  auto a = random_tensor({1, 2, 3, 3}, rng);
  auto b = random_tensor({1, 1, 3, 3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = ad::sum(ad::concat_channels(a, b));
  ad::backward(loss);
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradcheck: conv + instance_norm + leaky_relu stack") {
  Rng rng(11);
  auto x = random_tensor({1, 2, 6, 6}, rng);
  auto wt = random_tensor({3, 2, 3, 3}, rng);
  auto bt = random_tensor({3}, rng);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  auto target = random_tensor({1, 3, 3, 3}, rng);
  auto f = [&](const Tensor<double>& v) {
    auto c = ad::conv2d(v, wt, bt, 2, 1);
    auto n = ad::instance_norm(c, gamma, beta, 1e-5);
    return ad::mse_loss(ad::leaky_relu(n, 0.2), target);
  };
  CHECK(ad::gradcheck<double>(f, x, 1e-4) < 1e-3);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  {
    ad::NoGradGuard ng;
    auto y = ad::scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
  }
  auto y = ad::scale(x, 2.0);
  CHECK(y.requires_grad());
}
