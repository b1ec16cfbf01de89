#include <doctest.h>

#include <cmath>

#include "graph.hpp"
#include "rng.hpp"

using namespace snds;
using namespace snds::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Independent quadruple-loop convolution: explicit zero padding, no loop
// reordering shared with the library implementation.
Tensor naive_conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oc = k.dim(0);
  const int oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  Tensor y({n, oc, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int o = 0; o < oc; ++o)
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q) {
          double acc = b[o];
          for (int ci = 0; ci < c; ++ci)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw) {
                const int ih = r * stride + kh - 1;
                const int iw = q * stride + kw - 1;
                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                acc += x[((static_cast<int64_t>(in) * c + ci) * h + ih) * w + iw] *
                       k[((static_cast<int64_t>(o) * c + ci) * 3 + kh) * 3 + kw];
              }
          y[((static_cast<int64_t>(in) * oc + o) * oh + r) * ow + q] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("relu clamps negatives") {
  Graph g;
  NodeId x = g.input(Tensor({3}, {-1.0, 0.0, 2.0}));
  NodeId y = g.relu(x);
  CHECK(g.value(y)[0] == 0.0);
  CHECK(g.value(y)[1] == 0.0);
  CHECK(g.value(y)[2] == 2.0);
}

TEST_CASE("cross entropy of uniform logits is log C") {
  Graph g;
  NodeId z = g.input(Tensor({2, 10}));
  NodeId loss = g.softmax_cross_entropy(z, {0, 7});
  CHECK(g.value(loss).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("residual addition with zero branch is identity") {
  Rng rng(11);
  Graph g;
  Tensor xv = random_tensor({2, 4}, rng);
  NodeId x = g.input(xv);
  NodeId zero = g.input(Tensor({2, 4}));
  NodeId y = g.add(x, zero);
  for (int64_t i = 0; i < xv.size(); ++i) CHECK(g.value(y)[i] == xv[i]);
}

TEST_CASE("backward of w*w") {
  Parameter w("w", Tensor::scalar(3.0));
  Graph g;
  NodeId wn = g.leaf(w);
  NodeId loss = g.mul(wn, wn);
  g.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of a plain sum is all ones") {
  Parameter w("w", Tensor({3}, {1.0, 2.0, 3.0}));
  Graph g;
  NodeId loss = g.sum(g.leaf(w));
  g.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == 1.0);
}

TEST_CASE("backward errors") {
  Parameter w("w", Tensor({2}, {1.0, 2.0}));
  Graph g;
  NodeId wn = g.leaf(w);
  CHECK_THROWS_AS(g.backward(wn), ShapeError);  // non-scalar
  NodeId loss = g.sum(wn);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), DomainError);  // no re-recording
}

TEST_CASE("backward linearity in a scalar factor") {
  Rng rng(5);
  for (double a : {0.5, -2.0, 3.25}) {
    Parameter w("w", random_tensor({4}, rng));
    Tensor base_grad;
    {
      Graph g;
      NodeId loss = g.sum_squares(g.leaf(w));
      g.backward(loss);
      base_grad = w.grad();
    }
    w.zero_grad();
    {
      Graph g;
      NodeId loss = g.weighted_sum({g.sum_squares(g.leaf(w))}, {a});
      g.backward(loss);
    }
    for (int64_t i = 0; i < base_grad.size(); ++i) {
      CHECK(w.grad()[i] == doctest::Approx(a * base_grad[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("leaf nodes are deduplicated per graph") {
  Parameter w("w", Tensor::scalar(2.0));
  Graph g;
  CHECK(g.leaf(w) == g.leaf(w));
}

TEST_CASE("shape mismatch errors name the primitive") {
  Graph g;
  NodeId a = g.input(Tensor({2, 3}));
  NodeId b = g.input(Tensor({3, 2}));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), ShapeError);
  NodeId w = g.input(Tensor({4, 2}));
  NodeId bias = g.input(Tensor({2}));
  CHECK_THROWS_WITH_AS(g.affine(a, w, bias), doctest::Contains("affine"), ShapeError);
  NodeId img = g.input(Tensor({1, 3, 8, 8}));
  NodeId kern = g.input(Tensor({4, 2, 3, 3}));
  NodeId kbias = g.input(Tensor({4}));
  CHECK_THROWS_WITH_AS(g.conv2d(img, kern, kbias, 1), doctest::Contains("conv2d"), ShapeError);
}

TEST_CASE("non-finite outputs raise numeric errors") {
  Graph g;
  NodeId big = g.input(Tensor::scalar(1e308));
  CHECK_THROWS_AS(g.mul(big, big), NumericError);
  NodeId z = g.input(Tensor::scalar(0.0));
  CHECK_THROWS_AS(g.log(z), NumericError);
}

TEST_CASE("labels outside the class range are rejected") {
  Graph g;
  NodeId z = g.input(Tensor({1, 3}));
  CHECK_THROWS_AS(g.softmax_cross_entropy(z, {3}), DomainError);
  CHECK_THROWS_AS(g.softmax_cross_entropy(z, {-1}), DomainError);
}

TEST_CASE("affine matches a hand-computed product") {
  Graph g;
  NodeId x = g.input(Tensor({1, 2}, {1.0, 2.0}));
  NodeId w = g.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  NodeId b = g.input(Tensor({3}, {0.5, -0.5, 0.0}));
  NodeId y = g.affine(x, w, b);
  CHECK(g.value(y)[0] == doctest::Approx(1 * 1 + 2 * 4 + 0.5));
  CHECK(g.value(y)[1] == doctest::Approx(1 * 2 + 2 * 5 - 0.5));
  CHECK(g.value(y)[2] == doctest::Approx(1 * 3 + 2 * 6));
}

TEST_CASE("conv2d agrees with the naive quadruple loop") {
  Rng rng(123);
  for (int stride : {1, 2}) {
    for (int trial = 0; trial < 6; ++trial) {
      const int n = 1 + static_cast<int>(rng.uniform_int(2));
      const int c = 1 + static_cast<int>(rng.uniform_int(3));
      const int oc = 1 + static_cast<int>(rng.uniform_int(4));
      const int h = 3 + static_cast<int>(rng.uniform_int(6));
      const int w = 3 + static_cast<int>(rng.uniform_int(6));
      Tensor x = random_tensor({n, c, h, w}, rng);
      Tensor k = random_tensor({oc, c, 3, 3}, rng);
      Tensor b = random_tensor({oc}, rng);
      Graph g;
      NodeId y = g.conv2d(g.input(x), g.input(k), g.input(b), stride);
      Tensor expect = naive_conv2d(x, k, b, stride);
      REQUIRE(g.value(y).shape() == expect.shape());
      for (int64_t i = 0; i < expect.size(); ++i) {
        CHECK(g.value(y)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("avg_pool averages non-overlapping windows") {
  Graph g;
  // 1x1x4x4 with distinct values; kernel 2 -> quadrant means.
  Tensor x({1, 1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
  NodeId y = g.avg_pool(g.input(x), 2);
  CHECK(g.value(y).shape() == Shape{1, 1, 2, 2});
  CHECK(g.value(y)[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(g.value(y)[3] == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  // kernel 3 drops the trailing row/column
  NodeId y3 = g.avg_pool(g.input(x), 3);
  CHECK(g.value(y3).shape() == Shape{1, 1, 1, 1});
  CHECK_THROWS_AS(g.avg_pool(g.input(x), 5), ShapeError);
}

TEST_CASE("scale_shift applies per-channel affine") {
  Graph g;
  Tensor x({1, 2, 1, 2}, {1, 2, 3, 4});
  NodeId y = g.scale_shift(g.input(x), g.input(Tensor({2}, {2.0, -1.0})), g.input(Tensor({2}, {0.5, 0.0})));
  CHECK(g.value(y)[0] == doctest::Approx(2.5));
  CHECK(g.value(y)[1] == doctest::Approx(4.5));
  CHECK(g.value(y)[2] == doctest::Approx(-3.0));
  CHECK(g.value(y)[3] == doctest::Approx(-4.0));
}

TEST_CASE("batch_norm standardizes per channel") {
  Graph g;
  Rng rng(7);
  Tensor x = random_tensor({4, 3, 2, 2}, rng);
  NodeId y = g.batch_norm(g.input(x), g.input(Tensor({3}, {1, 1, 1})), g.input(Tensor({3})));
  // per-channel mean ~0, variance ~1 over batch+spatial
  const Tensor& yv = g.value(y);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int s = 0; s < 4; ++s) mean += yv[(static_cast<int64_t>(n) * 3 + c) * 4 + s];
    mean /= 16.0;
    for (int n = 0; n < 4; ++n)
      for (int s = 0; s < 4; ++s) {
        const double d = yv[(static_cast<int64_t>(n) * 3 + c) * 4 + s] - mean;
        var += d * d;
      }
    var /= 16.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("inference graphs refuse backward") {
  Graph g(Graph::Mode::kInference);
  Parameter w("w", Tensor::scalar(1.0));
  NodeId loss = g.sum(g.leaf(w));
  CHECK_THROWS_AS(g.backward(loss), DomainError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  Tensor z = random_tensor({5, 7}, rng, -4.0, 4.0);
  Tensor p = softmax(z);
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += p[static_cast<int64_t>(i) * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}
