#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "advdev/tensor.hpp"
#include "support.hpp"

namespace advdev {
namespace {

using testing::random_tensor;

// Direct seven-loop cross-correlation.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t oh = (H + 2 * p - K) / s + 1, ow = (W + 2 * p - K) / s + 1;
  Tensor out({O, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < K; ++u)
            for (std::size_t v = 0; v < K; ++v) {
              const long y = static_cast<long>(i * s + u) - static_cast<long>(p);
              const long xx = static_cast<long>(j * s + v) - static_cast<long>(p);
              if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
              acc += w[((o * C + c) * K + u) * K + v] * x.at(c, y, xx);
            }
        out.at(o, i, j) = acc;
      }
  return out;
}

TEST(Conv2d, ScalarMultiplyAdd) {
  const Tensor out = conv2d(Tensor({1, 1, 1}, {2.0}), Tensor({1, 1, 1, 1}, {3.0}),
                            Tensor({1}, {1.0}), 1, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 7.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const Tensor x = random_tensor({1, 5, 6}, rng);
  Tensor k({1, 1, 3, 3});
  k[4] = 1.0;
  EXPECT_EQ(conv2d(x, k, Tensor({1}), 1, 1), x);
}

TEST(Conv2d, StrideSubsampling) {
  const Tensor out = conv2d(Tensor({1, 4, 4}, 1.0), Tensor({1, 1, 1, 1}, {1.0}), Tensor({1}), 2, 0);
  EXPECT_EQ(out, Tensor({1, 2, 2}, 1.0));
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(2);
  for (auto [s, p, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {2, 0, 1}, {1, 0, 2}, {3, 2, 3}}) {
    const Tensor x = random_tensor({3, 8, 7}, rng);
    const Tensor w = random_tensor({4, 3, std::size_t(k), std::size_t(k)}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor got = conv2d(x, w, b, s, p);
    const Tensor want = naive_conv(x, w, b, s, p);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, StrideTwoHalvesEvenExtent) {
  EXPECT_EQ(conv2d(Tensor({2, 32, 32}), Tensor({5, 2, 3, 3}), Tensor({5}), 2, 1).shape(),
            (Shape{5, 16, 16}));
}

TEST(Conv2d, RejectsMismatches) {
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 1), Error);
  EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({2, 1, 3, 3}), Tensor({1}), 1, 1), Error);
  EXPECT_THROW(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor({1}), 1, 0), Error);
  EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 0, 1), Error);
}

TEST(Dense, Examples) {
  EXPECT_EQ(dense(Tensor::vector({3, -1}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})),
            Tensor::vector({3, -1}));
  EXPECT_EQ(dense(Tensor::vector({2, 3}), Tensor({1, 2}, {1, 1}), Tensor::vector({1})),
            Tensor::vector({6}));
  EXPECT_THROW(dense(Tensor::vector({1, 2, 3}), Tensor({1, 2}), Tensor({1})), Error);
  EXPECT_THROW(dense(Tensor::vector({1, 2}), Tensor({1, 2}), Tensor({2})), Error);
}

TEST(Kernels, RejectNonFiniteValues) {
  EXPECT_THROW(relu(Tensor::vector({1, NAN})), Error);
  EXPECT_THROW(sign(Tensor::vector({INFINITY})), Error);
}

TEST(Dense, RejectsNonFiniteResult) {
  EXPECT_THROW(dense(Tensor::vector({1e308, 1e308}), Tensor({1, 2}, {10, 10}), Tensor({1})), Error);
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
  EXPECT_EQ(relu(Tensor::vector({-3, -0.1})), Tensor::vector({0, 0}));
  Rng rng(3);
  const Tensor x = random_tensor({50}, rng);
  EXPECT_EQ(relu(relu(x)), relu(x));
}

TEST(GlobalAvgPool, Examples) {
  EXPECT_EQ(global_avg_pool(Tensor({1, 2, 2}, {1, 3, 5, 7})), Tensor::vector({4}));
  const Tensor c = global_avg_pool(Tensor({2, 3, 3}, 0.25));
  EXPECT_EQ(c, Tensor::vector({0.25, 0.25}));
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Tensor::vector({0, 0})), Tensor::vector({0.5, 0.5}));
  const Tensor p = softmax(Tensor::vector({std::log(1.0), std::log(3.0)}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = random_tensor({10}, rng, -30, 30);
    const Tensor p = softmax(z);
    for (double& v : z.values()) v += 17.25;
    const Tensor q = softmax(z);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_LT(p[i], 1.0);
      EXPECT_NEAR(p[i], q[i], 1e-15);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(Tensor::vector({0, 0}), 0), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor::vector({100, 0}), 0), 0.0, 1e-40);
  EXPECT_NEAR(cross_entropy(Tensor::vector({0, 800}), 0), 800.0, 1e-9);
  EXPECT_GE(cross_entropy(Tensor::vector({1, 2, 3}), 2), 0.0);
  EXPECT_THROW(cross_entropy(Tensor::vector({0, 0}), 2), Error);
}

TEST(Sign, Examples) {
  EXPECT_EQ(sign(Tensor::vector({-0.5, 0, 3})), Tensor::vector({-1, 0, 1}));
  Rng rng(5);
  const Tensor x = random_tensor({30}, rng);
  EXPECT_EQ(sign(sign(x)), sign(x));
  Tensor y = x;
  for (double& v : y.values()) v *= 0.37;
  EXPECT_EQ(sign(y), sign(x));
}

TEST(Clip, Examples) {
  EXPECT_EQ(clip(Tensor::vector({-0.1, 0.5, 1.2}), 0, 1), Tensor::vector({0, 0.5, 1}));
  const Tensor in = Tensor::vector({0.1, 0.9});
  EXPECT_EQ(clip(in, 0, 1), in);
  const Tensor once = clip(Tensor::vector({-4, 0.3, 8}), -1, 1);
  EXPECT_EQ(clip(once, -1, 1), once);
  EXPECT_THROW(clip(in, 1, 0), Error);
}

TEST(ClipBall, StaysWithinRadius) {
  const Tensor c = Tensor::vector({0.5, 0.5, 0.5});
  EXPECT_EQ(clip_ball(Tensor::vector({0.0, 0.52, 0.9}), c, 0.1), Tensor::vector({0.4, 0.52, 0.6}));
}

TEST(Argmax, LowestIndexOnTies) {
  const std::vector<double> a{0.2, 0.9, 0.9};
  EXPECT_EQ(argmax(a), 1u);
  const std::vector<double> b{3, 3, 3};
  EXPECT_EQ(argmax(b), 0u);
}

TEST(OneHot, SingleOne) {
  EXPECT_EQ(one_hot(2, 4), Tensor::vector({0, 0, 1, 0}));
  EXPECT_THROW(one_hot(4, 4), Error);
}

TEST(TensorType, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), Error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST(Distances, L2AndLinf) {
  const Tensor a = Tensor::vector({0, 0, 1});
  const Tensor b = Tensor::vector({3, 4, 1});
  EXPECT_EQ(l2_distance(a, b), 5.0);
  EXPECT_EQ(linf_distance(a, b), 4.0);
}

TEST(Kernels, Pure) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 6, 6}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  EXPECT_EQ(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1));
  EXPECT_EQ(softmax(global_avg_pool(x)), softmax(global_avg_pool(x)));
}

}  // namespace
}  // namespace advdev
