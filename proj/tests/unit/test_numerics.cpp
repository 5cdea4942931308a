#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "knobs/numerics.hpp"

using knobs::Matrix;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix b{{3, 4}, {5, 6}};
  EXPECT_EQ(knobs::matmul(Matrix::identity(2), b), b);
}

TEST(Matmul, ZeroColumnAnnihilates) {
  EXPECT_EQ(knobs::matmul(Matrix{{1, 2}}, Matrix{{0}, {0}}), (Matrix{{0}}));
}

TEST(Matmul, HandComputedProduct) {
  // 1*5 + 2*6 = 17, 3*5 + 4*6 = 39
  EXPECT_EQ(knobs::matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}}), (Matrix{{17}, {39}}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(knobs::matmul(Matrix(2, 3), Matrix(2, 3)), knobs::ShapeError);
}

TEST(Matmul, AssociativeOnRandomMatrices) {
  knobs::SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 1 + rng.below(5), q = 1 + rng.below(5), r = 1 + rng.below(5),
                      s = 1 + rng.below(5);
    auto random = [&](std::size_t rows, std::size_t cols) {
      Matrix m(rows, cols);
      for (double& x : m.data()) x = rng.uniform(-2, 2);
      return m;
    };
    const Matrix a = random(p, q), b = random(q, r), c = random(r, s);
    const Matrix left = knobs::matmul(knobs::matmul(a, b), c);
    const Matrix right = knobs::matmul(a, knobs::matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double scale = std::max(1.0, std::abs(left.data()[i]));
      EXPECT_NEAR(left.data()[i], right.data()[i], 1e-9 * scale);
    }
  }
}

TEST(Matrix, RaggedLiteralAndBadDataLengthThrow) {
  EXPECT_THROW((Matrix{{1, 2}, {3}}), knobs::ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), knobs::ShapeError);
}

TEST(Relu, Examples) {
  EXPECT_EQ(knobs::relu(Matrix{{-1, 2}}), (Matrix{{0, 2}}));
  EXPECT_EQ(knobs::relu(Matrix{{0, 0}}), (Matrix{{0, 0}}));
  EXPECT_EQ(knobs::relu(Matrix{{-3.5, 3.5}}), (Matrix{{0, 3.5}}));
}

TEST(Relu, Idempotent) {
  knobs::SeededRng rng(5);
  Matrix x(7, 9);
  for (double& v : x.data()) v = rng.normal();
  const Matrix once = knobs::relu(x);
  EXPECT_EQ(knobs::relu(once), once);
  EXPECT_EQ(once.rows(), x.rows());
  EXPECT_EQ(once.cols(), x.cols());
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  Matrix p{{1.0, -2.0}};
  knobs::AdamState st(1, 2);
  st.first_moment = Matrix{{0.5, -0.5}};
  st.second_moment = Matrix{{0.25, 0.25}};
  st.step = 3;
  const Matrix before = p;
  knobs::adam_step(p, Matrix(1, 2), st);
  EXPECT_EQ(st.first_moment, (Matrix{{0.9 * 0.5, 0.9 * -0.5}}));
  EXPECT_EQ(st.second_moment, (Matrix{{0.999 * 0.25, 0.999 * 0.25}}));
  EXPECT_EQ(st.step, 4);
  // Decayed moments still move the parameters; with fresh state they do not.
  knobs::AdamState fresh(1, 2);
  Matrix q = before;
  knobs::adam_step(q, Matrix(1, 2), fresh);
  EXPECT_EQ(q, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p{{0.0}};
  knobs::AdamState st(1, 1, {0.1, 0.9, 0.999, 1e-8});
  knobs::adam_step(p, Matrix{{1.0}}, st);
  // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + ε).
  EXPECT_NEAR(p(0, 0), -0.1, 1e-8);
}

TEST(Adam, DeterministicAndShapeChecked) {
  Matrix p1{{0.3, 0.7}}, p2 = p1;
  knobs::AdamState s1(1, 2), s2(1, 2);
  const Matrix g{{0.11, -0.42}};
  knobs::adam_step(p1, g, s1);
  knobs::adam_step(p2, g, s2);
  EXPECT_EQ(std::memcmp(p1.data().data(), p2.data().data(), 2 * sizeof(double)), 0);
  EXPECT_EQ(s1.first_moment, s2.first_moment);
  Matrix wrong(2, 1);
  EXPECT_THROW(knobs::adam_step(p1, wrong, s1), knobs::ShapeError);
}

TEST(SeededRng, ReproducibleStream) {
  knobs::SeededRng a(1234), b(1234), c(1235);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next_u64();
    ASSERT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(SeededRng, UniformAndNormalMoments) {
  knobs::SeededRng rng(99);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.01);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}
