#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/core/tensor.hpp"

using namespace opmask;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivedSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(derive_seed(7, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(derive_seed(7, 0), derive_seed(8, 0));
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BelowCoversRangeWithoutBias) {
  Rng r(3);
  std::vector<int> hist(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) hist[r.below(6)]++;
  for (int h : hist) EXPECT_NEAR(h, n / 6, 5 * std::sqrt(n / 6.0));
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(2.0, 3.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 2.0, 0.05);
  EXPECT_NEAR(var, 9.0, 0.15);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v.begin(), v.end());
  std::multiset<int> s(v.begin(), v.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s.count(i), 1u);
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  t.at(1, 2, 3, 4) = 7.f;
  EXPECT_EQ(t[119], 7.f);
  EXPECT_EQ(t.shape_string(), "[2,3,4,5]");
  EXPECT_EQ(t.slice(1), t.data() + 60);
}

TEST(Tensor, FromRejectsWrongCount) {
  EXPECT_THROW(Tensor<double>::from({2, 2}, {1, 2, 3}), ShapeError);
  const auto t = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at(1, 0), 3.0);
}

TEST(Tensor, AddRequiresSameShape) {
  Tensor<float> a({2, 2}, 1.f), b({4}, 1.f);
  EXPECT_THROW(a += b, ShapeError);
  Tensor<float> c({2, 2}, 2.f);
  a += c;
  EXPECT_EQ(a.sum(), 12.f);
}

TEST(Tensor, ReshapeKeepsData) {
  const auto t = Tensor<int>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.vec(), t.vec());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor<double> t({3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Geometry, BoxArithmetic) {
  const Box b{1, 2, 5, 4};
  EXPECT_EQ(b.width(), 4);
  EXPECT_EQ(b.height(), 2);
  EXPECT_EQ(b.area(), 8);
  EXPECT_EQ(b.cx(), 3);
  EXPECT_TRUE(b.valid());
  EXPECT_FALSE((Box{1, 1, 1, 3}).valid());
}

TEST(Geometry, TightBoxIsHalfOpen) {
  BinaryMask m(6, 8);
  m.at(1, 2) = 1;
  m.at(3, 5) = 1;
  const auto b = tight_box(m);
  ASSERT_TRUE(b);
  EXPECT_EQ(*b, (Box{2, 1, 6, 4}));
  EXPECT_FALSE(tight_box(BinaryMask(3, 3)));
}

TEST(Errors, HierarchyIsCatchableAsBase) {
  EXPECT_THROW(throw FormatError("x"), Error);
  EXPECT_THROW(throw NumericError("x"), std::runtime_error);
}
