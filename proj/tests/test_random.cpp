#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "sae/random.hpp"

using sae::Engine;
using sae::StreamKey;

TEST(Random, SameKeySameStream) {
  Engine a = StreamKey(42).child(3).child(7).engine();
  Engine b = StreamKey(42).child(3).child(7).engine();
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Random, ChildrenDiffer) {
  const StreamKey root(1);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Engine e = root.child(i).engine();
    firsts.insert(e());
  }
  EXPECT_EQ(firsts.size(), 1000u);
  EXPECT_NE(root.child(0).child(1), root.child(1).child(0));
  EXPECT_NE(StreamKey(0), StreamKey(1));
}

TEST(Random, UniformMomentsLookRight) {
  Engine e = StreamKey(9).engine();
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = std::generate_canonical<double, 64>(e);
    s += u;
    s2 += u * u;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(var, 1.0 / 12.0, 2e-3);
}

TEST(Random, BitBalance) {
  Engine e = StreamKey(123).engine();
  int ones[64] = {};
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto v = e();
    for (int b = 0; b < 64; ++b) ones[b] += static_cast<int>((v >> b) & 1u);
  }
  for (int b = 0; b < 64; ++b) EXPECT_NEAR(ones[b], n / 2, 5 * std::sqrt(n / 4.0)) << "bit " << b;
}
