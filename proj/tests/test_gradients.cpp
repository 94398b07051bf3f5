#include <gtest/gtest.h>

#include "support/fixtures.hpp"

using namespace opmask;
using namespace opmask::testing;

namespace {

void expect_gradients_match(Variant v, std::uint64_t seed) {
  nn::Model<double> m(mini_config(v, seed));
  randomize_biases(m, seed);
  const auto mb = mini_batch(seed);
  const auto err = finite_difference_errors(m, mb);
  ASSERT_EQ(err.size(), m.params().size());
  for (const auto& [name, e] : err) EXPECT_LE(e, 1e-3) << variant_name(v) << " " << name;
}

// L_mask only: backward with the detection gradients zeroed.
bool mask_loss_reaches_box_convs(Variant v, std::uint64_t seed) {
  nn::Model<double> m(mini_config(v, seed));
  const auto mb = mini_batch(seed);
  auto g = forward_losses(m, mb);
  g.d_cls.zero();
  g.d_deltas.zero();
  m.zero_grad();
  m.backward(g.d_cls, g.d_deltas, g.d_mask);
  for (auto* p : m.box_head().conv_params())
    if (p->grad.max_abs() != 0.0) return true;
  return false;
}

}  // namespace

TEST(FiniteDifferences, Opmask) { expect_gradients_match(Variant::opmask, 1); }
TEST(FiniteDifferences, OpmaskSecondDraw) { expect_gradients_match(Variant::opmask, 2); }
TEST(FiniteDifferences, Baseline) { expect_gradients_match(Variant::baseline, 3); }
TEST(FiniteDifferences, ClsOnly) { expect_gradients_match(Variant::cls_only, 4); }

TEST(GradientRouting, MaskLossReachesBoxHeadOnlyWithPrior) {
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    hits += mask_loss_reaches_box_convs(Variant::opmask, 100 + s);
    EXPECT_FALSE(mask_loss_reaches_box_convs(Variant::baseline, 100 + s));
  }
  EXPECT_EQ(hits, 20);
}

TEST(GradientRouting, ClassifierWeightGetsMaskGradientInOpmaskOnly) {
  for (Variant v : {Variant::opmask, Variant::baseline}) {
    nn::Model<double> m(mini_config(v, 7));
    const auto mb = mini_batch(7);
    auto g = forward_losses(m, mb);
    g.d_cls.zero();
    g.d_deltas.zero();
    m.zero_grad();
    m.backward(g.d_cls, g.d_deltas, g.d_mask);
    const double n = m.box_head().classifier().weight().grad.max_abs();
    if (v == Variant::opmask)
      EXPECT_GT(n, 0.0);
    else
      EXPECT_EQ(n, 0.0);
  }
}
