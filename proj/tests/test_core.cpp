#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "xtransfer/core.hpp"
#include "xtransfer/errors.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;
using nlohmann::json;

TEST(ThreatModel, FactoriesValidate) {
  EXPECT_NO_THROW(ThreatModel::linf(12.0 / 255.0).validate());
  EXPECT_NO_THROW(ThreatModel::l2(0.02).validate());
  EXPECT_NO_THROW(ThreatModel::patch(3e-5, 70.0).validate());
  EXPECT_THROW(ThreatModel::linf(0.0).validate(), ValidationError);
  EXPECT_THROW(ThreatModel::linf(1.5).validate(), ValidationError);
  EXPECT_THROW(ThreatModel::l2(-1.0).validate(), ValidationError);
  ThreatModel mixed = ThreatModel::linf(0.1);
  mixed.c = 0.5;
  EXPECT_THROW(mixed.validate(), ValidationError);
}

TEST(ThreatModel, JsonRoundTripAndRejection) {
  for (const auto& tm : {ThreatModel::linf(0.05), ThreatModel::l2(0.025), ThreatModel::patch(1e-5, 70.0)}) {
    const json j = tm;
    EXPECT_EQ(j.get<ThreatModel>(), tm);
  }
  EXPECT_THROW((json{{"kind", "linf"}, {"epsilon", 0.1}, {"alpha", 1.0}}.get<ThreatModel>()), ValidationError);
  EXPECT_THROW((json{{"kind", "l3"}}.get<ThreatModel>()), ValidationError);
}

TEST(Resolution, JsonForm) {
  const json j = Resolution{32, 48};
  EXPECT_EQ(j, json::array({32, 48}));
  EXPECT_EQ(j.get<Resolution>(), (Resolution{32, 48}));
  EXPECT_THROW(json::array({0, 4}).get<Resolution>(), ValidationError);
}

TEST(LinfBound, LargestFloatNotAbove) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double eps = rng.uniform(1e-4, 1.0);
    const float b = linf_bound_f32(eps);
    EXPECT_LE(static_cast<double>(b), eps);
    EXPECT_GT(static_cast<double>(std::nextafter(b, 2.0f)), eps);
  }
  EXPECT_EQ(linf_bound_f32(0.5), 0.5f);
}

TEST(LinfBound, ProjectionClampsExactly) {
  const double eps = 12.0 / 255.0;
  FloatTensor d = FloatTensor::from(random_tensor({3, 8, 8}, 2, -0.2, 0.2));
  project_linf(d, eps);
  for (float v : d.values) EXPECT_LE(std::abs(static_cast<double>(v)), eps);
}

TEST(Perturbation, IdentityIsValidAndNeutral) {
  const ImageBatch x = random_images(2, 8, 3);
  for (const auto& tm : {ThreatModel::linf(0.05), ThreatModel::l2(0.02), ThreatModel::patch(1e-5, 70.0)}) {
    const Perturbation p = Perturbation::identity(tm, {8, 8});
    EXPECT_NO_THROW(p.validate());
    const ImageBatch y = apply_perturbation(x, p);
    for (std::size_t i = 0; i < x.pixels().size(); ++i) EXPECT_NEAR(y.pixels()[i], x.pixels()[i], 1e-6);
  }
}

TEST(Perturbation, ValidateCatchesBrokenInvariants) {
  Perturbation p = Perturbation::identity(ThreatModel::linf(0.05), {4, 4});
  p.delta.values[3] = 0.06f;
  EXPECT_THROW(p.validate(), InvariantViolation);
  p.delta.values[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(p.validate(), InvariantViolation);
  Perturbation q = Perturbation::identity(ThreatModel::linf(0.05), {4, 4});
  q.targeted = true;
  EXPECT_THROW(q.validate(), InvariantViolation);
  q.target_text = "a photo of a dog";
  EXPECT_NO_THROW(q.validate());
  Perturbation r = Perturbation::identity(ThreatModel::patch(1e-5, 70.0), {4, 4});
  r.mask_logits.shape = {3, 4};
  EXPECT_THROW(r.validate(), InvariantViolation);
}

TEST(Apply, LinfAddsAndClamps) {
  Perturbation p = Perturbation::identity(ThreatModel::linf(0.1), {2, 2});
  for (std::size_t i = 0; i < p.delta.values.size(); ++i) p.delta.values[i] = (i % 2 ? 0.1f : -0.1f) * 0.99f;
  Tensor px({1, 3, 2, 2}, 0.05);
  px[1] = 0.97;
  const ImageBatch y = apply_linf(ImageBatch(px), p);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double expect = std::clamp(px[i] + static_cast<double>(p.delta.values[i]), 0.0, 1.0);
    EXPECT_DOUBLE_EQ(y.pixels()[i], expect);
  }
  EXPECT_THROW(apply_l2(ImageBatch(px), p), KindMismatch);
}

TEST(Apply, PatchBlendOracle) {
  Perturbation p = Perturbation::identity(ThreatModel::patch(1e-5, 70.0), {3, 3});
  p.mask_logits = FloatTensor::from(random_tensor({3, 3}, 4, -3.0, 3.0));
  p.pattern_logits = FloatTensor::from(random_tensor({3, 3, 3}, 5, -3.0, 3.0));
  const ImageBatch x = random_images(2, 3, 6);
  const ImageBatch y = apply_patch(x, p);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < 9; ++k) {
        const double m = sig(p.mask_logits.values[k]);
        const double pat = sig(p.pattern_logits.values[c * 9 + k]);
        const std::size_t i = (b * 3 + c) * 9 + k;
        EXPECT_NEAR(y.pixels()[i], m * pat + (1 - m) * x.pixels()[i], 1e-7);
      }
    }
  }
}

TEST(Apply, ResolutionMismatchRequiresDispatcher) {
  const Perturbation p = Perturbation::identity(ThreatModel::linf(0.1), {4, 4});
  const ImageBatch x = random_images(1, 8, 7);
  EXPECT_THROW(apply_linf(x, p), ResolutionMismatch);
  EXPECT_NO_THROW(apply_perturbation(x, p));
}

TEST(Resize, BilinearCornerAlignedOracle) {
  const Tensor t = random_tensor({2, 4, 5}, 8);
  const std::size_t H = 7, W = 3;
  const Tensor r = resize_bilinear(t, H, W);
  ASSERT_EQ(r.shape(), (Shape{2, H, W}));
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double sy = static_cast<double>(i) * 3.0 / (H - 1);
        const double sx = static_cast<double>(j) * 4.0 / (W - 1);
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(sy), 2);
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(sx), 3);
        const double fy = sy - y0, fx = sx - x0;
        auto at = [&](std::size_t y, std::size_t x) { return t[(p * 4 + y) * 5 + x]; };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        EXPECT_NEAR(r[(p * H + i) * W + j], v, 1e-12);
      }
    }
  }
}

TEST(Resize, IdentityWhenSameSize) {
  const Tensor t = random_tensor({3, 6, 6}, 9);
  EXPECT_EQ(resize_bilinear(t, 6, 6), t);
}

TEST(Rescale, LinfStaysWithinBound) {
  Perturbation p = Perturbation::identity(ThreatModel::linf(12.0 / 255.0), {8, 8});
  p.delta = FloatTensor::from(random_tensor({3, 8, 8}, 10, -12.0 / 255.0, 12.0 / 255.0));
  project_linf(p.delta, 12.0 / 255.0);
  const Perturbation q = rescale_perturbation(p, {13, 5});
  EXPECT_EQ(q.resolution, (Resolution{13, 5}));
  EXPECT_NO_THROW(q.validate());
}

TEST(ImageBatchTest, RejectsBadInput) {
  EXPECT_THROW(ImageBatch(Tensor({2, 4, 4})), ValidationError);
  EXPECT_THROW(ImageBatch(Tensor({1, 3, 2, 2}, 1.5)), ValidationError);
  EXPECT_THROW(ImageBatch(Tensor({1, 1, 2, 2}, 0.5)), ValidationError);
}

TEST(EvalTaskNames, RoundTrip) {
  for (auto t : {EvalTask::ZeroShot, EvalTask::TextRetrieval, EvalTask::ImageRetrieval, EvalTask::TargetedZeroShot,
                 EvalTask::TargetedIrRank}) {
    EXPECT_EQ(parse_eval_task(to_string(t)), t);
  }
  EXPECT_THROW(parse_eval_task("segmentation"), ValidationError);
}

TEST(RngTest, DeterministicAndStateful) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  const std::string s = a.state();
  const double u = a.uniform();
  b.set_state(s);
  EXPECT_EQ(b.uniform(), u);
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  for (int i = 0; i < 1000; ++i) EXPECT_LT(a.below(7), 7u);
}
