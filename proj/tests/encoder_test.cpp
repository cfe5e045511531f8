#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twostream/encoder.hpp"
#include "twostream/gradcheck.hpp"

using namespace twostream;
using D = double;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.vocab = 3;
  c.d_rep = 6;
  c.video = StreamConfig{3, 8, 8, {4, 6, 6, 8}, {2, 2, 2, 1}, {1, 1, 2, 2}};
  c.keypoint = StreamConfig{5, 4, 4, {4, 4, 6, 6}, {2, 2, 1, 1}, {1, 1, 2, 2}};
  c.freeze_block1 = false;
  return c;
}

SlrInput<D> random_input(const ModelConfig& c, int frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto fill = [&](Shape s) {
    std::vector<D> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor<D>::from(std::move(s), std::move(v));
  };
  return {fill({frames, c.video.height, c.video.width, 3}),
          fill({frames, c.keypoint.height, c.keypoint.width, c.keypoint.in_channels})};
}

void randomize(const Tensor<D>& t, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : const_cast<Tensor<D>&>(t).values()) x = n(rng);
}

bool same_values(const Tensor<D>& a, const Tensor<D>& b) { return a.values() == b.values(); }

}  // namespace

TEST(Stream, TemporalContract) {
  auto c = micro_config();
  TwoStreamModel<D> m(c, 1);
  std::mt19937_64 rng(1);
  auto o16 = m.forward(random_input(c, 16, rng), true);
  EXPECT_EQ(o16.out_frames, 4);
  EXPECT_EQ(o16.video->log_probs.shape(), (Shape{4, 4}));
  EXPECT_EQ(o16.keypoint->log_probs.dim(0), 4);
  EXPECT_EQ(o16.joint->log_probs.dim(0), 4);
  auto o15 = m.forward(random_input(c, 15, rng), true);
  EXPECT_EQ(o15.padded_frames, 16);
  EXPECT_EQ(o15.out_frames, 4);
  EXPECT_EQ(o15.valid_frames, 4);
  ASSERT_EQ(o15.video_aux.size(), 2u);
  EXPECT_EQ(o15.video_aux[0].level, 3);
  EXPECT_EQ(o15.video_aux[0].head.log_probs.dim(0), 8);
  EXPECT_EQ(o15.video_aux[0].valid_frames, 8);
  EXPECT_EQ(o15.video_aux[1].head.log_probs.dim(0), 16);
  EXPECT_EQ(o15.video_aux[1].valid_frames, 15);
  auto o5 = m.forward(random_input(c, 5, rng), true);
  EXPECT_EQ(o5.out_frames, 2);
  EXPECT_EQ(o5.valid_frames, 2);
}

TEST(Stream, PadRepeatsLastFrame) {
  auto x = Tensor<D>::from({3, 1, 1, 2}, {1, 2, 3, 4, 5, 6});
  auto p = pad_frames(x, 4);
  EXPECT_EQ(p.shape(), (Shape{4, 1, 1, 2}));
  EXPECT_EQ(p.values(), (std::vector<D>{1, 2, 3, 4, 5, 6, 5, 6}));
}

TEST(Stream, WrongInputShapeIsDimensionError) {
  auto c = micro_config();
  TwoStreamModel<D> m(c, 1);
  SlrInput<D> in{Tensor<D>::zeros({8, 7, 8, 3}), Tensor<D>::zeros({8, 4, 4, 5})};
  EXPECT_THROW(m.forward(in, true), DimensionError);
  SlrInput<D> mismatch{Tensor<D>::zeros({8, 8, 8, 3}), Tensor<D>::zeros({7, 4, 4, 5})};
  EXPECT_THROW(m.forward(mismatch, true), DimensionError);
}

TEST(Stream, ConfigValidation) {
  auto c = micro_config();
  c.video.temporal_strides = {1, 2, 1, 1};
  EXPECT_THROW(TwoStreamModel<D>(c, 1), ConfigError);
  c = micro_config();
  c.use_video = c.use_keypoint = false;
  EXPECT_THROW(TwoStreamModel<D>(c, 1), ConfigError);
  c = micro_config();
  c.keypoint.height = c.keypoint.width = 6;  // 4 vs 3 after block 1
  EXPECT_THROW(TwoStreamModel<D>(c, 1), DimensionError);
}

TEST(Stream, FrozenBlockOneGetsNoGradient) {
  auto c = micro_config();
  c.freeze_block1 = true;
  TwoStreamModel<D> m(c, 2);
  std::mt19937_64 rng(2);
  auto out = m.forward(random_input(c, 8, rng), true);
  recognition_loss(out, {1, 2}, c.weights).loss.backward();
  int frozen = 0;
  for (const auto& [name, t] : m.params().tensors()) {
    if (name.find(".block1.") != std::string::npos) {
      ++frozen;
      EXPECT_FALSE(t.requires_grad()) << name;
      for (D g : t.grad()) EXPECT_EQ(g, 0.0);
    }
  }
  EXPECT_EQ(frozen, 12);
  for (const auto& r : m.params().refs()) EXPECT_EQ(r.name.find(".block1."), std::string::npos);
}

TEST(Lateral, NoneAndZeroInitAreIdentical) {
  auto c = micro_config();
  std::mt19937_64 rng(3);
  auto in = random_input(c, 8, rng);
  TwoStreamModel<D> with(c, 7);
  c.lateral = LateralMode::None;
  TwoStreamModel<D> without(c, 7);
  auto a = with.forward(in, true), b = without.forward(in, true);
  EXPECT_TRUE(same_values(a.video->logits, b.video->logits));
  EXPECT_TRUE(same_values(a.keypoint->logits, b.keypoint->logits));
  EXPECT_TRUE(same_values(a.joint->logits, b.joint->logits));
  EXPECT_TRUE(with.params().contains("lateral.c1.v2k.w"));
  EXPECT_FALSE(without.params().contains("lateral.c1.v2k.w"));
}

TEST(Lateral, DefaultIsBidirectionalOnThreeLevels) {
  ModelConfig c;
  EXPECT_EQ(c.lateral, LateralMode::Bidirectional);
  EXPECT_EQ(c.lateral_levels, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(c.spn_levels, (std::vector<int>{2, 3}));
  EXPECT_EQ(c.weights.lambda_v, 0.2);
  EXPECT_EQ(c.weights.lambda_k, 0.5);
  EXPECT_EQ(c.weights.w_dist, 1.0);
  EXPECT_EQ(parse_lateral("k2v"), LateralMode::KeypointToVideo);
  EXPECT_THROW(parse_lateral("sideways"), ConfigError);
}

TEST(Lateral, DirectionalModesTouchOnlyTheirTarget) {
  auto c = micro_config();
  std::mt19937_64 rng(4);
  auto in = random_input(c, 8, rng);
  c.lateral = LateralMode::KeypointToVideo;
  TwoStreamModel<D> k2v(c, 9);
  for (const auto& [name, t] : k2v.params().tensors())
    if (name.rfind("lateral.", 0) == 0) randomize(t, 0.3, rng);
  c.lateral = LateralMode::None;
  TwoStreamModel<D> none(c, 9);
  auto a = k2v.forward(in, true), b = none.forward(in, true);
  EXPECT_FALSE(same_values(a.video->logits, b.video->logits));
  EXPECT_TRUE(same_values(a.keypoint->logits, b.keypoint->logits));
}

TEST(Lateral, BidirectionalUsesPreFusionFeatures) {
  // With pre-fusion inputs, the keypoint stream under bidirectional equals
  // the keypoint stream under v2k alone when both share weights.
  auto c = micro_config();
  std::mt19937_64 rng(5);
  auto in = random_input(c, 8, rng);
  TwoStreamModel<D> bi(c, 11);
  c.lateral = LateralMode::VideoToKeypoint;
  TwoStreamModel<D> v2k(c, 11);
  for (const auto& [name, t] : bi.params().tensors()) {
    if (name.rfind("lateral.", 0) != 0) continue;
    randomize(t, 0.3, rng);
    if (v2k.params().contains(name)) const_cast<Tensor<D>&>(v2k.params().at(name)).values() = t.values();
  }
  auto a = bi.forward(in, true), b = v2k.forward(in, true);
  EXPECT_TRUE(same_values(a.keypoint_blocks[0], b.keypoint_blocks[0]));
  EXPECT_FALSE(same_values(a.video_blocks[0], b.video_blocks[0]));
}

TEST(JointHead, ConcatWidthAndRows) {
  auto c = micro_config();
  TwoStreamModel<D> m(c, 1);
  EXPECT_EQ(m.params().at("joint.head.proj.w").dim(0), 8 + 6);
  std::mt19937_64 rng(6);
  auto out = m.forward(random_input(c, 8, rng), false);
  auto p = softmax(out.joint->logits);
  for (int t = 0; t < p.dim(0); ++t) {
    double s = 0;
    for (int j = 0; j < p.dim(1); ++j) s += p[t * p.dim(1) + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Pyramid, SkippedInEvalAndAbsentWhenDisabled) {
  auto c = micro_config();
  std::mt19937_64 rng(7);
  auto in = random_input(c, 8, rng);
  TwoStreamModel<D> with(c, 3);
  auto ev = with.forward(in, false);
  EXPECT_TRUE(ev.video_aux.empty());
  EXPECT_TRUE(ev.keypoint_aux.empty());
  c.spn = false;
  TwoStreamModel<D> without(c, 3);
  EXPECT_FALSE(without.params().contains("video.spn.p3.up.w"));
  EXPECT_TRUE(same_values(ev.joint->logits, without.forward(in, false).joint->logits));
  EXPECT_TRUE(same_values(with.forward(in, true).video->logits, without.forward(in, true).video->logits));
}

TEST(Pyramid, LevelSubsets) {
  auto c = micro_config();
  c.spn_levels = {1, 2, 3};
  TwoStreamModel<D> m(c, 3);
  std::mt19937_64 rng(8);
  auto out = m.forward(random_input(c, 8, rng), true);
  ASSERT_EQ(out.keypoint_aux.size(), 3u);
  EXPECT_EQ(out.keypoint_aux[2].level, 1);
  EXPECT_EQ(out.keypoint_aux[2].head.log_probs.dim(0), 8);
  c.spn_levels = {3};
  TwoStreamModel<D> only3(c, 3);
  EXPECT_FALSE(only3.params().contains("video.spn.p2.up.w"));
}

TEST(Distill, ClosedForms) {
  auto same = Tensor<D>::from({2, 2}, {std::log(0.3), std::log(0.7), std::log(0.6), std::log(0.4)});
  auto teacher = softmax(same);
  EXPECT_NEAR(self_distill_loss(teacher, {same, same, same}).item(), 0.0, 1e-15);
  auto half = Tensor<D>::from({1, 2}, {0.5, 0.5});
  auto lhalf = Tensor<D>::from({1, 2}, {std::log(0.5), std::log(0.5)});
  // Teacher [.5, .5] against a head at [1, 0]: the zero student entry is
  // floored, giving ln .5 + 50 instead of infinity.
  auto onehot = Tensor<D>::from({1, 2}, {0.0, -1e30});
  EXPECT_NEAR(self_distill_loss(half, {onehot, lhalf, lhalf}).item(), std::log(0.5) + 50.0, 1e-12);
  // Teacher [1, 0] against one head at [.5, .5] contributes ln 2.
  auto t10 = Tensor<D>::from({1, 2}, {1.0, 0.0});
  auto l10 = Tensor<D>::from({1, 2}, {0.0, -1e30});
  EXPECT_NEAR(self_distill_loss(t10, {lhalf, l10, l10}).item(), std::log(2.0), 1e-12);
}

TEST(Distill, TeacherIsDetached) {
  auto c = micro_config();
  c.weights = {0.0, 0.0, 1.0};
  std::mt19937_64 rng(9);
  auto in = random_input(c, 8, rng);
  TwoStreamModel<D> m(c, 4);
  auto out = m.forward(in, true);
  recognition_loss(out, {1, 2}, c.weights).loss.backward();
  std::map<std::string, std::vector<D>> live;
  for (const auto& [n, t] : m.params().tensors()) live[n].assign(t.grad().begin(), t.grad().end());
  m.params().zero_grad();
  auto out2 = m.forward(in, true);
  const auto pinned = ensemble_teacher(out2);
  recognition_loss(out2, {1, 2}, c.weights, &pinned).loss.backward();
  for (const auto& [n, t] : m.params().tensors())
    EXPECT_EQ(live[n], std::vector<D>(t.grad().begin(), t.grad().end())) << n;
}

TEST(Loss, ZeroWeightsGiveSumOfHeadCtc) {
  auto c = micro_config();
  c.weights = {0.0, 0.0, 0.0};
  TwoStreamModel<D> m(c, 5);
  std::mt19937_64 rng(10);
  auto out = m.forward(random_input(c, 8, rng), true);
  auto b = recognition_loss(out, {2, 1}, c.weights);
  EXPECT_NEAR(b.total, b.ctc_video + b.ctc_keypoint + b.ctc_joint, 1e-12);
  EXPECT_GT(b.actc_video, 0.0);
  EXPECT_GT(b.distill, 0.0);
  LossWeights w;
  auto d = recognition_loss(out, {2, 1}, w);
  EXPECT_NEAR(d.total,
              d.ctc_video + d.ctc_keypoint + d.ctc_joint + 0.2 * d.actc_video + 0.5 * d.actc_keypoint + d.distill,
              1e-10);
}

TEST(Loss, InfeasibleTargetPropagates) {
  auto c = micro_config();
  TwoStreamModel<D> m(c, 5);
  std::mt19937_64 rng(11);
  auto out = m.forward(random_input(c, 8, rng), true);
  EXPECT_THROW(recognition_loss(out, {1, 2, 3}, c.weights), CtcInfeasibleError);
}

TEST(Loss, FullModelGradientMatchesFiniteDifferences) {
  auto c = micro_config();
  TwoStreamModel<D> m(c, 6);
  std::mt19937_64 rng(12);
  for (const auto& [name, t] : m.params().tensors())
    if (name.rfind("lateral.", 0) == 0) randomize(t, 0.2, rng);
  // Two samples so that batch norm sees more than T' = 2 rows per channel.
  std::vector<SlrInput<D>> batch{random_input(c, 8, rng), random_input(c, 8, rng)};
  const std::vector<GlossSeq> targets{{1, 3}, {2}};
  std::vector<Tensor<D>> teachers;
  for (const auto& o : m.forward(batch, true)) teachers.push_back(ensemble_teacher(o));
  auto rep = grad_check(
      [&] {
        auto outs = m.forward(batch, true);
        Tensor<D> total;
        for (std::size_t n = 0; n < outs.size(); ++n) {
          auto l = recognition_loss(outs[n], targets[n], c.weights, &teachers[n]).loss;
          total = total.defined() ? add(total, l) : l;
        }
        return total;
      },
      m.params().refs(), 1e-6);
  EXPECT_GT(rep.entries.size(), 80u);
  const auto* worst = rep.worst();
  EXPECT_LT(rep.max_rel_error(), 1e-3) << worst->name;
  for (const auto& e : rep.entries) {
    EXPECT_GT(e.numeric_norm + e.analytic_norm, 0.0) << e.name;
  }
}

TEST(Predict, DeterministicAndSingleHeadEquivalence) {
  auto c = micro_config();
  std::mt19937_64 rng(13);
  auto in = random_input(c, 16, rng);
  TwoStreamModel<D> a(c, 21), b(c, 21);
  EXPECT_EQ(slr_predict(a, in), slr_predict(b, in));
  auto out = a.forward(in, false);
  auto pv = head_posteriors(*out.video, out.valid_frames);
  EXPECT_EQ(prefix_beam_decode(ensemble_posteriors(pv, pv, pv)), prefix_beam_decode(pv));
}

TEST(Predict, EvalIsIndependentOfTrainingHistoryOnlyThroughRunningStats) {
  auto c = micro_config();
  std::mt19937_64 rng(14);
  auto in = random_input(c, 8, rng);
  TwoStreamModel<D> m(c, 22);
  auto e1 = m.forward(in, false);
  auto e2 = m.forward(in, false);
  EXPECT_TRUE(same_values(e1.joint->logits, e2.joint->logits));
}
