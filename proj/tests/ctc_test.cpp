#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "twostream/ctc.hpp"
#include "twostream/gradcheck.hpp"

using namespace twostream;

namespace {

FramePosteriors random_posteriors(int t, int c, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.6, 1.0);
  std::vector<double> p(static_cast<std::size_t>(t) * c);
  for (int r = 0; r < t; ++r) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += (p[r * c + j] = g(rng) + 1e-9);
    for (int j = 0; j < c; ++j) p[r * c + j] /= s;
  }
  return FramePosteriors(t, c, std::move(p));
}

Tensor<double> log_tensor(const FramePosteriors& post, bool grad = false) {
  std::vector<double> v(post.prob.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(post.prob[i]);
  return Tensor<double>::from({post.frames, post.classes}, std::move(v), grad);
}

GlossSeq random_target(int max_u, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(0, max_u), lab(1, vocab);
  GlossSeq g(static_cast<std::size_t>(len(rng)));
  for (int& x : g) x = lab(rng);
  return g;
}

// Most probable labeling by summing brute-force path probabilities.
GlossSeq exhaustive_best(const FramePosteriors& post) {
  std::map<GlossSeq, double> mass;
  std::vector<int> path(post.frames, 0);
  while (true) {
    double p = 1;
    for (int t = 0; t < post.frames; ++t) p *= post.at(t, path[t]);
    mass[collapse(path)] += p;
    int t = 0;
    while (t < post.frames && ++path[t] == post.classes) path[t++] = 0;
    if (t == post.frames) break;
  }
  GlossSeq best;
  double bp = -1;
  for (const auto& [seq, p] : mass)
    if (p > bp) bp = p, best = seq;
  return best;
}

}  // namespace

TEST(Collapse, Rules) {
  const int a = 1, b = 2;
  EXPECT_EQ(collapse(std::vector<int>{a, a, 0, b, b}), (GlossSeq{a, b}));
  EXPECT_EQ(collapse(std::vector<int>{a, 0, a}), (GlossSeq{a, a}));
  EXPECT_EQ(collapse(std::vector<int>{0, 0}), GlossSeq{});
}

TEST(CtcLoss, SingleFrame) {
  FramePosteriors p(1, 3, {0.2, 0.5, 0.3});
  EXPECT_NEAR(ctc_loss(log_tensor(p), {2}).item(), -std::log(0.3), 1e-12);
}

TEST(CtcLoss, TwoFramesThreePaths) {
  FramePosteriors p(2, 2, {0.3, 0.7, 0.6, 0.4});
  const double want = -std::log(0.7 * 0.4 + 0.7 * 0.6 + 0.3 * 0.4);
  EXPECT_NEAR(ctc_loss(log_tensor(p), {1}).item(), want, 1e-12);
  EXPECT_NEAR(ctc_brute_force(p, {1}), std::exp(-want), 1e-12);
}

TEST(CtcLoss, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> tdist(1, 6), vdist(1, 4);
  int checked = 0;
  for (int n = 0; n < 1000; ++n) {
    const int T = tdist(rng), V = vdist(rng);
    auto post = random_posteriors(T, V + 1, rng);
    auto target = random_target(3, V, rng);
    if (ctc_required_frames(target) > T) {
      EXPECT_THROW(ctc_loss(log_tensor(post), target), CtcInfeasibleError);
      continue;
    }
    const double loss = ctc_loss(log_tensor(post), target).item();
    EXPECT_NEAR(loss, -std::log(ctc_brute_force(post, target)), 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 700);
}

TEST(CtcLoss, ForcedPathIsProductOfFrames) {
  // Target [1,1] in 3 frames has the single path 1,0,1.
  FramePosteriors p(3, 2, {0.1, 0.9, 0.4, 0.6, 0.25, 0.75});
  EXPECT_NEAR(ctc_loss(log_tensor(p), {1, 1}).item(), -std::log(0.9 * 0.4 * 0.75), 1e-12);
}

TEST(CtcLoss, InfeasibleTargetIsTyped) {
  FramePosteriors p(2, 3, {0.2, 0.4, 0.4, 0.2, 0.4, 0.4});
  EXPECT_THROW(ctc_loss(log_tensor(p), {1, 1}), CtcInfeasibleError);
  EXPECT_THROW(ctc_loss(log_tensor(p), {1, 2, 1}), CtcInfeasibleError);
  EXPECT_THROW(ctc_loss(log_tensor(p), {3}), DimensionError);
}

TEST(CtcLoss, ValidFramesIgnoresTail) {
  std::mt19937_64 rng(5);
  auto p = random_posteriors(5, 3, rng);
  auto lp = log_tensor(p, true);
  auto loss = ctc_loss(lp, {1, 2}, 3);
  EXPECT_NEAR(loss.item(), -std::log(ctc_brute_force(p.first_rows(3), {1, 2})), 1e-10);
  loss.backward();
  for (int i = 9; i < 15; ++i) EXPECT_EQ(lp.grad()[i], 0.0);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 10; ++n) {
    auto post = random_posteriors(6, 4, rng);
    auto x = log_tensor(post, true);
    GlossSeq target = random_target(3, 3, rng);
    auto rep = grad_check([&] { return ctc_loss(x, target); }, {{"logp", x}});
    EXPECT_LT(rep.max_rel_error(), 1e-4);
    // through a log_softmax, as the heads use it
    auto z = Tensor<double>::from({6, 4}, std::vector<double>(x.data().begin(), x.data().end()), true);
    auto rep2 = grad_check([&] { return ctc_loss(log_softmax(z), target); }, {{"z", z}});
    EXPECT_LT(rep2.max_rel_error(), 1e-4);
  }
}

TEST(CtcLoss, RelabelingCovariance) {
  std::mt19937_64 rng(8);
  auto p = random_posteriors(5, 4, rng);
  FramePosteriors q = p;
  const int perm[4] = {0, 3, 1, 2};
  for (int t = 0; t < 5; ++t)
    for (int c = 0; c < 4; ++c) q.prob[t * 4 + perm[c]] = p.at(t, c);
  GlossSeq tg{1, 2, 2}, tq{perm[1], perm[2], perm[2]};
  EXPECT_NEAR(ctc_loss(log_tensor(p), tg).item(), ctc_loss(log_tensor(q), tq).item(), 1e-12);
}

TEST(CtcLoss, SkipPerturbationChangesValue) {
  FramePosteriors p(3, 3, {0.3, 0.4, 0.3, 0.3, 0.4, 0.3, 0.3, 0.3, 0.4});
  const double ok = ctc_loss(log_tensor(p), {1, 2}).item();
  EXPECT_GT(std::abs(ctc_loss(log_tensor(p), {1, 2}, -1, std::log(0.9)).item() - ok), 1e-3);
}

TEST(BruteForce, RefusesLargeInstances) {
  std::mt19937_64 rng(1);
  auto p = random_posteriors(30, 5, rng);
  EXPECT_THROW(ctc_brute_force(p, {1}), UsageError);
}

TEST(BestPath, Cases) {
  FramePosteriors onehot(4, 3, {0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_EQ(best_path_decode(onehot), (GlossSeq{1, 2}));
  FramePosteriors uniform(3, 3, std::vector<double>(9, 1.0 / 3));
  EXPECT_EQ(best_path_decode(uniform), GlossSeq{});
}

TEST(BestPath, MatchesHandCollapse) {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 200; ++n) {
    auto p = random_posteriors(4, 4, rng);
    GlossSeq want;
    int prev = -1;
    for (int t = 0; t < 4; ++t) {
      int arg = 0;
      for (int c = 1; c < 4; ++c)
        if (p.at(t, c) > p.at(t, arg)) arg = c;
      if (arg != prev && arg != 0) want.push_back(arg);
      prev = arg;
    }
    EXPECT_EQ(best_path_decode(p), want);
  }
}

TEST(PrefixBeam, OneHotEqualsBestPath) {
  FramePosteriors onehot(5, 3, {0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(prefix_beam_decode(onehot), best_path_decode(onehot));
  EXPECT_EQ(kDefaultBeamWidth, 5);
}

TEST(PrefixBeam, SaturatingBeamEqualsExhaustiveArgmax) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tdist(1, 5), vdist(1, 3);
  for (int n = 0; n < 200; ++n) {
    auto p = random_posteriors(tdist(rng), vdist(rng) + 1, rng);
    EXPECT_EQ(prefix_beam_decode(p, 1000), exhaustive_best(p)) << "instance " << n;
  }
}

TEST(PrefixBeam, BeatsGreedyWhenMassIsSpread) {
  // Greedy reads blank, blank; the label 1 has more total mass.
  FramePosteriors p(2, 2, {0.6, 0.4, 0.6, 0.4});
  EXPECT_EQ(best_path_decode(p), GlossSeq{});
  EXPECT_EQ(prefix_beam_decode(p), GlossSeq{1});
}

TEST(Ensemble, Mean) {
  FramePosteriors a(1, 2, {1, 0}), b(1, 2, {0, 1}), c(1, 2, {0.5, 0.5});
  auto m = ensemble_posteriors(a, b, c);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 0.5);
  std::mt19937_64 rng(4);
  auto r = random_posteriors(3, 4, rng), s = random_posteriors(3, 4, rng);
  auto same = ensemble_posteriors(r, r, r);
  for (std::size_t i = 0; i < r.prob.size(); ++i) EXPECT_NEAR(same.prob[i], r.prob[i], 1e-15);
  EXPECT_TRUE(ensemble_posteriors(r, s, r).rows_normalized());
  EXPECT_THROW(ensemble_posteriors(r, s, a), DimensionError);
}
