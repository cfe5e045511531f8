#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "twostream/metrics.hpp"

using namespace twostream;

namespace {

struct Golden {
  const char* ref;
  const char* hyp;
  double wer;
};

// Recognition examples with their published per-sample WER.
const Golden kGolden[] = {
    {"SUED MEHR RUHIG FREUNDLICH BISSCHEN MILD", "SUED MEHR RUHIG FREUNDLICH BISSCHEN MILD", 0.00},
    {"SUED MEHR RUHIG FREUNDLICH BISSCHEN MILD", "SUED RUHIG FREUNDLICH BISSCHEN MILD", 16.67},
    {"SUED MEHR RUHIG FREUNDLICH BISSCHEN MILD", "SUED MEHR RUHIG FREUNDLICH TATSAECHLICH BESSER", 33.33},
    {"AUCH NAH FLUSS UND ALPEN AUCH MOEGLICH NEBEL", "AUCH NAH FLUSS UND BERG ALPEN AUCH MOEGLICH NEBEL", 12.50},
    {"AUCH NAH FLUSS UND ALPEN AUCH MOEGLICH NEBEL", "AUCH NAH FLUSS ALPEN BERG AUCH MOEGLICH NEBEL", 25.00},
    {"AUCH NAH FLUSS UND ALPEN AUCH MOEGLICH NEBEL", "AUCH NAH BISSCHEN BERG TAL AUCH MOEGLICH NEBEL", 37.50},
    {"NACHT SYLT DREIZEHN GRAD MITTE BERG TAL NULL GRAD", "NACHT SYLT DREIZEHN GRAD MITTE BERG TAL NULL GRAD", 0.00},
    {"NACHT SYLT DREIZEHN GRAD MITTE BERG TAL NULL GRAD", "NACHT SYLT DREIZEHN GRAD MITTE BERG NULL GRAD", 11.11},
    {"NACHT SYLT DREIZEHN GRAD MITTE BERG TAL NULL GRAD", "NACHT DONNERSTAG DREIZEHN GRAD MITTE BERG NULL GRAD", 22.22},
    {"因为 天气 不好 飞机 取消", "因为 天气 不好 飞机 取消", 0.00},
    {"因为 天气 不好 飞机 取消", "因为 天气 不好 取消", 20.00},
    {"因为 天气 不好 飞机 取消", "因为 天气 不好 看 删除", 40.00},
    {"泡 脚 冬天 好", "泡 脚 冬天 好", 0.00},
    {"泡 脚 冬天 好", "泡 脚 好", 25.00},
    {"泡 脚 冬天 好", "脚 冬天 好", 25.00},
    {"农民 对 狗 心 爱护 结果 狗 咬", "农民 对 狗 心 爱护 最后 结果 狗 咬", 12.50},
    {"农民 对 狗 心 爱护 结果 狗 咬", "农村 对 狗 心 爱护 结果 狗", 25.00},
    {"农民 对 狗 心 爱护 结果 狗 咬", "农村 对 狗 心 爱护 最后 结果 狗", 37.50},
};

double round2(double v) { return std::round(v * 100.0) / 100.0; }

int recursive_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    int best = go(i + 1, j + 1) + (a[i] != b[j]);
    best = std::min({best, go(i + 1, j) + 1, go(i, j + 1) + 1});
    return memo[key] = best;
  };
  return go(0, 0);
}

}  // namespace

TEST(Wer, GoldenExamples) {
  for (const auto& g : kGolden) {
    auto r = wer(split_tokens(g.ref), split_tokens(g.hyp));
    EXPECT_EQ(round2(r.percent), g.wer) << g.hyp;
    const auto& a = r.alignment;
    EXPECT_EQ(a.substitutions + a.deletions + a.matches, a.reference_length);
  }
}

TEST(Wer, AlignmentMarksTheRightWords) {
  auto r = wer(split_tokens("AUCH NAH FLUSS UND ALPEN AUCH MOEGLICH NEBEL"),
               split_tokens("AUCH NAH FLUSS ALPEN BERG AUCH MOEGLICH NEBEL"));
  // A deletion plus an insertion costs the same as two substitutions; the
  // tie-break picks substitutions.
  EXPECT_EQ(r.alignment.errors(), 2);
  EXPECT_EQ(r.alignment.substitutions, 2);
  EXPECT_EQ(r.alignment.steps[3].op, EditOp::Substitution);
  EXPECT_EQ(r.alignment.steps[3].ref, "UND");
  auto d = wer(split_tokens("泡 脚 冬天 好"), split_tokens("泡 脚 好"));
  EXPECT_EQ(d.alignment.steps[2].op, EditOp::Deletion);
  EXPECT_EQ(d.alignment.steps[2].ref, "冬天");
  auto i = wer(split_tokens("a b c"), split_tokens("a x b c"));
  EXPECT_EQ(i.alignment.steps[1].op, EditOp::Insertion);
  auto s = wer(split_tokens("A B C D E F"), split_tokens("A B C D X Y"));
  EXPECT_EQ(s.alignment.substitutions, 2);
}

TEST(Wer, NotClampedAndEmptyReferenceRejected) {
  EXPECT_DOUBLE_EQ(wer(split_tokens("a"), split_tokens("b c d")).percent, 300.0);
  EXPECT_THROW(wer(Tokens{}, split_tokens("a")), UsageError);
  EXPECT_DOUBLE_EQ(wer(split_tokens("a b"), Tokens{}).percent, 100.0);
}

TEST(Wer, DistanceMatchesRecursiveOracleExhaustively) {
  // All sequences of length <= 3 over 3 symbols, paired; plus random length <= 6.
  std::vector<std::vector<int>> seqs{{}};
  for (int len = 1; len <= 3; ++len) {
    const int n = static_cast<int>(std::pow(3, len));
    for (int code = 0; code < n; ++code) {
      std::vector<int> s;
      for (int c = code, k = 0; k < len; ++k, c /= 3) s.push_back(c % 3);
      seqs.push_back(s);
    }
  }
  for (const auto& a : seqs)
    for (const auto& b : seqs) EXPECT_EQ(align_tokens(a, b).errors(), recursive_distance(a, b));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(0, 6), sym(0, 2);
  for (int n = 0; n < 2000; ++n) {
    std::vector<int> a(len(rng)), b(len(rng));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    EXPECT_EQ(align_tokens(a, b).errors(), recursive_distance(a, b));
  }
}

TEST(Wer, CorpusIsTotalOverTotal) {
  std::vector<Tokens> refs{split_tokens("a b c d"), split_tokens("e f")};
  std::vector<Tokens> hyps{split_tokens("a b c d"), split_tokens("e")};
  EXPECT_NEAR(corpus_wer(refs, hyps), 100.0 / 6.0, 1e-12);
}

TEST(Bleu, IdenticalIsHundred) {
  auto s = bleu(std::vector<Tokens>{split_tokens("a b c d e")}, {split_tokens("a b c d e")});
  for (double b : s.b) EXPECT_NEAR(b, 100.0, 1e-9);
}

TEST(Bleu, NoOverlapIsZero) {
  auto s = bleu(std::vector<Tokens>{split_tokens("a b c d")}, {split_tokens("w x y z")});
  for (double b : s.b) EXPECT_EQ(b, 0.0);
}

TEST(Bleu, HandDerivedCases) {
  auto s = bleu(std::vector<Tokens>{split_tokens("a b c d")}, {split_tokens("a b c d e")});
  EXPECT_NEAR(s.b[0], 80.0, 1e-6);
  EXPECT_NEAR(s.brevity_penalty, 1.0, 1e-12);
  // p2 = 3/4, p3 = 2/3, p4 = 1/2
  EXPECT_NEAR(s.b[1], 100 * std::sqrt(0.8 * 0.75), 1e-6);
  EXPECT_NEAR(s.b[3], 100 * std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25), 1e-6);
  // short hypothesis: BP = exp(1 - 4/2)
  auto t = bleu(std::vector<Tokens>{split_tokens("a b c d")}, {split_tokens("a b")}, 2);
  EXPECT_NEAR(t.b[1], 100 * std::exp(-1.0), 1e-6);
  // clipping: "the the the" against "the cat" gives 1/3
  auto c = bleu(std::vector<Tokens>{split_tokens("the cat")}, {split_tokens("the the the")}, 1);
  EXPECT_NEAR(c.b[0], 100.0 / 3, 1e-6);
}

TEST(Bleu, SmoothingOnlyForShortSegments) {
  // One-token hypothesis: no 2-grams exist at all.
  std::vector<Tokens> refs{split_tokens("a")}, hyps{split_tokens("a")};
  EXPECT_NEAR(bleu(refs, hyps, 2, true).b[1], 100.0, 1e-9);
  EXPECT_EQ(bleu(refs, hyps, 2, false).b[1], 0.0);
  // Long enough segments keep an honest zero.
  auto s = bleu(std::vector<Tokens>{split_tokens("a b c")}, {split_tokens("c b a")}, 2, true);
  EXPECT_EQ(s.b[1], 0.0);
  EXPECT_EQ(bleu(std::vector<Tokens>{}, std::vector<Tokens>{}).b[3], 0.0);
}

TEST(Bleu, RelabelingInvariantAndBounded) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(1, 8), sym(0, 4);
  const char* names[] = {"p", "q", "r", "s", "t"};
  const char* other[] = {"V", "W", "X", "Y", "Z"};
  std::vector<Tokens> r1, h1, r2, h2;
  for (int n = 0; n < 20; ++n) {
    Tokens a, b, a2, b2;
    for (int i = len(rng); i > 0; --i) {
      int k = sym(rng);
      a.push_back(names[k]), a2.push_back(other[k]);
    }
    for (int i = len(rng); i > 0; --i) {
      int k = sym(rng);
      b.push_back(names[k]), b2.push_back(other[k]);
    }
    r1.push_back(a), h1.push_back(b), r2.push_back(a2), h2.push_back(b2);
  }
  auto x = bleu(r1, h1), y = bleu(r2, h2);
  for (int n = 0; n < 4; ++n) {
    EXPECT_DOUBLE_EQ(x.b[n], y.b[n]);
    EXPECT_GE(x.b[n], 0.0);
    EXPECT_LE(x.b[n], 100.0);
  }
}

TEST(RougeL, Cases) {
  EXPECT_DOUBLE_EQ(rouge_l(split_tokens("a b c"), split_tokens("a b c")), 100.0);
  EXPECT_DOUBLE_EQ(rouge_l(split_tokens("a b c"), split_tokens("x y")), 0.0);
  EXPECT_DOUBLE_EQ(rouge_l(Tokens{}, Tokens{}), 0.0);
  // LCS 3, R = 0.75, P = 1, F = 2 * 0.75 / 1.75
  EXPECT_NEAR(rouge_l(split_tokens("a b c d"), split_tokens("a c d")), 100 * 1.5 / 1.75, 1e-6);
  EXPECT_EQ(kRougeBeta2, 1.0);
}

TEST(RougeL, LcsSymmetric) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(0, 7), sym(0, 3);
  for (int n = 0; n < 300; ++n) {
    std::vector<int> a(len(rng)), b(len(rng));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    EXPECT_EQ(lcs_length(a, b), lcs_length(b, a));
  }
}
