#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "twostream/corpus.hpp"
#include "twostream/heatmap.hpp"

using namespace twostream;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("twostream_corpus_" + name);
  fs::remove_all(p);
  return p;
}

CorpusConfig small_config() {
  CorpusConfig c;
  c.train = 12;
  c.dev = 4;
  c.test = 4;
  return c;
}

Appearance flat_background() { return Appearance{{0, 0, 0}, {0, 0, 0}, 0, 0, 0}; }

// Intensity-weighted centroid of channel 0 over one frame.
std::array<double, 2> centroid(const VideoClip& v, int t) {
  double si = 0, sj = 0, s = 0;
  for (int i = 0; i < v.height; ++i)
    for (int j = 0; j < v.width; ++j) {
      const double w = v.at(t, i, j, 0);
      si += w * i, sj += w * j, s += w;
    }
  return {si / s, sj / s};
}

}  // namespace

TEST(GenCorpus, SameSeedGivesIdenticalBytes) {
  auto a = temp_dir("a"), b = temp_dir("b");
  const auto cfg = small_config();
  const auto da = write_corpus(cfg, a), db = write_corpus(cfg, b);
  EXPECT_EQ(da, db);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(read_file(e.path()), read_file(b / fs::relative(e.path(), a))) << e.path();
  }
}

TEST(GenCorpus, DifferentSeedsDiffer) {
  auto cfg = small_config();
  const auto a = write_corpus(cfg, temp_dir("s1"));
  cfg.seed = 2;
  EXPECT_NE(a, write_corpus(cfg, temp_dir("s2")));
}

TEST(GenCorpus, DefaultSplitSizes) {
  CorpusConfig cfg;
  auto dir = temp_dir("full");
  write_corpus(cfg, dir);
  Dataset ds(dir / kManifestName);
  EXPECT_EQ(ds.indices("train").size(), 500u);
  EXPECT_EQ(ds.indices("dev").size(), 50u);
  EXPECT_EQ(ds.indices("test").size(), 50u);
  EXPECT_EQ(ds.vocab(), 20);
}

TEST(GenCorpus, SplitsDisjointAndAdjacentGlossesDiffer) {
  std::set<std::string> ids;
  for (const auto& r : generate_corpus(small_config())) {
    EXPECT_TRUE(ids.insert(r.id).second);
    EXPECT_EQ(r.id.rfind(r.split, 0), 0u);
    for (std::size_t u = 1; u < r.glosses.size(); ++u) EXPECT_NE(r.glosses[u], r.glosses[u - 1]) << r.id;
    EXPECT_EQ(r.text, grammar_map(r.glosses, 20, Grammar::Reorder));
  }
}

TEST(GenCorpus, InvalidConfigs) {
  CorpusConfig c;
  c.vocab = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CorpusConfig{};
  c.max_glosses = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CorpusConfig{};
  c.min_duration = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CorpusConfig{};
  c.min_separation = 100;
  EXPECT_THROW(make_prototypes(c), ConfigError);
}

TEST(Prototypes, PairwiseSeparated) {
  CorpusConfig c;
  auto p = make_prototypes(c);
  ASSERT_EQ(p.size(), 20u);
  for (std::size_t a = 0; a < p.size(); ++a)
    for (std::size_t b = a + 1; b < p.size(); ++b) EXPECT_GE(prototype_distance(p[a], p[b]), c.min_separation);
}

TEST(RenderSample, ZeroNoiseFrameCountIsSumOfDurations) {
  CorpusConfig c;
  c.pixel_noise = c.keypoint_jitter = c.confidence_dropout = 0;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(1);
  auto r = render_sample(c, protos, make_appearances(c)[0], {3, 7, 1}, {6, 6, 6}, rng);
  EXPECT_EQ(r.video.frames, 18);
  EXPECT_EQ(r.keypoints.frames, 18);
  for (float x : r.keypoints.confidence) EXPECT_EQ(x, 1.f);
}

TEST(RenderSample, FullDropoutZeroesConfidence) {
  CorpusConfig c;
  c.confidence_dropout = 1.0;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(2);
  auto r = render_sample(c, protos, make_appearances(c)[0], {2, 5}, {7, 9}, rng);
  for (float x : r.keypoints.confidence) EXPECT_EQ(x, 0.f);
}

TEST(RenderSample, BlobCentroidsMatchKeypoints) {
  CorpusConfig c;
  c.layout = "body:1";
  c.pixel_noise = 0;
  c.min_separation = 0.5;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(3);
  auto r = render_sample(c, protos, flat_background(), {1, 4, 9}, {8, 8, 8}, rng);
  for (int t = 0; t < r.video.frames; ++t) {
    const auto m = centroid(r.video, t);
    EXPECT_NEAR(m[0], r.keypoints.x(t, 0), 0.5 + 4 * c.keypoint_jitter) << t;
    EXPECT_NEAR(m[1], r.keypoints.y(t, 0), 0.5 + 4 * c.keypoint_jitter) << t;
  }
}

TEST(RenderSample, ZeroNoiseHeatmapArgmaxFollowsPrototype) {
  CorpusConfig c;
  c.pixel_noise = c.keypoint_jitter = c.confidence_dropout = 0;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(4);
  const GlossSeq g{5, 12};
  const std::vector<int> d{7, 9};
  auto r = render_sample(c, protos, make_appearances(c)[1], g, d, rng);
  HeatmapConfig hm{1.5, c.heatmap_size, c.heatmap_size, 0.3};
  auto h = rasterize<float>(r.keypoints, hm);
  const int K = c.keypoints(), S = c.heatmap_size;
  int t = 0;
  for (std::size_t u = 0; u < g.size(); ++u)
    for (int f = 0; f < d[u]; ++f, ++t)
      for (int k = 0; k < K; ++k) {
        int best = 0;
        for (int p = 1; p < S * S; ++p)
          if (h[(static_cast<std::size_t>(t) * S * S + p) * K + k] > h[(static_cast<std::size_t>(t) * S * S + best) * K + k])
            best = p;
        const auto want = protos[g[u] - 1].at(k, static_cast<double>(f) / (d[u] - 1));
        EXPECT_LE(std::abs(best / S - want[0]), 1.0);
        EXPECT_LE(std::abs(best % S - want[1]), 1.0);
      }
}

TEST(Grammar, EmptyAndIdentity) {
  EXPECT_TRUE(grammar_map({}, 20, Grammar::Reorder).empty());
  EXPECT_EQ(grammar_map({3, 14, 2}, 20, Grammar::Identity), (Tokens{"G03", "G14", "G02"}));
  EXPECT_THROW(grammar_map({21}, 20, Grammar::Reorder), ConfigError);
  EXPECT_THROW(grammar_map({0}, 20, Grammar::Identity), ConfigError);
}

TEST(Grammar, ReorderRule) {
  // 1 noun, 2 verb, 3 other
  EXPECT_EQ(grammar_map({2, 4, 3}, 20, Grammar::Reorder), (Tokens{"the", "w04", "did", "w02", "w03"}));
  EXPECT_EQ(grammar_map({1, 2}, 20, Grammar::Reorder), (Tokens{"the", "w01", "w02"}));
  EXPECT_NE(grammar_map({2, 4}, 20, Grammar::Reorder).size(), 2u);
}

TEST(Grammar, InverseRoundTripsRandomSequences) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 8), gl(1, 20);
  for (auto grammar : {Grammar::Reorder, Grammar::Identity})
    for (int n = 0; n < 1000; ++n) {
      GlossSeq g(static_cast<std::size_t>(len(rng)));
      for (int& x : g) x = gl(rng);
      EXPECT_EQ(grammar_inverse(grammar_map(g, 20, grammar), 20, grammar), g);
    }
}

TEST(Grammar, InjectiveOverCorpus) {
  CorpusConfig c;
  std::set<std::string> texts;
  std::set<GlossSeq> seqs;
  for (const auto& r : generate_corpus(c)) {
    seqs.insert(r.glosses);
    texts.insert(join(r.text));
  }
  EXPECT_EQ(texts.size(), seqs.size());
}

TEST(Augment, IdentityLeavesSampleUnchanged) {
  auto recs = generate_corpus(small_config());
  EXPECT_EQ(augment(recs[0], AugmentParams{}, 16), recs[0]);
}

TEST(Augment, HalfRateHalvesFrames) {
  CorpusConfig c;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(6);
  auto r = render_sample(c, protos, make_appearances(c)[0], {1, 2}, {8, 8}, rng);
  AugmentParams p;
  p.rate = 0.5;
  auto a = augment(r, p, 16);
  EXPECT_EQ(a.video.frames, 8);
  EXPECT_EQ(a.keypoints.frames, 8);
  EXPECT_EQ(a.glosses, r.glosses);
  EXPECT_EQ(a.text, r.text);
  EXPECT_EQ(augment(r, p, 16, 12).video.frames, 12);
}

TEST(Augment, CropMovesBlobsAndKeypointsTogether) {
  CorpusConfig c;
  c.layout = "body:1";
  c.pixel_noise = 0;
  c.keypoint_jitter = 0;
  c.min_separation = 0.5;
  auto protos = make_prototypes(c);
  std::mt19937_64 rng(7);
  auto r = render_sample(c, protos, flat_background(), {2, 6}, {8, 8}, rng);
  AugmentParams p;
  p.crop = 0.8;
  p.crop_i = 0.1;
  p.crop_j = 0.05;
  auto a = augment(r, p, 16);
  for (int t = 0; t < a.video.frames; ++t) {
    const double kx = a.keypoints.x(t, 0), ky = a.keypoints.y(t, 0);
    if (kx < 2 || ky < 2 || kx > 13 || ky > 13) continue;
    const auto m = centroid(a.video, t);
    EXPECT_NEAR(m[0] - centroid(r.video, t)[0], kx - r.keypoints.x(t, 0), 0.5) << t;
    EXPECT_NEAR(m[1] - centroid(r.video, t)[1], ky - r.keypoints.y(t, 0), 0.5) << t;
  }
}

TEST(Augment, DrawnParametersStayInRange) {
  std::mt19937_64 rng(8);
  AugmentRanges ranges;
  for (int i = 0; i < 200; ++i) {
    auto p = draw_augment(ranges, rng);
    EXPECT_GE(p.crop, 0.7);
    EXPECT_LE(p.crop, 1.0);
    EXPECT_GE(p.rate, 0.5);
    EXPECT_LE(p.rate, 1.5);
    EXPECT_LE(p.crop_i + p.crop, 1.0 + 1e-12);
  }
  AugmentParams tiny;
  tiny.crop = 0.01;
  EXPECT_THROW(augment(generate_corpus(small_config())[0], tiny, 16), ConfigError);
  ranges.crop_max = 1.2;
  EXPECT_THROW(draw_augment(ranges, rng), ConfigError);
}

TEST(LoadDataset, RoundTripIsBitExact) {
  const auto cfg = small_config();
  auto dir = temp_dir("rt");
  write_corpus(cfg, dir);
  auto ds = load_dataset(dir / kManifestName);
  const auto recs = generate_corpus(cfg);
  ASSERT_EQ(ds.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(ds.load(i), recs[i]) << i;
}

TEST(LoadDataset, DigestMismatchIsCorruption) {
  auto dir = temp_dir("bad");
  write_corpus(small_config(), dir);
  Dataset ds(dir / kManifestName);
  std::string bytes = read_file(dir / ds.row(3).video_path);
  bytes[bytes.size() - 1] ^= 1;
  write_file(dir / ds.row(3).video_path, bytes);
  EXPECT_THROW(ds.load(3), CorruptionError);
  EXPECT_NO_THROW(ds.load(2));
}

TEST(LoadDataset, ShuffleIsReproduciblePermutation) {
  auto a = shuffled_order(50, 9), b = shuffled_order(50, 9), c = shuffled_order(50, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], i);
}

TEST(AppearanceShift, TestUsesHeldOutAppearances) {
  auto c = small_config();
  c.appearance_shift = true;
  std::set<int> train, test;
  for (const auto& r : generate_corpus(c)) (r.split == "test" ? test : train).insert(r.appearance);
  for (int a : test) EXPECT_EQ(train.count(a), 0u);
  EXPECT_FALSE(test.empty());
  c.appearances = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AppearanceShift, LabelsUnchanged) {
  auto c = small_config();
  auto plain = generate_corpus(c);
  c.appearance_shift = true;
  auto shifted = generate_corpus(c);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(plain[i].glosses, shifted[i].glosses);
    EXPECT_EQ(plain[i].text, shifted[i].text);
  }
  EXPECT_EQ(generate_corpus(c), shifted);
}
