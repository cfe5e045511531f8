#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "twostream/ctc.hpp"
#include "twostream/heatmap.hpp"
#include "twostream/io.hpp"
#include "twostream/metrics.hpp"

namespace twostream {

enum class Grammar { Identity, Reorder };

inline std::string grammar_name(Grammar g) { return g == Grammar::Identity ? "identity" : "reorder"; }

inline Grammar parse_grammar(const std::string& s) {
  if (s == "identity") return Grammar::Identity;
  if (s == "reorder") return Grammar::Reorder;
  throw ConfigError("unknown grammar '" + s + "'");
}

struct CorpusConfig {
  std::uint64_t seed = 1;
  int vocab = 20;
  int train = 500, dev = 50, test = 50;
  int min_glosses = 2, max_glosses = 4;
  int min_duration = 6, max_duration = 10;
  int video_size = 16;    // H = W
  int heatmap_size = 16;  // H' = W'
  std::string layout = "body:4,hand:4";
  double blob_sigma = 1.0;       // video blob radius, video pixels
  double pixel_noise = 0.03;
  double keypoint_jitter = 0.25;  // std, heatmap pixels
  double confidence_dropout = 0.02;
  int appearances = 4;
  bool appearance_shift = false;  // test split uses held-out appearances
  Grammar grammar = Grammar::Reorder;
  double min_separation = 3.0;  // mean keypoint distance between prototypes

  int keypoints() const { return KeypointLayout::parse(layout).total(); }

  void validate() const {
    if (vocab < 2 || vocab > 999) throw ConfigError("corpus vocab must be in [2, 999]");
    if (train < 0 || dev < 0 || test < 0) throw ConfigError("split sizes must be >= 0");
    if (min_glosses < 1 || max_glosses < min_glosses) throw ConfigError("gloss length range is degenerate");
    if (min_duration < 1 || max_duration < min_duration) throw ConfigError("duration range is degenerate");
    if (video_size < 4 || heatmap_size < 4) throw ConfigError("video and heatmap sizes must be >= 4");
    keypoints();
    if (!(blob_sigma > 0)) throw ConfigError("blob_sigma must be positive");
    if (pixel_noise < 0 || keypoint_jitter < 0) throw ConfigError("noise levels must be >= 0");
    if (confidence_dropout < 0 || confidence_dropout > 1) throw ConfigError("confidence_dropout must be in [0, 1]");
    if (appearances < 1) throw ConfigError("appearance pool must be >= 1");
    if (appearance_shift && appearances < 2) throw ConfigError("appearance shift needs a pool of at least 2");
    if (min_separation < 0) throw ConfigError("min_separation must be >= 0");
  }

  // Canonical text form; its digest identifies the corpus.
  std::string str() const {
    std::ostringstream o;
    o.precision(17);
    o << "seed=" << seed << "\nvocab=" << vocab << "\ntrain=" << train << "\ndev=" << dev << "\ntest=" << test
      << "\nmin_glosses=" << min_glosses << "\nmax_glosses=" << max_glosses << "\nmin_duration=" << min_duration
      << "\nmax_duration=" << max_duration << "\nvideo_size=" << video_size << "\nheatmap_size=" << heatmap_size
      << "\nlayout=" << layout << "\nblob_sigma=" << blob_sigma << "\npixel_noise=" << pixel_noise
      << "\nkeypoint_jitter=" << keypoint_jitter << "\nconfidence_dropout=" << confidence_dropout
      << "\nappearances=" << appearances << "\nappearance_shift=" << (appearance_shift ? "true" : "false")
      << "\ngrammar=" << grammar_name(grammar) << "\nmin_separation=" << min_separation << "\n";
    return o.str();
  }
};

// ---------------------------------------------------------------------------
// Vocabularies and grammar

inline std::string gloss_token(int g) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "G%02d", g);
  return buf;
}

inline std::string word_token(int g) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%02d", g);
  return buf;
}

/// Gloss names; index 0 is the blank.
inline std::vector<std::string> gloss_vocabulary(int vocab) {
  std::vector<std::string> v{"<blank>"};
  for (int g = 1; g <= vocab; ++g) v.push_back(gloss_token(g));
  return v;
}

enum class GlossClass { Noun, Verb, Other };

inline GlossClass gloss_class(int g) {
  switch (g % 3) {
    case 1: return GlossClass::Noun;
    case 2: return GlossClass::Verb;
    default: return GlossClass::Other;
  }
}

inline constexpr const char* kDeterminer = "the";
inline constexpr const char* kVerbMarker = "did";

/// Spoken words the grammar can produce, in id order.
inline std::vector<std::string> text_words(int vocab, Grammar grammar) {
  std::vector<std::string> w;
  if (grammar == Grammar::Identity) {
    for (int g = 1; g <= vocab; ++g) w.push_back(gloss_token(g));
  } else {
    w = {kDeterminer, kVerbMarker};
    for (int g = 1; g <= vocab; ++g) w.push_back(word_token(g));
  }
  return w;
}

/// Identity copies glosses. Reorder puts a determiner before every noun and
/// turns "verb noun" into "the noun did verb".
inline Tokens grammar_map(const GlossSeq& glosses, int vocab, Grammar grammar) {
  for (int g : glosses)
    if (g < 1 || g > vocab) throw ConfigError("gloss id " + std::to_string(g) + " outside the vocabulary");
  Tokens out;
  if (grammar == Grammar::Identity) {
    for (int g : glosses) out.push_back(gloss_token(g));
    return out;
  }
  for (std::size_t i = 0; i < glosses.size(); ++i) {
    const int g = glosses[i];
    if (gloss_class(g) == GlossClass::Verb && i + 1 < glosses.size() && gloss_class(glosses[i + 1]) == GlossClass::Noun) {
      out.insert(out.end(), {kDeterminer, word_token(glosses[i + 1]), kVerbMarker, word_token(g)});
      ++i;
    } else if (gloss_class(g) == GlossClass::Noun) {
      out.insert(out.end(), {kDeterminer, word_token(g)});
    } else {
      out.push_back(word_token(g));
    }
  }
  return out;
}

inline GlossSeq grammar_inverse(const Tokens& text, int vocab, Grammar grammar) {
  auto id_of = [&](const std::string& w, char prefix) {
    if (w.size() < 2 || w[0] != prefix) throw ConfigError("not a grammar word: '" + w + "'");
    int g = 0;
    for (std::size_t i = 1; i < w.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(w[i]))) throw ConfigError("not a grammar word: '" + w + "'");
      g = g * 10 + (w[i] - '0');
    }
    if (g < 1 || g > vocab) throw ConfigError("word outside the vocabulary: '" + w + "'");
    return g;
  };
  GlossSeq out;
  if (grammar == Grammar::Identity) {
    for (const auto& w : text) out.push_back(id_of(w, 'G'));
    return out;
  }
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == kDeterminer) {
      if (i + 1 >= text.size()) throw ConfigError("dangling determiner");
      const int noun = id_of(text[i + 1], 'w');
      if (i + 3 < text.size() && text[i + 2] == kVerbMarker) {
        out.push_back(id_of(text[i + 3], 'w'));
        out.push_back(noun);
        i += 3;
      } else {
        out.push_back(noun);
        i += 1;
      }
    } else {
      out.push_back(id_of(text[i], 'w'));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prototypes and rendering

/// Keypoint k moves from `from[k]` to `to[k]` along a bowed path; positions
/// are in heatmap pixels.
struct GlossPrototype {
  int gloss = 0;
  std::vector<std::array<double, 2>> from, to, bow;

  std::array<double, 2> at(int k, double u) const {
    const double s = std::sin(3.14159265358979323846 * u);
    return {from[k][0] + (to[k][0] - from[k][0]) * u + bow[k][0] * s,
            from[k][1] + (to[k][1] - from[k][1]) * u + bow[k][1] * s};
  }
};

// Mean keypoint distance between two prototypes over a fixed time grid.
inline double prototype_distance(const GlossPrototype& a, const GlossPrototype& b) {
  double total = 0;
  int n = 0;
  for (int i = 0; i < 8; ++i) {
    const double u = i / 7.0;
    for (std::size_t k = 0; k < a.from.size(); ++k) {
      const auto p = a.at(static_cast<int>(k), u), q = b.at(static_cast<int>(k), u);
      total += std::hypot(p[0] - q[0], p[1] - q[1]);
      ++n;
    }
  }
  return total / n;
}

inline std::vector<GlossPrototype> make_prototypes(const CorpusConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ fnv1a("prototypes"));
  const int K = cfg.keypoints();
  const double lo = 2.0, hi = cfg.heatmap_size - 3.0;
  std::uniform_real_distribution<double> pos(lo, hi), bow(-2.0, 2.0);
  std::vector<GlossPrototype> out;
  for (int g = 1; g <= cfg.vocab; ++g) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw ConfigError("cannot place prototypes with the requested min_separation");
      GlossPrototype p;
      p.gloss = g;
      for (int k = 0; k < K; ++k) {
        p.from.push_back({pos(rng), pos(rng)});
        p.to.push_back({pos(rng), pos(rng)});
        p.bow.push_back({bow(rng), bow(rng)});
      }
      bool ok = true;
      for (const auto& q : out) ok = ok && prototype_distance(p, q) >= cfg.min_separation;
      if (ok) {
        out.push_back(std::move(p));
        break;
      }
    }
  }
  return out;
}

struct Appearance {
  std::array<double, 3> base;
  std::array<double, 3> texture;
  double fi, fj, phase;
};

inline std::vector<Appearance> make_appearances(const CorpusConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ fnv1a("appearances"));
  std::uniform_real_distribution<double> base(0.05, 0.35), amp(0.0, 0.12), freq(0.2, 1.2), phase(0, 6.28);
  std::vector<Appearance> out;
  for (int a = 0; a < cfg.appearances; ++a) {
    Appearance ap;
    for (int c = 0; c < 3; ++c) ap.base[c] = base(rng), ap.texture[c] = amp(rng);
    ap.fi = freq(rng), ap.fj = freq(rng), ap.phase = phase(rng);
    out.push_back(ap);
  }
  return out;
}

// Fixed blob colors; keypoint k uses entry k mod 8.
inline std::array<double, 3> blob_color(int k) {
  static constexpr std::array<std::array<double, 3>, 8> kPalette{{{1.0, 0.2, 0.2},
                                                                  {0.2, 1.0, 0.2},
                                                                  {0.2, 0.2, 1.0},
                                                                  {1.0, 1.0, 0.2},
                                                                  {1.0, 0.2, 1.0},
                                                                  {0.2, 1.0, 1.0},
                                                                  {1.0, 0.6, 0.2},
                                                                  {0.6, 0.2, 1.0}}};
  return kPalette[k % 8];
}

struct VideoClip {
  int frames = 0, height = 0, width = 0;
  std::vector<float> pixels;  // [T][H][W][3]

  float at(int t, int i, int j, int c) const {
    return pixels[((static_cast<std::size_t>(t) * height + i) * width + j) * 3 + c];
  }
  bool operator==(const VideoClip&) const = default;
};

struct SampleRecord {
  std::string id;
  std::string split;
  int appearance = 0;
  GlossSeq glosses;
  Tokens text;
  VideoClip video;
  KeypointTrajectory keypoints;
  std::string layout;

  bool operator==(const SampleRecord&) const = default;
};

/// Draws blobs at the given (un-jittered) heatmap-pixel positions over the
/// appearance background.
inline VideoClip render_video(const std::vector<std::vector<std::array<double, 2>>>& positions, int size,
                              double heatmap_size, const Appearance& ap, double blob_sigma, double noise,
                              std::mt19937_64& rng) {
  VideoClip v;
  v.frames = static_cast<int>(positions.size());
  v.height = v.width = size;
  v.pixels.assign(static_cast<std::size_t>(v.frames) * size * size * 3, 0.f);
  const double scale = size / heatmap_size;
  const double inv = 1.0 / (2 * blob_sigma * blob_sigma);
  std::normal_distribution<double> n(0.0, noise);
  for (int t = 0; t < v.frames; ++t)
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        std::array<double, 3> px;
        const double tex = std::sin(ap.fi * i + ap.fj * j + ap.phase);
        for (int c = 0; c < 3; ++c) px[c] = ap.base[c] + ap.texture[c] * tex;
        for (std::size_t k = 0; k < positions[t].size(); ++k) {
          const double ci = (positions[t][k][0] + 0.5) * scale - 0.5, cj = (positions[t][k][1] + 0.5) * scale - 0.5;
          const double w = std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) * inv);
          const auto col = blob_color(static_cast<int>(k));
          for (int c = 0; c < 3; ++c) px[c] += col[c] * w;
        }
        float* out = v.pixels.data() + ((static_cast<std::size_t>(t) * size + i) * size + j) * 3;
        for (int c = 0; c < 3; ++c) {
          double val = px[c] + (noise > 0 ? n(rng) : 0.0);
          out[c] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  return v;
}

/// Renders one sample. `durations` gives the frame count of every gloss.
inline SampleRecord render_sample(const CorpusConfig& cfg, const std::vector<GlossPrototype>& protos,
                                  const Appearance& ap, const GlossSeq& glosses, const std::vector<int>& durations,
                                  std::mt19937_64& rng) {
  if (durations.size() != glosses.size()) throw UsageError("render_sample: one duration per gloss");
  const int K = cfg.keypoints();
  std::vector<std::vector<std::array<double, 2>>> truth;
  for (std::size_t u = 0; u < glosses.size(); ++u) {
    if (glosses[u] < 1 || glosses[u] > static_cast<int>(protos.size())) throw UsageError("gloss without prototype");
    const auto& p = protos[glosses[u] - 1];
    const int d = durations[u];
    for (int f = 0; f < d; ++f) {
      const double s = d == 1 ? 0.5 : static_cast<double>(f) / (d - 1);
      std::vector<std::array<double, 2>> frame;
      for (int k = 0; k < K; ++k) frame.push_back(p.at(k, s));
      truth.push_back(std::move(frame));
    }
  }
  SampleRecord r;
  r.glosses = glosses;
  r.text = grammar_map(glosses, cfg.vocab, cfg.grammar);
  r.layout = cfg.layout;
  r.video = render_video(truth, cfg.video_size, cfg.heatmap_size, ap, cfg.blob_sigma, cfg.pixel_noise, rng);
  const int T = static_cast<int>(truth.size());
  r.keypoints = KeypointTrajectory(T, K);
  std::normal_distribution<double> jitter(0.0, cfg.keypoint_jitter);
  std::bernoulli_distribution drop(cfg.confidence_dropout);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      const double jx = cfg.keypoint_jitter > 0 ? jitter(rng) : 0.0, jy = cfg.keypoint_jitter > 0 ? jitter(rng) : 0.0;
      r.keypoints.x(t, k) = static_cast<float>(truth[t][k][0] + jx);
      r.keypoints.y(t, k) = static_cast<float>(truth[t][k][1] + jy);
      r.keypoints.conf(t, k) = drop(rng) ? 0.f : 1.f;
    }
  return r;
}

inline std::vector<std::pair<std::string, int>> split_plan(const CorpusConfig& cfg) {
  return {{"train", cfg.train}, {"dev", cfg.dev}, {"test", cfg.test}};
}

inline std::string sample_id(const std::string& split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04d", split.c_str(), i);
  return buf;
}

/// The appearance indices a split may draw from.
inline std::vector<int> appearance_pool(const CorpusConfig& cfg, const std::string& split) {
  std::vector<int> all(cfg.appearances);
  std::iota(all.begin(), all.end(), 0);
  if (!cfg.appearance_shift) return all;
  const int half = cfg.appearances / 2;
  if (split == "test") return {all.begin() + half, all.end()};
  return {all.begin(), all.begin() + half};
}

/// Generates one sample from its own random stream.
inline SampleRecord generate_sample(const CorpusConfig& cfg, const std::vector<GlossPrototype>& protos,
                                    const std::vector<Appearance>& looks, const std::string& split, int index) {
  const std::string id = sample_id(split, index);
  std::mt19937_64 rng(cfg.seed ^ fnv1a(id));
  std::uniform_int_distribution<int> len(cfg.min_glosses, cfg.max_glosses), gl(1, cfg.vocab),
      other(1, cfg.vocab - 1), dur(cfg.min_duration, cfg.max_duration);
  const auto pool = appearance_pool(cfg, split);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  GlossSeq glosses(static_cast<std::size_t>(len(rng)));
  // Adjacent glosses differ.
  for (std::size_t u = 0; u < glosses.size(); ++u) {
    if (u == 0) {
      glosses[u] = gl(rng);
    } else {
      const int g = other(rng);
      glosses[u] = g >= glosses[u - 1] ? g + 1 : g;
    }
  }
  std::vector<int> durations;
  for (std::size_t u = 0; u < glosses.size(); ++u) durations.push_back(dur(rng));
  const int a = pool[pick(rng)];
  SampleRecord r = render_sample(cfg, protos, looks[a], glosses, durations, rng);
  r.id = id;
  r.split = split;
  r.appearance = a;
  return r;
}

inline std::vector<SampleRecord> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const auto protos = make_prototypes(cfg);
  const auto looks = make_appearances(cfg);
  std::vector<SampleRecord> out;
  for (const auto& [split, n] : split_plan(cfg))
    for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, protos, looks, split, i));
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string encode_video(const VideoClip& v) {
  std::string out = "TSVID " + std::to_string(v.frames) + " " + std::to_string(v.height) + " " +
                    std::to_string(v.width) + " 3\n";
  append_f32(out, v.pixels.data(), v.pixels.size());
  return out;
}

inline VideoClip decode_video(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw CorruptionError("video header missing");
  std::istringstream hdr{std::string(bytes.substr(0, nl))};
  std::string magic;
  int c = 0;
  VideoClip v;
  if (!(hdr >> magic >> v.frames >> v.height >> v.width >> c) || magic != "TSVID" || c != 3)
    throw CorruptionError("bad video header");
  const std::size_t n = static_cast<std::size_t>(v.frames) * v.height * v.width * 3;
  if (bytes.size() - nl - 1 != 4 * n) throw CorruptionError("video payload size mismatch");
  v.pixels = parse_f32<float>(bytes.substr(nl + 1), n);
  return v;
}

inline std::string encode_keypoints(const KeypointTrajectory& kp, const std::string& layout) {
  std::string out = "TSKP " + std::to_string(kp.frames) + " " + std::to_string(kp.keypoints) + " " + layout + "\n";
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(kp.frames) * kp.keypoints * 3);
  for (int t = 0; t < kp.frames; ++t)
    for (int k = 0; k < kp.keypoints; ++k) flat.insert(flat.end(), {kp.x(t, k), kp.y(t, k), kp.conf(t, k)});
  append_f32(out, flat.data(), flat.size());
  return out;
}

inline std::pair<KeypointTrajectory, std::string> decode_keypoints(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw CorruptionError("keypoint header missing");
  std::istringstream hdr{std::string(bytes.substr(0, nl))};
  std::string magic, layout;
  int T = 0, K = 0;
  if (!(hdr >> magic >> T >> K >> layout) || magic != "TSKP") throw CorruptionError("bad keypoint header");
  if (KeypointLayout::parse(layout).total() != K) throw CorruptionError("keypoint layout disagrees with K");
  const std::size_t n = static_cast<std::size_t>(T) * K * 3;
  if (bytes.size() - nl - 1 != 4 * n) throw CorruptionError("keypoint payload size mismatch");
  auto flat = parse_f32<float>(bytes.substr(nl + 1), n);
  KeypointTrajectory kp(T, K);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) {
      const float* e = flat.data() + (static_cast<std::size_t>(t) * K + k) * 3;
      kp.x(t, k) = e[0], kp.y(t, k) = e[1], kp.conf(t, k) = e[2];
    }
  return {kp, layout};
}

inline std::string join(const std::vector<std::string>& items, const std::string& sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

struct ManifestRow {
  std::string id, video_path, keypoint_path, video_digest, keypoint_digest;
  int frames = 0, glosses = 0, words = 0;
  std::string split;
  int appearance = 0;
};

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kManifestColumns =
    "id\tvideo\tkeypoints\tT\tU\tW\tsplit\tappearance\tvideo_digest\tkeypoint_digest";

/// Writes the corpus under `dir` and returns the manifest digest.
inline std::string write_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir) {
  const auto records = generate_corpus(cfg);
  std::string manifest = "# twostream-corpus config=" + digest(cfg.str()) + "\n" + kManifestColumns + "\n";
  std::string annotations;
  for (const auto& r : records) {
    const std::string vp = "video/" + r.id + ".vid", kp = "keypoints/" + r.id + ".kp";
    const std::string vb = encode_video(r.video), kb = encode_keypoints(r.keypoints, r.layout);
    write_file(dir / vp, vb);
    write_file(dir / kp, kb);
    manifest += r.id + "\t" + vp + "\t" + kp + "\t" + std::to_string(r.video.frames) + "\t" +
                std::to_string(r.glosses.size()) + "\t" + std::to_string(r.text.size()) + "\t" + r.split + "\t" +
                std::to_string(r.appearance) + "\t" + digest(vb) + "\t" + digest(kb) + "\n";
    Tokens g;
    for (int x : r.glosses) g.push_back(gloss_token(x));
    annotations += r.id + "\t" + join(g) + "\t" + join(r.text) + "\n";
  }
  write_file(dir / "annotations.tsv", annotations);
  write_file(dir / "corpus.cfg", cfg.str());
  std::string gv, tv;
  for (const auto& s : gloss_vocabulary(cfg.vocab)) gv += s + "\n";
  for (const auto& s : text_words(cfg.vocab, cfg.grammar)) tv += s + "\n";
  write_file(dir / "glosses.txt", gv);
  write_file(dir / "words.txt", tv);
  write_file(dir / kManifestName, manifest);
  return digest(manifest);
}

/// A corpus on disk. Rows are read from the manifest up front; sample
/// payloads are loaded on demand and checked against their digests.
class Dataset {
 public:
  explicit Dataset(const std::filesystem::path& manifest_path) : root_(manifest_path.parent_path()) {
    const std::string text = read_file(manifest_path);
    manifest_digest_ = digest(text);
    auto lines = split(text, '\n');
    if (lines.size() < 2 || lines[0].rfind("# twostream-corpus config=", 0) != 0)
      throw CorruptionError("not a corpus manifest: " + manifest_path.string());
    config_digest_ = lines[0].substr(std::string("# twostream-corpus config=").size());
    for (std::size_t i = 2; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto f = split(lines[i], '\t');
      if (f.size() != 10) throw CorruptionError("manifest line " + std::to_string(i + 1) + ": expected 10 fields");
      ManifestRow r;
      r.id = f[0], r.video_path = f[1], r.keypoint_path = f[2];
      try {
        r.frames = std::stoi(f[3]), r.glosses = std::stoi(f[4]), r.words = std::stoi(f[5]);
        r.appearance = std::stoi(f[7]);
      } catch (const std::exception&) {
        throw CorruptionError("manifest line " + std::to_string(i + 1) + ": bad number");
      }
      r.split = f[6], r.video_digest = f[8], r.keypoint_digest = f[9];
      rows_.push_back(std::move(r));
    }
    for (const auto& line : split(read_file(root_ / "annotations.tsv"), '\n')) {
      if (line.empty()) continue;
      auto f = split(line, '\t');
      if (f.size() != 3) throw CorruptionError("bad annotation line");
      annotations_[f[0]] = {split_tokens(f[1]), split_tokens(f[2])};
    }
    glosses_ = read_vocab(root_ / "glosses.txt");
    words_ = read_vocab(root_ / "words.txt");
  }

  std::size_t size() const { return rows_.size(); }
  const ManifestRow& row(std::size_t i) const { return rows_[i]; }
  const std::string& manifest_digest() const { return manifest_digest_; }
  const std::string& config_digest() const { return config_digest_; }
  const std::vector<std::string>& gloss_names() const { return glosses_; }
  const std::vector<std::string>& words() const { return words_; }
  int vocab() const { return static_cast<int>(glosses_.size()) - 1; }

  // Row indices of one split, in manifest order.
  std::vector<std::size_t> indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      if (rows_[i].split == split) out.push_back(i);
    return out;
  }

  SampleRecord load(std::size_t i) const {
    const auto& row = rows_.at(i);
    const std::string vb = read_file(root_ / row.video_path), kb = read_file(root_ / row.keypoint_path);
    if (digest(vb) != row.video_digest) throw CorruptionError("digest mismatch for " + row.video_path);
    if (digest(kb) != row.keypoint_digest) throw CorruptionError("digest mismatch for " + row.keypoint_path);
    SampleRecord r;
    r.id = row.id;
    r.split = row.split;
    r.appearance = row.appearance;
    r.video = decode_video(vb);
    std::tie(r.keypoints, r.layout) = decode_keypoints(kb);
    auto it = annotations_.find(row.id);
    if (it == annotations_.end()) throw CorruptionError("no annotation for " + row.id);
    for (const auto& g : it->second.first) {
      auto pos = std::find(glosses_.begin() + 1, glosses_.end(), g);
      if (pos == glosses_.end()) throw CorruptionError("unknown gloss " + g);
      r.glosses.push_back(static_cast<int>(pos - glosses_.begin()));
    }
    r.text = it->second.second;
    if (r.video.frames != row.frames || r.keypoints.frames != row.frames)
      throw CorruptionError("frame count mismatch for " + row.id);
    return r;
  }

  std::vector<SampleRecord> load_split(const std::string& split) const {
    std::vector<SampleRecord> out;
    for (auto i : indices(split)) out.push_back(load(i));
    return out;
  }

 private:
  static std::vector<std::string> read_vocab(const std::filesystem::path& p) {
    std::vector<std::string> v;
    for (auto& line : split(read_file(p), '\n'))
      if (!line.empty()) v.push_back(line);
    return v;
  }

  std::filesystem::path root_;
  std::string manifest_digest_, config_digest_;
  std::vector<ManifestRow> rows_;
  std::map<std::string, std::pair<Tokens, Tokens>> annotations_;
  std::vector<std::string> glosses_, words_;
};

inline Dataset load_dataset(const std::filesystem::path& manifest) { return Dataset(manifest); }

/// Permutation of [0, n) drawn from `seed`.
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(order[i - 1], order[d(rng)]);
  }
  return order;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  double crop = 1.0;      // window side as a fraction of the frame
  double crop_i = 0.0;    // window origin, fraction of the frame
  double crop_j = 0.0;
  double rate = 1.0;      // output frames = round(T * rate)
};

struct AugmentRanges {
  double crop_min = 0.7, crop_max = 1.0;
  double rate_min = 0.5, rate_max = 1.5;

  void validate() const {
    if (!(crop_min > 0 && crop_min <= crop_max && crop_max <= 1.0)) throw ConfigError("crop range must lie in (0, 1]");
    if (!(rate_min > 0 && rate_min <= rate_max)) throw ConfigError("rate range must be positive");
  }
};

inline AugmentParams draw_augment(const AugmentRanges& ranges, std::mt19937_64& rng) {
  ranges.validate();
  std::uniform_real_distribution<double> crop(ranges.crop_min, ranges.crop_max), rate(ranges.rate_min, ranges.rate_max),
      unit(0.0, 1.0);
  AugmentParams p;
  p.crop = crop(rng);
  p.crop_i = unit(rng) * (1 - p.crop);
  p.crop_j = unit(rng) * (1 - p.crop);
  p.rate = rate(rng);
  return p;
}

/// Source frame of output frame i under nearest-frame resampling.
inline int resample_source(int i, int in_frames, int out_frames) {
  return std::min(in_frames - 1, static_cast<int>((i + 0.5) * in_frames / out_frames));
}

/// Same crop window and frame resampling for video and keypoints; labels
/// are untouched. Keypoints live on a heatmap_size grid. `min_frames` raises
/// the output length when the rate would otherwise leave too few frames.
inline SampleRecord augment(const SampleRecord& in, const AugmentParams& p, int heatmap_size, int min_frames = 1) {
  if (!(p.crop > 0 && p.crop <= 1) || p.crop_i < 0 || p.crop_j < 0 || p.crop_i + p.crop > 1 + 1e-12 ||
      p.crop_j + p.crop > 1 + 1e-12)
    throw ConfigError("crop window outside the frame");
  if (!(p.rate > 0)) throw ConfigError("rate must be positive");
  const int H = in.video.height, W = in.video.width;
  if (p.crop * std::min(H, W) < 1.0) throw ConfigError("crop window smaller than one pixel");
  const int T = in.video.frames;
  const int out_t = std::max({1, min_frames, static_cast<int>(std::lround(T * p.rate))});
  SampleRecord r = in;
  r.video.frames = out_t;
  r.video.pixels.assign(static_cast<std::size_t>(out_t) * H * W * 3, 0.f);
  r.keypoints = KeypointTrajectory(out_t, in.keypoints.keypoints);
  const bool identity_crop = p.crop == 1.0 && p.crop_i == 0.0 && p.crop_j == 0.0;
  for (int t = 0; t < out_t; ++t) {
    const int s = resample_source(t, T, out_t);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        float* dst = r.video.pixels.data() + ((static_cast<std::size_t>(t) * H + i) * W + j) * 3;
        if (identity_crop) {
          for (int c = 0; c < 3; ++c) dst[c] = in.video.at(s, i, j, c);
          continue;
        }
        // bilinear sample at the source position of this pixel centre
        const double si = (p.crop_i + (i + 0.5) / H * p.crop) * H - 0.5;
        const double sj = (p.crop_j + (j + 0.5) / W * p.crop) * W - 0.5;
        const int i0 = std::clamp(static_cast<int>(std::floor(si)), 0, H - 1), j0 = std::clamp(static_cast<int>(std::floor(sj)), 0, W - 1);
        const int i1 = std::min(i0 + 1, H - 1), j1 = std::min(j0 + 1, W - 1);
        const double fi = std::clamp(si - i0, 0.0, 1.0), fj = std::clamp(sj - j0, 0.0, 1.0);
        for (int c = 0; c < 3; ++c)
          dst[c] = static_cast<float>((1 - fi) * ((1 - fj) * in.video.at(s, i0, j0, c) + fj * in.video.at(s, i0, j1, c)) +
                                      fi * ((1 - fj) * in.video.at(s, i1, j0, c) + fj * in.video.at(s, i1, j1, c)));
      }
    for (int k = 0; k < in.keypoints.keypoints; ++k) {
      r.keypoints.conf(t, k) = in.keypoints.conf(s, k);
      if (identity_crop) {
        r.keypoints.x(t, k) = in.keypoints.x(s, k);
        r.keypoints.y(t, k) = in.keypoints.y(s, k);
        continue;
      }
      const double hs = heatmap_size;
      r.keypoints.x(t, k) = static_cast<float>(((in.keypoints.x(s, k) + 0.5) / hs - p.crop_i) / p.crop * hs - 0.5);
      r.keypoints.y(t, k) = static_cast<float>(((in.keypoints.y(s, k) + 0.5) / hs - p.crop_j) / p.crop * hs - 0.5);
    }
  }
  return r;
}

}  // namespace twostream
