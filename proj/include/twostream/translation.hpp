#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "twostream/encoder.hpp"
#include "twostream/metrics.hpp"

namespace twostream {

/// Token ids: 0 PAD, 1 BOS (the language id), 2 EOS, then words.
class TextVocab {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kSpecials = 3;

  TextVocab() = default;
  explicit TextVocab(const std::vector<std::string>& words) {
    tokens_ = {"<pad>", "<bos>", "<eos>"};
    tokens_.insert(tokens_.end(), words.begin(), words.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) throw ConfigError("duplicate token '" + tokens_[i] + "'");
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const Tokens& words) const {
    std::vector<int> out;
    for (const auto& w : words) {
      auto it = ids_.find(w);
      if (it == ids_.end() || it->second < kSpecials) throw ConfigError("token not in vocabulary: '" + w + "'");
      out.push_back(it->second);
    }
    return out;
  }

  // Words up to the first EOS; specials dropped.
  Tokens decode(const std::vector<int>& ids) const {
    Tokens out;
    for (int id : ids) {
      if (id == kEos) break;
      if (id >= kSpecials && id < size()) out.push_back(tokens_[id]);
    }
    return out;
  }

  bool operator==(const TextVocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

struct TranslatorConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int max_len = 32;  // decode length limit, EOS excluded
  double dropout = 0.0;

  void validate() const {
    if (layers < 1) throw ConfigError("translator layers must be >= 1");
    if (d_model < 1 || heads < 1 || d_model % heads != 0) throw ConfigError("translator width must divide by heads");
    if (d_ff < 1) throw ConfigError("translator d_ff must be >= 1");
    if (max_len < 1) throw ConfigError("translator max_len must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  }
};

/// Two hidden ReLU layers applied frame by frame.
template <typename S>
struct MlpAdapter {
  Linear<S> l1, l2, l3;

  MlpAdapter() = default;
  MlpAdapter(ParamStore<S>& ps, const std::string& name, int in, int hidden, int out)
      : l1(ps, name + ".l1", in, hidden), l2(ps, name + ".l2", hidden, hidden), l3(Linear<S>::scaled(ps, name + ".l3", hidden, out)) {}

  // All three weights set to the identity, biases zero.
  static MlpAdapter identity(ParamStore<S>& ps, const std::string& name, int d) {
    MlpAdapter a(ps, name, d, d, d);
    for (auto* l : {&a.l1, &a.l2, &a.l3}) {
      auto w = l->w.data();
      std::fill(w.begin(), w.end(), S(0));
      for (int i = 0; i < d; ++i) w[static_cast<std::size_t>(i) * d + i] = S(1);
    }
    return a;
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    if (x.rank() != 2 || x.dim(1) != l1.in())
      throw DimensionError("adapter expects [T', " + std::to_string(l1.in()) + "], got " + shape_str(x.shape()));
    return l3(relu(l2(relu(l1(x)))));
  }
};

/// Sinusoidal position codes for `rows` positions.
template <typename S>
Tensor<S> positions(int rows, int d) {
  std::vector<S> v(static_cast<std::size_t>(rows) * d);
  for (int p = 0; p < rows; ++p)
    for (int i = 0; i < d; ++i) {
      const double f = std::pow(10000.0, -2.0 * (i / 2) / d);
      v[static_cast<std::size_t>(p) * d + i] = static_cast<S>(i % 2 == 0 ? std::sin(p * f) : std::cos(p * f));
    }
  return Tensor<S>::from({rows, d}, std::move(v));
}

/// Additive mask: 0 where row i may attend to column j (j <= i), else -1e9.
template <typename S>
Tensor<S> causal_mask(int n) {
  std::vector<S> v(static_cast<std::size_t>(n) * n, S(0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = S(-1e9);
  return Tensor<S>::from({n, n}, std::move(v));
}

template <typename S>
struct LayerNorm {
  Tensor<S> gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore<S>& ps, const std::string& name, int d)
      : gamma(ps.ones(name + ".gamma", {d})), beta(ps.zeros(name + ".beta", {d})) {}
  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename S>
struct MultiHeadAttention {
  int heads = 1;
  Linear<S> q, k, v, o;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<S>& ps, const std::string& name, int d, int h)
      : heads(h),
        q(Linear<S>::scaled(ps, name + ".q", d, d)),
        k(Linear<S>::scaled(ps, name + ".k", d, d)),
        v(Linear<S>::scaled(ps, name + ".v", d, d)),
        o(Linear<S>::scaled(ps, name + ".o", d, d)) {}

  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& memory, const Tensor<S>* mask = nullptr) const {
    const int d = x.dim(1), dh = d / heads;
    const Tensor<S> qx = q(x), km = k(memory), vm = v(memory);
    const S scale_by = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<Tensor<S>> outs;
    for (int h = 0; h < heads; ++h) {
      Tensor<S> scores = scale(matmul(slice(qx, 1, h * dh, dh), transpose(slice(km, 1, h * dh, dh))), scale_by);
      if (mask) scores = add(scores, *mask);
      outs.push_back(matmul(softmax(scores), slice(vm, 1, h * dh, dh)));
    }
    return o(heads == 1 ? outs[0] : concat(outs, 1));
  }
};

template <typename S>
struct FeedForward {
  Linear<S> a, b;
  FeedForward() = default;
  FeedForward(ParamStore<S>& ps, const std::string& name, int d, int ff)
      : a(ps, name + ".a", d, ff), b(Linear<S>::scaled(ps, name + ".b", ff, d)) {}
  Tensor<S> operator()(const Tensor<S>& x) const { return b(relu(a(x))); }
};

/// Pre-norm encoder-decoder transformer. Sources are either gloss ids
/// (embedded with the source table) or feature rows already in model width.
template <typename S>
class Translator {
 public:
  Translator() = default;
  Translator(ParamStore<S>& ps, const std::string& name, const TranslatorConfig& cfg, int source_vocab, int target_vocab)
      : cfg_(cfg), name_(name) {
    cfg.validate();
    const int d = cfg.d_model;
    if (source_vocab > 0) src_embed_ = ps.normal(name + ".src_embed", {source_vocab, d}, 1.0);
    tgt_embed_ = ps.normal(name + ".tgt_embed", {target_vocab, d}, 1.0);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string e = name + ".enc" + std::to_string(l), dd = name + ".dec" + std::to_string(l);
      enc_.push_back({LayerNorm<S>(ps, e + ".ln1", d), MultiHeadAttention<S>(ps, e + ".attn", d, cfg.heads),
                      LayerNorm<S>(ps, e + ".ln2", d), FeedForward<S>(ps, e + ".ff", d, cfg.d_ff)});
      dec_.push_back({LayerNorm<S>(ps, dd + ".ln1", d), MultiHeadAttention<S>(ps, dd + ".self", d, cfg.heads),
                      LayerNorm<S>(ps, dd + ".ln2", d), MultiHeadAttention<S>(ps, dd + ".cross", d, cfg.heads),
                      LayerNorm<S>(ps, dd + ".ln3", d), FeedForward<S>(ps, dd + ".ff", d, cfg.d_ff)});
    }
    enc_norm_ = LayerNorm<S>(ps, name + ".enc_norm", d);
    dec_norm_ = LayerNorm<S>(ps, name + ".dec_norm", d);
    out_ = ps.normal(name + ".out.w", {d, target_vocab}, 0.02);
  }

  const TranslatorConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  int target_vocab() const { return tgt_embed_.dim(0); }
  bool has_source_embedding() const { return src_embed_.defined(); }

  // Gloss ids are shifted by the specials: source = [BOS] + (g + 2) + [EOS].
  static std::vector<int> gloss_source(const GlossSeq& glosses) {
    std::vector<int> ids{TextVocab::kBos};
    for (int g : glosses) ids.push_back(g + TextVocab::kSpecials - 1);
    ids.push_back(TextVocab::kEos);
    return ids;
  }

  Tensor<S> embed_source(const std::vector<int>& ids) const {
    if (!src_embed_.defined()) throw UsageError(name_ + " has no source embedding");
    return encode(embedding(src_embed_, ids));
  }

  // Encoder over [n, d_model] rows.
  Tensor<S> encode(const Tensor<S>& src) const {
    if (src.rank() != 2 || src.dim(1) != cfg_.d_model || src.dim(0) < 1)
      throw DimensionError(name_ + ": source must be [n>=1, " + std::to_string(cfg_.d_model) + "], got " + shape_str(src.shape()));
    Tensor<S> x = add(src, positions<S>(src.dim(0), cfg_.d_model));
    for (const auto& l : enc_) {
      const Tensor<S> h = l.ln1(x);
      x = add(x, l.attn(h, h));
      x = add(x, l.ff(l.ln2(x)));
    }
    return enc_norm_(x);
  }

  // Log-probabilities [n, V] of the next token after each prefix of `inputs`.
  Tensor<S> decode(const Tensor<S>& memory, const std::vector<int>& inputs) const {
    const int n = static_cast<int>(inputs.size());
    Tensor<S> x = add(embedding(tgt_embed_, inputs), positions<S>(n, cfg_.d_model));
    const Tensor<S> mask = causal_mask<S>(n);
    for (const auto& l : dec_) {
      const Tensor<S> h = l.ln1(x);
      x = add(x, l.self(h, h, &mask));
      x = add(x, l.cross(l.ln2(x), memory));
      x = add(x, l.ff(l.ln3(x)));
    }
    return log_softmax(matmul(dec_norm_(x), out_));
  }

  // Next-token probabilities after `prefix` (which starts with BOS).
  std::vector<double> step(const Tensor<S>& memory, const std::vector<int>& prefix) const {
    NoGradGuard guard;
    const Tensor<S> lp = decode(memory, prefix);
    const int V = lp.dim(1), last = lp.dim(0) - 1;
    std::vector<double> p(V);
    for (int c = 0; c < V; ++c) p[c] = std::exp(static_cast<double>(lp[static_cast<std::size_t>(last) * V + c]));
    return p;
  }

 private:
  struct EncoderLayer {
    LayerNorm<S> ln1;
    MultiHeadAttention<S> attn;
    LayerNorm<S> ln2;
    FeedForward<S> ff;
  };
  struct DecoderLayer {
    LayerNorm<S> ln1;
    MultiHeadAttention<S> self;
    LayerNorm<S> ln2;
    MultiHeadAttention<S> cross;
    LayerNorm<S> ln3;
    FeedForward<S> ff;
  };

  TranslatorConfig cfg_;
  std::string name_;
  Tensor<S> src_embed_, tgt_embed_, out_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  LayerNorm<S> enc_norm_, dec_norm_;
};

/// Teacher-forced -sum_i log p(s_i | s_<i, memory) over the target and the
/// closing EOS. Target ids from the first PAD on are ignored.
template <typename S>
Tensor<S> translation_loss(const Translator<S>& tr, const Tensor<S>& memory, const std::vector<int>& target) {
  std::vector<int> t(target.begin(), std::find(target.begin(), target.end(), TextVocab::kPad));
  if (t.empty()) throw UsageError("translation_loss: empty target");
  std::vector<int> inputs{TextVocab::kBos};
  inputs.insert(inputs.end(), t.begin(), t.end());
  std::vector<int> labels = t;
  labels.push_back(TextVocab::kEos);
  return nll_loss(tr.decode(memory, inputs), labels);
}

/// L_SLT = L_SLR + sum of the per-head translation losses.
template <typename S>
LossBreakdown<S> slt_loss(const LossBreakdown<S>& recognition, const std::vector<Tensor<S>>& translation) {
  LossBreakdown<S> b = recognition;
  Tensor<S> total = recognition.loss;
  b.translation = 0;
  for (const auto& t : translation) {
    b.translation += t.item();
    total = total.defined() ? add(total, t) : t;
  }
  b.loss = total;
  b.total = total.item();
  return b;
}

/// Beam search over the arithmetic mean of the translators' next-token
/// distributions, no length penalty. Ties go to the higher mean probability,
/// then the lower token id.
template <typename S>
std::vector<int> multi_source_beam_decode(const std::vector<const Translator<S>*>& translators,
                                          const std::vector<Tensor<S>>& memories, int beam_width = kDefaultBeamWidth,
                                          int max_len = -1) {
  if (translators.empty() || translators.size() != memories.size())
    throw UsageError("beam decode needs one memory per translator");
  if (beam_width < 1) throw UsageError("beam width must be >= 1");
  if (max_len < 0) max_len = translators.front()->config().max_len;
  struct Hyp {
    std::vector<int> ids;  // BOS first
    double score = 0;
  };
  std::vector<Hyp> live{{{TextVocab::kBos}, 0.0}};
  std::vector<Hyp> done;
  for (int len = 0; len <= max_len && !live.empty(); ++len) {
    struct Cand {
      double score, prob;
      int token;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      std::vector<double> mean;
      for (std::size_t m = 0; m < translators.size(); ++m) {
        auto p = translators[m]->step(memories[m], live[h].ids);
        if (mean.empty()) mean.assign(p.size(), 0.0);
        for (std::size_t c = 0; c < p.size(); ++c) mean[c] += p[c] / static_cast<double>(translators.size());
      }
      for (int c = 0; c < static_cast<int>(mean.size()); ++c) {
        if (c == TextVocab::kPad || c == TextVocab::kBos) continue;
        if (len == max_len && c != TextVocab::kEos) continue;
        cands.push_back({live[h].score + std::log(mean[c]), mean[c], c, h});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.prob != b.prob) return a.prob > b.prob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<Hyp> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) == beam_width) break;
      Hyp h{live[c.parent].ids, c.score};
      h.ids.push_back(c.token);
      if (c.token == TextVocab::kEos) {
        done.push_back(std::move(h));
        // beam slots are shared between finished and live hypotheses
        if (static_cast<int>(done.size() + next.size()) >= beam_width) break;
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    // Scores only fall, so a finished hypothesis ahead of every live one wins.
    double best_done = -std::numeric_limits<double>::infinity();
    for (const auto& d : done) best_done = std::max(best_done, d.score);
    double best_live = -std::numeric_limits<double>::infinity();
    for (const auto& l : live) best_live = std::max(best_live, l.score);
    if (!done.empty() && best_done >= best_live) break;
  }
  const Hyp* best = nullptr;
  for (const auto& d : done)
    if (!best || d.score > best->score) best = &d;
  if (!best) return {};
  return std::vector<int>(best->ids.begin() + 1, best->ids.end() - 1);
}

template <typename S>
std::vector<int> beam_decode(const Translator<S>& tr, const Tensor<S>& memory, int beam_width = kDefaultBeamWidth,
                             int max_len = -1) {
  return multi_source_beam_decode<S>({&tr}, {memory}, beam_width, max_len);
}

/// Adapters and translators on top of a recognition model, one per head.
template <typename S>
class SltModel {
 public:
  SltModel(const ModelConfig& slr, const TranslatorConfig& tcfg, const TextVocab& vocab, std::uint64_t seed)
      : slr_(slr, seed), params_(seed ^ fnv1a("slt")), vocab_(vocab) {
    for (const auto& head : head_names()) {
      adapters_.push_back(MlpAdapter<S>(params_, "slt." + head + ".adapter", slr.d_rep, tcfg.d_model, tcfg.d_model));
      translators_.push_back(Translator<S>(params_, "slt." + head + ".translator", tcfg, 0, vocab.size()));
    }
  }

  // Heads in v, k, j order, limited to those the recognition model has.
  std::vector<std::string> head_names() const {
    std::vector<std::string> h;
    const auto& c = slr_.config();
    if (c.use_video) h.push_back("video");
    if (c.use_keypoint) h.push_back("keypoint");
    if (c.two_stream() && c.joint_head) h.push_back("joint");
    return h;
  }

  TwoStreamModel<S>& slr() { return slr_; }
  const TwoStreamModel<S>& slr() const { return slr_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const TextVocab& vocab() const { return vocab_; }
  const Translator<S>& translator(std::size_t i) const { return translators_.at(i); }
  std::size_t heads() const { return translators_.size(); }

  // Translator memories, one per head, over the valid frames.
  std::vector<Tensor<S>> memories(const SlrOutput<S>& out) const {
    std::vector<Tensor<S>> mem;
    const auto hs = out.heads();
    if (hs.size() != adapters_.size()) throw DimensionError("head count differs from translator count");
    for (std::size_t i = 0; i < hs.size(); ++i)
      mem.push_back(translators_[i].encode(adapters_[i](slice(hs[i]->rep, 0, 0, out.valid_frames))));
    return mem;
  }

  std::vector<Tensor<S>> translation_losses(const SlrOutput<S>& out, const std::vector<int>& target) const {
    std::vector<Tensor<S>> ls;
    auto mem = memories(out);
    for (std::size_t i = 0; i < mem.size(); ++i) ls.push_back(translation_loss(translators_[i], mem[i], target));
    return ls;
  }

  /// Sign2Text: eval-mode forward, then the ensemble beam decode.
  Tokens translate(const SlrInput<S>& in, int beam = kDefaultBeamWidth) const {
    NoGradGuard guard;
    auto out = slr_.forward(in, false);
    std::vector<const Translator<S>*> trs;
    for (const auto& t : translators_) trs.push_back(&t);
    return vocab_.decode(multi_source_beam_decode(trs, memories(out), beam));
  }

 private:
  TwoStreamModel<S> slr_;
  ParamStore<S> params_;
  TextVocab vocab_;
  std::vector<MlpAdapter<S>> adapters_;
  std::vector<Translator<S>> translators_;
};

/// Gloss-to-text translator with its own parameters.
template <typename S>
class GlossTranslator {
 public:
  GlossTranslator(int gloss_vocab, const TranslatorConfig& cfg, const TextVocab& vocab, std::uint64_t seed)
      : params_(seed ^ fnv1a("g2t")),
        vocab_(vocab),
        tr_(params_, "g2t", cfg, gloss_vocab + TextVocab::kSpecials, vocab.size()),
        gloss_vocab_(gloss_vocab) {}

  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const Translator<S>& translator() const { return tr_; }
  const TextVocab& vocab() const { return vocab_; }
  int gloss_vocab() const { return gloss_vocab_; }

  Tensor<S> memory(const GlossSeq& glosses) const {
    for (int g : glosses)
      if (g < 1 || g > gloss_vocab_) throw ConfigError("gloss id outside the translator vocabulary");
    return tr_.embed_source(Translator<S>::gloss_source(glosses));
  }

  Tensor<S> loss(const GlossSeq& glosses, const std::vector<int>& target) const {
    return translation_loss(tr_, memory(glosses), target);
  }

  Tokens translate(const GlossSeq& glosses, int beam = kDefaultBeamWidth) const {
    NoGradGuard guard;
    return vocab_.decode(beam_decode(tr_, memory(glosses), beam));
  }

 private:
  ParamStore<S> params_;
  TextVocab vocab_;
  Translator<S> tr_;
  int gloss_vocab_;
};

/// Sign2Gloss2Text: recognized glosses fed to the gloss translator.
template <typename S>
Tokens sign2gloss2text(const TwoStreamModel<S>& slr, const GlossTranslator<S>& g2t, const SlrInput<S>& in,
                       int beam = kDefaultBeamWidth) {
  return g2t.translate(slr_predict(slr, in, beam), beam);
}

/// Copies the gloss translator's encoder/decoder weights into every SLT
/// translator; the source embedding has no counterpart. Returns the number
/// of tensors copied.
template <typename S>
int init_from_gloss_translator(SltModel<S>& slt, const GlossTranslator<S>& g2t) {
  if (!(slt.vocab() == g2t.vocab())) throw ConfigError("gloss translator vocabulary differs from the SLT vocabulary");
  int copied = 0;
  for (const auto& [name, src] : g2t.params().tensors()) {
    if (name == "g2t.src_embed") continue;
    const std::string suffix = name.substr(std::string("g2t").size());
    for (const auto& head : slt.head_names()) {
      const std::string target = "slt." + head + ".translator" + suffix;
      if (!slt.params().contains(target)) throw ConfigError("no SLT parameter " + target);
      Tensor<S> dst = slt.params().at(target);
      if (dst.shape() != src.shape()) throw ConfigError("shape mismatch for " + target);
      std::copy(src.data().begin(), src.data().end(), dst.data().begin());
      ++copied;
    }
  }
  return copied;
}

}  // namespace twostream
