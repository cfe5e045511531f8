#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twostream/ctc.hpp"
#include "twostream/nn.hpp"

namespace twostream {

constexpr int kTemporalDownsampling = 4;

struct StreamConfig {
  int in_channels = 3;
  int height = 32;
  int width = 32;
  std::array<int, 4> widths{16, 32, 48, 64};
  std::array<int, 4> spatial_strides{2, 2, 2, 2};
  std::array<int, 4> temporal_strides{1, 1, 2, 2};

  void validate(const std::string& name) const {
    if (in_channels < 1 || height < 1 || width < 1) throw ConfigError(name + ": input extents must be >= 1");
    int prod = 1;
    for (int b = 0; b < 4; ++b) {
      if (widths[b] < 1) throw ConfigError(name + ": block widths must be >= 1");
      if (spatial_strides[b] < 1 || temporal_strides[b] < 1) throw ConfigError(name + ": strides must be >= 1");
      prod *= temporal_strides[b];
    }
    if (prod != kTemporalDownsampling) throw ConfigError(name + ": product of temporal strides must be 4");
  }

  // Spatial extents after each block (index 0 is the input).
  std::array<std::array<int, 2>, 5> spatial_extents() const {
    std::array<std::array<int, 2>, 5> e{};
    e[0] = {height, width};
    for (int b = 0; b < 4; ++b)
      for (int a = 0; a < 2; ++a) e[b + 1][a] = conv_out_extent(e[b][a], 3, spatial_strides[b], 1);
    return e;
  }

  // Frame counts after each block for a padded input of length t.
  std::array<int, 5> temporal_extents(int t) const {
    std::array<int, 5> e{t, 0, 0, 0, 0};
    for (int b = 0; b < 4; ++b) e[b + 1] = conv_out_extent(e[b], 3, temporal_strides[b], 1);
    return e;
  }
};

enum class LateralMode { None, VideoToKeypoint, KeypointToVideo, Bidirectional };

inline std::string lateral_name(LateralMode m) {
  switch (m) {
    case LateralMode::None: return "none";
    case LateralMode::VideoToKeypoint: return "v2k";
    case LateralMode::KeypointToVideo: return "k2v";
    case LateralMode::Bidirectional: return "bidirectional";
  }
  return "?";
}

inline LateralMode parse_lateral(const std::string& s) {
  for (auto m : {LateralMode::None, LateralMode::VideoToKeypoint, LateralMode::KeypointToVideo,
                 LateralMode::Bidirectional})
    if (lateral_name(m) == s) return m;
  throw ConfigError("unknown lateral mode '" + s + "'");
}

struct LossWeights {
  double lambda_v = 0.2;
  double lambda_k = 0.5;
  double w_dist = 1.0;

  void validate() const {
    if (lambda_v < 0 || lambda_k < 0 || w_dist < 0) throw ConfigError("loss weights must be >= 0");
  }
};

struct ModelConfig {
  int vocab = 20;  // glosses, blank excluded
  int d_rep = 64;
  StreamConfig video{3, 32, 32};
  StreamConfig keypoint{16, 16, 16};
  bool use_video = true;
  bool use_keypoint = true;
  bool joint_head = true;
  LateralMode lateral = LateralMode::Bidirectional;
  std::vector<int> lateral_levels{1, 2, 3};
  bool spn = true;
  std::vector<int> spn_levels{2, 3};
  bool freeze_block1 = true;
  LossWeights weights;

  int classes() const { return vocab + 1; }
  bool two_stream() const { return use_video && use_keypoint; }

  void validate() const {
    if (vocab < 1) throw ConfigError("vocab must be >= 1");
    if (d_rep < 1) throw ConfigError("d_rep must be >= 1");
    if (!use_video && !use_keypoint) throw ConfigError("at least one stream must be enabled");
    if (use_video) video.validate("video");
    if (use_keypoint) keypoint.validate("keypoint");
    for (int l : lateral_levels)
      if (l < 1 || l > 3) throw ConfigError("lateral levels must be in {1,2,3}");
    for (int l : spn_levels)
      if (l < 1 || l > 3) throw ConfigError("pyramid levels must be in {1,2,3}");
    if (two_stream() && video.temporal_strides != keypoint.temporal_strides)
      throw ConfigError("streams must share temporal strides");
    weights.validate();
  }
};

/// Repeats the last frame until the frame count is a multiple of m.
template <typename S>
Tensor<S> pad_frames(const Tensor<S>& x, int m) {
  const int t = x.dim(0);
  const int target = (t + m - 1) / m * m;
  if (target == t) return x;
  std::vector<Tensor<S>> parts{x};
  const Tensor<S> last = slice(x, 0, t - 1, 1);
  for (int i = t; i < target; ++i) parts.push_back(last);
  return concat(parts, 0);
}

template <typename S>
struct SlrInput {
  Tensor<S> video;     // [T, H, W, 3]
  Tensor<S> heatmaps;  // [T, H', W', K]
};

template <typename S>
struct SlrOutput {
  int frames = 0;         // frames before padding
  int padded_frames = 0;
  int out_frames = 0;     // T'
  int valid_frames = 0;   // rows of T' covering real frames
  std::optional<HeadOutput<S>> video, keypoint, joint;
  std::array<Tensor<S>, 4> video_blocks, keypoint_blocks;
  struct Aux {
    int level;
    int valid_frames;
    Tensor<S> pyramid;  // P_level
    HeadOutput<S> head;
  };
  std::vector<Aux> video_aux, keypoint_aux;

  std::vector<const HeadOutput<S>*> heads() const {
    std::vector<const HeadOutput<S>*> h;
    if (video) h.push_back(&*video);
    if (keypoint) h.push_back(&*keypoint);
    if (joint) h.push_back(&*joint);
    return h;
  }
};

/// Four separable blocks: spatial 3x3 conv, BN, ReLU, temporal kernel-3 conv,
/// BN, ReLU.
template <typename S>
struct Stream {
  StreamConfig cfg;
  std::string name;
  std::array<Tensor<S>, 4> spatial, temporal;
  std::array<BatchNorm<S>, 4> spatial_bn, temporal_bn;

  Stream() = default;
  Stream(ParamStore<S>& ps, const std::string& n, const StreamConfig& c) : cfg(c), name(n) {
    int cin = c.in_channels;
    for (int b = 0; b < 4; ++b) {
      const std::string p = n + ".block" + std::to_string(b + 1);
      const int cout = c.widths[b];
      spatial[b] = ps.he(p + ".spatial.w", {3, 3, cin, cout}, 9 * cin);
      spatial_bn[b] = BatchNorm<S>(ps, p + ".spatial_bn", cout);
      temporal[b] = ps.he(p + ".temporal.w", {3, cout, cout}, 3 * cout);
      temporal_bn[b] = BatchNorm<S>(ps, p + ".temporal_bn", cout);
      cin = cout;
    }
  }

  void check_input(const Tensor<S>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg.height || x.dim(2) != cfg.width || x.dim(3) != cfg.in_channels)
      throw DimensionError(name + " stream expects [T," + std::to_string(cfg.height) + "," +
                           std::to_string(cfg.width) + "," + std::to_string(cfg.in_channels) + "], got " +
                           shape_str(x.shape()));
  }

  Batch<S> block(int b, const Batch<S>& xs, bool training) const {
    auto h = spatial_bn[b](map_batch(xs, [&](const Tensor<S>& x) {
                             return conv_spatial(x, spatial[b], cfg.spatial_strides[b], 1);
                           }), training);
    h = map_batch(h, relu<S>);
    h = temporal_bn[b](map_batch(h, [&](const Tensor<S>& x) {
                         return conv_temporal(x, temporal[b], cfg.temporal_strides[b], 1);
                       }), training);
    return map_batch(h, relu<S>);
  }
};

namespace detail {

// How to carry a feature map from one spatial grid to another of equal or
// integer-ratio size: strided when shrinking, transposed when growing.
struct Resampler {
  bool transposed = false;
  ConvGeometry geometry;
};

inline Resampler spatial_resampler(std::array<int, 2> from, std::array<int, 2> to, const std::string& what) {
  auto fail = [&] {
    return DimensionError(what + ": cannot resample " + std::to_string(from[0]) + "x" + std::to_string(from[1]) +
                          " to " + std::to_string(to[0]) + "x" + std::to_string(to[1]));
  };
  Resampler r;
  int factor = 1;
  if (from == to) {
    factor = 1;
  } else if (from[0] % to[0] == 0 && from[0] / to[0] == from[1] / to[1] && from[1] % to[1] == 0) {
    factor = from[0] / to[0];
  } else if (to[0] % from[0] == 0 && to[0] / from[0] == to[1] / from[1] && to[1] % from[1] == 0) {
    factor = to[0] / from[0];
    r.transposed = true;
  } else {
    throw fail();
  }
  try {
    r.geometry = resample_geometry(0, factor);
  } catch (const DimensionError&) {
    throw fail();
  }
  return r;
}

}  // namespace detail

/// Zero-initialized cross-stream connection at one block level. Channel
/// counts are projected inside the resampling convolution.
template <typename S>
struct LateralLink {
  detail::Resampler resample;
  Tensor<S> w;

  LateralLink() = default;
  LateralLink(ParamStore<S>& ps, const std::string& name, std::array<int, 2> from, std::array<int, 2> to,
              int cin, int cout)
      : resample(detail::spatial_resampler(from, to, name)) {
    const auto& k = resample.geometry.kernel;
    w = resample.transposed ? ps.zeros(name + ".w", {cin, k[0], k[1], k[2], cout})
                            : ps.zeros(name + ".w", {k[0], k[1], k[2], cin, cout});
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return resample.transposed ? conv3d_transposed(x, w, resample.geometry) : conv3d(x, w, resample.geometry);
  }
};

/// Top-down pyramid over one stream's block outputs with an auxiliary head
/// per requested level.
template <typename S>
struct SignPyramid {
  int lowest = 4;
  std::set<int> levels;
  std::array<Tensor<S>, 4> up, lateral;  // indexed by level (1..3)
  std::array<ConvGeometry, 4> up_geometry;
  std::array<HeadNetwork<S>, 4> heads;

  SignPyramid() = default;
  SignPyramid(ParamStore<S>& ps, const std::string& name, const StreamConfig& c, const std::vector<int>& lv,
              int d_rep, int classes)
      : levels(lv.begin(), lv.end()) {
    if (levels.empty()) return;
    lowest = *levels.begin();
    const auto sp = c.spatial_extents();
    // Temporal ratios do not depend on the clip length for lengths divisible by 4.
    const auto tp = c.temporal_extents(16 * kTemporalDownsampling);
    for (int l = 3; l >= lowest; --l) {
      const int tf = tp[l] / tp[l + 1], sf = sp[l][0] / sp[l + 1][0];
      if (tp[l] != tf * tp[l + 1] || sp[l][0] != sf * sp[l + 1][0] || sp[l][1] != sf * sp[l + 1][1])
        throw DimensionError(name + ": level " + std::to_string(l) + " is not an integer upsampling of level " +
                             std::to_string(l + 1));
      up_geometry[l] = resample_geometry(tf, sf);
      const auto& k = up_geometry[l].kernel;
      const std::string p = name + ".p" + std::to_string(l);
      up[l] = ps.he(p + ".up.w", {c.widths[l], k[0], k[1], k[2], c.widths[l - 1]}, c.widths[l] * k[0] * k[1] * k[2]);
      lateral[l] = ps.he(p + ".lateral.w", {1, 1, 1, c.widths[l - 1], c.widths[l - 1]}, c.widths[l - 1]);
      if (levels.count(l)) heads[l] = HeadNetwork<S>(ps, p + ".head", c.widths[l - 1], d_rep, classes);
    }
  }

  bool enabled() const { return !levels.empty(); }

  // blocks[i][n] is C_{i+1} of sample n. emit(level, P_level, head outputs).
  template <typename F>
  void forward(const std::array<Batch<S>, 4>& blocks, bool training, F&& emit) const {
    Batch<S> top = blocks[3];
    for (int l = 3; l >= lowest; --l) {
      Batch<S> p;
      for (std::size_t n = 0; n < top.size(); ++n)
        p.push_back(add(conv3d_transposed(top[n], up[l], up_geometry[l]),
                        conv3d(blocks[l - 1][n], lateral[l], ConvGeometry{})));
      if (levels.count(l)) emit(l, p, heads[l](map_batch(p, pool_spatial_mean<S>), training));
      top = std::move(p);
    }
  }
};

template <typename S>
class TwoStreamModel {
 public:
  TwoStreamModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
    cfg_.validate();
    const int classes = cfg_.classes();
    if (cfg_.use_video) {
      video_ = Stream<S>(params_, "video", cfg_.video);
      video_head_ = HeadNetwork<S>(params_, "video.head", cfg_.video.widths[3], cfg_.d_rep, classes);
      if (cfg_.spn) video_spn_ = SignPyramid<S>(params_, "video.spn", cfg_.video, cfg_.spn_levels, cfg_.d_rep, classes);
    }
    if (cfg_.use_keypoint) {
      keypoint_ = Stream<S>(params_, "keypoint", cfg_.keypoint);
      keypoint_head_ = HeadNetwork<S>(params_, "keypoint.head", cfg_.keypoint.widths[3], cfg_.d_rep, classes);
      if (cfg_.spn)
        keypoint_spn_ =
            SignPyramid<S>(params_, "keypoint.spn", cfg_.keypoint, cfg_.spn_levels, cfg_.d_rep, classes);
    }
    if (cfg_.two_stream()) {
      if (cfg_.joint_head)
        joint_head_ = HeadNetwork<S>(params_, "joint.head", cfg_.video.widths[3] + cfg_.keypoint.widths[3],
                                     cfg_.d_rep, classes);
      const auto ve = cfg_.video.spatial_extents(), ke = cfg_.keypoint.spatial_extents();
      const bool v2k = cfg_.lateral == LateralMode::VideoToKeypoint || cfg_.lateral == LateralMode::Bidirectional;
      const bool k2v = cfg_.lateral == LateralMode::KeypointToVideo || cfg_.lateral == LateralMode::Bidirectional;
      for (int l : std::set<int>(cfg_.lateral_levels.begin(), cfg_.lateral_levels.end())) {
        const std::string p = "lateral.c" + std::to_string(l);
        const int cv = cfg_.video.widths[l - 1], ck = cfg_.keypoint.widths[l - 1];
        if (v2k) v2k_[l] = LateralLink<S>(params_, p + ".v2k", ve[l], ke[l], cv, ck);
        if (k2v) k2v_[l] = LateralLink<S>(params_, p + ".k2v", ke[l], ve[l], ck, cv);
      }
    }
    if (cfg_.freeze_block1) {
      params_.set_trainable("video.block1.", false);
      params_.set_trainable("keypoint.block1.", false);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// Forward pass over a batch; batch norm pools statistics over all
  /// samples in training mode. In eval mode the pyramid is skipped and batch
  /// norm uses running statistics, so samples do not interact.
  std::vector<SlrOutput<S>> forward(const std::vector<SlrInput<S>>& batch, bool training) const {
    if (batch.empty()) throw UsageError("empty batch");
    std::vector<SlrOutput<S>> outs(batch.size());
    Batch<S> v, k;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const auto& in = batch[n];
      auto& out = outs[n];
      if (cfg_.use_video) {
        if (!in.video.defined()) throw DimensionError("video stream enabled but no video given");
        video_.check_input(in.video);
        out.frames = in.video.dim(0);
        v.push_back(pad_frames(in.video, kTemporalDownsampling));
      }
      if (cfg_.use_keypoint) {
        if (!in.heatmaps.defined()) throw DimensionError("keypoint stream enabled but no heatmaps given");
        keypoint_.check_input(in.heatmaps);
        if (cfg_.use_video && in.heatmaps.dim(0) != out.frames)
          throw DimensionError("video and heatmaps differ in frame count");
        out.frames = in.heatmaps.dim(0);
        k.push_back(pad_frames(in.heatmaps, kTemporalDownsampling));
      }
      if (out.frames < 1) throw DimensionError("empty clip");
      out.padded_frames = (out.frames + kTemporalDownsampling - 1) / kTemporalDownsampling * kTemporalDownsampling;
      out.valid_frames = (out.frames + kTemporalDownsampling - 1) / kTemporalDownsampling;
    }

    std::array<Batch<S>, 4> vb, kb;
    for (int b = 0; b < 4; ++b) {
      if (cfg_.use_video) v = video_.block(b, v, training);
      if (cfg_.use_keypoint) k = keypoint_.block(b, k, training);
      const int level = b + 1;
      if (cfg_.two_stream() && level <= 3) {
        // Both directions read the pre-fusion features.
        const Batch<S> v0 = v, k0 = k;
        for (std::size_t n = 0; n < batch.size(); ++n) {
          if (k2v_[level].w.defined()) v[n] = add(v0[n], k2v_[level](k0[n]));
          if (v2k_[level].w.defined()) k[n] = add(k0[n], v2k_[level](v0[n]));
        }
      }
      vb[b] = v;
      kb[b] = k;
    }

    Batch<S> pv, pk;
    std::vector<HeadOutput<S>> hv, hk, hj;
    if (cfg_.use_video) {
      pv = map_batch(v, pool_spatial_mean<S>);
      hv = video_head_(pv, training);
    }
    if (cfg_.use_keypoint) {
      pk = map_batch(k, pool_spatial_mean<S>);
      hk = keypoint_head_(pk, training);
    }
    if (cfg_.two_stream() && cfg_.joint_head) {
      Batch<S> cat;
      for (std::size_t n = 0; n < batch.size(); ++n) cat.push_back(concat<S>({pv[n], pk[n]}, 1));
      hj = joint_head_(cat, training);
    }
    for (std::size_t n = 0; n < batch.size(); ++n) {
      auto& out = outs[n];
      for (int b = 0; b < 4; ++b) {
        if (cfg_.use_video) out.video_blocks[b] = vb[b][n];
        if (cfg_.use_keypoint) out.keypoint_blocks[b] = kb[b][n];
      }
      if (cfg_.use_video) out.video = hv[n];
      if (cfg_.use_keypoint) out.keypoint = hk[n];
      if (!hj.empty()) out.joint = hj[n];
      out.out_frames = cfg_.use_video ? v[n].dim(0) : k[n].dim(0);
    }

    if (training) {
      auto run = [&](const SignPyramid<S>& spn, const std::array<Batch<S>, 4>& blocks, bool is_video) {
        if (!spn.enabled()) return;
        spn.forward(blocks, training, [&](int level, const Batch<S>& p, std::vector<HeadOutput<S>> heads) {
          for (std::size_t n = 0; n < batch.size(); ++n) {
            auto& out = outs[n];
            const int factor = out.padded_frames / p[n].dim(0);
            (is_video ? out.video_aux : out.keypoint_aux)
                .push_back({level, (out.frames + factor - 1) / factor, p[n], std::move(heads[n])});
          }
        });
      };
      if (cfg_.use_video) run(video_spn_, vb, true);
      if (cfg_.use_keypoint) run(keypoint_spn_, kb, false);
    }
    return outs;
  }

  SlrOutput<S> forward(const SlrInput<S>& in, bool training) const {
    return std::move(forward(std::vector<SlrInput<S>>{in}, training).front());
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
  Stream<S> video_, keypoint_;
  HeadNetwork<S> video_head_, keypoint_head_, joint_head_;
  SignPyramid<S> video_spn_, keypoint_spn_;
  std::array<LateralLink<S>, 4> v2k_, k2v_;
};

// ---------------------------------------------------------------------------
// Loss

template <typename S>
struct LossBreakdown {
  double ctc_video = 0, ctc_keypoint = 0, ctc_joint = 0;
  double actc_video = 0, actc_keypoint = 0;
  double distill = 0;
  double translation = 0;
  double slr = 0;
  double total = 0;
  Tensor<S> loss;  // differentiable total
};

/// Detached mean of the active heads' probabilities over the valid rows.
template <typename S>
Tensor<S> ensemble_teacher(const SlrOutput<S>& out) {
  const auto heads = out.heads();
  std::vector<S> acc;
  for (const auto* h : heads) {
    Tensor<S> p = softmax(slice(h->log_probs.detach(), 0, 0, out.valid_frames));
    if (acc.empty()) acc.assign(p.numel(), S(0));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  for (auto& x : acc) x /= static_cast<S>(heads.size());
  return Tensor<S>::from({out.valid_frames, heads.front()->log_probs.dim(1)}, std::move(acc));
}

/// Sum over heads and valid frames of KL(teacher || head).
template <typename S>
Tensor<S> self_distill_loss(const Tensor<S>& teacher, const std::vector<Tensor<S>>& head_log_probs) {
  Tensor<S> total;
  for (const auto& lp : head_log_probs) {
    if (lp.shape() != teacher.shape()) throw DimensionError("self_distill_loss: shape mismatch");
    Tensor<S> d = kl_div(teacher, lp);
    total = total.defined() ? add(total, d) : d;
  }
  return total;
}

/// Head CTC losses, weighted pyramid CTC losses and the weighted
/// distillation term. `pinned_teacher` replaces the computed ensemble
/// target; it exists so that finite differences see the same constant
/// target as the analytic gradient.
template <typename S>
LossBreakdown<S> recognition_loss(const SlrOutput<S>& out, const GlossSeq& target, const LossWeights& w,
                                  const Tensor<S>* pinned_teacher = nullptr) {
  LossBreakdown<S> b;
  std::vector<Tensor<S>> terms;
  auto ctc = [&](const HeadOutput<S>& h, int valid) { return ctc_loss(h.log_probs, target, valid); };
  if (out.video) {
    terms.push_back(ctc(*out.video, out.valid_frames));
    b.ctc_video = terms.back().item();
  }
  if (out.keypoint) {
    terms.push_back(ctc(*out.keypoint, out.valid_frames));
    b.ctc_keypoint = terms.back().item();
  }
  if (out.joint) {
    terms.push_back(ctc(*out.joint, out.valid_frames));
    b.ctc_joint = terms.back().item();
  }
  auto aux = [&](const std::vector<typename SlrOutput<S>::Aux>& levels, double lambda, double& slot) {
    for (const auto& a : levels) {
      Tensor<S> l = ctc(a.head, a.valid_frames);
      slot += l.item();
      if (lambda > 0) terms.push_back(scale(l, static_cast<S>(lambda)));
    }
  };
  aux(out.video_aux, w.lambda_v, b.actc_video);
  aux(out.keypoint_aux, w.lambda_k, b.actc_keypoint);
  const auto heads = out.heads();
  if (heads.size() > 1) {
    const Tensor<S> teacher = pinned_teacher ? *pinned_teacher : ensemble_teacher(out);
    std::vector<Tensor<S>> lps;
    for (const auto* h : heads) lps.push_back(slice(h->log_probs, 0, 0, out.valid_frames));
    Tensor<S> d = self_distill_loss(teacher, lps);
    b.distill = d.item();
    if (w.w_dist > 0) terms.push_back(scale(d, static_cast<S>(w.w_dist)));
  }
  Tensor<S> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  b.loss = total;
  b.slr = b.total = total.item();
  return b;
}

// ---------------------------------------------------------------------------
// Prediction

template <typename S>
FramePosteriors head_posteriors(const HeadOutput<S>& h, int valid_frames) {
  return FramePosteriors::from_logits(std::span<const S>(h.logits.data().data(),
                                                         static_cast<std::size_t>(valid_frames) * h.logits.dim(1)),
                                      valid_frames, h.logits.dim(1));
}

template <typename S>
FramePosteriors ensemble_of(const SlrOutput<S>& out) {
  std::vector<FramePosteriors> parts;
  for (const auto* h : out.heads()) parts.push_back(head_posteriors(*h, out.valid_frames));
  std::vector<const FramePosteriors*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return ensemble_posteriors(ptrs);
}

/// Eval-mode forward, late ensemble of the head posteriors, beam search.
template <typename S>
GlossSeq slr_predict(const TwoStreamModel<S>& model, const SlrInput<S>& in, int beam = kDefaultBeamWidth) {
  NoGradGuard guard;
  return prefix_beam_decode(ensemble_of(model.forward(in, false)), beam);
}

}  // namespace twostream
