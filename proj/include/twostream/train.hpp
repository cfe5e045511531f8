#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "twostream/checkpoint.hpp"
#include "twostream/config.hpp"
#include "twostream/corpus.hpp"
#include "twostream/encoder.hpp"
#include "twostream/metrics.hpp"
#include "twostream/translation.hpp"

namespace twostream {

using Real = float;

// ---------------------------------------------------------------------------
// Inputs

inline Tensor<Real> video_tensor(const VideoClip& v) {
  return Tensor<Real>::from({v.frames, v.height, v.width, 3}, std::vector<Real>(v.pixels.begin(), v.pixels.end()));
}

inline SlrInput<Real> make_input(const SampleRecord& r, const HeatmapConfig& hm, const ModelConfig& m) {
  SlrInput<Real> in;
  if (m.use_video) in.video = video_tensor(r.video);
  if (m.use_keypoint) in.heatmaps = rasterize<Real>(r.keypoints, hm);
  return in;
}

/// Seed of the random stream for one sample in one epoch.
inline std::uint64_t sample_seed(std::uint64_t seed, int epoch, const std::string& id) {
  return fnv1a(id, seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
}

/// Training view of a record: augmented when enabled, always long enough
/// for its gloss sequence after the 4x temporal reduction.
inline SampleRecord training_view(const SampleRecord& r, const RunConfig& cfg, int epoch) {
  if (!cfg.train.augment) return r;
  std::mt19937_64 rng(sample_seed(cfg.train.seed, epoch, r.id));
  const int need = ctc_required_frames(r.glosses);
  return augment(r, draw_augment(cfg.train.ranges, rng), cfg.corpus.heatmap_size,
                 kTemporalDownsampling * (need - 1) + 1);
}

// ---------------------------------------------------------------------------
// Logs

inline const std::vector<std::string>& log_columns() {
  static const std::vector<std::string> cols{"epoch",   "lr",     "ctc_video", "ctc_keypoint", "ctc_joint",
                                             "actc_video", "actc_keypoint", "distill", "slr", "translation",
                                             "total",   "dev_wer", "dev_bleu4"};
  return cols;
}

struct EpochRow {
  int epoch = 0;
  double lr = 0;
  LossBreakdown<Real> mean;
  double dev_wer = std::numeric_limits<double>::quiet_NaN();
  double dev_bleu4 = std::numeric_limits<double>::quiet_NaN();
};

inline std::string fmt(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Append-only tab-separated training log.
inline void append_log(const std::filesystem::path& path, const EpochRow& r) {
  std::string text;
  if (!std::filesystem::exists(path)) text = join(log_columns(), "\t") + "\n";
  const auto& m = r.mean;
  text += std::to_string(r.epoch) + "\t" + fmt(r.lr) + "\t" + fmt(m.ctc_video) + "\t" + fmt(m.ctc_keypoint) + "\t" +
          fmt(m.ctc_joint) + "\t" + fmt(m.actc_video) + "\t" + fmt(m.actc_keypoint) + "\t" + fmt(m.distill) + "\t" +
          fmt(m.slr) + "\t" + fmt(m.translation) + "\t" + fmt(m.total) + "\t" + fmt(r.dev_wer) + "\t" +
          fmt(r.dev_bleu4) + "\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + path.string());
  out << text;
}

inline void accumulate(LossBreakdown<Real>& acc, const LossBreakdown<Real>& b, double w) {
  acc.ctc_video += w * b.ctc_video;
  acc.ctc_keypoint += w * b.ctc_keypoint;
  acc.ctc_joint += w * b.ctc_joint;
  acc.actc_video += w * b.actc_video;
  acc.actc_keypoint += w * b.actc_keypoint;
  acc.distill += w * b.distill;
  acc.slr += w * b.slr;
  acc.translation += w * b.translation;
  acc.total += w * b.total;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SlrEval {
  std::vector<GlossSeq> hyps;
  double wer = 0;
};

inline SlrEval evaluate_slr(const TwoStreamModel<Real>& model, const std::vector<SampleRecord>& records,
                            const HeatmapConfig& hm, int beam) {
  SlrEval e;
  std::vector<GlossSeq> refs;
  for (const auto& r : records) {
    e.hyps.push_back(slr_predict(model, make_input(r, hm, model.config()), beam));
    refs.push_back(r.glosses);
  }
  e.wer = records.empty() ? 0.0 : corpus_wer(refs, e.hyps);
  return e;
}

struct TextScores {
  double rouge = 0;
  BleuScores bleu;
};

inline TextScores score_text(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) {
  TextScores s;
  s.bleu = bleu(refs, hyps);
  s.rouge = corpus_rouge_l(refs, hyps);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

/// State carried across epochs and through checkpoints.
struct TrainState {
  int next_epoch = 0;
  AdamW<Real> optimizer;
  explicit TrainState(double weight_decay) : optimizer(static_cast<Real>(weight_decay)) {}
};

/// Runs epochs [state.next_epoch, epochs). `batch_loss` returns the summed
/// breakdown of one minibatch (its `loss` tensor is differentiated after
/// division by the batch size). `finish` sees every epoch row and may save.
inline void run_epochs(const TrainConfig& tc, std::size_t n_train, std::vector<ParamRef<Real>> refs,
                       TrainState& state,
                       const std::function<LossBreakdown<Real>(const std::vector<std::size_t>&, int)>& batch_loss,
                       const std::function<void(EpochRow&)>& finish, int stop_after = -1) {
  if (n_train == 0) throw ConfigError("training split is empty");
  for (int epoch = state.next_epoch; epoch < tc.epochs; ++epoch) {
    if (stop_after >= 0 && epoch >= stop_after) break;
    EpochRow row;
    row.epoch = epoch;
    row.lr = cosine_lr(epoch, tc.epochs, tc.lr);
    const auto order = shuffled_order(n_train, fnv1a("epoch" + std::to_string(epoch), tc.seed));
    for (std::size_t start = 0; start < n_train; start += tc.batch_size) {
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + std::min(n_train, start + static_cast<std::size_t>(tc.batch_size)));
      LossBreakdown<Real> b = batch_loss(batch, epoch);
      zero_grads(refs);
      scale(b.loss, static_cast<Real>(1.0 / batch.size())).backward();
      state.optimizer.step(refs, static_cast<Real>(row.lr));
      accumulate(row.mean, b, 1.0 / n_train);
    }
    state.next_epoch = epoch + 1;
    finish(row);
  }
}

inline std::vector<ParamRef<Real>> with_lr_scale(std::vector<ParamRef<Real>> refs, Real s) {
  for (auto& r : refs) r.lr_scale = s;
  return refs;
}

/// Summed recognition loss over a minibatch, batch norm pooled across it.
inline LossBreakdown<Real> slr_batch_loss(const TwoStreamModel<Real>& model, const std::vector<SampleRecord>& train,
                                          const std::vector<std::size_t>& batch, int epoch, const RunConfig& cfg) {
  std::vector<SlrInput<Real>> inputs;
  std::vector<const SampleRecord*> recs;
  for (auto i : batch) {
    recs.push_back(&train[i]);
    inputs.push_back(make_input(training_view(train[i], cfg, epoch), cfg.heatmap, model.config()));
  }
  auto outs = model.forward(inputs, true);
  LossBreakdown<Real> sum;
  for (std::size_t n = 0; n < outs.size(); ++n) {
    auto b = recognition_loss(outs[n], recs[n]->glosses, model.config().weights);
    accumulate(sum, b, 1.0);
    sum.loss = sum.loss.defined() ? add(sum.loss, b.loss) : b.loss;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

inline std::string model_signature(const ModelConfig& m) {
  auto b = [](bool x) { return x ? "1" : "0"; };
  return std::string("vocab=") + std::to_string(m.vocab) + ";video=" + b(m.use_video) + ";keypoint=" + b(m.use_keypoint) +
         ";joint=" + b(m.joint_head) + ";lateral=" + lateral_name(m.lateral) + ";spn=" + b(m.spn);
}

inline Checkpoint slr_checkpoint(const TwoStreamModel<Real>& model, const TrainState& state, const std::string& command) {
  Checkpoint c;
  store_params(c, model.params());
  store_optimizer(c, state.optimizer);
  c.meta["command"] = command;
  c.meta["next_epoch"] = std::to_string(state.next_epoch);
  c.meta["model"] = model_signature(model.config());
  return c;
}

inline void restore_state(const Checkpoint& c, TrainState& state) {
  restore_optimizer(c, state.optimizer);
  auto it = c.meta.find("next_epoch");
  state.next_epoch = it == c.meta.end() ? 0 : std::stoi(it->second);
}

// ---------------------------------------------------------------------------
// Stages

struct Splits {
  std::vector<SampleRecord> train, dev, test;
};

inline Splits load_splits(const Dataset& ds) {
  return {ds.load_split("train"), ds.load_split("dev"), ds.load_split("test")};
}

/// Output locations of a training command.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path stem() const { return dir / "model"; }
  std::filesystem::path log() const { return dir / "train.log.tsv"; }
  std::filesystem::path config() const { return dir / "config.ini"; }
};

/// Model config for single-stream pretraining: no pyramid, lateral links or
/// joint head.
inline ModelConfig stream_only(ModelConfig m, const std::string& stream) {
  if (stream != "video" && stream != "keypoint") throw ConfigError("stream must be video or keypoint, got '" + stream + "'");
  m.use_video = stream == "video";
  m.use_keypoint = stream == "keypoint";
  m.spn = false;
  m.joint_head = false;
  m.lateral = LateralMode::None;
  m.freeze_block1 = false;
  return m;
}

/// Trains a recognition model in place, logging every epoch and saving a
/// checkpoint after each one. Returns the last dev WER.
inline double train_slr_model(TwoStreamModel<Real>& model, const Splits& data, const RunConfig& cfg,
                              const RunPaths& paths, TrainState& state, const std::string& command,
                              int stop_after = -1) {
  double last_wer = std::numeric_limits<double>::quiet_NaN();
  run_epochs(
      cfg.train, data.train.size(), model.params().refs(), state,
      [&](const std::vector<std::size_t>& batch, int epoch) {
        return slr_batch_loss(model, data.train, batch, epoch, cfg);
      },
      [&](EpochRow& row) {
        row.dev_wer = last_wer = evaluate_slr(model, data.dev, cfg.heatmap, cfg.train.beam).wer;
        if (!paths.dir.empty()) {
          append_log(paths.log(), row);
          slr_checkpoint(model, state, command).save(paths.stem());
        }
      },
      stop_after);
  return last_wer;
}

// ---------------------------------------------------------------------------
// Translation stages

inline TextVocab corpus_vocab(const Dataset& ds) { return TextVocab(ds.words()); }

inline double train_gloss_translator(GlossTranslator<Real>& g2t, const Splits& data, const RunConfig& cfg,
                                     const RunPaths& paths, TrainState& state, int stop_after = -1) {
  double last = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<int>> targets;
  for (const auto& r : data.train) targets.push_back(g2t.vocab().encode(r.text));
  TrainConfig tc = cfg.train;
  tc.lr = cfg.train.translator_lr;
  run_epochs(
      tc, data.train.size(), g2t.params().refs(), state,
      [&](const std::vector<std::size_t>& batch, int) {
        LossBreakdown<Real> sum;
        for (auto i : batch) {
          Tensor<Real> l = g2t.loss(data.train[i].glosses, targets[i]);
          sum.translation += l.item();
          sum.loss = sum.loss.defined() ? add(sum.loss, l) : l;
        }
        sum.total = sum.translation;
        return sum;
      },
      [&](EpochRow& row) {
        std::vector<Tokens> refs, hyps;
        for (const auto& r : data.dev) {
          refs.push_back(r.text);
          hyps.push_back(g2t.translate(r.glosses, cfg.train.beam));
        }
        row.dev_bleu4 = last = data.dev.empty() ? 0.0 : bleu(refs, hyps).b[3];
        if (!paths.dir.empty()) {
          append_log(paths.log(), row);
          Checkpoint c;
          store_params(c, g2t.params());
          store_optimizer(c, state.optimizer);
          c.meta["command"] = "pretrain-gloss2text";
          c.meta["next_epoch"] = std::to_string(state.next_epoch);
          c.meta["words"] = join(std::vector<std::string>(g2t.vocab().tokens().begin() + TextVocab::kSpecials,
                                                          g2t.vocab().tokens().end()));
          c.meta["gloss_vocab"] = std::to_string(g2t.gloss_vocab());
          c.save(paths.stem());
        }
      },
      stop_after);
  return last;
}

/// Backbone parameter prefixes frozen during translation training.
inline std::vector<std::string> backbone_prefixes() {
  std::vector<std::string> p;
  for (const char* s : {"video", "keypoint"})
    for (int b = 1; b <= 4; ++b) p.push_back(std::string(s) + ".block" + std::to_string(b) + ".");
  p.push_back("lateral.");
  return p;
}

inline void freeze_backbone(TwoStreamModel<Real>& m) {
  for (const auto& p : backbone_prefixes()) m.params().set_trainable(p, false);
}

inline std::vector<Tokens> translate_all(const SltModel<Real>& slt, const std::vector<SampleRecord>& records,
                                         const HeatmapConfig& hm, int beam) {
  std::vector<Tokens> out;
  for (const auto& r : records) out.push_back(slt.translate(make_input(r, hm, slt.slr().config()), beam));
  return out;
}

inline Checkpoint slt_checkpoint(const SltModel<Real>& slt, const TrainState& state) {
  Checkpoint c;
  store_params(c, slt.slr().params());
  store_params(c, slt.params());
  store_optimizer(c, state.optimizer);
  c.meta["command"] = "train-slt";
  c.meta["next_epoch"] = std::to_string(state.next_epoch);
  c.meta["model"] = model_signature(slt.slr().config());
  c.meta["words"] = join(std::vector<std::string>(slt.vocab().tokens().begin() + TextVocab::kSpecials, slt.vocab().tokens().end()));
  return c;
}

/// Joint SLR + translation training with the backbone frozen. Returns the
/// last dev BLEU-4 of Sign2Text.
inline double train_slt_model(SltModel<Real>& slt, const Splits& data, const RunConfig& cfg, const RunPaths& paths,
                              TrainState& state, int stop_after = -1) {
  freeze_backbone(slt.slr());
  std::vector<std::vector<int>> targets;
  for (const auto& r : data.train) targets.push_back(slt.vocab().encode(r.text));
  auto refs = slt.slr().params().refs();
  for (auto& r : with_lr_scale(slt.params().refs(), static_cast<Real>(cfg.train.translator_lr / cfg.train.lr)))
    refs.push_back(r);
  double last = std::numeric_limits<double>::quiet_NaN();
  run_epochs(
      cfg.train, data.train.size(), refs, state,
      [&](const std::vector<std::size_t>& batch, int epoch) {
        std::vector<SlrInput<Real>> inputs;
        for (auto i : batch) inputs.push_back(make_input(training_view(data.train[i], cfg, epoch), cfg.heatmap, slt.slr().config()));
        auto outs = slt.slr().forward(inputs, true);
        LossBreakdown<Real> sum;
        for (std::size_t n = 0; n < outs.size(); ++n) {
          const auto& rec = data.train[batch[n]];
          auto b = slt_loss(recognition_loss(outs[n], rec.glosses, slt.slr().config().weights),
                            slt.translation_losses(outs[n], targets[batch[n]]));
          accumulate(sum, b, 1.0);
          sum.loss = sum.loss.defined() ? add(sum.loss, b.loss) : b.loss;
        }
        return sum;
      },
      [&](EpochRow& row) {
        std::vector<Tokens> r;
        for (const auto& s : data.dev) r.push_back(s.text);
        row.dev_bleu4 = last = data.dev.empty() ? 0.0 : bleu(r, translate_all(slt, data.dev, cfg.heatmap, cfg.train.beam)).b[3];
        row.dev_wer = evaluate_slr(slt.slr(), data.dev, cfg.heatmap, cfg.train.beam).wer;
        if (!paths.dir.empty()) {
          append_log(paths.log(), row);
          slt_checkpoint(slt, state).save(paths.stem());
        }
      },
      stop_after);
  return last;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string slr_report(const std::string& name, double dev_wer, double test_wer) {
  return "Method\tDev WER\tTest WER\n" + name + "\t" + fixed2(dev_wer) + "\t" + fixed2(test_wer) + "\n";
}

inline std::string slt_report(const std::string& name, const TextScores& dev, const TextScores& test) {
  std::string out = "Method";
  for (const char* split : {"Dev", "Test"})
    for (const char* col : {"R", "B1", "B2", "B3", "B4"}) out += std::string("\t") + split + " " + col;
  out += "\n" + name;
  for (const auto* s : {&dev, &test}) {
    out += "\t" + fixed2(s->rouge);
    for (double b : s->bleu.b) out += "\t" + fixed2(b);
  }
  return out + "\n";
}

}  // namespace twostream
