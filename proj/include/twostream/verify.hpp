#pragma once

#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "twostream/ctc.hpp"
#include "twostream/encoder.hpp"
#include "twostream/gradcheck.hpp"
#include "twostream/heatmap.hpp"
#include "twostream/metrics.hpp"

namespace twostream {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double seconds = 0;
  std::string detail;
};

struct VerifyOptions {
  // Added to every skip transition of the CTC recursion; nonzero values
  // inject a fault that the CTC suite must detect.
  double ctc_skip_log_weight = 0.0;
};

namespace verify {

inline FramePosteriors random_posteriors(int t, int c, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.6, 1.0);
  std::vector<double> p(static_cast<std::size_t>(t) * c);
  for (int r = 0; r < t; ++r) {
    double s = 0;
    for (int j = 0; j < c; ++j) s += (p[static_cast<std::size_t>(r) * c + j] = g(rng) + 1e-9);
    for (int j = 0; j < c; ++j) p[static_cast<std::size_t>(r) * c + j] /= s;
  }
  return FramePosteriors(t, c, std::move(p));
}

inline Tensor<double> log_tensor(const FramePosteriors& post) {
  std::vector<double> v(post.prob.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(post.prob[i]);
  return Tensor<double>::from({post.frames, post.classes}, std::move(v));
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

template <typename F>
SuiteResult timed(const std::string& name, F&& body) {
  SuiteResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace verify

/// 1000 random instances with T' <= 6, U <= 3, |V| <= 4 against path
/// enumeration; passes when every gap is below 1e-6.
inline SuiteResult verify_ctc(const VerifyOptions& opt = {}) {
  return verify::timed("ctc-brute-force", [&](SuiteResult& r) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> tdist(1, 6), vdist(1, 4), udist(0, 3);
    double worst = 0;
    int checked = 0;
    while (checked < 1000) {
      const int T = tdist(rng), V = vdist(rng);
      auto post = verify::random_posteriors(T, V + 1, rng);
      GlossSeq target(static_cast<std::size_t>(udist(rng)));
      std::uniform_int_distribution<int> lab(1, V);
      for (int& x : target) x = lab(rng);
      if (ctc_required_frames(target) > T) continue;
      const double loss = ctc_loss(verify::log_tensor(post), target, -1, opt.ctc_skip_log_weight).item();
      worst = std::max(worst, std::abs(loss + std::log(ctc_brute_force(post, target))));
      ++checked;
    }
    r.passed = worst < 1e-6;
    r.detail = "instances=" + std::to_string(checked) + " max_abs_err=" + verify::sci(worst);
  });
}

/// The micro model used by the gradient check: widths <= 8, |V| = 3.
inline ModelConfig micro_model_config() {
  ModelConfig c;
  c.vocab = 3;
  c.d_rep = 6;
  c.video = StreamConfig{3, 8, 8, {4, 6, 6, 8}, {2, 2, 2, 1}, {1, 1, 2, 2}};
  c.keypoint = StreamConfig{5, 4, 4, {4, 4, 6, 6}, {2, 2, 1, 1}, {1, 1, 2, 2}};
  c.freeze_block1 = false;
  return c;
}

/// Every parameter gradient of the full recognition loss (three head CTCs,
/// both pyramid CTCs, distillation) against central differences on a
/// two-clip batch of T = 8.
inline SuiteResult verify_gradients(double tolerance = 1e-3) {
  return verify::timed("gradient-check", [&](SuiteResult& r) {
    const auto c = micro_model_config();
    TwoStreamModel<double> m(c, 6);
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 0.2);
    // Lateral weights start at zero; give them values so their paths matter.
    for (const auto& [name, t] : m.params().tensors())
      if (name.rfind("lateral.", 0) == 0)
        for (auto& x : const_cast<Tensor<double>&>(t).values()) x = n(rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto fill = [&](Shape s) {
      std::vector<double> v(shape_numel(s));
      for (auto& x : v) x = u(rng);
      return Tensor<double>::from(std::move(s), std::move(v));
    };
    std::vector<SlrInput<double>> batch;
    for (int i = 0; i < 2; ++i)
      batch.push_back({fill({8, 8, 8, 3}), fill({8, 4, 4, 5})});
    const std::vector<GlossSeq> targets{{1, 3}, {2}};
    std::vector<Tensor<double>> teachers;
    for (const auto& o : m.forward(batch, true)) teachers.push_back(ensemble_teacher(o));
    int active_terms = 0;
    auto rep = grad_check(
        [&] {
          auto outs = m.forward(batch, true);
          Tensor<double> total;
          active_terms = 0;
          for (std::size_t i = 0; i < outs.size(); ++i) {
            auto b = recognition_loss(outs[i], targets[i], c.weights, &teachers[i]);
            active_terms = (b.ctc_video > 0) + (b.ctc_keypoint > 0) + (b.ctc_joint > 0) + (b.actc_video > 0) +
                           (b.actc_keypoint > 0) + (b.distill > 0);
            total = total.defined() ? add(total, b.loss) : b.loss;
          }
          return total;
        },
        m.params().refs(), 1e-6);
    const auto* worst = rep.worst();
    r.passed = rep.max_rel_error() < tolerance && active_terms == 6 && rep.entries.size() == m.params().refs().size();
    r.detail = "tensors=" + std::to_string(rep.entries.size()) + " terms=" + std::to_string(active_terms) +
               " max_rel_err=" + verify::sci(rep.max_rel_error()) + " worst=" + (worst ? worst->name : "-");
  });
}

/// Saturating prefix beam against exhaustive labeling search on 200 tiny
/// instances, and best-path against a hand collapse on fuzz cases.
inline SuiteResult verify_decoders() {
  return verify::timed("decode-oracles", [&](SuiteResult& r) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> tdist(1, 5), vdist(1, 3);
    int beam_bad = 0, greedy_bad = 0;
    for (int n = 0; n < 200; ++n) {
      auto p = verify::random_posteriors(tdist(rng), vdist(rng) + 1, rng);
      std::map<GlossSeq, double> mass;
      std::vector<int> path(static_cast<std::size_t>(p.frames), 0);
      while (true) {
        double pr = 1;
        for (int t = 0; t < p.frames; ++t) pr *= p.at(t, path[t]);
        mass[collapse(path)] += pr;
        int t = 0;
        while (t < p.frames && ++path[t] == p.classes) path[t++] = 0;
        if (t == p.frames) break;
      }
      GlossSeq best;
      double bp = -1;
      for (const auto& [seq, m] : mass)
        if (m > bp) bp = m, best = seq;
      beam_bad += prefix_beam_decode(p, 1000) != best;
    }
    for (int n = 0; n < 500; ++n) {
      auto p = verify::random_posteriors(tdist(rng) + 1, vdist(rng) + 1, rng);
      GlossSeq want;
      int prev = -1;
      for (int t = 0; t < p.frames; ++t) {
        int arg = 0;
        for (int c = 1; c < p.classes; ++c)
          if (p.at(t, c) > p.at(t, arg)) arg = c;
        if (arg != prev && arg != 0) want.push_back(arg);
        prev = arg;
      }
      greedy_bad += best_path_decode(p) != want;
    }
    r.passed = beam_bad == 0 && greedy_bad == 0;
    r.detail = "beam_mismatch=" + std::to_string(beam_bad) + "/200 best_path_mismatch=" + std::to_string(greedy_bad) + "/500";
  });
}

/// 100 random keypoints rasterized at the default sigma against the
/// Gaussian evaluated directly; on-grid peak of 1.
inline SuiteResult verify_heatmap() {
  return verify::timed("heatmap-closed-form", [&](SuiteResult& r) {
    HeatmapConfig cfg;
    cfg.height = cfg.width = 32;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> pos(-4.0, 36.0);
    KeypointTrajectory traj(100, 1);
    for (int t = 0; t < 100; ++t) traj.x(t, 0) = static_cast<float>(pos(rng)), traj.y(t, 0) = static_cast<float>(pos(rng));
    auto g = rasterize<double>(traj, cfg);
    double worst = 0;
    for (int t = 0; t < 100; ++t)
      for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
          const double x = traj.x(t, 0), y = traj.y(t, 0);
          const double want = std::exp(-((i - x) * (i - x) + (j - y) * (j - y)) / (2 * 4.0 * 4.0));
          worst = std::max(worst, std::abs(g[(static_cast<std::size_t>(t) * 32 + i) * 32 + j] - want));
        }
    KeypointTrajectory on(1, 1);
    on.x(0, 0) = 7, on.y(0, 0) = 11;
    auto p = rasterize<double>(on, cfg);
    const double peak = p[7 * 32 + 11];
    r.passed = worst < 1e-7 && peak == 1.0 && HeatmapConfig{}.sigma == 4.0;
    r.detail = "max_abs_err=" + verify::sci(worst) + " peak=" + std::to_string(peak);
  });
}

/// Published per-sample WERs and hand-derived BLEU / ROUGE-L values.
inline SuiteResult verify_metrics() {
  return verify::timed("metric-golden", [&](SuiteResult& r) {
    struct Case {
      const char *ref, *hyp;
      double wer;
    };
    const Case cases[] = {
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
    int bad = 0;
    for (const auto& c : cases) {
      const double w = std::round(wer(split_tokens(c.ref), split_tokens(c.hyp)).percent * 100.0) / 100.0;
      bad += w != c.wer;
    }
    const auto b = bleu(std::vector<Tokens>{split_tokens("a b c d")}, {split_tokens("a b c d e")});
    const double b4 = 100 * std::pow(0.8 * 0.75 * (2.0 / 3) * 0.5, 0.25);
    bad += std::abs(b.b[0] - 80.0) > 1e-6;
    bad += std::abs(b.b[3] - b4) > 1e-6;
    bad += std::abs(rouge_l(split_tokens("a b c d"), split_tokens("a c d")) - 100 * 1.5 / 1.75) > 1e-6;
    r.passed = bad == 0;
    r.detail = "failures=" + std::to_string(bad);
  });
}

inline std::vector<SuiteResult> run_verify(const VerifyOptions& opt = {}) {
  return {verify_ctc(opt), verify_gradients(), verify_decoders(), verify_heatmap(), verify_metrics()};
}

inline std::string verify_summary(const std::vector<SuiteResult>& results) {
  std::string out = "suite\tstatus\tseconds\tdetail\n";
  bool ok = true;
  for (const auto& r : results) {
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.2f", r.seconds);
    out += r.name + "\t" + (r.passed ? "pass" : "fail") + "\t" + secs + "\t" + r.detail + "\n";
    ok = ok && r.passed;
  }
  return out + "overall\t" + (ok ? "pass" : "fail") + "\n";
}

}  // namespace twostream
