#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "twostream/ops.hpp"

namespace twostream {

constexpr int kBlank = 0;

// Stand-in for log(0) in every CTC recursion.
constexpr double kLogZero = -1e30;

using GlossSeq = std::vector<int>;

/// Target cannot be aligned to the available frames. Distinct from
/// numeric failure so that data bugs surface with their own type.
class CtcInfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kLogZero; }

/// Frame-wise distributions over blank plus the gloss vocabulary. Rows are
/// kept in probability space, in double precision.
struct FramePosteriors {
  int frames = 0;
  int classes = 0;
  std::vector<double> prob;

  FramePosteriors() = default;
  FramePosteriors(int t, int c, std::vector<double> p) : frames(t), classes(c), prob(std::move(p)) {
    if (prob.size() != static_cast<std::size_t>(t) * c)
      throw DimensionError("posterior buffer does not match " + std::to_string(t) + "x" +
                           std::to_string(c));
  }

  std::span<const double> row(int t) const {
    return {prob.data() + static_cast<std::size_t>(t) * classes, static_cast<std::size_t>(classes)};
  }
  double at(int t, int c) const { return prob[static_cast<std::size_t>(t) * classes + c]; }

  // Softmax of each logit row, computed in double.
  template <typename S>
  static FramePosteriors from_logits(std::span<const S> logits, int t, int c) {
    std::vector<double> p(static_cast<std::size_t>(t) * c);
    for (int r = 0; r < t; ++r) {
      const S* in = logits.data() + static_cast<std::size_t>(r) * c;
      double mx = static_cast<double>(*std::max_element(in, in + c));
      double acc = 0;
      for (int j = 0; j < c; ++j) acc += (p[static_cast<std::size_t>(r) * c + j] = std::exp(in[j] - mx));
      for (int j = 0; j < c; ++j) p[static_cast<std::size_t>(r) * c + j] /= acc;
    }
    return FramePosteriors(t, c, std::move(p));
  }

  FramePosteriors first_rows(int t) const {
    return FramePosteriors(t, classes,
                           std::vector<double>(prob.begin(), prob.begin() + static_cast<std::ptrdiff_t>(t) * classes));
  }

  bool rows_normalized(double tol = 1e-6) const {
    for (int t = 0; t < frames; ++t) {
      double s = 0;
      for (double v : row(t)) {
        if (v < 0.0) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }
};

/// Minimum number of frames a target needs: one per label plus a blank
/// between each pair of equal neighbours.
inline int ctc_required_frames(const GlossSeq& target) {
  int need = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) need += target[i] == target[i - 1];
  return need;
}

/// Merge adjacent repeats, then drop blanks.
inline GlossSeq collapse(std::span<const int> path) {
  GlossSeq out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != kBlank) out.push_back(s);
    prev = s;
  }
  return out;
}

namespace detail {

struct CtcLattice {
  std::vector<int> ext;        // blank-interleaved target
  std::vector<double> alpha;   // [T][S]
  std::vector<double> beta;    // [T][S]
  double log_likelihood = kLogZero;
};

// Forward-backward over the extended target. `skip_log_weight` is added to
// every skip transition; it is zero for the real loss and only exists so
// the verification suite can check that a perturbed recursion is caught.
inline CtcLattice ctc_lattice(std::span<const double> logp, int frames, int classes,
                              const GlossSeq& target, double skip_log_weight = 0.0) {
  for (int g : target) {
    if (g <= kBlank || g >= classes)
      throw DimensionError("CTC target label " + std::to_string(g) + " outside vocabulary");
  }
  const int need = ctc_required_frames(target);
  if (frames < std::max(need, 1)) {
    throw CtcInfeasibleError("CTC target of length " + std::to_string(target.size()) + " needs " +
                             std::to_string(need) + " frames, only " + std::to_string(frames) +
                             " available");
  }
  CtcLattice lat;
  lat.ext.reserve(2 * target.size() + 1);
  lat.ext.push_back(kBlank);
  for (int g : target) {
    lat.ext.push_back(g);
    lat.ext.push_back(kBlank);
  }
  const int s_len = static_cast<int>(lat.ext.size());
  const auto& ext = lat.ext;
  auto y = [&](int t, int s) { return logp[static_cast<std::size_t>(t) * classes + ext[s]]; };
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  lat.alpha.assign(static_cast<std::size_t>(frames) * s_len, kLogZero);
  lat.beta.assign(static_cast<std::size_t>(frames) * s_len, kLogZero);
  auto A = [&](int t, int s) -> double& { return lat.alpha[static_cast<std::size_t>(t) * s_len + s]; };
  auto B = [&](int t, int s) -> double& { return lat.beta[static_cast<std::size_t>(t) * s_len + s]; };

  A(0, 0) = y(0, 0);
  if (s_len > 1) A(0, 1) = y(0, 1);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, A(t - 1, s - 2) + skip_log_weight);
      if (acc > kLogZero) A(t, s) = acc + y(t, s);
    }
  }
  const int last = frames - 1;
  B(last, s_len - 1) = y(last, s_len - 1);
  if (s_len > 1) B(last, s_len - 2) = y(last, s_len - 2);
  for (int t = last - 1; t >= 0; --t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < s_len) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < s_len && can_skip(s + 2)) acc = log_add(acc, B(t + 1, s + 2) + skip_log_weight);
      if (acc > kLogZero) B(t, s) = acc + y(t, s);
    }
  }
  lat.log_likelihood = A(last, s_len - 1);
  if (s_len > 1) lat.log_likelihood = log_add(lat.log_likelihood, A(last, s_len - 2));
  return lat;
}

}  // namespace detail

/// -ln p(target | frames) for rows [0, valid_frames) of log_probs[T', C].
/// The value is differentiable with respect to log_probs; rows past
/// valid_frames receive zero gradient. Pass valid_frames < 0 to use all rows.
template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& log_probs, const GlossSeq& target, int valid_frames = -1,
                   double skip_log_weight = 0.0) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss expects [T', C] log-probabilities");
  const int total = log_probs.dim(0), classes = log_probs.dim(1);
  const int frames = valid_frames < 0 ? total : valid_frames;
  if (frames > total) throw DimensionError("ctc_loss: valid frames exceed rows");
  std::vector<double> logp(static_cast<std::size_t>(frames) * classes);
  for (std::size_t i = 0; i < logp.size(); ++i) logp[i] = static_cast<double>(log_probs[i]);
  auto lat = std::make_shared<detail::CtcLattice>(
      detail::ctc_lattice(logp, frames, classes, target, skip_log_weight));
  if (lat->log_likelihood <= kLogZero / 2) {
    throw NumericError("CTC likelihood underflow for a feasible target");
  }
  const S loss = static_cast<S>(-lat->log_likelihood);
  return detail::make_result<S>(
      {1}, {loss}, {log_probs.node()},
      [lat, logp = std::move(logp), frames, classes](detail::Node<S>& self) {
        S* g = detail::grad_of(*self.parents[0]);
        if (!g) return;
        const int s_len = static_cast<int>(lat->ext.size());
        std::vector<double> acc(static_cast<std::size_t>(classes));
        for (int t = 0; t < frames; ++t) {
          std::fill(acc.begin(), acc.end(), kLogZero);
          for (int s = 0; s < s_len; ++s) {
            const std::size_t i = static_cast<std::size_t>(t) * s_len + s;
            acc[lat->ext[s]] = log_add(acc[lat->ext[s]], lat->alpha[i] + lat->beta[i]);
          }
          for (int c = 0; c < classes; ++c) {
            if (acc[c] <= kLogZero) continue;
            const double occupancy =
                std::exp(acc[c] - logp[static_cast<std::size_t>(t) * classes + c] - lat->log_likelihood);
            g[static_cast<std::size_t>(t) * classes + c] -= static_cast<S>(self.grad[0] * occupancy);
          }
        }
      });
}

/// Exact p(target | frames) by enumerating all classes^frames paths. Oracle
/// only; refuses instances with more than max_paths paths.
inline double ctc_brute_force(const FramePosteriors& post, const GlossSeq& target,
                              double max_paths = 2e7) {
  if (std::pow(static_cast<double>(post.classes), post.frames) > max_paths)
    throw UsageError("ctc_brute_force: instance too large to enumerate");
  std::vector<int> path(static_cast<std::size_t>(post.frames), 0);
  double total = 0.0;
  while (true) {
    if (collapse(path) == target) {
      double p = 1.0;
      for (int t = 0; t < post.frames; ++t) p *= post.at(t, path[t]);
      total += p;
    }
    int t = 0;
    while (t < post.frames && ++path[t] == post.classes) path[t++] = 0;
    if (t == post.frames) break;
  }
  return total;
}

/// Collapsed per-frame argmax; ties go to the lowest class index.
inline GlossSeq best_path_decode(const FramePosteriors& post) {
  std::vector<int> path(static_cast<std::size_t>(post.frames));
  for (int t = 0; t < post.frames; ++t) {
    auto r = post.row(t);
    path[t] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return collapse(path);
}

constexpr int kDefaultBeamWidth = 5;

/// CTC prefix beam search. Each prefix carries the probability of ending in
/// blank and in its last label. Beams are ranked by total probability, ties
/// by lexicographic order of the label sequence.
inline GlossSeq prefix_beam_decode(const FramePosteriors& post, int beam_width = kDefaultBeamWidth) {
  if (beam_width < 1) throw UsageError("beam width must be >= 1");
  struct Score {
    double blank = kLogZero;
    double label = kLogZero;
    double total() const { return log_add(blank, label); }
  };
  std::vector<std::pair<GlossSeq, Score>> beams{{GlossSeq{}, Score{0.0, kLogZero}}};
  for (int t = 0; t < post.frames; ++t) {
    std::map<GlossSeq, Score> next;
    const double pb = safe_log(post.at(t, kBlank));
    for (const auto& [prefix, sc] : beams) {
      const double tot = sc.total();
      auto& same = next[prefix];
      same.blank = log_add(same.blank, tot + pb);
      for (int c = 1; c < post.classes; ++c) {
        const double pc = safe_log(post.at(t, c));
        if (pc <= kLogZero) continue;
        GlossSeq ext = prefix;
        ext.push_back(c);
        if (!prefix.empty() && prefix.back() == c) {
          auto& rep = next[prefix];
          rep.label = log_add(rep.label, sc.label + pc);
          auto& grow = next[ext];
          grow.label = log_add(grow.label, sc.blank + pc);
        } else {
          auto& grow = next[ext];
          grow.label = log_add(grow.label, tot + pc);
        }
      }
    }
    beams.assign(next.begin(), next.end());
    std::stable_sort(beams.begin(), beams.end(), [](const auto& a, const auto& b) {
      return a.second.total() > b.second.total();
    });
    if (beams.size() > static_cast<std::size_t>(beam_width)) beams.resize(beam_width);
  }
  return beams.front().first;
}

/// Element-wise arithmetic mean of probability rows.
inline FramePosteriors ensemble_posteriors(const std::vector<const FramePosteriors*>& parts) {
  if (parts.empty()) throw UsageError("ensemble of no posteriors");
  FramePosteriors out = *parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k]->frames != out.frames || parts[k]->classes != out.classes)
      throw DimensionError("ensemble_posteriors: shape mismatch");
    for (std::size_t i = 0; i < out.prob.size(); ++i) out.prob[i] += parts[k]->prob[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.prob) v *= inv;
  return out;
}

inline FramePosteriors ensemble_posteriors(const FramePosteriors& v, const FramePosteriors& k,
                                           const FramePosteriors& j) {
  return ensemble_posteriors({&v, &k, &j});
}

}  // namespace twostream
