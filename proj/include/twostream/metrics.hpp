#pragma once

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "twostream/errors.hpp"

namespace twostream {

using Tokens = std::vector<std::string>;

inline Tokens split_tokens(const std::string& text) {
  Tokens out;
  std::istringstream is(text);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

inline std::string join_tokens(const Tokens& tokens, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

enum class EditOp { Match, Substitution, Deletion, Insertion };

struct EditStep {
  EditOp op;
  std::string ref;  // empty for insertions
  std::string hyp;  // empty for deletions
};

struct EditAlignment {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int matches = 0;
  int reference_length = 0;
  std::vector<EditStep> steps;

  int errors() const { return substitutions + deletions + insertions; }
};

struct WerResult {
  double percent = 0.0;
  EditAlignment alignment;
};

/// Minimum edit distance between token sequences with a backtrace preferring
/// match, then substitution, deletion, insertion. Not clamped at 100.
template <typename T>
EditAlignment align_tokens(const std::vector<T>& ref, const std::vector<T>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto D = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) D(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) D(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = D(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      D(i, j) = std::min({diag, D(i - 1, j) + 1, D(i, j - 1) + 1});
    }
  EditAlignment a;
  a.reference_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  auto str = [](const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && D(i, j) == D(i - 1, j - 1)) {
      a.steps.push_back({EditOp::Match, str(ref[i - 1]), str(hyp[j - 1])});
      ++a.matches, --i, --j;
    } else if (i > 0 && j > 0 && D(i, j) == D(i - 1, j - 1) + 1) {
      a.steps.push_back({EditOp::Substitution, str(ref[i - 1]), str(hyp[j - 1])});
      ++a.substitutions, --i, --j;
    } else if (i > 0 && D(i, j) == D(i - 1, j) + 1) {
      a.steps.push_back({EditOp::Deletion, str(ref[i - 1]), ""});
      ++a.deletions, --i;
    } else {
      a.steps.push_back({EditOp::Insertion, "", str(hyp[j - 1])});
      ++a.insertions, --j;
    }
  }
  std::reverse(a.steps.begin(), a.steps.end());
  return a;
}

template <typename T>
WerResult wer(const std::vector<T>& ref, const std::vector<T>& hyp) {
  if (ref.empty()) throw UsageError("WER needs a non-empty reference");
  WerResult r;
  r.alignment = align_tokens(ref, hyp);
  r.percent = 100.0 * r.alignment.errors() / static_cast<double>(ref.size());
  return r;
}

/// Corpus WER: total edits over total reference length.
template <typename T>
double corpus_wer(const std::vector<std::vector<T>>& refs, const std::vector<std::vector<T>>& hyps) {
  if (refs.size() != hyps.size()) throw UsageError("corpus_wer: size mismatch");
  long errors = 0, length = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto a = align_tokens(refs[i], hyps[i]);
    errors += a.errors();
    length += a.reference_length;
  }
  if (length == 0) throw UsageError("corpus_wer: empty references");
  return 100.0 * static_cast<double>(errors) / static_cast<double>(length);
}

// ---------------------------------------------------------------------------
// BLEU

struct BleuScores {
  std::array<double, 4> b{};  // cumulative BLEU-1..4, in [0, 100]
  double brevity_penalty = 0.0;
  std::array<double, 4> precision{};
};

namespace detail {

inline std::map<Tokens, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, int> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i)
    ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace detail

/// Corpus BLEU with clipped n-gram precision, uniform weights and brevity
/// penalty. references[i] holds all references for hypotheses[i].
///
/// With `smooth` set, a zero corpus-level count for some n >= 2 is replaced by
/// add-one smoothing, but only when some hypothesis is shorter than n; that
/// is the only case in which a zero can come from segment length alone.
inline BleuScores bleu(const std::vector<std::vector<Tokens>>& references,
                       const std::vector<Tokens>& hypotheses, int max_n = 4, bool smooth = true) {
  if (max_n < 1 || max_n > 4) throw UsageError("BLEU max_n must be in [1, 4]");
  if (references.size() != hypotheses.size()) throw UsageError("bleu: corpus size mismatch");
  BleuScores out;
  if (hypotheses.empty()) return out;
  std::array<double, 4> matched{}, total{};
  double hyp_len = 0, ref_len = 0;
  std::size_t shortest = SIZE_MAX;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const Tokens& hyp = hypotheses[s];
    shortest = std::min(shortest, hyp.size());
    hyp_len += static_cast<double>(hyp.size());
    std::size_t best = 0;
    long best_diff = LONG_MAX;
    for (const auto& r : references[s]) {
      const long diff = std::labs(static_cast<long>(r.size()) - static_cast<long>(hyp.size()));
      if (diff < best_diff || (diff == best_diff && r.size() < best)) best_diff = diff, best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (int n = 1; n <= max_n; ++n) {
      auto hc = detail::ngram_counts(hyp, n);
      std::map<Tokens, int> max_ref;
      for (const auto& r : references[s])
        for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : hc) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0) return out;
  out.brevity_penalty = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  double log_sum = 0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    double m = matched[n - 1], t = total[n - 1];
    if (m == 0 && n >= 2 && smooth && shortest < static_cast<std::size_t>(n)) {
      m += 1, t += 1;
    }
    const double p = t > 0 ? m / t : 0.0;
    out.precision[n - 1] = p;
    if (p <= 0) zero = true;
    if (!zero) log_sum += std::log(p);
    out.b[n - 1] = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / n);
  }
  return out;
}

inline BleuScores bleu(const std::vector<Tokens>& references, const std::vector<Tokens>& hypotheses,
                       int max_n = 4, bool smooth = true) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back({r});
  return bleu(refs, hypotheses, max_n, smooth);
}

// ---------------------------------------------------------------------------
// ROUGE-L

template <typename T>
int lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

constexpr double kRougeBeta2 = 1.0;

/// Sentence ROUGE-L F-measure in [0, 100]; zero when either side is empty.
inline double rouge_l(const Tokens& reference, const Tokens& hypothesis) {
  if (reference.empty() || hypothesis.empty()) return 0.0;
  const double lcs = lcs_length(reference, hypothesis);
  if (lcs == 0) return 0.0;
  const double r = lcs / static_cast<double>(reference.size());
  const double p = lcs / static_cast<double>(hypothesis.size());
  return 100.0 * (1.0 + kRougeBeta2) * r * p / (r + kRougeBeta2 * p);
}

// Mean sentence ROUGE-L.
inline double corpus_rouge_l(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) {
  if (refs.size() != hyps.size()) throw UsageError("corpus_rouge_l: size mismatch");
  if (refs.empty()) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) acc += rouge_l(refs[i], hyps[i]);
  return acc / static_cast<double>(refs.size());
}

}  // namespace twostream
