#pragma once

#include <array>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "twostream/tensor.hpp"

namespace twostream {

/// Keypoint positions over time. Coordinates are in heatmap pixels: x runs
/// along the first heatmap axis (rows), y along the second (columns).
struct KeypointTrajectory {
  int frames = 0;
  int keypoints = 0;
  std::vector<float> xy;          // [T][K][2]
  std::vector<float> confidence;  // [T][K], in [0, 1]

  KeypointTrajectory() = default;
  KeypointTrajectory(int t, int k)
      : frames(t),
        keypoints(k),
        xy(static_cast<std::size_t>(t) * k * 2, 0.f),
        confidence(static_cast<std::size_t>(t) * k, 1.f) {}

  float& x(int t, int k) { return xy[(static_cast<std::size_t>(t) * keypoints + k) * 2]; }
  float& y(int t, int k) { return xy[(static_cast<std::size_t>(t) * keypoints + k) * 2 + 1]; }
  float& conf(int t, int k) { return confidence[static_cast<std::size_t>(t) * keypoints + k]; }
  float x(int t, int k) const { return xy[(static_cast<std::size_t>(t) * keypoints + k) * 2]; }
  float y(int t, int k) const { return xy[(static_cast<std::size_t>(t) * keypoints + k) * 2 + 1]; }
  float conf(int t, int k) const { return confidence[static_cast<std::size_t>(t) * keypoints + k]; }

  bool operator==(const KeypointTrajectory&) const = default;
};

struct HeatmapConfig {
  double sigma = 4.0;
  int height = 112;
  int width = 112;
  double confidence_threshold = 0.3;

  void validate() const {
    if (!(sigma > 0)) throw ConfigError("heatmap sigma must be positive");
    if (height < 1 || width < 1) throw ConfigError("heatmap extents must be >= 1");
  }
};

/// Whether keypoint (t, k) is rasterized or left as an all-zero channel.
inline bool keypoint_kept(const KeypointTrajectory& traj, int t, int k, const HeatmapConfig& cfg) {
  const double x = traj.x(t, k), y = traj.y(t, k);
  if (!std::isfinite(x) || !std::isfinite(y)) return false;
  if (traj.conf(t, k) < cfg.confidence_threshold) return false;
  const double margin = 3.0 * cfg.sigma;
  return x >= -margin && x < cfg.height + margin && y >= -margin && y < cfg.width + margin;
}

/// T x H' x W' x K Gaussian heatmaps,
/// G[t,i,j,k] = exp(-((i - x)^2 + (j - y)^2) / (2 sigma^2)).
/// Suppressed keypoints give all-zero channels. The full grid is evaluated,
/// no truncation radius.
template <typename S>
Tensor<S> rasterize(const KeypointTrajectory& traj, const HeatmapConfig& cfg) {
  cfg.validate();
  const int T = traj.frames, K = traj.keypoints, H = cfg.height, W = cfg.width;
  std::vector<S> out(static_cast<std::size_t>(T) * H * W * K, S(0));
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  std::vector<double> gi(H), gj(W);
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < K; ++k) {
      if (!keypoint_kept(traj, t, k, cfg)) continue;
      const double x = traj.x(t, k), y = traj.y(t, k);
      for (int i = 0; i < H; ++i) gi[i] = (i - x) * (i - x);
      for (int j = 0; j < W; ++j) gj[j] = (j - y) * (j - y);
      for (int i = 0; i < H; ++i) {
        S* row = out.data() + ((static_cast<std::size_t>(t) * H + i) * W) * K + k;
        for (int j = 0; j < W; ++j) row[static_cast<std::size_t>(j) * K] = static_cast<S>(std::exp(-(gi[i] + gj[j]) * inv));
      }
    }
  }
  return Tensor<S>::from({T, H, W, K}, std::move(out));
}

// ---------------------------------------------------------------------------
// Keypoint groups

enum class KeypointGroup { Body, Hand, Mouth, Face, Feet, FaceLandmarks68 };

inline std::string group_name(KeypointGroup g) {
  switch (g) {
    case KeypointGroup::Body: return "body";
    case KeypointGroup::Hand: return "hand";
    case KeypointGroup::Mouth: return "mouth";
    case KeypointGroup::Face: return "face";
    case KeypointGroup::Feet: return "feet";
    case KeypointGroup::FaceLandmarks68: return "face68";
  }
  return "?";
}

inline KeypointGroup parse_group(const std::string& name) {
  for (auto g : {KeypointGroup::Body, KeypointGroup::Hand, KeypointGroup::Mouth, KeypointGroup::Face,
                 KeypointGroup::Feet, KeypointGroup::FaceLandmarks68}) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown keypoint group '" + name + "'");
}

/// Ordered segments of a keypoint set, e.g. "body:11,hand:42,mouth:10,face:16".
struct KeypointLayout {
  std::vector<std::pair<KeypointGroup, int>> segments;

  int total() const {
    int n = 0;
    for (const auto& s : segments) n += s.second;
    return n;
  }

  // First index and count of a group, or {-1, 0} if absent.
  std::pair<int, int> find(KeypointGroup g) const {
    int offset = 0;
    for (const auto& [grp, n] : segments) {
      if (grp == g) return {offset, n};
      offset += n;
    }
    return {-1, 0};
  }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i) out += ',';
      out += group_name(segments[i].first) + ":" + std::to_string(segments[i].second);
    }
    return out;
  }

  static KeypointLayout parse(const std::string& text) {
    KeypointLayout l;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("bad layout segment '" + item + "'");
      int n = 0;
      try {
        n = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad layout count in '" + item + "'");
      }
      if (n < 1) throw ConfigError("layout segment count must be positive");
      l.segments.emplace_back(parse_group(item.substr(0, colon)), n);
    }
    if (l.segments.empty()) throw ConfigError("empty keypoint layout");
    return l;
  }

  bool operator==(const KeypointLayout&) const = default;
};

// Canonical group sizes of the 79-keypoint selection.
constexpr int kUpperBodyKeypoints = 11;
constexpr int kHandKeypoints = 42;
constexpr int kMouthKeypoints = 10;
constexpr int kOtherFaceKeypoints = 16;
constexpr int kSelectedKeypoints =
    kUpperBodyKeypoints + kHandKeypoints + kMouthKeypoints + kOtherFaceKeypoints;

/// 133-point whole-body layout: 17 body (the first 11 are nose, eyes, ears,
/// shoulders, elbows, wrists), 6 feet, 68 face landmarks, 42 hand points.
inline KeypointLayout wholebody_layout() {
  return {{{KeypointGroup::Body, 17},
           {KeypointGroup::Feet, 6},
           {KeypointGroup::FaceLandmarks68, 68},
           {KeypointGroup::Hand, 42}}};
}

/// The layout produced by select_keypoints().
inline KeypointLayout selected_layout() {
  return {{{KeypointGroup::Body, kUpperBodyKeypoints},
           {KeypointGroup::Hand, kHandKeypoints},
           {KeypointGroup::Mouth, kMouthKeypoints},
           {KeypointGroup::Face, kOtherFaceKeypoints}}};
}

namespace detail {

// Offsets inside the 68-landmark face: every other outer-lip point plus
// four inner-lip points; jaw line at even offsets, both brows, nose tip.
inline constexpr std::array<int, kMouthKeypoints> kMouthFromFace68{48, 50, 52, 54, 56, 58, 61, 63, 65, 67};
inline constexpr std::array<int, kOtherFaceKeypoints> kFaceFromFace68{
    0, 2, 4, 6, 8, 10, 12, 14, 16, 17, 19, 21, 22, 24, 26, 30};

inline void require_group(const KeypointLayout& src, KeypointGroup g, int need) {
  const auto [off, n] = src.find(g);
  if (off < 0 || n < need) {
    throw ConfigError("keypoint source lacks " + std::to_string(need) + " " + group_name(g) +
                      " points (layout " + src.str() + ")");
  }
}

}  // namespace detail

/// Indices into `source` of the 79 used keypoints, ordered upper body (11),
/// hands (42), mouth (10), other face (16). Accepts the whole-body layout or
/// any layout that already has body/hand/mouth/face segments of sufficient
/// size.
inline std::vector<int> select_keypoints(const KeypointLayout& source) {
  std::vector<int> out;
  auto take = [&](KeypointGroup g, int n) {
    detail::require_group(source, g, n);
    const int off = source.find(g).first;
    for (int i = 0; i < n; ++i) out.push_back(off + i);
  };
  take(KeypointGroup::Body, kUpperBodyKeypoints);
  take(KeypointGroup::Hand, kHandKeypoints);
  const auto face68 = source.find(KeypointGroup::FaceLandmarks68);
  if (face68.first >= 0) {
    if (face68.second != 68) throw ConfigError("face68 segment must hold 68 landmarks");
    for (int i : detail::kMouthFromFace68) out.push_back(face68.first + i);
    for (int i : detail::kFaceFromFace68) out.push_back(face68.first + i);
  } else {
    take(KeypointGroup::Mouth, kMouthKeypoints);
    take(KeypointGroup::Face, kOtherFaceKeypoints);
  }
  return out;
}

/// Indices of the requested groups within `layout`, concatenated in the
/// canonical body, hand, mouth, face order regardless of request order.
inline std::vector<int> group_subsets(const std::vector<std::string>& groups,
                                      const KeypointLayout& layout = selected_layout()) {
  if (groups.empty()) throw ConfigError("group_subsets needs at least one group");
  std::set<KeypointGroup> wanted;
  for (const auto& name : groups) {
    const KeypointGroup g = parse_group(name);
    if (g != KeypointGroup::Body && g != KeypointGroup::Hand && g != KeypointGroup::Mouth &&
        g != KeypointGroup::Face)
      throw ConfigError("group '" + name + "' is not a selectable keypoint group");
    wanted.insert(g);
  }
  std::vector<int> out;
  for (auto g : {KeypointGroup::Body, KeypointGroup::Hand, KeypointGroup::Mouth, KeypointGroup::Face}) {
    if (!wanted.count(g)) continue;
    const auto [off, n] = layout.find(g);
    if (off < 0) throw ConfigError("layout " + layout.str() + " has no " + group_name(g) + " group");
    for (int i = 0; i < n; ++i) out.push_back(off + i);
  }
  return out;
}

/// Keeps only the listed keypoints, in list order.
inline KeypointTrajectory subset_keypoints(const KeypointTrajectory& traj, const std::vector<int>& idx) {
  KeypointTrajectory out(traj.frames, static_cast<int>(idx.size()));
  for (int t = 0; t < traj.frames; ++t)
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0 || idx[k] >= traj.keypoints) throw DimensionError("keypoint index out of range");
      out.x(t, static_cast<int>(k)) = traj.x(t, idx[k]);
      out.y(t, static_cast<int>(k)) = traj.y(t, idx[k]);
      out.conf(t, static_cast<int>(k)) = traj.conf(t, idx[k]);
    }
  return out;
}

}  // namespace twostream
