#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "twostream/corpus.hpp"
#include "twostream/encoder.hpp"
#include "twostream/io.hpp"
#include "twostream/translation.hpp"

namespace twostream {

/// A setting and where its value came from, for diagnostics.
struct Setting {
  std::string value;
  std::string origin;  // "file:line", "flag" or "default"
};

/// `[section]` headers and `key = value` lines; `#` and `;` start comments.
/// Keys are addressed as "section.key".
class Settings {
 public:
  static Settings parse(const std::string& text, const std::string& source) {
    Settings s;
    std::string section;
    int line_no = 0;
    for (auto raw : split(text, '\n')) {
      ++line_no;
      const std::string where = source + ":" + std::to_string(line_no);
      std::string line = trim(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(where + ": empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (section.empty()) throw ConfigError(where + ": key outside any section");
      const std::string full = section + "." + key;
      if (s.values_.count(full)) throw ConfigError(where + ": duplicate key " + full);
      s.values_[full] = {trim(line.substr(eq + 1)), where};
    }
    return s;
  }

  static Settings load(const std::string& path) { return parse(read_file(path), path); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, Setting>& values() const { return values_; }

  void set(const std::string& key, const std::string& value, const std::string& origin = "flag") {
    if (key.find('.') == std::string::npos) throw ConfigError(origin + ": key must be section.key, got '" + key + "'");
    values_[key] = {value, origin};
  }

  // "section.key=value"
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("flag: expected section.key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void merge(const Settings& over) {
    for (const auto& [k, v] : over.values_) values_[k] = v;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    used_.insert(key);
    return it == values_.end() ? fallback : it->second.value;
  }

  std::string origin(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? "default" : it->second.origin;
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = get(key, "");
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(origin(key) + ": " + key + " expects an integer, got '" + v + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = get(key, "");
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return x;
    } catch (const std::exception&) {
      throw ConfigError(origin(key) + ": " + key + " expects a number, got '" + v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(origin(key) + ": " + key + " expects true or false, got '" + v + "'");
  }

  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    std::vector<int> out;
    const std::string v = get(key, "");
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) {
      try {
        out.push_back(std::stoi(trim(item)));
      } catch (const std::exception&) {
        throw ConfigError(origin(key) + ": " + key + " expects a comma-separated integer list, got '" + v + "'");
      }
    }
    return out;
  }

  // Keys that were set but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(v.origin + ": unknown key " + k);
    return out;
  }

 private:
  std::map<std::string, Setting> values_;
  mutable std::set<std::string> used_;
};

inline std::string list_str(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <std::size_t N>
std::array<int, N> array_of(const std::vector<int>& v, const std::string& key) {
  if (v.size() != N) throw ConfigError(key + " expects " + std::to_string(N) + " values");
  std::array<int, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

struct TrainConfig {
  std::uint64_t seed = 1;
  int epochs = 40;
  int batch_size = 4;
  double lr = 1e-3;
  double translator_lr = 1e-3;  // adapters and translators
  double weight_decay = 1e-3;
  bool augment = true;
  AugmentRanges ranges;
  int beam = kDefaultBeamWidth;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0) || !(translator_lr > 0)) throw ConfigError("learning rates must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (beam < 1) throw ConfigError("train.beam must be >= 1");
    ranges.validate();
  }
};

/// Everything a command needs, read from one settings object.
struct RunConfig {
  std::string manifest;
  CorpusConfig corpus;
  HeatmapConfig heatmap{1.5, 16, 16, 0.3};
  ModelConfig model;
  TranslatorConfig translator;
  TrainConfig train;

  void validate() const {
    corpus.validate();
    heatmap.validate();
    model.validate();
    translator.validate();
    train.validate();
  }

  Settings to_settings() const {
    Settings s;
    auto put = [&](const std::string& k, const std::string& v) { s.set(k, v, "effective"); };
    auto num = [](double x) {
      std::ostringstream o;
      o.precision(17);
      o << x;
      return o.str();
    };
    auto b = [](bool x) { return std::string(x ? "true" : "false"); };
    put("data.manifest", manifest);
    put("data.sigma", num(heatmap.sigma));
    put("data.confidence_threshold", num(heatmap.confidence_threshold));
    put("corpus.seed", std::to_string(corpus.seed));
    put("corpus.vocab", std::to_string(corpus.vocab));
    put("corpus.train", std::to_string(corpus.train));
    put("corpus.dev", std::to_string(corpus.dev));
    put("corpus.test", std::to_string(corpus.test));
    put("corpus.min_glosses", std::to_string(corpus.min_glosses));
    put("corpus.max_glosses", std::to_string(corpus.max_glosses));
    put("corpus.min_duration", std::to_string(corpus.min_duration));
    put("corpus.max_duration", std::to_string(corpus.max_duration));
    put("corpus.video_size", std::to_string(corpus.video_size));
    put("corpus.heatmap_size", std::to_string(corpus.heatmap_size));
    put("corpus.layout", corpus.layout);
    put("corpus.blob_sigma", num(corpus.blob_sigma));
    put("corpus.pixel_noise", num(corpus.pixel_noise));
    put("corpus.keypoint_jitter", num(corpus.keypoint_jitter));
    put("corpus.confidence_dropout", num(corpus.confidence_dropout));
    put("corpus.appearances", std::to_string(corpus.appearances));
    put("corpus.appearance_shift", b(corpus.appearance_shift));
    put("corpus.grammar", grammar_name(corpus.grammar));
    put("corpus.min_separation", num(corpus.min_separation));
    put("model.d_rep", std::to_string(model.d_rep));
    put("model.use_video", b(model.use_video));
    put("model.use_keypoint", b(model.use_keypoint));
    put("model.joint_head", b(model.joint_head));
    put("model.lateral", lateral_name(model.lateral));
    put("model.lateral_levels", list_str(model.lateral_levels));
    put("model.spn", b(model.spn));
    put("model.spn_levels", list_str(model.spn_levels));
    put("model.freeze_block1", b(model.freeze_block1));
    put("model.video_widths", list_str({model.video.widths.begin(), model.video.widths.end()}));
    put("model.video_spatial_strides",
        list_str({model.video.spatial_strides.begin(), model.video.spatial_strides.end()}));
    put("model.keypoint_widths", list_str({model.keypoint.widths.begin(), model.keypoint.widths.end()}));
    put("model.keypoint_spatial_strides",
        list_str({model.keypoint.spatial_strides.begin(), model.keypoint.spatial_strides.end()}));
    put("model.temporal_strides",
        list_str({model.video.temporal_strides.begin(), model.video.temporal_strides.end()}));
    put("loss.lambda_v", num(model.weights.lambda_v));
    put("loss.lambda_k", num(model.weights.lambda_k));
    put("loss.w_dist", num(model.weights.w_dist));
    put("translator.layers", std::to_string(translator.layers));
    put("translator.d_model", std::to_string(translator.d_model));
    put("translator.heads", std::to_string(translator.heads));
    put("translator.d_ff", std::to_string(translator.d_ff));
    put("translator.max_len", std::to_string(translator.max_len));
    put("translator.dropout", num(translator.dropout));
    put("train.seed", std::to_string(train.seed));
    put("train.epochs", std::to_string(train.epochs));
    put("train.batch_size", std::to_string(train.batch_size));
    put("train.lr", num(train.lr));
    put("train.translator_lr", num(train.translator_lr));
    put("train.weight_decay", num(train.weight_decay));
    put("train.augment", b(train.augment));
    put("train.crop_min", num(train.ranges.crop_min));
    put("train.crop_max", num(train.ranges.crop_max));
    put("train.rate_min", num(train.ranges.rate_min));
    put("train.rate_max", num(train.ranges.rate_max));
    put("train.beam", std::to_string(train.beam));
    return s;
  }
};

/// Reads a RunConfig; every key must be known. The model's vocabulary and
/// input extents follow the corpus settings.
inline RunConfig run_config_from(const Settings& s) {
  RunConfig r;
  r.manifest = s.get("data.manifest", "");
  auto& c = r.corpus;
  c.seed = static_cast<std::uint64_t>(s.get_int("corpus.seed", static_cast<long long>(c.seed)));
  c.vocab = static_cast<int>(s.get_int("corpus.vocab", c.vocab));
  c.train = static_cast<int>(s.get_int("corpus.train", c.train));
  c.dev = static_cast<int>(s.get_int("corpus.dev", c.dev));
  c.test = static_cast<int>(s.get_int("corpus.test", c.test));
  c.min_glosses = static_cast<int>(s.get_int("corpus.min_glosses", c.min_glosses));
  c.max_glosses = static_cast<int>(s.get_int("corpus.max_glosses", c.max_glosses));
  c.min_duration = static_cast<int>(s.get_int("corpus.min_duration", c.min_duration));
  c.max_duration = static_cast<int>(s.get_int("corpus.max_duration", c.max_duration));
  c.video_size = static_cast<int>(s.get_int("corpus.video_size", c.video_size));
  c.heatmap_size = static_cast<int>(s.get_int("corpus.heatmap_size", c.heatmap_size));
  c.layout = s.get("corpus.layout", c.layout);
  c.blob_sigma = s.get_double("corpus.blob_sigma", c.blob_sigma);
  c.pixel_noise = s.get_double("corpus.pixel_noise", c.pixel_noise);
  c.keypoint_jitter = s.get_double("corpus.keypoint_jitter", c.keypoint_jitter);
  c.confidence_dropout = s.get_double("corpus.confidence_dropout", c.confidence_dropout);
  c.appearances = static_cast<int>(s.get_int("corpus.appearances", c.appearances));
  c.appearance_shift = s.get_bool("corpus.appearance_shift", c.appearance_shift);
  c.grammar = parse_grammar(s.get("corpus.grammar", grammar_name(c.grammar)));
  c.min_separation = s.get_double("corpus.min_separation", c.min_separation);

  r.heatmap.sigma = s.get_double("data.sigma", r.heatmap.sigma);
  r.heatmap.confidence_threshold = s.get_double("data.confidence_threshold", r.heatmap.confidence_threshold);
  r.heatmap.height = r.heatmap.width = c.heatmap_size;

  auto& m = r.model;
  m.vocab = c.vocab;
  m.d_rep = static_cast<int>(s.get_int("model.d_rep", 32));
  m.use_video = s.get_bool("model.use_video", m.use_video);
  m.use_keypoint = s.get_bool("model.use_keypoint", m.use_keypoint);
  m.joint_head = s.get_bool("model.joint_head", m.joint_head);
  m.lateral = parse_lateral(s.get("model.lateral", lateral_name(m.lateral)));
  m.lateral_levels = s.get_ints("model.lateral_levels", m.lateral_levels);
  m.spn = s.get_bool("model.spn", m.spn);
  m.spn_levels = s.get_ints("model.spn_levels", m.spn_levels);
  m.freeze_block1 = s.get_bool("model.freeze_block1", m.freeze_block1);
  const std::vector<int> widths{8, 16, 16, 24}, strides{2, 2, 2, 1};
  m.video = StreamConfig{3, c.video_size, c.video_size};
  m.video.widths = array_of<4>(s.get_ints("model.video_widths", widths), "model.video_widths");
  m.video.spatial_strides = array_of<4>(s.get_ints("model.video_spatial_strides", strides), "model.video_spatial_strides");
  m.keypoint = StreamConfig{c.keypoints(), c.heatmap_size, c.heatmap_size};
  m.keypoint.widths = array_of<4>(s.get_ints("model.keypoint_widths", widths), "model.keypoint_widths");
  m.keypoint.spatial_strides =
      array_of<4>(s.get_ints("model.keypoint_spatial_strides", strides), "model.keypoint_spatial_strides");
  m.video.temporal_strides = m.keypoint.temporal_strides =
      array_of<4>(s.get_ints("model.temporal_strides", {1, 1, 2, 2}), "model.temporal_strides");
  m.weights.lambda_v = s.get_double("loss.lambda_v", m.weights.lambda_v);
  m.weights.lambda_k = s.get_double("loss.lambda_k", m.weights.lambda_k);
  m.weights.w_dist = s.get_double("loss.w_dist", m.weights.w_dist);

  auto& t = r.translator;
  t.layers = static_cast<int>(s.get_int("translator.layers", t.layers));
  t.d_model = static_cast<int>(s.get_int("translator.d_model", t.d_model));
  t.heads = static_cast<int>(s.get_int("translator.heads", t.heads));
  t.d_ff = static_cast<int>(s.get_int("translator.d_ff", t.d_ff));
  t.max_len = static_cast<int>(s.get_int("translator.max_len", t.max_len));
  t.dropout = s.get_double("translator.dropout", t.dropout);

  auto& tr = r.train;
  tr.seed = static_cast<std::uint64_t>(s.get_int("train.seed", static_cast<long long>(tr.seed)));
  tr.epochs = static_cast<int>(s.get_int("train.epochs", tr.epochs));
  tr.batch_size = static_cast<int>(s.get_int("train.batch_size", tr.batch_size));
  tr.lr = s.get_double("train.lr", tr.lr);
  tr.translator_lr = s.get_double("train.translator_lr", tr.translator_lr);
  tr.weight_decay = s.get_double("train.weight_decay", tr.weight_decay);
  tr.augment = s.get_bool("train.augment", tr.augment);
  tr.ranges.crop_min = s.get_double("train.crop_min", tr.ranges.crop_min);
  tr.ranges.crop_max = s.get_double("train.crop_max", tr.ranges.crop_max);
  tr.ranges.rate_min = s.get_double("train.rate_min", tr.ranges.rate_min);
  tr.ranges.rate_max = s.get_double("train.rate_max", tr.ranges.rate_max);
  tr.beam = static_cast<int>(s.get_int("train.beam", tr.beam));

  const auto unknown = s.unused();
  if (!unknown.empty()) throw ConfigError(unknown.front());
  r.validate();
  return r;
}

inline std::string settings_text(const Settings& s) {
  std::string out, section;
  for (const auto& [key, v] : s.values()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + v.value + "\n";
  }
  return out;
}

}  // namespace twostream
