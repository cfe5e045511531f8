#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "twostream/io.hpp"
#include "twostream/nn.hpp"

namespace twostream {

/// In-memory checkpoint: named float arrays with shapes, plus string
/// metadata. On disk it is `<stem>.index` (text) and `<stem>.bin` (float32).
struct Checkpoint {
  struct Entry {
    std::string kind;  // param, bn_mean, bn_var, adam_m, adam_v
    Shape shape;
    std::vector<float> values;
  };
  std::map<std::string, Entry> entries;  // key: kind + " " + name
  std::map<std::string, std::string> meta;

  template <typename S>
  void add(const std::string& kind, const std::string& name, const Shape& shape, const std::vector<S>& values) {
    Entry e{kind, shape, std::vector<float>(values.begin(), values.end())};
    entries[kind + " " + name] = std::move(e);
  }

  const Entry* find(const std::string& kind, const std::string& name) const {
    auto it = entries.find(kind + " " + name);
    return it == entries.end() ? nullptr : &it->second;
  }

  std::vector<std::string> names(const std::string& kind) const {
    std::vector<std::string> out;
    for (const auto& [key, e] : entries)
      if (e.kind == kind) out.push_back(key.substr(kind.size() + 1));
    return out;
  }

  void save(const std::filesystem::path& stem) const {
    std::string index = "twostream-checkpoint 1\n", blob;
    for (const auto& [k, v] : meta) {
      if (v.find('\n') != std::string::npos) throw UsageError("metadata values must be single-line");
      index += "meta " + k + " " + v + "\n";
    }
    std::size_t offset = 0;
    for (const auto& [key, e] : entries) {
      index += key + " " + std::to_string(offset) + " " + std::to_string(e.values.size()) + " ";
      for (std::size_t i = 0; i < e.shape.size(); ++i) index += (i ? "x" : "") + std::to_string(e.shape[i]);
      if (e.shape.empty()) index += "-";
      index += "\n";
      append_f32(blob, e.values.data(), e.values.size());
      offset += e.values.size();
    }
    index += "blob " + digest(blob) + "\n";
    write_file(stem.string() + ".bin", blob);
    write_file(stem.string() + ".index", index);
  }

  static Checkpoint load(const std::filesystem::path& stem) {
    const std::string index = read_file(stem.string() + ".index");
    const std::string blob = read_file(stem.string() + ".bin");
    Checkpoint c;
    auto lines = split(index, '\n');
    if (lines.empty() || lines[0] != "twostream-checkpoint 1") throw CorruptionError("not a checkpoint: " + stem.string());
    bool digest_seen = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto& line = lines[i];
      if (line.empty()) continue;
      std::istringstream in(line);
      std::string kind;
      in >> kind;
      if (kind == "meta") {
        std::string key;
        in >> key;
        std::string value;
        std::getline(in, value);
        c.meta[key] = value.empty() ? "" : value.substr(1);
      } else if (kind == "blob") {
        std::string d;
        in >> d;
        if (d != digest(blob)) throw CorruptionError("checkpoint blob digest mismatch: " + stem.string());
        digest_seen = true;
      } else {
        std::string name, shape;
        std::size_t offset = 0, count = 0;
        if (!(in >> name >> offset >> count >> shape)) throw CorruptionError("bad checkpoint index line " + std::to_string(i + 1));
        Entry e;
        e.kind = kind;
        if (shape != "-")
          for (const auto& d : split(shape, 'x')) e.shape.push_back(std::stoi(d));
        if (4 * (offset + count) > blob.size()) throw CorruptionError("checkpoint entry beyond blob: " + name);
        e.values = parse_f32<float>(std::string_view(blob).substr(4 * offset), count);
        c.entries[kind + " " + name] = std::move(e);
      }
    }
    if (!digest_seen) throw CorruptionError("checkpoint index lacks a blob digest");
    return c;
  }

  static bool exists(const std::filesystem::path& stem) {
    return std::filesystem::exists(stem.string() + ".index");
  }
};

template <typename S>
void store_params(Checkpoint& c, const ParamStore<S>& ps) {
  for (const auto& [name, t] : ps.tensors()) c.add("param", name, t.shape(), t.values());
  for (const auto& [name, st] : ps.norms()) {
    const Shape s{static_cast<int>(st.running_mean.size())};
    c.add("bn_mean", name, s, st.running_mean);
    c.add("bn_var", name, s, st.running_var);
  }
}

template <typename S>
void store_optimizer(Checkpoint& c, const AdamW<S>& opt, const std::string& prefix = "") {
  for (const auto& [name, m] : opt.moments()) {
    const Shape s{static_cast<int>(m.m.size())};
    c.add("adam_m", prefix + name, s, m.m);
    c.add("adam_v", prefix + name, s, m.v);
  }
  c.meta[prefix + "adam_steps"] = std::to_string(opt.steps());
}

template <typename S>
void restore_optimizer(const Checkpoint& c, AdamW<S>& opt, const std::string& prefix = "") {
  opt.moments().clear();
  for (const auto& name : c.names("adam_m")) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto* v = c.find("adam_v", name);
    if (!v) throw CorruptionError("adam moment without second moment: " + name);
    auto& m = opt.moments()[name.substr(prefix.size())];
    const auto& mv = c.find("adam_m", name)->values;
    m.m.assign(mv.begin(), mv.end());
    m.v.assign(v->values.begin(), v->values.end());
  }
  auto it = c.meta.find(prefix + "adam_steps");
  opt.set_steps(it == c.meta.end() ? 0 : std::stol(it->second));
}

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // in the model, not in the checkpoint
  std::vector<std::string> unexpected;  // in the checkpoint, not in the model
};

/// Copies matching parameters and batch-norm buffers by name. Shape
/// mismatches are an error that lists every offending parameter; names
/// present on only one side are reported. With `strict`, a missing or
/// unexpected name is an error too.
template <typename S>
LoadReport load_params(const Checkpoint& c, ParamStore<S>& ps, bool strict) {
  LoadReport r;
  std::vector<std::string> bad;
  for (const auto& [name, t] : ps.tensors()) {
    const auto* e = c.find("param", name);
    if (!e) {
      r.missing.push_back(name);
      continue;
    }
    if (e->shape != t.shape()) {
      bad.push_back(name + " (model " + shape_str(t.shape()) + ", checkpoint " + shape_str(e->shape) + ")");
      continue;
    }
  }
  for (const auto& name : c.names("param"))
    if (!ps.contains(name)) r.unexpected.push_back(name);
  if (!bad.empty()) {
    std::string msg = "incompatible checkpoint shapes:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
  if (strict && (!r.missing.empty() || !r.unexpected.empty())) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& m : r.missing) msg += "\n  missing " + m;
    for (const auto& u : r.unexpected) msg += "\n  unexpected " + u;
    throw ConfigError(msg);
  }
  for (const auto& [name, t] : ps.tensors()) {
    const auto* e = c.find("param", name);
    if (!e) continue;
    Tensor<S> dst = t;
    std::copy(e->values.begin(), e->values.end(), dst.data().begin());
    r.loaded.push_back(name);
  }
  for (auto& [name, st] : ps.norms()) {
    const auto* m = c.find("bn_mean", name);
    const auto* v = c.find("bn_var", name);
    if (!m || !v) continue;
    if (m->values.size() != st.running_mean.size()) throw ConfigError("batch-norm buffer size mismatch for " + name);
    st.running_mean.assign(m->values.begin(), m->values.end());
    st.running_var.assign(v->values.begin(), v->values.end());
  }
  return r;
}

}  // namespace twostream
