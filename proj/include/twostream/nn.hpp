#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "twostream/conv.hpp"
#include "twostream/io.hpp"
#include "twostream/optim.hpp"

namespace twostream {

/// Named parameters and batch-norm buffers of a model. Every tensor draws its
/// initial values from a generator seeded by (seed, name), so two models that
/// share a parameter name start from the same values regardless of which
/// other components exist.
template <typename S>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  std::uint64_t seed() const { return seed_; }

  Tensor<S> zeros(const std::string& name, Shape shape) { return insert(name, Tensor<S>::zeros(std::move(shape), true)); }
  Tensor<S> ones(const std::string& name, Shape shape) { return insert(name, Tensor<S>::full(std::move(shape), S(1), true)); }

  // Zero-mean normal with the given standard deviation.
  Tensor<S> normal(const std::string& name, Shape shape, double stddev) {
    std::mt19937_64 rng(seed_ ^ fnv1a(name));
    std::normal_distribution<double> n(0.0, stddev);
    std::vector<S> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<S>(n(rng));
    return insert(name, Tensor<S>::from(std::move(shape), std::move(v), true));
  }

  // Variance 2 / fan_in.
  Tensor<S> he(const std::string& name, Shape shape, int fan_in) {
    return normal(name, std::move(shape), std::sqrt(2.0 / fan_in));
  }

  BatchNormState<S>* norm_state(const std::string& name, int channels) {
    auto [it, fresh] = norms_.try_emplace(name);
    if (!fresh) throw UsageError("duplicate batch-norm buffer " + name);
    it->second.running_mean.assign(channels, S(0));
    it->second.running_var.assign(channels, S(1));
    return &it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const Tensor<S>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UsageError("no parameter named " + name);
    return it->second;
  }
  const std::map<std::string, Tensor<S>>& tensors() const { return tensors_; }
  std::map<std::string, BatchNormState<S>>& norms() { return norms_; }
  const std::map<std::string, BatchNormState<S>>& norms() const { return norms_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }

  // Parameters whose name starts with one of the prefixes ("" matches all).
  std::vector<ParamRef<S>> refs(const std::vector<std::string>& prefixes = {""}, S lr_scale = S(1)) const {
    std::vector<ParamRef<S>> out;
    for (const auto& [name, t] : tensors_) {
      if (!t.requires_grad()) continue;
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          out.push_back({name, t, lr_scale});
          break;
        }
    }
    return out;
  }

  void set_trainable(const std::string& prefix, bool flag) {
    for (auto& [name, t] : tensors_)
      if (name.rfind(prefix, 0) == 0) t.set_requires_grad(flag);
  }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

 private:
  Tensor<S> insert(const std::string& name, Tensor<S> t) {
    if (!tensors_.emplace(name, t).second) throw UsageError("duplicate parameter " + name);
    return t;
  }

  std::uint64_t seed_;
  std::map<std::string, Tensor<S>> tensors_;
  std::map<std::string, BatchNormState<S>> norms_;
};

template <typename S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int in, int out, bool bias = true) {
    w = ps.he(name + ".w", {in, out}, in);
    if (bias) b = ps.zeros(name + ".b", {out});
  }
  // Weight drawn with standard deviation 1/sqrt(in).
  static Linear scaled(ParamStore<S>& ps, const std::string& name, int in, int out, bool bias = true) {
    Linear l;
    l.w = ps.normal(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) l.b = ps.zeros(name + ".b", {out});
    return l;
  }
  int in() const { return w.dim(0); }
  int out() const { return w.dim(1); }
  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w, b.defined() ? &b : nullptr); }
};

template <typename S>
using Batch = std::vector<Tensor<S>>;

template <typename S, typename F>
Batch<S> map_batch(const Batch<S>& xs, F&& f) {
  Batch<S> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(f(x));
  return out;
}

template <typename S>
struct BatchNorm {
  Tensor<S> gamma, beta;
  BatchNormState<S>* state = nullptr;

  BatchNorm() = default;
  BatchNorm(ParamStore<S>& ps, const std::string& name, int channels)
      : gamma(ps.ones(name + ".gamma", {channels})),
        beta(ps.zeros(name + ".beta", {channels})),
        state(ps.norm_state(name, channels)) {}
  Tensor<S> operator()(const Tensor<S>& x, bool training) const {
    return batch_norm(x, gamma, beta, *state, training);
  }
  // Statistics pooled over every sample of the batch; samples may differ
  // in their leading extent.
  Batch<S> operator()(const Batch<S>& xs, bool training) const {
    if (xs.size() == 1) return {(*this)(xs[0], training)};
    Tensor<S> y = (*this)(concat(xs, 0), training);
    Batch<S> out;
    int start = 0;
    for (const auto& x : xs) {
      out.push_back(slice(y, 0, start, x.dim(0)));
      start += x.dim(0);
    }
    return out;
  }
};

template <typename S>
struct HeadOutput {
  Tensor<S> rep;        // [T', d_rep] gloss representation
  Tensor<S> logits;     // [T', classes]
  Tensor<S> log_probs;  // [T', classes]
};

/// Linear, BN, ReLU, two kernel-3 temporal convolutions (each BN, ReLU),
/// linear, ReLU, then the gloss classifier.
template <typename S>
struct HeadNetwork {
  Linear<S> proj;
  BatchNorm<S> bn0;
  Tensor<S> conv1, conv2;
  BatchNorm<S> bn1, bn2;
  Linear<S> trans;
  Linear<S> classifier;

  HeadNetwork() = default;
  HeadNetwork(ParamStore<S>& ps, const std::string& name, int in, int d_rep, int classes)
      : proj(ps, name + ".proj", in, d_rep, false),
        bn0(ps, name + ".bn0", d_rep),
        conv1(ps.he(name + ".tconv1.w", {3, d_rep, d_rep}, 3 * d_rep)),
        conv2(ps.he(name + ".tconv2.w", {3, d_rep, d_rep}, 3 * d_rep)),
        bn1(ps, name + ".bn1", d_rep),
        bn2(ps, name + ".bn2", d_rep),
        trans(ps, name + ".trans", d_rep, d_rep),
        classifier(ps, name + ".cls", d_rep, classes) {}

  std::vector<HeadOutput<S>> operator()(const Batch<S>& xs, bool training) const {
    for (const auto& x : xs)
      if (x.rank() != 2 || x.dim(1) != proj.in())
        throw DimensionError("head expects [T', " + std::to_string(proj.in()) + "], got " + shape_str(x.shape()));
    auto h = map_batch(bn0(map_batch(xs, proj), training), relu<S>);
    h = map_batch(bn1(map_batch(h, [&](const Tensor<S>& t) { return conv_temporal(t, conv1, 1, 1); }), training),
                  relu<S>);
    h = map_batch(bn2(map_batch(h, [&](const Tensor<S>& t) { return conv_temporal(t, conv2, 1, 1); }), training),
                  relu<S>);
    std::vector<HeadOutput<S>> out;
    for (const auto& t : h) {
      HeadOutput<S> o;
      o.rep = relu(trans(t));
      o.logits = classifier(o.rep);
      o.log_probs = log_softmax(o.logits);
      out.push_back(std::move(o));
    }
    return out;
  }
};

}  // namespace twostream
