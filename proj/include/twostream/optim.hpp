#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "twostream/tensor.hpp"

namespace twostream {

/// A named trainable tensor and the multiplier applied to the base learning
/// rate for it. Frozen parameters are simply left out of the list handed to
/// the optimizer.
template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S> tensor;
  S lr_scale = S(1);
};

template <typename S>
struct AdamMoments {
  std::vector<S> m;
  std::vector<S> v;
};

/// Adam with decoupled weight decay. Moments are keyed by parameter name so
/// that state survives rebuilding the model and can be checkpointed.
template <typename S>
class AdamW {
 public:
  AdamW(S weight_decay = S(1e-3), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update at learning rate lr. Parameters without a populated
  /// gradient are skipped. Throws NumericError on a non-finite gradient
  /// before touching any parameter.
  void step(std::vector<ParamRef<S>>& params, S lr) {
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (S g : p.tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
      }
    }
    ++step_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_));
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      auto& mom = moments_[p.name];
      const std::size_t n = p.tensor.numel();
      if (mom.m.size() != n) {
        mom.m.assign(n, S(0));
        mom.v.assign(n, S(0));
      }
      auto w = p.tensor.data();
      auto g = p.tensor.grad();
      const S rate = lr * p.lr_scale;
      for (std::size_t i = 0; i < n; ++i) {
        mom.m[i] = beta1_ * mom.m[i] + (S(1) - beta1_) * g[i];
        mom.v[i] = beta2_ * mom.v[i] + (S(1) - beta2_) * g[i] * g[i];
        const S mhat = mom.m[i] / bc1;
        const S vhat = mom.v[i] / bc2;
        w[i] -= rate * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
      }
    }
  }

  long steps() const { return step_; }
  void set_steps(long s) { step_ = s; }
  std::map<std::string, AdamMoments<S>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<S>>& moments() const { return moments_; }

 private:
  S weight_decay_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::map<std::string, AdamMoments<S>> moments_;
};

template <typename S>
void zero_grads(std::vector<ParamRef<S>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

/// 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs)).
inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw ConfigError("cosine schedule needs total_epochs > 0");
  if (epoch < 0 || epoch > total_epochs) throw ConfigError("epoch outside schedule");
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / total_epochs));
}

}  // namespace twostream
