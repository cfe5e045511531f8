#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "twostream/tensor.hpp"

namespace twostream {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](detail::Node<S>& self) {
                                  for (auto& p : self.parents) {
                                    if (S* g = detail::grad_of(*p)) {
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                        g[i] += self.grad[i];
                                    }
                                  }
                                });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i];
                                  if (S* g = detail::grad_of(*self.parents[1]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] -= self.grad[i];
                                });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<S>(
      a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (S* g = detail::grad_of(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        if (S* g = detail::grad_of(pb))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.data[i];
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return detail::make_result<S>(a.shape(), std::move(out), {a.node()},
                                [factor](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * factor;
                                });
}

// x[..., c] + bias[c]
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  const int c = x.dim(-1);
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  std::vector<S> out(x.values());
  const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] += bias[j];
  return detail::make_result<S>(x.shape(), std::move(out), {x.node(), bias.node()},
                                [rows, c](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i];
                                  if (S* g = detail::grad_of(*self.parents[1]))
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (int j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
                                });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                [](detail::Node<S>& self) {
                                  auto& p = *self.parents[0];
                                  if (S* g = detail::grad_of(p))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      if (p.data[i] > S(0)) g[i] += self.grad[i];
                                });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = 0;
  for (S v : x.data()) total += v;
  return detail::make_result<S>({1}, {total}, {x.node()}, [](detail::Node<S>& self) {
    if (S* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return detail::make_result<S>(std::move(shape), x.values(), {x.node()},
                                [](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i];
                                });
}

// Gradient stops here; the value is passed through unchanged.
template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& x) {
  return x.detach();
}

// Inverted dropout. Identity when rate is zero or not training.
template <typename S, typename Rng>
Tensor<S> dropout(const Tensor<S>& x, S rate, bool training, Rng& rng) {
  if (!training || rate <= S(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  std::vector<S> mask(x.numel());
  const S inv = S(1) / (S(1) - rate);
  for (auto& m : mask) m = keep(rng) ? inv : S(0);
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                [mask = std::move(mask)](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * mask[i];
                                });
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m) * n);
  detail::MapMat<S>(out.data(), m, n).noalias() =
      detail::CMapMat<S>(a.data().data(), m, k) * detail::CMapMat<S>(b.data().data(), k, n);
  return detail::make_result<S>(
      {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](detail::Node<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        detail::CMapMat<S> dy(self.grad.data(), m, n);
        if (S* g = detail::grad_of(pa))
          detail::MapMat<S>(g, m, k).noalias() +=
              dy * detail::CMapMat<S>(pb.data.data(), k, n).transpose();
        if (S* g = detail::grad_of(pb))
          detail::MapMat<S>(g, k, n).noalias() +=
              detail::CMapMat<S>(pa.data.data(), m, k).transpose() * dy;
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<S> out(x.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = x[i * c + j];
  return detail::make_result<S>({c, r}, std::move(out), {x.node()},
                                [r, c](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (int i = 0; i < r; ++i)
                                      for (int j = 0; j < c; ++j)
                                        g[i * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
                                });
}

// x[..., in] · w[in, out] (+ bias), applied to every leading position.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias = nullptr) {
  const int in = x.dim(-1);
  if (w.rank() != 2 || w.dim(0) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " weight " +
                         shape_str(w.shape()));
  }
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in));
  Tensor<S> y = matmul(x.rank() == 2 ? x : reshape(x, {rows, in}), w);
  if (bias) y = add_bias(y, *bias);
  if (x.rank() != 2) {
    Shape out = x.shape();
    out.back() = w.dim(1);
    y = reshape(y, out);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Concatenation and slicing

namespace detail {

inline void split_axis(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
    inner *= static_cast<std::size_t>(s[i]);
}

}  // namespace detail

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat of nothing");
  const int rank = parts[0].rank();
  if (axis < 0) axis += rank;
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    a[axis] = b[axis] = 0;
    if (a != b) throw DimensionError("concat: incompatible shape " + shape_str(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer, inner;
  detail::split_axis(out_shape, axis, outer, inner);
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::vector<S> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = static_cast<std::size_t>(p.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * row, row, out.data() + o * out_row + off);
    off += row;
  }
  std::vector<detail::NodePtr<S>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  return detail::make_result<S>(
      out_shape, std::move(out), std::move(parents),
      [offsets, outer, out_row](detail::Node<S>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = *self.parents[k];
          if (S* g = detail::grad_of(p)) {
            const std::size_t row = p.data.size() / outer;
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < row; ++i)
                g[o * row + i] += self.grad[o * out_row + offsets[k] + i];
          }
        }
      });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int length) {
  if (axis < 0) axis += x.rank();
  if (start < 0 || length < 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice out of range on " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::size_t outer, inner;
  detail::split_axis(x.shape(), axis, outer, inner);
  const std::size_t in_row = static_cast<std::size_t>(x.dim(axis)) * inner;
  const std::size_t out_row = static_cast<std::size_t>(length) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;
  std::vector<S> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + o * in_row + off, out_row, out.data() + o * out_row);
  return detail::make_result<S>(out_shape, std::move(out), {x.node()},
                                [outer, in_row, out_row, off](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < out_row; ++i)
                                        g[o * in_row + off + i] += self.grad[o * out_row + i];
                                });
}

// Rows of table[V, D] selected by ids.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
  const int v = table.dim(0), d = table.dim(1);
  std::vector<S> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw DimensionError("embedding id out of range");
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  return detail::make_result<S>({static_cast<int>(ids.size()), d}, std::move(out),
                                {table.node()}, [ids, d](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < ids.size(); ++i)
                                      for (int j = 0; j < d; ++j)
                                        g[static_cast<std::size_t>(ids[i]) * d + j] +=
                                            self.grad[i * d + j];
                                });
}

// ---------------------------------------------------------------------------
// Row-wise distributions over the last axis

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  const int c = x.dim(-1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
  std::vector<S> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * c;
    S mx = *std::max_element(in, in + c);
    S acc = 0;
    for (int j = 0; j < c; ++j) acc += std::exp(in[j] - mx);
    const S lse = mx + std::log(acc);
    for (int j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                [rows, c](detail::Node<S>& self) {
                                  S* g = detail::grad_of(*self.parents[0]);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const S* gy = self.grad.data() + r * c;
                                    const S* y = self.data.data() + r * c;
                                    S total = 0;
                                    for (int j = 0; j < c; ++j) total += gy[j];
                                    for (int j = 0; j < c; ++j)
                                      g[r * c + j] += gy[j] - std::exp(y[j]) * total;
                                  }
                                });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  const int c = x.dim(-1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
  std::vector<S> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * c;
    S mx = *std::max_element(in, in + c);
    S acc = 0;
    for (int j = 0; j < c; ++j) acc += (out[r * c + j] = std::exp(in[j] - mx));
    for (int j = 0; j < c; ++j) out[r * c + j] /= acc;
  }
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                [rows, c](detail::Node<S>& self) {
                                  S* g = detail::grad_of(*self.parents[0]);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const S* gy = self.grad.data() + r * c;
                                    const S* y = self.data.data() + r * c;
                                    S dot = 0;
                                    for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
                                    for (int j = 0; j < c; ++j)
                                      g[r * c + j] += y[j] * (gy[j] - dot);
                                  }
                                });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                [](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * self.data[i];
                                });
}

// Student log-probabilities are floored here before entering the KL sum, so
// teacher mass on a vanishing student probability yields a large finite loss.
template <typename S>
constexpr S kKlLogFloor = S(-100);

/// Sum over rows of KL(p || q) = sum_j p_j (ln p_j - log_q_j), last axis.
/// Teacher entries equal to zero contribute nothing.
template <typename S>
Tensor<S> kl_div(const Tensor<S>& p_teacher, const Tensor<S>& log_q) {
  detail::require_same_shape(p_teacher.shape(), log_q.shape(), "kl_div");
  S total = 0;
  for (std::size_t i = 0; i < p_teacher.numel(); ++i) {
    const S p = p_teacher[i];
    if (p > S(0)) total += p * (std::log(p) - std::max(log_q[i], kKlLogFloor<S>));
  }
  return detail::make_result<S>(
      {1}, {total}, {p_teacher.node(), log_q.node()}, [](detail::Node<S>& self) {
        auto& pt = *self.parents[0];
        auto& lq = *self.parents[1];
        const S gy = self.grad[0];
        if (S* g = detail::grad_of(pt))
          for (std::size_t i = 0; i < pt.data.size(); ++i)
            if (pt.data[i] > S(0))
              g[i] += gy * (std::log(pt.data[i]) + S(1) - std::max(lq.data[i], kKlLogFloor<S>));
        if (S* g = detail::grad_of(lq))
          for (std::size_t i = 0; i < lq.data.size(); ++i)
            if (lq.data[i] > kKlLogFloor<S>) g[i] -= gy * pt.data[i];
      });
}

/// -sum_i log_probs[i, target_i] over rows with target_i >= 0.
template <typename S>
Tensor<S> nll_loss(const Tensor<S>& log_probs, const std::vector<int>& targets) {
  if (log_probs.rank() != 2 || static_cast<std::size_t>(log_probs.dim(0)) != targets.size()) {
    throw DimensionError("nll_loss: targets do not match rows");
  }
  const int c = log_probs.dim(1);
  S total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) continue;
    if (targets[i] >= c) throw DimensionError("nll_loss: target out of range");
    total -= log_probs[i * c + targets[i]];
  }
  return detail::make_result<S>({1}, {total}, {log_probs.node()},
                                [targets, c](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (std::size_t i = 0; i < targets.size(); ++i)
                                      if (targets[i] >= 0) g[i * c + targets[i]] -= self.grad[0];
                                });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename S>
struct BatchNormState {
  std::vector<S> running_mean;
  std::vector<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
};

/// Per-channel normalization over every leading position of x[..., C].
/// Training mode normalizes with the batch statistics and folds them into
/// the running estimates; eval mode uses the running estimates only.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     BatchNormState<S>& state, bool training) {
  const int c = x.dim(-1);
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
    throw DimensionError("batch_norm: affine parameters do not match channels");
  if (state.running_mean.size() != static_cast<std::size_t>(c))
    throw DimensionError("batch_norm: running statistics do not match channels");
  const std::size_t n = x.numel() / static_cast<std::size_t>(c);
  std::vector<S> mu(c, S(0)), inv_std(c);
  if (training) {
    std::vector<S> var(c, S(0));
    for (std::size_t r = 0; r < n; ++r)
      for (int j = 0; j < c; ++j) mu[j] += x[r * c + j];
    for (int j = 0; j < c; ++j) mu[j] /= static_cast<S>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (int j = 0; j < c; ++j) {
        const S d = x[r * c + j] - mu[j];
        var[j] += d * d;
      }
    for (int j = 0; j < c; ++j) {
      const S biased = var[j] / static_cast<S>(n);
      const S unbiased = n > 1 ? var[j] / static_cast<S>(n - 1) : biased;
      inv_std[j] = S(1) / std::sqrt(biased + state.eps);
      state.running_mean[j] = (S(1) - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
      state.running_var[j] = (S(1) - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = S(1) / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  std::vector<S> xhat(x.numel()), out(x.numel());
  for (std::size_t r = 0; r < n; ++r)
    for (int j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (x[i] - mu[j]) * inv_std[j];
      out[i] = gamma[j] * xhat[i] + beta[j];
    }
  return detail::make_result<S>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c,
       training](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const S* dy = self.grad.data();
        if (S* g = detail::grad_of(*self.parents[2]))
          for (std::size_t r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) g[j] += dy[r * c + j];
        if (S* g = detail::grad_of(pg))
          for (std::size_t r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) g[j] += dy[r * c + j] * xhat[r * c + j];
        S* gx = detail::grad_of(px);
        if (!gx) return;
        if (!training) {
          for (std::size_t r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j) gx[r * c + j] += dy[r * c + j] * pg.data[j] * inv_std[j];
          return;
        }
        std::vector<S> sum_d(c, S(0)), sum_dx(c, S(0));
        for (std::size_t r = 0; r < n; ++r)
          for (int j = 0; j < c; ++j) {
            const S d = dy[r * c + j] * pg.data[j];
            sum_d[j] += d;
            sum_dx[j] += d * xhat[r * c + j];
          }
        const S inv_n = S(1) / static_cast<S>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (int j = 0; j < c; ++j) {
            const S d = dy[r * c + j] * pg.data[j];
            gx[r * c + j] +=
                inv_std[j] * inv_n * (static_cast<S>(n) * d - sum_d[j] - xhat[r * c + j] * sum_dx[j]);
          }
      });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  const int d = x.dim(-1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  std::vector<S> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * d;
    S mu = 0, var = 0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<S>(d);
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<S>(d);
    inv_std[r] = S(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mu) * inv_std[r];
      out[r * d + j] = gamma[j] * xhat[r * d + j] + beta[j];
    }
  }
  return detail::make_result<S>(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](detail::Node<S>& self) {
        auto& pg = *self.parents[1];
        const S* dy = self.grad.data();
        if (S* g = detail::grad_of(*self.parents[2]))
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) g[j] += dy[r * d + j];
        if (S* g = detail::grad_of(pg))
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
        S* gx = detail::grad_of(*self.parents[0]);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
          S sum_d = 0, sum_dx = 0;
          for (int j = 0; j < d; ++j) {
            const S v = dy[r * d + j] * pg.data[j];
            sum_d += v;
            sum_dx += v * xhat[r * d + j];
          }
          for (int j = 0; j < d; ++j) {
            const S v = dy[r * d + j] * pg.data[j];
            gx[r * d + j] += inv_std[r] / static_cast<S>(d) *
                             (static_cast<S>(d) * v - sum_d - xhat[r * d + j] * sum_dx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling

/// x[T, H, W, C] -> [T, C], mean over spatial positions.
template <typename S>
Tensor<S> pool_spatial_mean(const Tensor<S>& x) {
  if (x.rank() != 4) throw DimensionError("pool_spatial_mean expects [T,H,W,C]");
  const int t = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  const S inv = S(1) / static_cast<S>(hw);
  std::vector<S> out(static_cast<std::size_t>(t) * c, S(0));
  for (int f = 0; f < t; ++f)
    for (int p = 0; p < hw; ++p)
      for (int j = 0; j < c; ++j)
        out[static_cast<std::size_t>(f) * c + j] += x[(static_cast<std::size_t>(f) * hw + p) * c + j];
  for (auto& v : out) v *= inv;
  return detail::make_result<S>({t, c}, std::move(out), {x.node()},
                                [t, hw, c, inv](detail::Node<S>& self) {
                                  if (S* g = detail::grad_of(*self.parents[0]))
                                    for (int f = 0; f < t; ++f)
                                      for (int p = 0; p < hw; ++p)
                                        for (int j = 0; j < c; ++j)
                                          g[(static_cast<std::size_t>(f) * hw + p) * c + j] +=
                                              self.grad[static_cast<std::size_t>(f) * c + j] * inv;
                                });
}

}  // namespace twostream
