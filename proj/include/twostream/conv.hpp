#pragma once

#include <array>
#include <cstring>

#include "twostream/ops.hpp"

namespace twostream {

/// Kernel, stride and padding per axis of a [D0, D1, D2, C] volume. Axis 0 is
/// time, axes 1 and 2 are space.
struct ConvGeometry {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};

  int kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  bool is_pointwise() const {
    return kernel_volume() == 1 && stride == std::array<int, 3>{1, 1, 1} &&
           pad == std::array<int, 3>{0, 0, 0};
  }

  static ConvGeometry spatial(int k, int stride, int pad) {
    return {{1, k, k}, {1, stride, stride}, {0, pad, pad}};
  }
  static ConvGeometry temporal(int k, int stride, int pad) {
    return {{k, 1, 1}, {stride, 1, 1}, {pad, 0, 0}};
  }
};

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  if (stride < 1) throw DimensionError("convolution stride must be >= 1");
  const int span = in + 2 * pad - kernel;
  if (span < 0) {
    throw DimensionError("kernel " + std::to_string(kernel) + " does not fit extent " +
                         std::to_string(in) + " with padding " + std::to_string(pad));
  }
  return span / stride + 1;
}

// Size convention for transposed convolution: (in - 1) * stride + kernel - 2 * pad.
inline int transposed_out_extent(int in, int kernel, int stride, int pad) {
  if (stride < 1) throw DimensionError("transposed convolution stride must be >= 1");
  const int out = (in - 1) * stride + kernel - 2 * pad;
  if (out < 1) throw DimensionError("transposed convolution yields non-positive extent");
  return out;
}

namespace detail {

struct VolumeDims {
  std::array<int, 3> in;
  std::array<int, 3> out;
  int rows_in() const { return in[0] * in[1] * in[2]; }
  int rows_out() const { return out[0] * out[1] * out[2]; }
};

// Visits every (output position, kernel tap) pair whose input position is in
// range. f(out_row, tap, in_row).
template <typename F>
void for_each_tap(const VolumeDims& d, const ConvGeometry& g, F&& f) {
  const auto& k = g.kernel;
  const auto& s = g.stride;
  const auto& p = g.pad;
  for (int o0 = 0; o0 < d.out[0]; ++o0)
    for (int o1 = 0; o1 < d.out[1]; ++o1)
      for (int o2 = 0; o2 < d.out[2]; ++o2) {
        const int orow = (o0 * d.out[1] + o1) * d.out[2] + o2;
        int tap = 0;
        for (int k0 = 0; k0 < k[0]; ++k0) {
          const int i0 = o0 * s[0] - p[0] + k0;
          for (int k1 = 0; k1 < k[1]; ++k1) {
            const int i1 = o1 * s[1] - p[1] + k1;
            for (int k2 = 0; k2 < k[2]; ++k2, ++tap) {
              const int i2 = o2 * s[2] - p[2] + k2;
              if (i0 < 0 || i0 >= d.in[0] || i1 < 0 || i1 >= d.in[1] || i2 < 0 || i2 >= d.in[2])
                continue;
              f(orow, tap, (i0 * d.in[1] + i1) * d.in[2] + i2);
            }
          }
        }
      }
}

inline void check_weight(std::size_t numel, int taps, int cin, int cout, const char* op) {
  if (numel != static_cast<std::size_t>(taps) * cin * cout) {
    throw DimensionError(std::string(op) + ": weight of " + std::to_string(numel) +
                         " values does not fit kernel " + std::to_string(taps) + " x " +
                         std::to_string(cin) + " x " + std::to_string(cout));
  }
}

}  // namespace detail

/// Cross-correlation of x[D0, D1, D2, Cin] with weight laid out as
/// [K0, K1, K2, Cin, Cout] (any shape with that element order and last
/// extent Cout).
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& w, const ConvGeometry& g,
                 const Tensor<S>* bias = nullptr) {
  if (x.rank() != 4) throw DimensionError("conv3d expects a [D0,D1,D2,C] input");
  const int cin = x.dim(3);
  const int cout = w.dim(-1);
  const int taps = g.kernel_volume();
  detail::check_weight(w.numel(), taps, cin, cout, "conv3d");
  detail::VolumeDims d{{x.dim(0), x.dim(1), x.dim(2)}, {}};
  for (int a = 0; a < 3; ++a) {
    d.out[a] = conv_out_extent(d.in[a], g.kernel[a], g.stride[a], g.pad[a]);
    if (d.out[a] < 1) throw DimensionError("conv3d: non-positive output extent");
  }
  const int rows = d.rows_out();
  const int depth = taps * cin;

  auto cols = std::make_shared<std::vector<S>>();
  const S* col_ptr = x.data().data();
  if (!g.is_pointwise()) {
    cols->assign(static_cast<std::size_t>(rows) * depth, S(0));
    const S* xd = x.data().data();
    detail::for_each_tap(d, g, [&](int orow, int tap, int irow) {
      std::memcpy(cols->data() + static_cast<std::size_t>(orow) * depth +
                      static_cast<std::size_t>(tap) * cin,
                  xd + static_cast<std::size_t>(irow) * cin, sizeof(S) * cin);
    });
    col_ptr = cols->data();
  }
  std::vector<S> out(static_cast<std::size_t>(rows) * cout);
  detail::MapMat<S>(out.data(), rows, cout).noalias() =
      detail::CMapMat<S>(col_ptr, rows, depth) * detail::CMapMat<S>(w.data().data(), depth, cout);
  if (bias) {
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < cout; ++j) out[static_cast<std::size_t>(r) * cout + j] += (*bias)[j];
  }
  std::vector<detail::NodePtr<S>> parents{x.node(), w.node()};
  if (bias) parents.push_back(bias->node());
  const bool pointwise = g.is_pointwise();
  return detail::make_result<S>(
      {d.out[0], d.out[1], d.out[2], cout}, std::move(out), std::move(parents),
      [cols, d, g, rows, depth, cin, cout, pointwise](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        detail::CMapMat<S> dy(self.grad.data(), rows, cout);
        if (self.parents.size() > 2) {
          if (S* gb = detail::grad_of(*self.parents[2])) {
            for (int r = 0; r < rows; ++r)
              for (int j = 0; j < cout; ++j) gb[j] += self.grad[static_cast<std::size_t>(r) * cout + j];
          }
        }
        const S* col_ptr = pointwise ? px.data.data() : cols->data();
        if (S* gw = detail::grad_of(pw)) {
          detail::MapMat<S>(gw, depth, cout).noalias() +=
              detail::CMapMat<S>(col_ptr, rows, depth).transpose() * dy;
        }
        S* gx = detail::grad_of(px);
        if (!gx) return;
        if (pointwise) {
          detail::MapMat<S>(gx, rows, cin).noalias() +=
              dy * detail::CMapMat<S>(pw.data.data(), depth, cout).transpose();
          return;
        }
        std::vector<S> dcols(static_cast<std::size_t>(rows) * depth);
        detail::MapMat<S>(dcols.data(), rows, depth).noalias() =
            dy * detail::CMapMat<S>(pw.data.data(), depth, cout).transpose();
        detail::for_each_tap(d, g, [&](int orow, int tap, int irow) {
          const S* src = dcols.data() + static_cast<std::size_t>(orow) * depth +
                         static_cast<std::size_t>(tap) * cin;
          S* dst = gx + static_cast<std::size_t>(irow) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        });
      });
}

/// Transposed convolution of x[I0, I1, I2, Cin] with weight laid out as
/// [Cin, K0, K1, K2, Cout]. Output extent per axis is
/// (in - 1) * stride + kernel - 2 * pad, so a strided conv3d with the same
/// geometry maps the output back to the input extents whenever
/// (in + 2 * pad - kernel) is divisible by stride.
template <typename S>
Tensor<S> conv3d_transposed(const Tensor<S>& x, const Tensor<S>& w, const ConvGeometry& g,
                            const Tensor<S>* bias = nullptr) {
  if (x.rank() != 4) throw DimensionError("conv3d_transposed expects a [D0,D1,D2,C] input");
  const int cin = x.dim(3);
  const int cout = w.dim(-1);
  const int taps = g.kernel_volume();
  if (w.dim(0) != cin) {
    throw DimensionError("conv3d_transposed: weight " + shape_str(w.shape()) +
                         " does not take " + std::to_string(cin) + " input channels");
  }
  detail::check_weight(w.numel(), taps, cin, cout, "conv3d_transposed");
  // Roles swap relative to conv3d: the output volume is the "input" of the
  // equivalent strided convolution.
  detail::VolumeDims d{{}, {x.dim(0), x.dim(1), x.dim(2)}};
  for (int a = 0; a < 3; ++a)
    d.in[a] = transposed_out_extent(d.out[a], g.kernel[a], g.stride[a], g.pad[a]);
  const int in_rows = d.rows_out();  // rows of x
  const int out_rows = d.rows_in();  // rows of y
  const int width = taps * cout;

  std::vector<S> z(static_cast<std::size_t>(in_rows) * width);
  detail::MapMat<S>(z.data(), in_rows, width).noalias() =
      detail::CMapMat<S>(x.data().data(), in_rows, cin) *
      detail::CMapMat<S>(w.data().data(), cin, width);
  std::vector<S> out(static_cast<std::size_t>(out_rows) * cout, S(0));
  detail::for_each_tap(d, g, [&](int xrow, int tap, int yrow) {
    const S* src = z.data() + static_cast<std::size_t>(xrow) * width + static_cast<std::size_t>(tap) * cout;
    S* dst = out.data() + static_cast<std::size_t>(yrow) * cout;
    for (int c = 0; c < cout; ++c) dst[c] += src[c];
  });
  if (bias) {
    for (int r = 0; r < out_rows; ++r)
      for (int j = 0; j < cout; ++j) out[static_cast<std::size_t>(r) * cout + j] += (*bias)[j];
  }
  std::vector<detail::NodePtr<S>> parents{x.node(), w.node()};
  if (bias) parents.push_back(bias->node());
  return detail::make_result<S>(
      {d.in[0], d.in[1], d.in[2], cout}, std::move(out), std::move(parents),
      [d, g, in_rows, out_rows, width, cin, cout](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (self.parents.size() > 2) {
          if (S* gb = detail::grad_of(*self.parents[2]))
            for (int r = 0; r < out_rows; ++r)
              for (int j = 0; j < cout; ++j) gb[j] += self.grad[static_cast<std::size_t>(r) * cout + j];
        }
        S* gx = detail::grad_of(px);
        S* gw = detail::grad_of(pw);
        if (!gx && !gw) return;
        std::vector<S> dz(static_cast<std::size_t>(in_rows) * width, S(0));
        detail::for_each_tap(d, g, [&](int xrow, int tap, int yrow) {
          std::memcpy(dz.data() + static_cast<std::size_t>(xrow) * width +
                          static_cast<std::size_t>(tap) * cout,
                      self.grad.data() + static_cast<std::size_t>(yrow) * cout, sizeof(S) * cout);
        });
        detail::CMapMat<S> dzm(dz.data(), in_rows, width);
        if (gw)
          detail::MapMat<S>(gw, cin, width).noalias() +=
              detail::CMapMat<S>(px.data.data(), in_rows, cin).transpose() * dzm;
        if (gx)
          detail::MapMat<S>(gx, in_rows, cin).noalias() +=
              dzm * detail::CMapMat<S>(pw.data.data(), cin, width).transpose();
      });
}

/// Per-frame 2-D cross-correlation: x[T, H, W, Cin], w[k, k, Cin, Cout].
template <typename S>
Tensor<S> conv_spatial(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad,
                       const Tensor<S>* bias = nullptr) {
  if (w.rank() != 4 || w.dim(0) != w.dim(1)) {
    throw DimensionError("conv_spatial: weight must be [k,k,Cin,Cout], got " + shape_str(w.shape()));
  }
  return conv3d(x, w, ConvGeometry::spatial(w.dim(0), stride, pad), bias);
}

/// 1-D convolution along the frame axis: x[T, C] or x[T, H, W, C], w[k, Cin, Cout].
template <typename S>
Tensor<S> conv_temporal(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad,
                        const Tensor<S>* bias = nullptr) {
  if (w.rank() != 3) {
    throw DimensionError("conv_temporal: weight must be [k,Cin,Cout], got " + shape_str(w.shape()));
  }
  const auto g = ConvGeometry::temporal(w.dim(0), stride, pad);
  if (x.rank() == 2) {
    Tensor<S> y = conv3d(reshape(x, {x.dim(0), 1, 1, x.dim(1)}), w, g, bias);
    return reshape(y, {y.dim(0), y.dim(3)});
  }
  return conv3d(x, w, g, bias);
}

/// Transposed convolution over the axes selected by the geometry; w is
/// [Cin, K0, K1, K2, Cout]. Accepts [T, C] inputs for purely temporal use.
template <typename S>
Tensor<S> transposed_conv(const Tensor<S>& x, const Tensor<S>& w, const ConvGeometry& g,
                          const Tensor<S>* bias = nullptr) {
  if (x.rank() == 2) {
    if (g.kernel[1] != 1 || g.kernel[2] != 1)
      throw DimensionError("transposed_conv: spatial kernel on a [T,C] input");
    Tensor<S> y = conv3d_transposed(reshape(x, {x.dim(0), 1, 1, x.dim(1)}), w, g, bias);
    return reshape(y, {y.dim(0), y.dim(3)});
  }
  return conv3d_transposed(x, w, g, bias);
}

/// Geometry that changes an extent by an integer factor in either direction:
/// factor 1 uses kernel 3 / pad 1, an even factor r uses kernel 2r, stride r,
/// pad r/2, so strided and transposed convolutions round-trip exactly on
/// extents divisible by r.
inline void resample_axis(int factor, int& kernel, int& stride, int& pad) {
  if (factor == 1) {
    kernel = 3, stride = 1, pad = 1;
  } else if (factor >= 2 && factor % 2 == 0) {
    kernel = 2 * factor, stride = factor, pad = factor / 2;
  } else {
    throw DimensionError("unsupported resampling factor " + std::to_string(factor));
  }
}

// temporal_factor 0 leaves the frame axis untouched (kernel 1).
inline ConvGeometry resample_geometry(int temporal_factor, int spatial_factor) {
  ConvGeometry g;
  if (temporal_factor != 0) resample_axis(temporal_factor, g.kernel[0], g.stride[0], g.pad[0]);
  resample_axis(spatial_factor, g.kernel[1], g.stride[1], g.pad[1]);
  resample_axis(spatial_factor, g.kernel[2], g.stride[2], g.pad[2]);
  return g;
}

}  // namespace twostream
