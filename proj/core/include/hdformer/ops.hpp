#pragma once

#include <random>
#include <span>

#include "hdformer/tensor.hpp"

namespace hdf {

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops broadcast right-aligned (extents equal, or 1,
// or absent); gradients sum-reduce over broadcast axes.
// ---------------------------------------------------------------------------

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws ValueError if any divisor element is exactly zero.
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

Tensor relu(const Tensor& x);
/// Exact erf form: 0.5 x (1 + erf(x/sqrt(2))).
Tensor gelu(const Tensor& x);
Tensor sqrt_elem(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions and structure ops.
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Keep-dim reductions over the last axis: [.., n] -> [.., 1].
Tensor sum_lastdim(const Tensor& x);
Tensor mean_lastdim(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat_lastdim(std::span<const Tensor> parts);
/// Select slices along `axis`; gradient scatter-adds back (indices may repeat).
Tensor index_select(const Tensor& x, int axis, std::span<const std::int64_t> indices);

// ---------------------------------------------------------------------------
// Linear algebra and network primitives.
// ---------------------------------------------------------------------------

/// Batched matrix product a[..,m,k] * b[..,k,n]; leading extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[.., in] * w[in, out] + b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row-stochastic softmax over the last axis, computed with max-subtraction.
/// Throws ValueError on non-finite input.
Tensor softmax_lastdim(const Tensor& x);

struct ConvWeights {
  Tensor w;  // [kernel, in_channels, out_channels]
  Tensor b;  // [out_channels]
};

/// Convolution along the time axis of x[B,T,J,C], independent per joint,
/// zero-padded by (kernel-1)/2 so that T' = ceil(T/stride). Kernel must be odd.
Tensor temporal_conv(const Tensor& x, const ConvWeights& w, int stride);

/// Linear interpolation along the time axis to `target_frames`, align-corners:
/// source position of output frame t is t*(T-1)/(target_frames-1).
Tensor temporal_upsample_bilinear(const Tensor& x, std::int64_t target_frames);

/// Inverted dropout: keeps units with probability 1-rate and scales them by
/// 1/(1-rate). Identity when train_mode is false. rate must be in [0,1).
Tensor dropout(const Tensor& x, double rate, bool train_mode,
               std::mt19937_64& rng);

/// Normalize over the last axis, then apply elementwise gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---------------------------------------------------------------------------
// Initialization helpers (no tape participation).
// ---------------------------------------------------------------------------

/// Uniform in [0,1) from the top 53 bits of the generator.
double uniform_unit(std::mt19937_64& rng);
double uniform_range(std::mt19937_64& rng, double lo, double hi);
std::vector<double> xavier_uniform(std::int64_t fan_in, std::int64_t fan_out,
                                   std::int64_t count, std::mt19937_64& rng);

}  // namespace hdf
