#pragma once

#include <cstdint>
#include <vector>

#include "kanfpn/tensor.hpp"

namespace kanfpn::ops {

enum class Elementwise { add, mul, sub, tanh, sigmoid, silu, relu, scale };

/// Generic entry point; `b` is required for binary kinds, `alpha` is used by
/// `scale` only.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {}, double alpha = 1.0);

// Binary ops broadcast numpy-style: shapes are right-aligned and extents must
// match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double alpha);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);

Shape broadcast_shape(const Shape& a, const Shape& b);

/// [M,K]x[K,N], [B,M,K]x[B,K,N] or [B,M,K]x[K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in, out] + b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_max(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cross-correlation: x[B,C,H,W], w[O,C/g,kh,kw], bias[O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {},
              std::int64_t stride = 1, std::int64_t padding = 0, std::int64_t groups = 1);

/// Adjoint of conv2d: x[B,Ci,H,W], w[Ci,Co,kh,kw] -> [B,Co,(H-1)s-2p+kh,...].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::int64_t stride = 1,
                        std::int64_t padding = 0);

enum class Pool { max, avg, global_max, global_avg };

/// Window pooling without padding. Global kinds ignore `k` and `s` and return
/// [B,C,1,1].
Tensor pool2d(Pool kind, const Tensor& x, std::int64_t k = 2, std::int64_t s = 2);

Tensor upsample_nearest2x(const Tensor& x);

/// Top-left anchored canvas change to [B,C,h,w]: zero-fills new rows/columns
/// and drops the ones past the new extent.
Tensor pad_crop2d(const Tensor& x, std::int64_t h, std::int64_t w);

/// Per-(batch, channel) spatial normalization with affine gamma/beta [C].
Tensor norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Degree-major stack of Legendre-type basis images:
/// out[:, d*C + c] = G_d(s[:, c]).
Tensor gram_basis(const Tensor& s, int degree);

/// Mean squared error over the channels of `pred` whose mask[b,k] is nonzero.
/// pred/target [B,K,H,W], mask [B,K]. Returns 0 for an all-zero mask.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);

} // namespace kanfpn::ops
