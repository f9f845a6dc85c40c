#pragma once

#include <cstdint>

#include "kanfpn/nn.hpp"

namespace kanfpn::kagn {

/// Geometry of a Kolmogorov-Arnold (Gram polynomial) convolution.
struct KagnConvConfig {
    std::int64_t in_ch = 1;
    std::int64_t out_ch = 1;
    std::int64_t kernel = 3;
    std::int64_t stride = 1;
    std::int64_t padding = 1;
    int degree = 3;
    std::int64_t groups = 1;
    /// 1 disables the bottleneck; r > 1 reduces in_ch to floor(in_ch / r).
    std::int64_t bottleneck_ratio = 1;

    /// Config with "same" padding (kernel / 2).
    static KagnConvConfig same(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                               int degree = 3, std::int64_t bottleneck_ratio = 1);

    std::int64_t reduced_channels() const { return in_ch / bottleneck_ratio; }
    void validate() const;
};

/// G_0 = 1, G_1 = s, G_{d+1} = ((2d+1) s G_d - d G_{d-1}) / (d+1), stacked
/// degree-major along channels.
Tensor gram_basis(const Tensor& s, int degree);

/// Registers kagn.{base_w, poly_w, norm.gamma, norm.beta} for an in_ch -> out_ch layer.
void init_kagn_conv2d(const nn::Builder& b, const KagnConvConfig& cfg);

/// norm2d(conv(silu(x), base_w) + conv(gram_basis(tanh(x)), poly_w)); both
/// convolutions are bias-free and share stride, padding and groups.
Tensor kagn_conv2d(const nn::Scope& p, const Tensor& x, const KagnConvConfig& cfg);

/// Adds kagn.reduce_w and kagn.expand_w around an inner KAGN layer on the
/// reduced width.
void init_bottleneck_kagn_conv2d(const nn::Builder& b, const KagnConvConfig& cfg);

/// 1x1 reduce -> kagn_conv2d (reduced -> reduced) -> 1x1 expand.
Tensor bottleneck_kagn_conv2d(const nn::Scope& p, const Tensor& x, const KagnConvConfig& cfg);

/// Trainable scalars of either layer form (bottleneck when ratio > 1).
std::int64_t kagn_param_count(const KagnConvConfig& cfg);

} // namespace kanfpn::kagn
