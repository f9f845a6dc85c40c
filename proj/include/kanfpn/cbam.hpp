#pragma once

#include <cstdint>

#include "kanfpn/nn.hpp"

namespace kanfpn::cbam {

struct CbamConfig {
    std::int64_t channels = 1;
    std::int64_t reduction = 8;
    std::int64_t spatial_kernel = 7;

    std::int64_t hidden() const { return channels / reduction; }
    void validate() const;
};

/// Registers cbam.{mlp1_w [C,C/r], mlp2_w [C/r,C], spatial_w [1,2,k,k]}; all bias-free.
void init_cbam(const nn::Builder& b, const CbamConfig& cfg);

/// sigmoid(MLP(avg) + MLP(max)) with a shared C -> C/r -> C ReLU MLP. [B,C,1,1]
Tensor channel_attention(const nn::Scope& p, const Tensor& x);

/// sigmoid(conv([mean_c, max_c])) with "same" padding. [B,1,H,W]
Tensor spatial_attention(const nn::Scope& p, const Tensor& x);

/// Channel gate, then spatial gate on the gated map.
Tensor cbam(const nn::Scope& p, const Tensor& x);

} // namespace kanfpn::cbam
