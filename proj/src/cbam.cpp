#include "kanfpn/cbam.hpp"

#include "kanfpn/ops.hpp"

namespace kanfpn::cbam {

void CbamConfig::validate() const {
    if (channels < 1 || reduction < 1 || hidden() < 1) {
        throw InvalidSpec("CBAM needs floor(C / reduction) >= 1, got C=" + std::to_string(channels) +
                          " reduction=" + std::to_string(reduction));
    }
    if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
        throw InvalidSpec("CBAM spatial kernel must be odd");
    }
}

void init_cbam(const nn::Builder& b, const CbamConfig& cfg) {
    cfg.validate();
    const auto c = cfg.channels;
    const auto h = cfg.hidden();
    const auto k = cfg.spatial_kernel;
    auto cb = b.sub("cbam");
    cb.kaiming("mlp1_w", {c, h}, c);
    cb.kaiming("mlp2_w", {h, c}, h);
    cb.kaiming("spatial_w", {1, 2, k, k}, 2 * k * k);
}

Tensor channel_attention(const nn::Scope& p, const Tensor& x) {
    if (x.ndim() != 4) {
        throw ShapeMismatch("channel_attention expects [B,C,H,W], got " + to_string(x.shape()));
    }
    const auto cb = p.sub("cbam");
    const std::int64_t b = x.dim(0);
    const std::int64_t c = x.dim(1);
    auto mlp = [&](const Tensor& v) {
        auto hidden = ops::relu(ops::matmul(v, cb["mlp1_w"]));
        return ops::matmul(hidden, cb["mlp2_w"]);
    };
    auto avg = ops::reshape(ops::pool2d(ops::Pool::global_avg, x), {b, c});
    auto mx = ops::reshape(ops::pool2d(ops::Pool::global_max, x), {b, c});
    auto gate = ops::sigmoid(ops::add(mlp(avg), mlp(mx)));
    return ops::reshape(gate, {b, c, 1, 1});
}

Tensor spatial_attention(const nn::Scope& p, const Tensor& x) {
    if (x.ndim() != 4) {
        throw ShapeMismatch("spatial_attention expects [B,C,H,W], got " + to_string(x.shape()));
    }
    const auto& w = p.sub("cbam")["spatial_w"];
    const std::int64_t k = w.dim(2);
    auto pooled = ops::concat({ops::reduce_mean(x, 1), ops::reduce_max(x, 1)}, 1);
    return ops::sigmoid(ops::conv2d(pooled, w, {}, 1, (k - 1) / 2));
}

Tensor cbam(const nn::Scope& p, const Tensor& x) {
    auto y = ops::mul(x, channel_attention(p, x));
    return ops::mul(y, spatial_attention(p, y));
}

} // namespace kanfpn::cbam
