#include "kanfpn/kagn.hpp"

#include "kanfpn/ops.hpp"

namespace kanfpn::kagn {

KagnConvConfig KagnConvConfig::same(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                    int degree, std::int64_t bottleneck_ratio) {
    KagnConvConfig cfg;
    cfg.in_ch = in_ch;
    cfg.out_ch = out_ch;
    cfg.kernel = kernel;
    cfg.padding = kernel / 2;
    cfg.degree = degree;
    cfg.bottleneck_ratio = bottleneck_ratio;
    return cfg;
}

void KagnConvConfig::validate() const {
    if (in_ch < 1 || out_ch < 1 || kernel < 1 || stride < 1 || padding < 0) {
        throw InvalidSpec("KAGN geometry must be positive");
    }
    if (degree < 0) {
        throw InvalidSpec("KAGN degree must be >= 0");
    }
    if (groups < 1 || in_ch % groups != 0 || out_ch % groups != 0) {
        throw InvalidSpec("KAGN channels must be divisible by groups");
    }
    if (bottleneck_ratio < 1) {
        throw InvalidSpec("KAGN bottleneck ratio must be >= 1");
    }
    if (bottleneck_ratio > 1) {
        const auto m = reduced_channels();
        if (m < 1) {
            throw InvalidSpec("bottleneck ratio " + std::to_string(bottleneck_ratio) +
                              " leaves no channels from " + std::to_string(in_ch));
        }
        if (m % groups != 0) {
            throw InvalidSpec("reduced KAGN width must be divisible by groups");
        }
    }
}

Tensor gram_basis(const Tensor& s, int degree) {
    return ops::gram_basis(s, degree);
}

namespace {

std::int64_t plain_count(std::int64_t in, std::int64_t out, const KagnConvConfig& cfg) {
    const std::int64_t k2 = cfg.kernel * cfg.kernel;
    const std::int64_t base = out * (in / cfg.groups) * k2;
    const std::int64_t poly = out * (in * (cfg.degree + 1) / cfg.groups) * k2;
    return base + poly + 2 * out;
}

void init_plain(const nn::Builder& b, std::int64_t in, std::int64_t out, const KagnConvConfig& cfg) {
    const std::int64_t k = cfg.kernel;
    const std::int64_t g = cfg.groups;
    const std::int64_t poly_in = in * (cfg.degree + 1) / g;
    auto kb = b.sub("kagn");
    kb.kaiming("base_w", {out, in / g, k, k}, in / g * k * k);
    kb.kaiming("poly_w", {out, poly_in, k, k}, poly_in * k * k);
    nn::init_norm(kb.sub("norm"), out);
}

} // namespace

void init_kagn_conv2d(const nn::Builder& b, const KagnConvConfig& cfg) {
    cfg.validate();
    init_plain(b, cfg.in_ch, cfg.out_ch, cfg);
}

Tensor kagn_conv2d(const nn::Scope& p, const Tensor& x, const KagnConvConfig& cfg) {
    const auto k = p.sub("kagn");
    auto base = ops::conv2d(ops::silu(x), k["base_w"], {}, cfg.stride, cfg.padding, cfg.groups);
    auto basis = ops::gram_basis(ops::tanh(x), cfg.degree);
    auto poly = ops::conv2d(basis, k["poly_w"], {}, cfg.stride, cfg.padding, cfg.groups);
    return nn::norm(k.sub("norm"), ops::add(base, poly));
}

void init_bottleneck_kagn_conv2d(const nn::Builder& b, const KagnConvConfig& cfg) {
    cfg.validate();
    if (cfg.bottleneck_ratio <= 1) {
        throw InvalidSpec("bottleneck KAGN needs a ratio > 1");
    }
    const auto m = cfg.reduced_channels();
    init_plain(b, m, m, cfg);
    auto kb = b.sub("kagn");
    kb.kaiming("reduce_w", {m, cfg.in_ch, 1, 1}, cfg.in_ch);
    kb.kaiming("expand_w", {cfg.out_ch, m, 1, 1}, m);
}

Tensor bottleneck_kagn_conv2d(const nn::Scope& p, const Tensor& x, const KagnConvConfig& cfg) {
    const auto k = p.sub("kagn");
    auto reduced = ops::conv2d(x, k["reduce_w"]);
    auto mid = kagn_conv2d(p, reduced, cfg);
    return ops::conv2d(mid, k["expand_w"]);
}

std::int64_t kagn_param_count(const KagnConvConfig& cfg) {
    cfg.validate();
    if (cfg.bottleneck_ratio == 1) {
        return plain_count(cfg.in_ch, cfg.out_ch, cfg);
    }
    const auto m = cfg.reduced_channels();
    return m * cfg.in_ch + plain_count(m, m, cfg) + cfg.out_ch * m;
}

} // namespace kanfpn::kagn
