#include "kanfpn/stem.hpp"

#include <algorithm>
#include <cctype>

#include "kanfpn/cbam.hpp"
#include "kanfpn/kagn.hpp"
#include "kanfpn/ops.hpp"

namespace kanfpn::stem {

namespace {

constexpr std::array<std::string_view, 7> kKeys{"s0", "s1", "s2", "s3", "s4", "s5", "s6"};
constexpr std::array<std::string_view, 7> kLabels{
    "Baseline (patch embedding)",
    "CNN stem",
    "FPN stem",
    "Backbone CBAM",
    "Lat. CBAM + KAGN Smooth",
    "Lat. CBAM",
    "KAGN Fuse",
};

std::size_t index_of(StemVariant v) { return static_cast<std::size_t>(v); }

bool lateral_cbam(StemVariant v) {
    return v == StemVariant::S4_Ours || v == StemVariant::S5_LateralCbam;
}

std::string level_name(std::string_view base, int level) {
    return std::string(base) + std::to_string(level);
}

void require_image(const Tensor& x, std::int64_t multiple, const char* what) {
    if (x.ndim() != 4) {
        throw ShapeMismatch(std::string(what) + " expects [B,C,H,W], got " + to_string(x.shape()));
    }
    if (x.dim(2) % multiple != 0 || x.dim(3) % multiple != 0) {
        throw InvalidGeometry(std::string(what) + " needs H and W divisible by " +
                              std::to_string(multiple) + ", got " + to_string(x.shape()));
    }
}

Tensor add_pos_embed(const nn::Scope& p, const Tensor& tokens) {
    const auto& pos = p["pos_embed"];
    if (pos.dim(1) != tokens.dim(1) || pos.dim(2) != tokens.dim(2)) {
        throw InvalidGeometry("token grid " + to_string(tokens.shape()) +
                              " does not match positional embedding " + to_string(pos.shape()));
    }
    return ops::add(tokens, pos);
}

void init_pos_embed(const nn::Builder& b, const StemConfig& cfg) {
    b.zeros("pos_embed", {1, cfg.tokens(), cfg.embed_dim});
}

kagn::KagnConvConfig lateral_kagn(const StemConfig& cfg, std::int64_t in) {
    return kagn::KagnConvConfig::same(in, cfg.fpn_width, 1, cfg.kagn_degree);
}

kagn::KagnConvConfig smooth_kagn(const StemConfig& cfg, std::int64_t ratio) {
    return kagn::KagnConvConfig::same(cfg.fpn_width, cfg.fpn_width, 3, cfg.kagn_degree, ratio);
}

void init_plain_smooth(const nn::Builder& b, const StemConfig& cfg) {
    nn::init_conv(b.sub("conv"), cfg.fpn_width, cfg.fpn_width, 3, 1, cfg.fpn_bias);
    if (cfg.fpn_norm) {
        nn::init_norm(b.sub("norm"), cfg.fpn_width);
    }
}

Tensor plain_smooth(const nn::Scope& p, const Tensor& x) {
    auto y = nn::conv(p.sub("conv"), x, 1, 1);
    return p.contains("norm.gamma") ? nn::norm(p.sub("norm"), y) : y;
}

BackboneConfig effective_backbone(const StemConfig& cfg) {
    auto bb = cfg.backbone;
    bb.cbam_in_blocks = cfg.variant == StemVariant::S3_BackboneCbam;
    bb.cbam_reduction = cfg.cbam_reduction;
    bb.cbam_kernel = cfg.cbam_kernel;
    return bb;
}

std::string block_name(int stage, std::int64_t block) {
    return "layer" + std::to_string(stage) + "." + std::to_string(block);
}

} // namespace

std::string_view variant_key(StemVariant v) { return kKeys.at(index_of(v)); }

std::string_view variant_label(StemVariant v) { return kLabels.at(index_of(v)); }

StemVariant parse_variant(std::string_view key) {
    std::string lower(key);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (std::size_t i = 0; i < kKeys.size(); ++i) {
        if (lower == kKeys[i]) {
            return static_cast<StemVariant>(i);
        }
    }
    throw InvalidSpec("unknown stem variant '" + std::string(key) + "' (expected s0..s6)");
}

bool uses_backbone(StemVariant v) {
    return v != StemVariant::S0_Baseline && v != StemVariant::S1_CnnStem;
}

void BackboneConfig::validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
        if (widths[i] < 1 || blocks[i] < 1) {
            throw InvalidSpec("backbone widths and block counts must be positive");
        }
    }
    if (cbam_in_blocks) {
        for (auto w : widths) {
            cbam::CbamConfig{w, cbam_reduction, cbam_kernel}.validate();
        }
    }
}

void StemConfig::validate() const {
    if (embed_dim < 1 || fpn_width < 1 || cnn_stem_width < 1) {
        throw InvalidSpec("stem widths must be positive");
    }
    if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0) {
        throw InvalidGeometry("stem input must be divisible by 16, got " + std::to_string(height) +
                              "x" + std::to_string(width));
    }
    if (!uses_backbone(variant)) {
        return;
    }
    effective_backbone(*this).validate();
    if (lateral_cbam(variant)) {
        for (auto w : backbone.widths) {
            cbam::CbamConfig{w, cbam_reduction, cbam_kernel}.validate();
        }
    }
    if (variant == StemVariant::S4_Ours) {
        smooth_kagn(*this, kagn_bottleneck).validate();
        if (kagn_bottleneck <= 1) {
            throw InvalidSpec("the KAGN smoothing layer needs a bottleneck ratio > 1");
        }
    }
    if (variant == StemVariant::S6_KagnFuse && kagn_degree < 0) {
        throw InvalidSpec("KAGN degree must be >= 0");
    }
}

void FeaturePyramid::validate() const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!levels[i].defined() || levels[i].ndim() != 4) {
            throw ShapeMismatch("pyramid level " + std::to_string(i + 2) + " is missing or not 4-D");
        }
    }
    for (std::size_t i = 1; i < levels.size(); ++i) {
        const auto& fine = levels[i - 1];
        const auto& coarse = levels[i];
        if (coarse.dim(0) != fine.dim(0) || fine.dim(2) != 2 * coarse.dim(2) ||
            fine.dim(3) != 2 * coarse.dim(3)) {
            throw ShapeMismatch("pyramid extents must halve exactly: level " + std::to_string(i + 1) +
                                " " + to_string(fine.shape()) + " vs level " +
                                std::to_string(i + 2) + " " + to_string(coarse.shape()));
        }
    }
}

Tensor flatten_tokens(const Tensor& map) {
    if (map.ndim() != 4) {
        throw ShapeMismatch("flatten_tokens expects [B,D,h,w], got " + to_string(map.shape()));
    }
    auto flat = ops::reshape(map, {map.dim(0), map.dim(1), map.dim(2) * map.dim(3)});
    return ops::permute(flat, {0, 2, 1});
}

// --- S0 / S1 ----------------------------------------------------------------

void init_patch_embed(const nn::Builder& b, const StemConfig& cfg) {
    nn::init_conv(b.sub("patch"), 3, cfg.embed_dim, 16);
    init_pos_embed(b, cfg);
}

Tensor patch_embed(const nn::Scope& p, const Tensor& x) {
    require_image(x, 16, "patch_embed");
    auto map = nn::conv(p.sub("patch"), x, 16, 0);
    return add_pos_embed(p, flatten_tokens(map));
}

void init_cnn_stem(const nn::Builder& b, const StemConfig& cfg) {
    auto cb = b.sub("cnn");
    std::int64_t in = 3;
    std::int64_t out = cfg.cnn_stem_width;
    for (int i = 0; i < 4; ++i) {
        nn::init_conv_block(cb.sub(std::to_string(i)), in, out, 3);
        in = out;
        out *= 2;
    }
    nn::init_conv(cb.sub("proj"), in, cfg.embed_dim, 1);
    init_pos_embed(b, cfg);
}

Tensor cnn_stem(const nn::Scope& p, const Tensor& x) {
    require_image(x, 16, "cnn_stem");
    const auto cs = p.sub("cnn");
    Tensor y = x;
    for (int i = 0; i < 4; ++i) {
        y = nn::conv_block(cs.sub(std::to_string(i)), y, 2);
    }
    y = nn::conv(cs.sub("proj"), y);
    return add_pos_embed(p, flatten_tokens(y));
}

// --- backbone ---------------------------------------------------------------

void init_backbone(const nn::Builder& b, const BackboneConfig& cfg) {
    cfg.validate();
    auto bb = b.sub("backbone");
    nn::init_conv_block(bb.sub("stem"), 3, cfg.widths[0], 3);
    std::int64_t in = cfg.widths[0];
    for (int s = 1; s <= 4; ++s) {
        const auto out = cfg.widths[static_cast<std::size_t>(s - 1)];
        for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(s - 1)]; ++j) {
            const bool strided = s > 1 && j == 0;
            auto blk = bb.sub(block_name(s, j));
            nn::init_conv_block(blk.sub("conv1"), in, out, 3);
            nn::init_conv_block(blk.sub("conv2"), out, out, 3);
            if (cfg.cbam_in_blocks) {
                cbam::init_cbam(blk, {out, cfg.cbam_reduction, cfg.cbam_kernel});
            }
            if (strided || in != out) {
                nn::init_conv(blk.sub("shortcut"), in, out, 1);
            }
            in = out;
        }
    }
}

FeaturePyramid backbone_forward(const nn::Scope& p, const Tensor& x, const BackboneConfig& cfg) {
    require_image(x, 32, "backbone_forward");
    const auto bb = p.sub("backbone");
    Tensor y = nn::conv_block(bb.sub("stem"), x, 2);
    y = ops::pool2d(ops::Pool::max, y, 2, 2);
    FeaturePyramid pyr;
    for (int s = 1; s <= 4; ++s) {
        for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(s - 1)]; ++j) {
            const std::int64_t stride = (s > 1 && j == 0) ? 2 : 1;
            const auto blk = bb.sub(block_name(s, j));
            auto branch = nn::conv_block(blk.sub("conv1"), y, stride);
            branch = nn::conv_block(blk.sub("conv2"), branch);
            if (cfg.cbam_in_blocks) {
                branch = cbam::cbam(blk, branch);
            }
            auto shortcut = blk.contains("shortcut.w") ? nn::conv(blk.sub("shortcut"), y, stride) : y;
            y = ops::add(shortcut, branch);
        }
        pyr.levels[static_cast<std::size_t>(s - 1)] = y;
    }
    return pyr;
}

// --- FPN --------------------------------------------------------------------

void init_fpn(const nn::Builder& b, const StemConfig& cfg) {
    auto fb = b.sub("fpn");
    const auto v = cfg.variant;
    for (int level = 2; level <= 5; ++level) {
        const auto in = cfg.backbone.widths[static_cast<std::size_t>(level - 2)];
        auto lb = fb.sub(level_name("lateral", level));
        if (v == StemVariant::S6_KagnFuse) {
            kagn::init_kagn_conv2d(lb, lateral_kagn(cfg, in));
            continue;
        }
        if (lateral_cbam(v)) {
            cbam::init_cbam(lb, {in, cfg.cbam_reduction, cfg.cbam_kernel});
        }
        nn::init_conv(lb.sub("conv"), in, cfg.fpn_width, 1, 1, cfg.fpn_bias);
    }
    switch (v) {
    case StemVariant::S4_Ours:
        kagn::init_bottleneck_kagn_conv2d(fb.sub("smooth"), smooth_kagn(cfg, cfg.kagn_bottleneck));
        break;
    case StemVariant::S6_KagnFuse:
        for (int level = 2; level <= 5; ++level) {
            kagn::init_kagn_conv2d(fb.sub(level_name("smooth", level)), smooth_kagn(cfg, 1));
        }
        break;
    default:
        init_plain_smooth(fb.sub("smooth"), cfg);
        break;
    }
}

FeaturePyramid fpn_top_down(const nn::Scope& p, const FeaturePyramid& pyr, const StemConfig& cfg) {
    pyr.validate();
    const auto fp = p.sub("fpn");
    std::array<Tensor, 4> lateral;
    for (int level = 2; level <= 5; ++level) {
        const auto lp = fp.sub(level_name("lateral", level));
        const auto& c = pyr.level(level);
        Tensor l;
        if (cfg.variant == StemVariant::S6_KagnFuse) {
            l = kagn::kagn_conv2d(lp, c, lateral_kagn(cfg, c.dim(1)));
        } else {
            l = nn::conv(lp.sub("conv"), lateral_cbam(cfg.variant) ? cbam::cbam(lp, c) : c);
        }
        lateral[static_cast<std::size_t>(level - 2)] = l;
    }
    FeaturePyramid fused;
    fused.levels[3] = lateral[3];
    for (int i = 2; i >= 0; --i) {
        const auto k = static_cast<std::size_t>(i);
        fused.levels[k] = ops::add(lateral[k], ops::upsample_nearest2x(fused.levels[k + 1]));
    }
    return fused;
}

namespace {

Tensor smooth_level(const nn::Scope& fp, const Tensor& x, const StemConfig& cfg, int level) {
    switch (cfg.variant) {
    case StemVariant::S4_Ours:
        return kagn::bottleneck_kagn_conv2d(fp.sub("smooth"), x, smooth_kagn(cfg, cfg.kagn_bottleneck));
    case StemVariant::S6_KagnFuse:
        return kagn::kagn_conv2d(fp.sub(level_name("smooth", level)), x, smooth_kagn(cfg, 1));
    default:
        return plain_smooth(fp.sub("smooth"), x);
    }
}

} // namespace

Tensor fpn_fuse(const nn::Scope& p, const FeaturePyramid& pyr, const StemConfig& cfg) {
    const auto fused = fpn_top_down(p, pyr, cfg);
    return smooth_level(p.sub("fpn"), fused.level(2), cfg, 2);
}

FeaturePyramid fpn_smooth_all(const nn::Scope& p, const FeaturePyramid& fused, const StemConfig& cfg) {
    const auto fp = p.sub("fpn");
    FeaturePyramid out = fused;
    out.levels[0] = smooth_level(fp, fused.level(2), cfg, 2);
    if (cfg.variant == StemVariant::S6_KagnFuse) {
        for (int level = 3; level <= 5; ++level) {
            out.levels[static_cast<std::size_t>(level - 2)] = smooth_level(fp, fused.level(level), cfg, level);
        }
    }
    return out;
}

// --- full stem --------------------------------------------------------------

void init_stem(const nn::Builder& b, const StemConfig& cfg) {
    cfg.validate();
    switch (cfg.variant) {
    case StemVariant::S0_Baseline: init_patch_embed(b, cfg); return;
    case StemVariant::S1_CnnStem: init_cnn_stem(b, cfg); return;
    default: break;
    }
    init_backbone(b, effective_backbone(cfg));
    init_fpn(b, cfg);
    nn::init_conv(b.sub("proj"), cfg.fpn_width, cfg.embed_dim, 4);
    init_pos_embed(b, cfg);
}

Tensor stem_forward(const nn::Scope& p, const Tensor& x, const StemConfig& cfg) {
    switch (cfg.variant) {
    case StemVariant::S0_Baseline: return patch_embed(p, x);
    case StemVariant::S1_CnnStem: return cnn_stem(p, x);
    default: break;
    }
    require_image(x, 16, "stem_forward");
    const std::int64_t h = x.dim(2);
    const std::int64_t w = x.dim(3);
    const std::int64_t ph = (h + 31) / 32 * 32;
    const std::int64_t pw = (w + 31) / 32 * 32;
    // Extents that are multiples of 16 but not 32 are zero-padded for the
    // backbone and cropped back at stride 4.
    const Tensor input = (ph == h && pw == w) ? x : ops::pad_crop2d(x, ph, pw);
    auto pyr = backbone_forward(p, input, effective_backbone(cfg));
    auto p2 = fpn_fuse(p, pyr, cfg);
    if (ph != h || pw != w) {
        p2 = ops::pad_crop2d(p2, h / 4, w / 4);
    }
    auto map = nn::conv(p.sub("proj"), p2, 4, 0);
    return add_pos_embed(p, flatten_tokens(map));
}

std::int64_t stem_param_count(const StemConfig& cfg) {
    nn::ParamStore store;
    init_stem(nn::Builder(store, "", 0), cfg);
    return store.scalar_count();
}

} // namespace kanfpn::stem
