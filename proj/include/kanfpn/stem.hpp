#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "kanfpn/nn.hpp"

namespace kanfpn::stem {

enum class StemVariant {
    S0_Baseline,
    S1_CnnStem,
    S2_FpnStem,
    S3_BackboneCbam,
    S4_Ours,
    S5_LateralCbam,
    S6_KagnFuse,
};

inline constexpr std::array<StemVariant, 7> kAllVariants{
    StemVariant::S0_Baseline,    StemVariant::S1_CnnStem, StemVariant::S2_FpnStem,
    StemVariant::S3_BackboneCbam, StemVariant::S4_Ours,   StemVariant::S5_LateralCbam,
    StemVariant::S6_KagnFuse,
};

/// "s0" .. "s6".
std::string_view variant_key(StemVariant v);
/// Human-readable row label, e.g. "Lat. CBAM + KAGN Smooth".
std::string_view variant_label(StemVariant v);
/// Accepts "s0".."s6" (case-insensitive); throws InvalidSpec otherwise.
StemVariant parse_variant(std::string_view key);

bool uses_backbone(StemVariant v);

struct BackboneConfig {
    std::array<std::int64_t, 4> widths{16, 32, 64, 128};
    std::array<std::int64_t, 4> blocks{2, 2, 2, 2};
    bool cbam_in_blocks = false;
    std::int64_t cbam_reduction = 8;
    std::int64_t cbam_kernel = 7;

    void validate() const;
};

struct StemConfig {
    StemVariant variant = StemVariant::S4_Ours;
    std::int64_t embed_dim = 64;
    std::int64_t height = 64;
    std::int64_t width = 64;
    BackboneConfig backbone;
    std::int64_t fpn_width = 64;
    int kagn_degree = 3;
    std::int64_t kagn_bottleneck = 4;
    std::int64_t cbam_reduction = 8;
    std::int64_t cbam_kernel = 7;
    std::int64_t cnn_stem_width = 16;
    // Turning both off makes the S2/S3 fusion path linear in its input.
    bool fpn_bias = true;
    bool fpn_norm = true;

    std::int64_t grid_h() const { return height / 16; }
    std::int64_t grid_w() const { return width / 16; }
    std::int64_t tokens() const { return grid_h() * grid_w(); }
    /// Backbone input extent: the image rounded up to a multiple of 32.
    std::int64_t padded_h() const { return (height + 31) / 32 * 32; }
    std::int64_t padded_w() const { return (width + 31) / 32 * 32; }
    void validate() const;
};

/// C2..C5 (or P2..P5 after fusion), finest first.
struct FeaturePyramid {
    std::array<Tensor, 4> levels;

    /// Level index 2..5.
    const Tensor& level(int i) const { return levels.at(static_cast<std::size_t>(i - 2)); }
    /// Throws ShapeMismatch unless every extent halves exactly and batch sizes agree.
    void validate() const;
};

// Each init_* registers parameters under the builder prefix; the forward
// counterpart reads them from a scope with the same prefix.

void init_patch_embed(const nn::Builder& b, const StemConfig& cfg);
Tensor patch_embed(const nn::Scope& p, const Tensor& x);

void init_cnn_stem(const nn::Builder& b, const StemConfig& cfg);
Tensor cnn_stem(const nn::Scope& p, const Tensor& x);

void init_backbone(const nn::Builder& b, const BackboneConfig& cfg);
FeaturePyramid backbone_forward(const nn::Scope& p, const Tensor& x, const BackboneConfig& cfg);

void init_fpn(const nn::Builder& b, const StemConfig& cfg);
/// Lateral + top-down fusion, smoothed at P2: returns p2_out [B,fpn_width,H/4,W/4].
Tensor fpn_fuse(const nn::Scope& p, const FeaturePyramid& pyr, const StemConfig& cfg);
/// The unsmoothed P2..P5 maps.
FeaturePyramid fpn_top_down(const nn::Scope& p, const FeaturePyramid& pyr, const StemConfig& cfg);
/// Every level smoothed. Only S6 registers smoothing beyond P2.
FeaturePyramid fpn_smooth_all(const nn::Scope& p, const FeaturePyramid& fused, const StemConfig& cfg);

/// Full front end: image [B,3,H,W] -> tokens [B,T,D] with positional embedding.
void init_stem(const nn::Builder& b, const StemConfig& cfg);
Tensor stem_forward(const nn::Scope& p, const Tensor& x, const StemConfig& cfg);

/// Trainable scalars registered by init_stem.
std::int64_t stem_param_count(const StemConfig& cfg);

/// [B,D,h,w] -> [B,h*w,D].
Tensor flatten_tokens(const Tensor& map);

} // namespace kanfpn::stem
