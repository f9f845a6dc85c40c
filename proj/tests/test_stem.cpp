#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "kanfpn/ops.hpp"
#include "kanfpn/stem.hpp"

using namespace kanfpn;
using namespace kanfpn::stem;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

struct Model {
    StemConfig cfg;
    nn::ParamStore store;
    nn::ParamMap map;
    nn::Scope scope() const { return nn::Scope(map, ""); }
    void refresh() { map = store.view(); }
};

Model build(StemConfig cfg, std::uint64_t seed = 1, DType dt = DType::f64) {
    Model m;
    m.cfg = cfg;
    init_stem(nn::Builder(m.store, "", seed, dt), cfg);
    m.refresh();
    return m;
}

StemConfig small(StemVariant v) {
    StemConfig c;
    c.variant = v;
    c.embed_dim = 16;
    c.backbone.widths = {4, 8, 8, 16};
    c.backbone.blocks = {1, 1, 1, 1};
    c.fpn_width = 8;
    c.cbam_reduction = 2;
    c.kagn_bottleneck = 2;
    c.height = 32;
    c.width = 32;
    return c;
}

FeaturePyramid random_pyramid(const StemConfig& c, std::uint64_t seed, std::int64_t extent = 8) {
    FeaturePyramid p;
    for (std::size_t i = 0; i < 4; ++i) {
        p.levels[i] = randn({1, c.backbone.widths[i], extent >> i, extent >> i}, seed + i);
    }
    return p;
}

bool spatially_constant(const Tensor& t, double tol) {
    auto v = t.to_vector();
    const auto plane = t.dim(2) * t.dim(3);
    for (std::int64_t c = 0; c < t.dim(0) * t.dim(1); ++c)
        for (std::int64_t i = 0; i < plane; ++i)
            if (std::abs(v[static_cast<std::size_t>(c * plane + i)] - v[static_cast<std::size_t>(c * plane)]) > tol) return false;
    return true;
}

} // namespace

TEST_CASE("variant keys round trip") {
    for (auto v : kAllVariants) CHECK(parse_variant(variant_key(v)) == v);
    CHECK(parse_variant("S4") == StemVariant::S4_Ours);
    CHECK_THROWS_AS(parse_variant("s7"), InvalidSpec);
    CHECK_FALSE(uses_backbone(StemVariant::S0_Baseline));
    CHECK_FALSE(uses_backbone(StemVariant::S1_CnnStem));
    CHECK(uses_backbone(StemVariant::S6_KagnFuse));
}

TEST_CASE("every variant emits T=12 tokens of width D for a 64x48 input") {
    auto x = testutil::uniform({2, 3, 64, 48}, 3, 0.0, 1.0, DType::f32);
    for (auto v : kAllVariants) {
        StemConfig cfg;
        cfg.variant = v;
        cfg.height = 64;
        cfg.width = 48;
        CAPTURE(variant_key(v));
        CHECK(cfg.tokens() == 12);
        auto m = build(cfg, 2, DType::f32);
        auto t = stem_forward(m.scope(), x, cfg);
        CHECK(t.shape() == Shape{2, 12, 64});
    }
}

TEST_CASE("patch embedding geometry") {
    StemConfig cfg = small(StemVariant::S0_Baseline);
    auto m = build(cfg);
    CHECK(patch_embed(m.scope(), randn({1, 3, 32, 32}, 1)).shape() == Shape{1, 4, 16});
    auto t = patch_embed(m.scope(), Tensor::full({1, 3, 32, 32}, 0.3, DType::f64)).to_vector();
    for (std::size_t i = 16; i < t.size(); ++i) CHECK(t[i] == t[i % 16]);
    CHECK_THROWS_AS(patch_embed(m.scope(), randn({1, 3, 40, 32}, 1)), InvalidGeometry);
}

TEST_CASE("cnn stem matches the patch grid and costs more parameters") {
    auto cfg = small(StemVariant::S1_CnnStem);
    cfg.width = 48;
    auto m = build(cfg);
    CHECK(cnn_stem(m.scope(), randn({1, 3, 32, 48}, 2)).shape() == Shape{1, 6, 16});
    for (std::int64_t d : {16, 64}) {
        StemConfig a, b, c;
        a.variant = StemVariant::S0_Baseline;
        b.variant = StemVariant::S1_CnnStem;
        c.variant = StemVariant::S2_FpnStem;
        a.embed_dim = b.embed_dim = c.embed_dim = d;
        CAPTURE(d);
        CHECK(stem_param_count(a) < stem_param_count(b));
        CHECK(stem_param_count(b) < stem_param_count(c));
    }
}

TEST_CASE("backbone strides") {
    StemConfig cfg;
    cfg.variant = StemVariant::S2_FpnStem;
    auto m = build(cfg, 1, DType::f32);
    auto pyr = backbone_forward(m.scope(), testutil::uniform({1, 3, 64, 64}, 4, 0, 1, DType::f32), cfg.backbone);
    const std::array<std::int64_t, 4> ext{16, 8, 4, 2};
    for (int l = 2; l <= 5; ++l) {
        CHECK(pyr.level(l).shape() == Shape{1, cfg.backbone.widths[static_cast<std::size_t>(l - 2)],
                                            ext[static_cast<std::size_t>(l - 2)], ext[static_cast<std::size_t>(l - 2)]});
    }
    CHECK_THROWS_AS(backbone_forward(m.scope(), Tensor::zeros({1, 3, 48, 64}), cfg.backbone), InvalidGeometry);
}

TEST_CASE("a zeroed residual branch reduces the block to its shortcut") {
    auto deep = small(StemVariant::S2_FpnStem);
    deep.backbone.blocks = {1, 1, 1, 2};
    auto shallow = small(StemVariant::S2_FpnStem);
    auto a = build(deep, 5);
    auto b = build(shallow, 5);
    testutil::zero_params(a.store, [](const std::string& n) { return n.rfind("backbone.layer4.1.conv2.", 0) == 0; });
    a.refresh();
    auto x = randn({1, 3, 32, 32}, 6);
    auto pa = backbone_forward(a.scope(), x, deep.backbone);
    auto pb = backbone_forward(b.scope(), x, shallow.backbone);
    for (int l = 2; l <= 5; ++l) CHECK(pa.level(l).to_vector() == pb.level(l).to_vector());
}

TEST_CASE("pyramid validation") {
    auto cfg = small(StemVariant::S2_FpnStem);
    auto m = build(cfg);
    auto pyr = random_pyramid(cfg, 1);
    pyr.levels[2] = randn({1, 8, 3, 3}, 9);
    CHECK_THROWS_AS(pyr.validate(), ShapeMismatch);
    CHECK_THROWS_AS(fpn_fuse(m.scope(), pyr, cfg), ShapeMismatch);
}

TEST_CASE("fused P2 has stride 4 and the pyramid width") {
    for (auto v : {StemVariant::S2_FpnStem, StemVariant::S3_BackboneCbam, StemVariant::S4_Ours,
                   StemVariant::S5_LateralCbam, StemVariant::S6_KagnFuse}) {
        auto cfg = small(v);
        auto m = build(cfg);
        auto pyr = random_pyramid(cfg, 2);
        CHECK(fpn_fuse(m.scope(), pyr, cfg).shape() == Shape{1, 8, 8, 8});
        auto all = fpn_smooth_all(m.scope(), fpn_top_down(m.scope(), pyr, cfg), cfg);
        CHECK_NOTHROW(all.validate());
        for (int l = 2; l <= 5; ++l) CHECK(all.level(l).dim(1) == 8);
    }
}

TEST_CASE("S2 with zero laterals fuses to the smoothing beta") {
    auto cfg = small(StemVariant::S2_FpnStem);
    auto m = build(cfg);
    auto beta = randn({8}, 3);
    m.store.set("fpn.smooth.norm.beta", beta);
    testutil::zero_params(m.store, [](const std::string& n) { return n.rfind("fpn.lateral", 0) == 0; });
    m.refresh();
    auto out = fpn_fuse(m.scope(), random_pyramid(cfg, 4), cfg).to_vector();
    auto bv = beta.to_vector();
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 64; ++i) CHECK(out[static_cast<std::size_t>(c * 64 + i)] == bv[static_cast<std::size_t>(c)]);
}

TEST_CASE("bias-free, norm-free S2 fusion is homogeneous") {
    auto cfg = small(StemVariant::S2_FpnStem);
    cfg.fpn_bias = false;
    cfg.fpn_norm = false;
    auto m = build(cfg, 7);
    for (const auto& n : m.store.names()) CHECK_FALSE((testutil::ends_with(n, ".b") && n.rfind("fpn.", 0) == 0));
    auto pyr = random_pyramid(cfg, 5);
    auto base = fpn_fuse(m.scope(), pyr, cfg);
    for (double alpha : {0.5, 2.0, -1.0}) {
        FeaturePyramid scaled;
        for (std::size_t i = 0; i < 4; ++i) scaled.levels[i] = ops::scale(pyr.levels[i], alpha);
        auto y = fpn_fuse(m.scope(), scaled, cfg);
        CHECK(max_abs_diff(y, ops::scale(base, alpha)) <= 1e-6 * std::abs(alpha) * testutil::max_abs(base));
    }
}

TEST_CASE("S4 and S5 differ only through the smoothing layer") {
    auto c4 = small(StemVariant::S4_Ours);
    auto c5 = small(StemVariant::S5_LateralCbam);
    auto m4 = build(c4, 11);
    auto m5 = build(c5, 11);
    auto pyr = random_pyramid(c4, 6);
    // Shared lateral and backbone names draw identical values.
    for (const auto& n : m5.store.names())
        if (m4.store.contains(n)) CHECK(m4.store.at(n).value.to_vector() == m5.store.at(n).value.to_vector());
    auto t4 = fpn_top_down(m4.scope(), pyr, c4);
    auto t5 = fpn_top_down(m5.scope(), pyr, c5);
    for (int l = 2; l <= 5; ++l) CHECK(t4.level(l).to_vector() == t5.level(l).to_vector());

    auto beta4 = randn({4}, 12);
    auto beta5 = randn({8}, 13);
    m4.store.set("fpn.smooth.kagn.norm.beta", beta4);
    testutil::zero_params(m4.store, [](const std::string& n) {
        return n == "fpn.smooth.kagn.base_w" || n == "fpn.smooth.kagn.poly_w";
    });
    m5.store.set("fpn.smooth.norm.beta", beta5);
    testutil::zero_params(m5.store, [](const std::string& n) { return n == "fpn.smooth.conv.w"; });
    m4.refresh();
    m5.refresh();
    auto y4 = fpn_fuse(m4.scope(), pyr, c4);
    auto y5 = fpn_fuse(m5.scope(), pyr, c5);
    CHECK(spatially_constant(y4, 1e-12));
    CHECK(spatially_constant(y5, 0.0));
    auto we = m4.map.at("fpn.smooth.kagn.expand_w").to_vector();
    auto b4 = beta4.to_vector();
    auto v4 = y4.to_vector();
    for (int o = 0; o < 8; ++o) {
        double want = 0;
        for (int j = 0; j < 4; ++j) want += we[static_cast<std::size_t>(o * 4 + j)] * b4[static_cast<std::size_t>(j)];
        CHECK(v4[static_cast<std::size_t>(o * 64)] == doctest::Approx(want).epsilon(1e-12));
    }
    auto v5 = y5.to_vector();
    for (int o = 0; o < 8; ++o) CHECK(v5[static_cast<std::size_t>(o * 64)] == beta5.at(o));
}

TEST_CASE("variant parameter sets are distinct checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "kanfpn_test_stem";
    std::filesystem::create_directories(dir);
    auto m4 = build(small(StemVariant::S4_Ours), 1, DType::f32);
    auto m5 = build(small(StemVariant::S5_LateralCbam), 1, DType::f32);
    nn::save_checkpoint(dir / "s4.ckpt", m4.store);
    CHECK_THROWS_AS(nn::load_checkpoint(dir / "s4.ckpt", m5.store), CheckpointMismatch);
    auto again = build(small(StemVariant::S4_Ours), 2, DType::f32);
    CHECK_NOTHROW(nn::load_checkpoint(dir / "s4.ckpt", again.store));
    std::filesystem::remove_all(dir);

    auto names = [](StemVariant v) {
        auto m = build(small(v), 1, DType::f32);
        return m.store.names();
    };
    for (std::size_t i = 0; i < kAllVariants.size(); ++i)
        for (std::size_t j = i + 1; j < kAllVariants.size(); ++j) CHECK(names(kAllVariants[i]) != names(kAllVariants[j]));
}

TEST_CASE("flatten_tokens orders rows before columns") {
    auto map = Tensor::from_list({1, 2, 3, 4, 5, 6, 7, 8}, {1, 2, 2, 2}, DType::f64);
    CHECK(flatten_tokens(map).to_vector() == std::vector<double>{1, 5, 2, 6, 3, 7, 4, 8});
}
