#include "kanfpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "kanfpn/cbam.hpp"
#include "kanfpn/kagn.hpp"
#include "kanfpn/ops.hpp"
#include "kanfpn/pose.hpp"
#include "kanfpn/rng.hpp"
#include "kanfpn/stem.hpp"

namespace kanfpn::gradcheck {

namespace {

Tensor randn(const Shape& shape, SplitMix64& rng, double scale = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& e : v) {
        e = scale * rng.normal();
    }
    return Tensor::from_buffer(std::move(v), shape);
}

Tensor uniform(const Shape& shape, SplitMix64& rng, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& e : v) {
        e = rng.uniform(lo, hi);
    }
    return Tensor::from_buffer(std::move(v), shape);
}

/// sum(out * r) for a fixed random r, so every output entry contributes.
Tensor project(const Tensor& out, const Tensor& r) {
    return ops::sum(ops::mul(out, r));
}

nn::Builder builder(Problem& p, std::uint64_t seed) {
    return nn::Builder(p.params, "", mix_seed(seed, 1), DType::f64);
}

/// Replaces gamma/beta style constants with random values so every
/// parameter has a generic gradient.
void jitter_constants(Problem& p, SplitMix64& rng) {
    for (const auto& param : std::vector<nn::Param>(p.params.params())) {
        const auto& n = param.name;
        const bool is_gamma = n.size() >= 5 && n.compare(n.size() - 5, 5, "gamma") == 0;
        const bool is_beta = n.size() >= 4 && n.compare(n.size() - 4, 4, "beta") == 0;
        const bool is_pos = n.size() >= 9 && n.compare(n.size() - 9, 9, "pos_embed") == 0;
        if (is_gamma) {
            p.params.set(n, uniform(param.value.shape(), rng, 0.5, 1.5));
        } else if (is_beta || is_pos) {
            p.params.set(n, randn(param.value.shape(), rng, 0.1));
        }
    }
}

// Wraps a single-output function of (params, x) into a projected problem.
template <class Fn>
Problem unary_problem(Problem p, Tensor x, const Shape& out_shape, SplitMix64& rng, Fn fn) {
    auto r = randn(out_shape, rng);
    p.inputs.emplace_back("x", std::move(x));
    p.loss = [fn, r](const nn::ParamMap& m, const std::vector<Tensor>& in) { return project(fn(m, in[0]), r); };
    return p;
}

Shape output_shape(const Problem& p, const Tensor& x,
                   const std::function<Tensor(const nn::ParamMap&, const Tensor&)>& fn) {
    NoGradGuard guard;
    return fn(p.params.view(), x).shape();
}

template <class Fn>
Problem layer_problem(Problem p, Tensor x, SplitMix64& rng, Fn fn) {
    jitter_constants(p, rng);
    const std::function<Tensor(const nn::ParamMap&, const Tensor&)> f = fn;
    const auto shape = output_shape(p, x, f);
    return unary_problem(std::move(p), std::move(x), shape, rng, f);
}

// --- op scopes --------------------------------------------------------------

Problem conv2d_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"w", randn({6, 2, 3, 3}, rng, 0.3)});
    p.params.add({"b", randn({6}, rng)});
    return layer_problem(std::move(p), randn({2, 4, 7, 7}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return ops::conv2d(x, m.at("w"), m.at("b"), 2, 1, 2);
    });
}

Problem conv_transpose2d_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"w", randn({3, 2, 4, 4}, rng, 0.3)});
    return layer_problem(std::move(p), randn({1, 3, 4, 5}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return ops::conv_transpose2d(x, m.at("w"), 2, 1);
    });
}

Problem norm2d_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"gamma", uniform({3}, rng, 0.5, 1.5)});
    p.params.add({"beta", randn({3}, rng)});
    return layer_problem(std::move(p), randn({2, 3, 5, 4}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return ops::norm2d(x, m.at("gamma"), m.at("beta"));
    });
}

Problem matmul_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"b", randn({4, 5}, rng)});
    return layer_problem(std::move(p), randn({2, 3, 4}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return ops::matmul(x, m.at("b"));
    });
}

Problem softmax_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    return layer_problem(Problem{}, randn({3, 5}, rng), rng, [](const nn::ParamMap&, const Tensor& x) {
        return ops::softmax(x);
    });
}

Problem layer_norm_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"gamma", uniform({6}, rng, 0.5, 1.5)});
    p.params.add({"beta", randn({6}, rng)});
    return layer_problem(std::move(p), randn({2, 3, 6}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return ops::layer_norm(x, m.at("gamma"), m.at("beta"));
    });
}

Problem pool_problem(std::uint64_t seed, ops::Pool kind) {
    SplitMix64 rng(seed);
    return layer_problem(Problem{}, randn({1, 2, 6, 6}, rng), rng, [kind](const nn::ParamMap&, const Tensor& x) {
        return ops::pool2d(kind, x, 2, 2);
    });
}

Problem upsample_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    return layer_problem(Problem{}, randn({1, 2, 3, 4}, rng), rng, [](const nn::ParamMap&, const Tensor& x) {
        return ops::upsample_nearest2x(x);
    });
}

Problem gram_basis_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    return layer_problem(Problem{}, uniform({1, 2, 3, 3}, rng, -0.95, 0.95), rng,
                         [](const nn::ParamMap&, const Tensor& s) { return ops::gram_basis(s, 4); });
}

Problem elementwise_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    p.params.add({"b", randn({1, 4}, rng)});
    return layer_problem(std::move(p), randn({3, 4}, rng), rng, [](const nn::ParamMap& m, const Tensor& a) {
        const auto& b = m.at("b");
        return ops::add(ops::mul(ops::silu(a), ops::sigmoid(b)), ops::sub(ops::tanh(a), ops::scale(b, 0.5)));
    });
}

Problem masked_mse_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    auto target = randn({2, 3, 4, 4}, rng);
    auto mask = Tensor::from_vector({1, 0, 1, 1, 1, 0}, {2, 3}, DType::f64);
    p.inputs.emplace_back("pred", randn({2, 3, 4, 4}, rng));
    p.loss = [target, mask](const nn::ParamMap&, const std::vector<Tensor>& in) {
        return ops::masked_mse(in[0], target, mask);
    };
    return p;
}

// --- layer scopes -----------------------------------------------------------

Problem linear_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    nn::init_linear(builder(p, seed), 5, 3);
    return layer_problem(std::move(p), randn({2, 4, 5}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return nn::linear(nn::Scope(m, ""), x);
    });
}

Problem conv_block_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    nn::init_conv_block(builder(p, seed), 3, 4, 3);
    return layer_problem(std::move(p), randn({1, 3, 6, 6}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return nn::conv_block(nn::Scope(m, ""), x, 2);
    });
}

Problem deconv_block_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    nn::init_deconv_block(builder(p, seed), 3, 2);
    return layer_problem(std::move(p), randn({1, 3, 3, 3}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return nn::deconv_block(nn::Scope(m, ""), x);
    });
}

Problem mhsa_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    nn::init_mhsa(builder(p, seed), 8);
    return layer_problem(std::move(p), randn({1, 4, 8}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return nn::mhsa(nn::Scope(m, ""), x, 2);
    });
}

Problem transformer_block_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    nn::init_transformer_block(builder(p, seed), 8, 2.0);
    return layer_problem(std::move(p), randn({1, 4, 8}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return nn::transformer_block(nn::Scope(m, ""), x, 2);
    });
}

template <class Fn>
Problem cbam_problem(std::uint64_t seed, Shape x_shape, Fn fn) {
    SplitMix64 rng(seed);
    Problem p;
    cbam::init_cbam(builder(p, seed), {x_shape[1], 2, 7});
    return layer_problem(std::move(p), randn(x_shape, rng), rng, fn);
}

Problem kagn_problem(std::uint64_t seed, int degree) {
    SplitMix64 rng(seed);
    Problem p;
    const auto cfg = kagn::KagnConvConfig::same(3, 4, 3, degree);
    kagn::init_kagn_conv2d(builder(p, seed), cfg);
    return layer_problem(std::move(p), randn({1, 3, 6, 6}, rng), rng, [cfg](const nn::ParamMap& m, const Tensor& x) {
        return kagn::kagn_conv2d(nn::Scope(m, ""), x, cfg);
    });
}

Problem bottleneck_kagn_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    const auto cfg = kagn::KagnConvConfig::same(8, 8, 3, 3, 4);
    kagn::init_bottleneck_kagn_conv2d(builder(p, seed), cfg);
    return layer_problem(std::move(p), randn({1, 8, 6, 6}, rng), rng, [cfg](const nn::ParamMap& m, const Tensor& x) {
        return kagn::bottleneck_kagn_conv2d(nn::Scope(m, ""), x, cfg);
    });
}

stem::StemConfig small_stem(stem::StemVariant v) {
    stem::StemConfig cfg;
    cfg.variant = v;
    cfg.height = 32;
    cfg.width = 32;
    cfg.embed_dim = 8;
    cfg.backbone.widths = {8, 16, 32, 64};
    cfg.backbone.blocks = {1, 1, 1, 1};
    cfg.fpn_width = 16;
    cfg.cnn_stem_width = 4;
    return cfg;
}

Problem patch_embed_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    auto cfg = small_stem(stem::StemVariant::S0_Baseline);
    stem::init_patch_embed(builder(p, seed), cfg);
    return layer_problem(std::move(p), randn({1, 3, 32, 32}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return stem::patch_embed(nn::Scope(m, ""), x);
    });
}

Problem cnn_stem_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    auto cfg = small_stem(stem::StemVariant::S1_CnnStem);
    stem::init_cnn_stem(builder(p, seed), cfg);
    return layer_problem(std::move(p), randn({1, 3, 32, 32}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return stem::cnn_stem(nn::Scope(m, ""), x);
    });
}

Problem backbone_problem(std::uint64_t seed, bool with_cbam) {
    SplitMix64 rng(seed);
    Problem p;
    auto bb = small_stem(stem::StemVariant::S2_FpnStem).backbone;
    bb.blocks = {2, 1, 1, 1};
    bb.cbam_in_blocks = with_cbam;
    stem::init_backbone(builder(p, seed), bb);
    jitter_constants(p, rng);
    auto x = randn({1, 3, 32, 32}, rng);
    std::vector<Tensor> r;
    {
        NoGradGuard guard;
        const auto pyr = stem::backbone_forward(nn::Scope(p.params.view(), ""), x, bb);
        for (const auto& level : pyr.levels) {
            r.push_back(randn(level.shape(), rng));
        }
    }
    p.inputs.emplace_back("x", x);
    p.loss = [bb, r](const nn::ParamMap& m, const std::vector<Tensor>& in) {
        const auto pyr = stem::backbone_forward(nn::Scope(m, ""), in[0], bb);
        Tensor total = project(pyr.levels[0], r[0]);
        for (std::size_t i = 1; i < 4; ++i) {
            total = ops::add(total, project(pyr.levels[i], r[i]));
        }
        return total;
    };
    return p;
}

Problem fpn_problem(std::uint64_t seed, stem::StemVariant v) {
    SplitMix64 rng(seed);
    Problem p;
    auto cfg = small_stem(v);
    stem::init_fpn(builder(p, seed), cfg);
    jitter_constants(p, rng);
    std::int64_t extent = 8;
    for (int level = 2; level <= 5; ++level) {
        const auto c = cfg.backbone.widths[static_cast<std::size_t>(level - 2)];
        p.inputs.emplace_back("C" + std::to_string(level), randn({1, c, extent, extent}, rng));
        extent /= 2;
    }
    auto r = randn({1, cfg.fpn_width, 8, 8}, rng);
    p.loss = [cfg, r](const nn::ParamMap& m, const std::vector<Tensor>& in) {
        stem::FeaturePyramid pyr;
        std::copy(in.begin(), in.end(), pyr.levels.begin());
        return project(stem::fpn_fuse(nn::Scope(m, ""), pyr, cfg), r);
    };
    return p;
}

Problem encode_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    pose::init_encoder(builder(p, seed), 16, 2, 2.0);
    return layer_problem(std::move(p), randn({1, 6, 16}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return pose::encode(nn::Scope(m, ""), x, 2, 2);
    });
}

Problem heatmap_head_problem(std::uint64_t seed) {
    SplitMix64 rng(seed);
    Problem p;
    pose::init_heatmap_head(builder(p, seed), 8, 4, 3);
    return layer_problem(std::move(p), randn({1, 6, 8}, rng), rng, [](const nn::ParamMap& m, const Tensor& x) {
        return pose::heatmap_head(nn::Scope(m, ""), x, 2, 3);
    });
}

/// Stem -> encoder -> head -> masked MSE against rendered targets at 32x32.
Problem pipeline_problem(std::uint64_t seed, stem::StemVariant v) {
    SplitMix64 rng(seed);
    pose::PoseModelConfig mc;
    mc.embed_dim = 16;
    mc.depth = 1;
    mc.heads = 2;
    mc.mlp_ratio = 2.0;
    mc.num_keypoints = 3;
    mc.height = 32;
    mc.width = 32;
    mc.head_width = 8;
    mc.stem = small_stem(v);
    pose::PoseModel model(mc, mix_seed(seed, 1), DType::f64);
    Problem p;
    p.params = model.params();
    jitter_constants(p, rng);
    std::vector<pose::Keypoints> kps(1);
    for (std::int64_t k = 0; k < mc.num_keypoints; ++k) {
        kps[0].push_back({rng.uniform(2.0, 30.0), rng.uniform(2.0, 30.0), k != 1, 0.0});
    }
    auto target = pose::render_targets(kps, 8, 8, 4.0, 2.0, DType::f64);
    auto mask = pose::visibility_mask(kps, DType::f64);
    p.inputs.emplace_back("image", uniform({1, 3, 32, 32}, rng, 0.0, 1.0));
    p.loss = [model = std::make_shared<pose::PoseModel>(std::move(model)), target, mask](
                 const nn::ParamMap& m, const std::vector<Tensor>& in) {
        return pose::mse_loss(model->forward(m, in[0]), target, mask);
    };
    return p;
}

std::vector<Scope> build_registry() {
    using stem::StemVariant;
    std::vector<Scope> s;
    auto op = [&](std::string name, std::function<Problem(std::uint64_t)> f) {
        s.push_back({std::move(name), "op", 1e-6, std::move(f)});
    };
    auto layer = [&](std::string name, std::function<Problem(std::uint64_t)> f) {
        s.push_back({std::move(name), "layer", 1e-6, std::move(f)});
    };
    auto stage = [&](std::string name, std::function<Problem(std::uint64_t)> f) {
        s.push_back({std::move(name), "stage", 1e-5, std::move(f)});
    };
    op("conv2d", conv2d_problem);
    op("conv_transpose2d", conv_transpose2d_problem);
    op("norm2d", norm2d_problem);
    op("matmul", matmul_problem);
    op("softmax", softmax_problem);
    op("layer_norm", layer_norm_problem);
    op("max_pool", [](std::uint64_t seed) { return pool_problem(seed, ops::Pool::max); });
    op("avg_pool", [](std::uint64_t seed) { return pool_problem(seed, ops::Pool::avg); });
    op("upsample_nearest2x", upsample_problem);
    op("gram_basis", gram_basis_problem);
    op("elementwise", elementwise_problem);
    op("masked_mse", masked_mse_problem);
    layer("linear", linear_problem);
    layer("conv_block", conv_block_problem);
    layer("deconv_block", deconv_block_problem);
    layer("mhsa", mhsa_problem);
    layer("transformer_block", transformer_block_problem);
    layer("channel_attention", [](std::uint64_t seed) {
        return cbam_problem(seed, {1, 4, 5, 5}, [](const nn::ParamMap& m, const Tensor& x) {
            return cbam::channel_attention(nn::Scope(m, ""), x);
        });
    });
    layer("spatial_attention", [](std::uint64_t seed) {
        return cbam_problem(seed, {1, 4, 6, 6}, [](const nn::ParamMap& m, const Tensor& x) {
            return cbam::spatial_attention(nn::Scope(m, ""), x);
        });
    });
    layer("cbam", [](std::uint64_t seed) {
        return cbam_problem(seed, {1, 4, 6, 6}, [](const nn::ParamMap& m, const Tensor& x) {
            return cbam::cbam(nn::Scope(m, ""), x);
        });
    });
    layer("kagn_conv2d_d0", [](std::uint64_t seed) { return kagn_problem(seed, 0); });
    layer("kagn_conv2d_d1", [](std::uint64_t seed) { return kagn_problem(seed, 1); });
    layer("kagn_conv2d", [](std::uint64_t seed) { return kagn_problem(seed, 3); });
    layer("bottleneck_kagn_conv2d", bottleneck_kagn_problem);
    layer("patch_embed", patch_embed_problem);
    layer("cnn_stem", cnn_stem_problem);
    layer("backbone", [](std::uint64_t seed) { return backbone_problem(seed, false); });
    layer("backbone_cbam", [](std::uint64_t seed) { return backbone_problem(seed, true); });
    layer("encode", encode_problem);
    layer("heatmap_head", heatmap_head_problem);
    stage("fpn_s2", [](std::uint64_t seed) { return fpn_problem(seed, StemVariant::S2_FpnStem); });
    stage("fpn_s3", [](std::uint64_t seed) { return fpn_problem(seed, StemVariant::S3_BackboneCbam); });
    stage("fpn_s4", [](std::uint64_t seed) { return fpn_problem(seed, StemVariant::S4_Ours); });
    stage("fpn_s5", [](std::uint64_t seed) { return fpn_problem(seed, StemVariant::S5_LateralCbam); });
    stage("fpn_s6", [](std::uint64_t seed) { return fpn_problem(seed, StemVariant::S6_KagnFuse); });
    for (auto v : stem::kAllVariants) {
        stage(std::string(stem::variant_key(v)), [v](std::uint64_t seed) { return pipeline_problem(seed, v); });
    }
    return s;
}

std::vector<std::int64_t> pick_coordinates(const std::vector<double>& analytic, std::int64_t samples,
                                           SplitMix64& rng) {
    const auto n = static_cast<std::int64_t>(analytic.size());
    std::vector<std::int64_t> idx;
    if (n <= samples + 1) {
        for (std::int64_t i = 0; i < n; ++i) {
            idx.push_back(i);
        }
        return idx;
    }
    const auto largest = std::max_element(analytic.begin(), analytic.end(),
                                          [](double a, double b) { return std::abs(a) < std::abs(b); });
    idx.push_back(largest - analytic.begin());
    while (static_cast<std::int64_t>(idx.size()) < samples + 1) {
        const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) {
            idx.push_back(i);
        }
    }
    return idx;
}

} // namespace

Report check(const std::string& scope, const Problem& problem, std::uint64_t seed, double tolerance,
             const Options& opts) {
    Report report;
    report.scope = scope;
    report.seed = seed;
    report.tolerance = tolerance;

    // Analytic pass.
    std::vector<std::pair<std::string, std::vector<double>>> analytic;
    {
        Tape tape;
        const auto bound = problem.params.bind(tape);
        std::vector<Tensor> inputs;
        for (const auto& [name, t] : problem.inputs) {
            inputs.push_back(tape.watch(t));
        }
        const auto loss = problem.loss(bound, inputs);
        const auto grads = tape.backward(loss);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            analytic.emplace_back("input:" + problem.inputs[i].first, grads.of(inputs[i]).to_vector());
        }
        for (const auto& p : problem.params.params()) {
            if (p.trainable) {
                analytic.emplace_back(p.name, grads.of(bound.at(p.name)).to_vector());
            }
        }
    }

    NoGradGuard no_grad;
    const auto base = problem.params.view();
    std::vector<Tensor> base_inputs;
    for (const auto& [name, t] : problem.inputs) {
        base_inputs.push_back(t);
    }
    double g_global = 0.0;
    for (const auto& [name, a] : analytic) {
        for (double v : a) {
            g_global = std::max(g_global, std::abs(v));
        }
    }
    SplitMix64 rng(mix_seed(seed, 0x9c));
    for (std::size_t g = 0; g < analytic.size(); ++g) {
        const auto& [name, a] = analytic[g];
        const bool is_input = g < problem.inputs.size();
        const Tensor& original = is_input ? problem.inputs[g].second : problem.params.at(name).value;
        const auto values = original.to_vector();
        double g_max = 0.0;
        for (double v : a) {
            g_max = std::max(g_max, std::abs(v));
        }
        auto eval = [&](std::int64_t i, double delta) {
            auto v = values;
            v[static_cast<std::size_t>(i)] += delta;
            auto t = Tensor::from_vector(v, original.shape(), DType::f64);
            if (is_input) {
                auto in = base_inputs;
                in[g] = t;
                return problem.loss(base, in).item();
            }
            auto m = base;
            m.insert(name, t);
            return problem.loss(m, base_inputs).item();
        };
        GroupReport gr;
        gr.name = name;
        for (auto i : pick_coordinates(a, opts.samples, rng)) {
            const double an = a[static_cast<std::size_t>(i)];
            auto rel_err = [&](double h) {
                const double numeric = (eval(i, h) - eval(i, -h)) / (2.0 * h);
                const double denom =
                    std::max({std::abs(an), std::abs(numeric), 1e-2 * g_max, 1e-3 * g_global, 1e-12});
                return std::abs(an - numeric) / denom;
            };
            double err = rel_err(opts.h);
            if (err > tolerance) {
                // A step that straddles a ReLU or max-pool switch point measures
                // the kink, not the derivative; a genuine error persists at a
                // smaller step.
                err = std::min(err, rel_err(opts.h / 4.0));
                ++gr.refined;
            }
            gr.max_rel_err = std::max(gr.max_rel_err, err);
            ++gr.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, gr.max_rel_err);
        report.groups.push_back(std::move(gr));
    }
    return report;
}

const std::vector<Scope>& scopes() {
    static const std::vector<Scope> registry = build_registry();
    return registry;
}

const Scope& find_scope(const std::string& name) {
    for (const auto& s : scopes()) {
        if (s.name == name) {
            return s;
        }
    }
    throw UnknownScope("unknown gradcheck scope '" + name + "'");
}

Report run(const std::string& name, std::uint64_t seed, const Options& opts) {
    const auto& s = find_scope(name);
    return check(s.name, s.build(seed), seed, s.tolerance, opts);
}

} // namespace kanfpn::gradcheck
