#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "kanfpn/config.hpp"
#include "kanfpn/ops.hpp"
#include "kanfpn/train.hpp"

using namespace kanfpn;
using namespace kanfpn::train;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("kanfpn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

RunConfig tiny_run(const std::filesystem::path& out) {
    RunConfig cfg;
    cfg.data.scene.height = 32;
    cfg.data.scene.width = 32;
    cfg.model.embed_dim = 16;
    cfg.model.depth = 1;
    cfg.model.heads = 2;
    cfg.model.head_width = 8;
    cfg.model.stem.fpn_width = 16;
    cfg.model.stem.backbone.widths = {8, 16, 16, 32};
    cfg.model.stem.backbone.blocks = {1, 1, 1, 1};
    cfg.model.stem.cbam_reduction = 4;
    cfg.out_dir = out;
    return smoke_config(cfg);
}

std::vector<std::string> lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

} // namespace

TEST_CASE("learning-rate schedule values") {
    TrainConfig cfg;
    CHECK(lr_at(0, 0, cfg) == 0.0);
    CHECK(lr_at(250, 0, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(500, 0, cfg) == 1e-4);
    CHECK(lr_at(10000, 33, cfg) == 1e-4);
    CHECK(lr_at(10000, 34, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_at(10000, 41, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
    TrainConfig none = cfg;
    none.warmup_iters = 0;
    CHECK(lr_at(0, 0, none) == 1e-4);
}

TEST_CASE("schedule shape") {
    TrainConfig cfg;
    double prev = -1;
    for (std::int64_t s = 0; s <= cfg.warmup_iters; ++s) {
        const double lr = lr_at(s, 0, cfg);
        CHECK(lr >= prev);
        prev = lr;
    }
    for (std::int64_t e = 1; e < cfg.total_epochs; ++e) {
        const double before = lr_at(5000, e - 1, cfg);
        const double after = lr_at(5000, e, cfg);
        const bool boundary = e == 34 || e == 40;
        if (boundary) {
            CHECK(after == doctest::Approx(before * 0.1).epsilon(1e-14));
        } else {
            CHECK(after == before);
        }
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.milestones = {40, 34};
    CHECK_THROWS_AS(c.validate(), InvalidSpec);
    c.milestones = {34, 42};
    CHECK_THROWS_AS(c.validate(), InvalidSpec);
    c = {};
    c.warmup_iters = -1;
    CHECK_THROWS_AS(c.validate(), InvalidSpec);
}

TEST_CASE("adam solves a one-parameter quadratic") {
    nn::ParamStore store;
    store.add({"w", Tensor::from_list({0.0}, {1}, DType::f64)});
    Adam opt;
    for (int i = 0; i < 200; ++i) {
        Tape tape;
        auto pm = store.bind(tape);
        auto d = ops::sub(pm.at("w"), Tensor::from_list({3.0}, {1}, DType::f64));
        auto loss = ops::sum(ops::mul(d, d));
        auto g = tape.backward(loss);
        opt.step(store, {{"w", g.of(pm.at("w"))}}, 0.1);
    }
    CHECK(std::abs(store.at("w").value.item() - 3.0) <= 1e-4);
    CHECK(opt.steps() == 200);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    pose::PoseModelConfig mc = tiny_run("unused").model_for(stem::StemVariant::S4_Ours);
    pose::PoseModel model(mc, 3);
    auto before = model.params().params();
    synth::Dataset data(synth::SceneSpec{.height = 32, .width = 32}, 2);
    TrainConfig cfg;
    cfg.base_lr = 0.0;
    Adam opt;
    auto r = train_step(model, data.batch({0, 1}), opt, cfg, 0);
    CHECK(std::isfinite(r.loss));
    for (const auto& p : before) {
        auto a = p.value.data<float>();
        auto b = model.params().at(p.name).value.data<float>();
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
}

TEST_CASE("same seed gives the same loss sequence") {
    auto run = [] {
        pose::PoseModel model(tiny_run("unused").model_for(stem::StemVariant::S2_FpnStem), 9);
        synth::Dataset data(synth::SceneSpec{.height = 32, .width = 32, .seed = 4}, 4);
        TrainConfig cfg;
        cfg.warmup_iters = 2;
        cfg.base_lr = 1e-3;
        Adam opt;
        std::vector<double> losses;
        for (int i = 0; i < 4; ++i) losses.push_back(train_step(model, data.batch({i % 4, (i + 1) % 4}), opt, cfg, 0).loss);
        return losses;
    };
    auto a = run();
    auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-7);
    CHECK(a.back() != a.front());
}

TEST_CASE("config files") {
    std::istringstream good("# comment\ntrain.base_lr = 2e-4\n\nstem.variant = s5\ntrain.milestones = 3, 4\n"
                            "stem.backbone_widths = 8,16,32,64\nrun.dtype = f64\n");
    auto c = config::parse(good);
    CHECK(c.train.base_lr == 2e-4);
    CHECK(c.model.stem.variant == stem::StemVariant::S5_LateralCbam);
    CHECK(c.train.milestones == std::vector<std::int64_t>{3, 4});
    CHECK(c.model.stem.backbone.widths[3] == 64);
    CHECK(c.dtype == DType::f64);
    std::istringstream unknown("train.learning_rate = 1\n");
    CHECK_THROWS_AS(config::parse(unknown), ConfigError);
    std::istringstream bad("train.batch_size = eight\n");
    CHECK_THROWS_AS(config::parse(bad), ConfigError);
    std::istringstream noeq("train.batch_size 8\n");
    CHECK_THROWS_AS(config::parse(noeq), ConfigError);
    CHECK(config::known_keys().size() > 30);
    for (const char* f : {"default.cfg", "overfit.cfg"}) {
        CAPTURE(f);
        CHECK_NOTHROW(config::load(std::filesystem::path(KANFPN_CONFIG_DIR) / f).validate());
    }
}

TEST_CASE("paper reference values") {
    using stem::StemVariant;
    CHECK(paper_ap(StemVariant::S0_Baseline) == 72.5);
    CHECK(paper_ap(StemVariant::S1_CnnStem) == 73.3);
    CHECK(paper_ap(StemVariant::S2_FpnStem) == 74.0);
    CHECK(paper_ap(StemVariant::S3_BackboneCbam) == 74.1);
    CHECK(paper_ap(StemVariant::S4_Ours) == 74.5);
    CHECK(paper_ap(StemVariant::S5_LateralCbam) == 73.8);
    CHECK(paper_ap(StemVariant::S6_KagnFuse) == 74.3);
}

TEST_CASE("a smoke stage writes metrics and a loadable checkpoint") {
    const auto dir = scratch("stage");
    auto cfg = tiny_run(dir);
    auto r = run_stage(stem::StemVariant::S4_Ours, cfg);
    auto rows = lines(r.metrics);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == kMetricsHeader);
    CHECK(rows[1].rfind("s4,1,", 0) == 0);
    CHECK(r.records.size() == 1);
    CHECK(r.steps == 1);
    pose::PoseModel fresh(cfg.model_for(stem::StemVariant::S4_Ours), 99);
    CHECK_NOTHROW(nn::load_checkpoint(r.checkpoint, fresh.params()));
    CHECK(r.records[0].params == fresh.param_count());
    std::filesystem::remove_all(dir);
}

TEST_CASE("max_steps caps training") {
    const auto dir = scratch("cap");
    auto cfg = tiny_run(dir);
    cfg.data.train_size = 16;
    cfg.train.batch_size = 2;
    cfg.max_steps = 3;
    CHECK(run_stage(stem::StemVariant::S0_Baseline, cfg).steps == 3);
    std::filesystem::remove_all(dir);
}

TEST_CASE("ablation table, parameter ordering and crash isolation") {
    const auto dir = scratch("ablate");
    auto cfg = tiny_run(dir);
    // A reduction wider than the narrowest lateral breaks the lateral-CBAM stage only.
    cfg.model.stem.cbam_reduction = 16;
    using stem::StemVariant;
    auto rows = run_ablation({StemVariant::S0_Baseline, StemVariant::S1_CnnStem, StemVariant::S2_FpnStem,
                              StemVariant::S5_LateralCbam},
                             cfg, 2);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].stage == "s0");
    CHECK(rows[3].stage == "s5");
    CHECK(rows[0].status == "ok");
    CHECK(rows[2].status == "ok");
    CHECK(rows[3].status != "ok");
    CHECK(rows[0].params < rows[1].params);
    CHECK(rows[2].paper_ap == 74.0);
    auto table = lines(dir / "ablation.csv");
    REQUIRE(table.size() == 5);
    CHECK(table[0] == "stage,label,paper_ap,pck05,pck10,params,status");
    CHECK(std::filesystem::exists(dir / "s2" / "metrics.csv"));
    CHECK(lines(dir / "s2" / "metrics.csv").size() == 2);
    std::filesystem::remove_all(dir);
}
