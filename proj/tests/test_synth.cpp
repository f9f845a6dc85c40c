#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "helpers.hpp"
#include "kanfpn/synth.hpp"
#include "kanfpn/tnsr_io.hpp"

using namespace kanfpn;
using namespace kanfpn::synth;

TEST_CASE("spec validation") {
    SceneSpec s;
    s.scale_min = 0.8;
    s.scale_max = 0.5;
    CHECK_THROWS_AS(s.validate(), InvalidSpec);
    SceneSpec n;
    n.noise = -1;
    CHECK_THROWS_AS(n.validate(), InvalidSpec);
    CHECK_THROWS_AS(generate(SceneSpec{}, -1), InvalidSpec);
}

TEST_CASE("samples are determined by seed and index") {
    SceneSpec spec;
    spec.seed = 5;
    auto a = generate(spec, 3);
    auto b = generate(spec, 3);
    auto av = a.image.data<float>();
    auto bv = b.image.data<float>();
    CHECK(std::equal(av.begin(), av.end(), bv.begin(), bv.end()));
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        CHECK(a.keypoints[k].x == b.keypoints[k].x);
        CHECK(a.keypoints[k].y == b.keypoints[k].y);
    }
    CHECK(a.image.to_vector() != generate(spec, 4).image.to_vector());
    spec.seed = 6;
    CHECK(a.image.to_vector() != generate(spec, 3).image.to_vector());
}

TEST_CASE("image range, shape and keypoint bounds") {
    SceneSpec spec;
    spec.width = 48;
    for (std::int64_t i = 0; i < 50; ++i) {
        auto s = generate(spec, i);
        CHECK(s.image.shape() == Shape{3, 64, 48});
        CHECK(s.image.dtype() == DType::f32);
        for (float v : s.image.data<float>()) CHECK((v >= 0.0f && v <= 1.0f));
        REQUIRE(s.keypoints.size() == kNumKeypoints);
        for (const auto& k : s.keypoints) {
            CHECK(k.visible);
            CHECK((k.x >= 0 && k.x <= 47 && k.y >= 0 && k.y <= 63));
        }
    }
}

TEST_CASE("centered unrotated figures follow the affine formula") {
    SceneSpec spec;
    spec.centered = true;
    spec.rotation_deg = 0;
    spec.scale_min = spec.scale_max = 0.6;
    auto s = generate(spec, 0);
    const auto& canon = canonical_skeleton();
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        CHECK(s.keypoints[k].x == doctest::Approx(31.5 + 0.6 * 64 * canon[k][0]).epsilon(1e-12));
        CHECK(s.keypoints[k].y == doctest::Approx(31.5 + 0.6 * 64 * canon[k][1]).epsilon(1e-12));
    }
    CHECK(std::abs(canon[7][1] - canon[0][1]) == 1.0);

    // Rotation about the centre preserves distances to it.
    auto r = place_skeleton(0.5, std::numbers::pi / 6, 10, 20, 64);
    auto u = place_skeleton(0.5, 0, 10, 20, 64);
    for (std::size_t k = 0; k < r.size(); ++k) {
        CHECK(std::hypot(r[k][0] - 10, r[k][1] - 20) == doctest::Approx(std::hypot(u[k][0] - 10, u[k][1] - 20)));
    }
}

TEST_CASE("joint discs sit on the stored keypoints") {
    SceneSpec spec;
    spec.noise = 0;
    spec.rotation_deg = 0;
    spec.scale_min = spec.scale_max = 0.7;
    spec.centered = true;
    auto s = generate(spec, 0);
    auto img = s.image.to_vector();
    const std::int64_t H = 64, W = 64;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        // The pixel nearest to the keypoint carries the disc colour, and the
        // colour-matched region is centred on the keypoint.
        const auto ci = static_cast<std::int64_t>(std::lround(s.keypoints[k].y));
        const auto cj = static_cast<std::int64_t>(std::lround(s.keypoints[k].x));
        std::array<double, 3> col{};
        for (std::int64_t ch = 0; ch < 3; ++ch) col[static_cast<std::size_t>(ch)] = img[static_cast<std::size_t>((ch * H + ci) * W + cj)];
        double sx = 0, sy = 0, n = 0;
        for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j) {
                double d = 0;
                for (std::int64_t ch = 0; ch < 3; ++ch)
                    d = std::max(d, std::abs(img[static_cast<std::size_t>((ch * H + i) * W + j)] - col[static_cast<std::size_t>(ch)]));
                if (d < 1e-6 && std::hypot(i - ci, j - cj) < 8) {
                    sx += static_cast<double>(j);
                    sy += static_cast<double>(i);
                    n += 1;
                }
            }
        CAPTURE(k);
        REQUIRE(n > 0);
        CHECK(std::hypot(sx / n - s.keypoints[k].x, sy / n - s.keypoints[k].y) <= 0.5);
    }
}

TEST_CASE("scale distribution over 1000 samples") {
    SceneSpec spec;
    const double span = spec.scale_max - spec.scale_min;
    std::array<int, 10> deciles{};
    double lo = 1, hi = 0;
    bool small = false, large = false;
    for (std::int64_t i = 0; i < 1000; ++i) {
        auto s = generate(spec, i);
        lo = std::min(lo, s.scale);
        hi = std::max(hi, s.scale);
        deciles[static_cast<std::size_t>(std::min(9.0, (s.scale - spec.scale_min) / span * 10))]++;
        const double head_to_ankle = std::hypot(s.keypoints[6].x / 2 + s.keypoints[7].x / 2 - s.keypoints[0].x,
                                                s.keypoints[6].y / 2 + s.keypoints[7].y / 2 - s.keypoints[0].y);
        small = small || head_to_ankle < 16.0;
        large = large || head_to_ankle > 32.0;
    }
    CHECK(lo >= spec.scale_min);
    CHECK(hi <= spec.scale_max);
    CHECK(deciles.front() > 0);
    CHECK(deciles.back() > 0);
    CHECK(small);
    CHECK(large);
}

TEST_CASE("impossible placement fails loudly") {
    SceneSpec spec;
    spec.scale_min = 1.5;
    spec.scale_max = 1.6;
    CHECK_THROWS_AS(generate(spec, 0), PlacementFailure);
}

TEST_CASE("splits and datasets") {
    auto sp = split(20, 5);
    CHECK(sp.train.size() == 15);
    CHECK(sp.eval.size() == 5);
    std::set<std::int64_t> all(sp.train.begin(), sp.train.end());
    for (auto i : sp.eval) CHECK(all.insert(i).second);
    CHECK(all.size() == 20);
    CHECK(*all.rbegin() == 19);
    CHECK_THROWS_AS(split(4, 5), InvalidSpec);

    Dataset d(SceneSpec{}, 16);
    std::set<std::vector<double>> images;
    for (std::int64_t i = 0; i < 16; ++i) images.insert(d.at(i).image.to_vector());
    CHECK(images.size() == 16);
    CHECK_THROWS_AS(d.at(16), InvalidSpec);
    auto b = d.batch({3, 1});
    CHECK(b.images.shape() == Shape{2, 3, 64, 64});
    CHECK(b.keypoints.size() == 2);
    auto one = d.at(1).image.to_vector();
    auto bv = b.images.to_vector();
    CHECK(std::equal(one.begin(), one.end(), bv.begin() + 3 * 64 * 64));

    Dataset shifted(SceneSpec{}, 4, 12);
    CHECK(shifted.at(0).image.to_vector() == d.at(12).image.to_vector());
}

TEST_CASE("export layout") {
    const auto dir = std::filesystem::temp_directory_path() / "kanfpn_test_export";
    std::filesystem::remove_all(dir);
    SceneSpec spec;
    export_samples(spec, dir, "eval", {2, 5});
    CHECK(std::filesystem::exists(dir / "eval" / "2.tnsr"));
    CHECK(std::filesystem::exists(dir / "eval" / "5.csv"));
    auto img = load_tnsr(dir / "eval" / "5.tnsr");
    CHECK(img.to_vector() == generate(spec, 5).image.to_vector());
    std::ifstream csv(dir / "eval" / "5.csv");
    std::string header, first;
    std::getline(csv, header);
    std::getline(csv, first);
    CHECK(header == "k,name,x,y,visible");
    CHECK(first.rfind("0,head,", 0) == 0);
    std::filesystem::remove_all(dir);
}

namespace {

std::string run_fingerprint(const std::filesystem::path& cfg, const std::filesystem::path& out) {
    const std::string cmd = std::string(KANFPN_CLI) + " export-data --config " + cfg.string() + " --out " + out.string();
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string text;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) text += buf;
    REQUIRE(pclose(pipe) == 0);
    const auto at = text.find("eval fingerprint ");
    REQUIRE(at != std::string::npos);
    return text.substr(at + 17, 16);
}

} // namespace

TEST_CASE("separate processes agree on the eval set") {
    const auto dir = std::filesystem::temp_directory_path() / "kanfpn_test_xproc";
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfg(dir / "data.cfg");
        cfg << "data.seed = 17\ndata.train_size = 4\ndata.eval_size = 6\n";
    }
    const auto a = run_fingerprint(dir / "data.cfg", dir / "a");
    const auto b = run_fingerprint(dir / "data.cfg", dir / "b");
    CHECK(a == b);
    SceneSpec spec;
    spec.seed = 17;
    char local[17];
    std::snprintf(local, sizeof local, "%016llx", static_cast<unsigned long long>(fingerprint(spec, split(10, 6).eval)));
    CHECK(a == std::string(local));
    for (int i = 4; i < 10; ++i) {
        auto x = load_tnsr(dir / "a" / "eval" / (std::to_string(i) + ".tnsr")).to_vector();
        CHECK(x == load_tnsr(dir / "b" / "eval" / (std::to_string(i) + ".tnsr")).to_vector());
    }
    std::filesystem::remove_all(dir);
}
