#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "kanfpn/autodiff.hpp"
#include "kanfpn/ops.hpp"
#include "kanfpn/tnsr_io.hpp"

using namespace kanfpn;
using testutil::randn;

TEST_CASE("tensor construction validates shape") {
    CHECK_THROWS_AS(Tensor::from_vector({1, 2, 3}, {2, 2}), ShapeMismatch);
    CHECK_THROWS_AS(Tensor::from_vector({}, {}), ShapeMismatch);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeMismatch);
    auto t = Tensor::from_list({1, 2, 3, 4, 5, 6}, {2, 3}, DType::f64);
    CHECK(t.numel() == 6);
    CHECK(t.at(4) == 5.0);
    CHECK_THROWS_AS(t.item(), NotScalar);
    CHECK(Tensor::full({1}, 2.5).item() == 2.5);
}

TEST_CASE("dtype conversion and views share or copy as documented") {
    auto t = Tensor::from_list({0.1, 0.2}, {2}, DType::f64);
    auto f = t.to(DType::f32);
    CHECK(f.dtype() == DType::f32);
    CHECK(f.at(0) == doctest::Approx(0.1).epsilon(1e-7));
    auto v = t.view({1, 2});
    CHECK(v.same_storage(t));
    CHECK_THROWS_AS(t.view({3}), ShapeMismatch);
}

TEST_CASE("TNSR round trip and header layout") {
    auto t = randn({2, 3, 4}, 7, DType::f64);
    std::stringstream ss;
    write_tnsr(ss, t);
    const auto bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 3 * 8 + 24 * 8);
    CHECK(bytes.substr(0, 4) == "TNSR");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 1);  // f64
    CHECK(bytes[7] == 3);
    CHECK(bytes[8] == 2);
    auto back = read_tnsr(ss);
    CHECK(back.shape() == t.shape());
    CHECK(back.to_vector() == t.to_vector());

    std::stringstream bad("TNSX");
    CHECK_THROWS_AS(read_tnsr(bad), FormatError);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tnsr(truncated), FormatError);
}

TEST_CASE("elementwise examples") {
    auto a = Tensor::from_list({1, 2}, {2}, DType::f64);
    auto b = Tensor::from_list({3, 4}, {2}, DType::f64);
    CHECK(ops::add(a, b).to_vector() == std::vector<double>{4, 6});
    CHECK(ops::tanh(Tensor::from_list({0}, {1}, DType::f64)).item() == 0.0);
    CHECK(ops::silu(Tensor::from_list({1.0}, {1}, DType::f64)).item() ==
          doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK_THROWS_AS(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeMismatch);
    auto row = Tensor::from_list({10, 20, 30}, {1, 3}, DType::f64);
    auto m = Tensor::from_list({1, 2, 3, 4, 5, 6}, {2, 3}, DType::f64);
    CHECK(ops::add(m, row).to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
}

TEST_CASE("backward on simple graphs") {
    auto x = randn({5}, 1);
    auto w0 = randn({5}, 2);
    Tape tape;
    auto w = tape.watch(w0);
    auto root = ops::sum(ops::mul(w, x));
    auto g = tape.backward(root);
    CHECK(testutil::max_abs_diff(g.of(w), x) == 0.0);

    Tape tape2;
    auto z = tape2.watch(Tensor::zeros({3}, DType::f64));
    auto g2 = tape2.backward(ops::sum(ops::tanh(z)));
    CHECK(g2.of(z).to_vector() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward errors") {
    Tape tape;
    auto w = tape.watch(randn({3}, 1));
    CHECK_THROWS_AS(tape.backward(ops::mul(w, w)), NotScalar);
    CHECK_THROWS_AS(tape.backward(Tensor::zeros({1}, DType::f64)), NoTape);
}

TEST_CASE("gradient accumulates over reuse and unreached leaves get zeros") {
    Tape tape;
    auto a = tape.watch(Tensor::from_list({2.0}, {1}, DType::f64));
    auto unused = tape.watch(Tensor::from_list({1.0, 1.0}, {2}, DType::f64));
    auto root = ops::add(ops::mul(a, a), a);  // a^2 + a
    auto g = tape.backward(root);
    CHECK(g.of(a).item() == doctest::Approx(5.0));
    CHECK(g.of(unused).to_vector() == std::vector<double>{0, 0});
}

TEST_CASE("NoGradGuard suppresses recording") {
    Tape tape;
    auto a = tape.watch(randn({3}, 1));
    const auto before = tape.size();
    {
        NoGradGuard guard;
        auto b = ops::mul(a, a);
        CHECK_FALSE(b.tracked());
    }
    CHECK(tape.size() == before);
}

TEST_CASE("finite_diff_grad examples") {
    auto x = randn({4}, 3);
    auto ones = finite_diff_grad([](const Tensor& t) { return ops::sum(t).item(); }, x);
    for (double v : ones.to_vector()) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    }
    auto g = finite_diff_grad([](const Tensor& t) { return ops::sum(ops::mul(t, t)).item(); },
                              Tensor::from_list({3.0}, {1}, DType::f64));
    CHECK(std::abs(g.item() - 6.0) <= 1e-8);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), InvalidSpec);
}

TEST_CASE("finite differences match backward on a 3-layer MLP") {
    auto x = randn({4, 6}, 10);
    auto w1 = randn({6, 8}, 11, DType::f64, 0.4);
    auto w2 = randn({8, 8}, 12, DType::f64, 0.4);
    auto w3 = randn({8, 3}, 13, DType::f64, 0.4);
    auto r = randn({4, 3}, 14);
    auto f = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
        auto h = ops::tanh(ops::matmul(x, a));
        h = ops::silu(ops::matmul(h, b));
        return ops::sum(ops::mul(ops::matmul(h, c), r));
    };
    Tape tape;
    auto a = tape.watch(w1);
    auto b = tape.watch(w2);
    auto c = tape.watch(w3);
    auto g = tape.backward(f(a, b, c));
    auto num = finite_diff_grad([&](const Tensor& t) { return f(t, w2, w3).item(); }, w1);
    auto an = g.of(a).to_vector();
    auto nv = num.to_vector();
    double worst = 0.0;
    for (std::size_t i = 0; i < an.size(); ++i) {
        worst = std::max(worst, std::abs(an[i] - nv[i]) / std::max({std::abs(an[i]), std::abs(nv[i]), 1e-8}));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("forward replay is bitwise deterministic") {
    auto run = [] {
        auto x = randn({2, 3, 8, 8}, 5, DType::f32);
        auto w = randn({4, 3, 3, 3}, 6, DType::f32);
        return ops::silu(ops::conv2d(x, w, {}, 2, 1)).to_vector();
    };
    CHECK(run() == run());
}
