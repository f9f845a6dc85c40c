#include <doctest.h>

#include "helpers.hpp"
#include "kanfpn/autodiff.hpp"
#include "kanfpn/ops.hpp"

using namespace kanfpn;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

// Direct seven-loop cross-correlation.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t s,
                                std::int64_t p, std::int64_t g, Shape& out_shape) {
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const auto cg = C / g, og = O / g;
    const auto Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
    out_shape = {B, O, Ho, Wo};
    const auto xv = x.to_vector(), wv = w.to_vector();
    const auto bv = bias.defined() ? bias.to_vector() : std::vector<double>(static_cast<std::size_t>(O), 0.0);
    std::vector<double> y(static_cast<std::size_t>(B * O * Ho * Wo));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t i = 0; i < Ho; ++i)
                for (std::int64_t j = 0; j < Wo; ++j) {
                    double acc = bv[static_cast<std::size_t>(o)];
                    const auto grp = o / og;
                    for (std::int64_t c = 0; c < cg; ++c)
                        for (std::int64_t u = 0; u < kh; ++u)
                            for (std::int64_t v = 0; v < kw; ++v) {
                                const auto yi = i * s - p + u, xj = j * s - p + v;
                                if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                                acc += xv[static_cast<std::size_t>(((b * C + grp * cg + c) * H + yi) * W + xj)] *
                                       wv[static_cast<std::size_t>(((o * cg + c) * kh + u) * kw + v)];
                            }
                    y[static_cast<std::size_t>(((b * O + o) * Ho + i) * Wo + j)] = acc;
                }
    return y;
}

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, std::int64_t m,
                                  std::int64_t k, std::int64_t n) {
    std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t t = 0; t < k; ++t)
                c[static_cast<std::size_t>(i * n + j)] +=
                    a[static_cast<std::size_t>(i * k + t)] * b[static_cast<std::size_t>(t * n + j)];
    return c;
}

} // namespace

TEST_CASE("conv2d hand examples") {
    auto x = Tensor::from_list({1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 1, 3, 3}, DType::f64);
    auto y = ops::conv2d(x, Tensor::from_list({2}, {1, 1, 1, 1}, DType::f64));
    CHECK(y.to_vector() == std::vector<double>{2, 4, 6, 8, 10, 12, 14, 16, 18});
    auto ones = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64);
    CHECK(ops::conv2d(ones, ones).to_vector() == std::vector<double>{4});
    CHECK_THROWS_AS(ops::conv2d(ones, Tensor::full({1, 1, 3, 3}, 1.0, DType::f64)), InvalidGeometry);
    CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 3, 4, 4}, DType::f64), Tensor::zeros({2, 3, 1, 1}, DType::f64), {}, 1, 0, 2),
                    ShapeMismatch);
}

TEST_CASE("conv2d matches the loop oracle over stride, padding and groups") {
    std::uint64_t seed = 100;
    for (std::int64_t s : {1, 2})
        for (std::int64_t p : {0, 1})
            for (std::int64_t g : {1, 2}) {
                CAPTURE(s);
                CAPTURE(p);
                CAPTURE(g);
                auto x = randn({2, 4, 8, 7}, ++seed);
                auto w = randn({6, 4 / g, 3, 3}, ++seed);
                auto b = randn({6}, ++seed);
                Shape shape;
                auto ref = conv_oracle(x, w, b, s, p, g, shape);
                auto y = ops::conv2d(x, w, b, s, p, g);
                CHECK(y.shape() == shape);
                CHECK(max_abs_diff(y.to_vector(), ref) <= 1e-10);
            }
    auto x = randn({2, 3, 8, 8}, 1);
    auto w = randn({4, 3, 3, 3}, 2);
    Shape shape;
    auto ref = conv_oracle(x, w, {}, 2, 1, 1, shape);
    CHECK(max_abs_diff(ops::conv2d(x, w, {}, 2, 1).to_vector(), ref) <= 1e-10);
}

TEST_CASE("matmul examples and triple-loop oracle") {
    auto eye = Tensor::from_list({1, 0, 0, 1}, {2, 2}, DType::f64);
    auto m = Tensor::from_list({1, 2, 3, 4}, {2, 2}, DType::f64);
    CHECK(ops::matmul(eye, m).to_vector() == m.to_vector());
    CHECK(ops::matmul(Tensor::from_list({1, 2}, {1, 2}, DType::f64), Tensor::from_list({3, 4}, {2, 1}, DType::f64))
              .to_vector() == std::vector<double>{11});
    auto a = randn({3, 4}, 3);
    auto b = randn({4, 2}, 4);
    CHECK(max_abs_diff(ops::matmul(a, b).to_vector(), matmul_oracle(a.to_vector(), b.to_vector(), 3, 4, 2)) <= 1e-12);
    auto big_a = randn({17, 33}, 5);
    auto big_b = randn({33, 9}, 6);
    CHECK(max_abs_diff(ops::matmul(big_a, big_b).to_vector(),
                       matmul_oracle(big_a.to_vector(), big_b.to_vector(), 17, 33, 9)) <= 1e-12);
    CHECK_THROWS_AS(ops::matmul(a, a), ShapeMismatch);
}

TEST_CASE("conv_transpose2d examples and transposed-matrix oracle") {
    auto one = Tensor::from_list({1}, {1, 1, 1, 1}, DType::f64);
    auto k = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64);
    CHECK(ops::conv_transpose2d(one, k, 2, 0).to_vector() == std::vector<double>{1, 1, 1, 1});
    CHECK(testutil::max_abs(ops::conv_transpose2d(Tensor::zeros({1, 2, 3, 3}, DType::f64), randn({2, 3, 4, 4}, 1), 2, 1)) == 0.0);

    // Build the dense matrix M of conv2d (out = M in) column by column, then
    // the transposed convolution is M^T applied to its input.
    const std::int64_t ci = 2, co = 3, H = 4, W = 5, s = 2, p = 1, kk = 4;
    auto w = randn({ci, co, kk, kk}, 9);  // conv_transpose layout [Ci,Co,k,k]
    const Shape big{1, co, (H - 1) * s - 2 * p + kk, (W - 1) * s - 2 * p + kk};
    const auto n_in = numel_of(big);
    const auto n_out = ci * H * W;
    std::vector<double> M(static_cast<std::size_t>(n_out * n_in));
    for (std::int64_t col = 0; col < n_in; ++col) {
        std::vector<double> e(static_cast<std::size_t>(n_in), 0.0);
        e[static_cast<std::size_t>(col)] = 1.0;
        auto y = ops::conv2d(Tensor::from_vector(e, big, DType::f64), w, {}, s, p).to_vector();
        REQUIRE(static_cast<std::int64_t>(y.size()) == n_out);
        for (std::int64_t r = 0; r < n_out; ++r) {
            M[static_cast<std::size_t>(r * n_in + col)] = y[static_cast<std::size_t>(r)];
        }
    }
    auto x = randn({1, ci, H, W}, 10);
    const auto xv = x.to_vector();
    std::vector<double> ref(static_cast<std::size_t>(n_in), 0.0);
    for (std::int64_t r = 0; r < n_out; ++r)
        for (std::int64_t c = 0; c < n_in; ++c)
            ref[static_cast<std::size_t>(c)] += M[static_cast<std::size_t>(r * n_in + c)] * xv[static_cast<std::size_t>(r)];
    auto y = ops::conv_transpose2d(x, w, s, p);
    CHECK(y.shape() == big);
    CHECK(max_abs_diff(y.to_vector(), ref) <= 1e-10);
}

TEST_CASE("pooling examples") {
    auto x = Tensor::from_list({1, 2, 3, 4}, {1, 1, 2, 2}, DType::f64);
    CHECK(ops::pool2d(ops::Pool::global_avg, x).item() == 2.5);
    CHECK(ops::pool2d(ops::Pool::global_max, x).item() == 4.0);
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = i;
    auto r = Tensor::from_vector(ramp, {1, 1, 4, 4}, DType::f64);
    CHECK(ops::pool2d(ops::Pool::max, r, 2, 2).to_vector() == std::vector<double>{5, 7, 13, 15});
    CHECK_THROWS_AS(ops::pool2d(ops::Pool::max, r, 5, 1), InvalidGeometry);
}

TEST_CASE("upsample examples and avg-pool inverse") {
    CHECK(ops::upsample_nearest2x(Tensor::from_list({1}, {1, 1, 1, 1}, DType::f64)).to_vector() ==
          std::vector<double>{1, 1, 1, 1});
    auto x = Tensor::from_list({1, 2, 3, 4}, {1, 1, 2, 2}, DType::f64);
    CHECK(ops::upsample_nearest2x(x).to_vector() ==
          std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    auto r = randn({2, 3, 5, 4}, 8);
    CHECK(ops::sum(ops::upsample_nearest2x(r)).item() == doctest::Approx(4.0 * ops::sum(r).item()).epsilon(1e-12));
    for (auto dt : {DType::f32, DType::f64}) {
        auto z = randn({2, 3, 5, 4}, 9, dt);
        auto back = ops::pool2d(ops::Pool::avg, ops::upsample_nearest2x(z), 2, 2);
        CHECK(back.to_vector() == z.to_vector());
    }
}

TEST_CASE("norm2d examples") {
    auto c = Tensor::full({1, 2, 3, 3}, 4.0, DType::f64);
    auto g1 = Tensor::full({2}, 1.0, DType::f64);
    auto b0 = Tensor::zeros({2}, DType::f64);
    CHECK(testutil::max_abs(ops::norm2d(c, g1, b0)) == 0.0);
    auto x = randn({2, 2, 4, 5}, 3, DType::f64, 4.0);
    auto y = ops::norm2d(x, Tensor::zeros({2}, DType::f64), Tensor::full({2}, 5.0, DType::f64));
    for (double v : y.to_vector()) CHECK(v == 5.0);
    auto n = ops::norm2d(x, g1, b0).to_vector();
    for (int s = 0; s < 4; ++s) {
        double mean = 0, var = 0;
        for (int i = 0; i < 20; ++i) mean += n[static_cast<std::size_t>(s * 20 + i)];
        mean /= 20;
        for (int i = 0; i < 20; ++i) var += std::pow(n[static_cast<std::size_t>(s * 20 + i)] - mean, 2);
        var /= 20;
        CHECK(std::abs(mean) <= 1e-7);
        CHECK(std::abs(var - 1.0) <= 1e-5);
    }
    CHECK_THROWS_AS(ops::norm2d(Tensor::zeros({1, 2, 1, 1}, DType::f64), g1, b0, 0.0), DegenerateInput);
}

TEST_CASE("softmax rows sum to one") {
    auto p = ops::softmax(randn({4, 7}, 11, DType::f64, 3.0)).to_vector();
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int c = 0; c < 7; ++c) s += p[static_cast<std::size_t>(r * 7 + c)];
        CHECK(std::abs(s - 1.0) <= 1e-7);
    }
}

TEST_CASE("gram_basis values") {
    auto s = Tensor::full({1, 1, 1, 1}, 0.5, DType::f64);
    auto g = ops::gram_basis(s, 2).to_vector();
    REQUIRE(g.size() == 3);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 0.5);
    CHECK(g[2] == doctest::Approx(-0.125).epsilon(1e-15));
    auto any = randn({2, 3, 2, 2}, 2, DType::f64, 0.3);
    for (double v : ops::gram_basis(any, 0).to_vector()) CHECK(v == 1.0);
    CHECK_THROWS_AS(ops::gram_basis(Tensor::full({1, 1, 1, 1}, 1.01, DType::f64), 2), DomainViolation);
}

TEST_CASE("gram_basis matches closed-form Legendre polynomials") {
    auto closed = [](int d, double x) {
        switch (d) {
        case 0: return 1.0;
        case 1: return x;
        case 2: return (3 * x * x - 1) / 2;
        case 3: return (5 * x * x * x - 3 * x) / 2;
        case 4: return (35 * std::pow(x, 4) - 30 * x * x + 3) / 8;
        default: return (63 * std::pow(x, 5) - 70 * std::pow(x, 3) + 15 * x) / 8;
        }
    };
    std::vector<double> pts;
    for (int i = 0; i < 10; ++i) pts.push_back(-0.95 + 0.2 * i + 0.013 * i * i);
    for (double& p : pts) p = std::clamp(p, -1.0, 1.0);
    auto s = Tensor::from_vector(pts, {1, 10, 1, 1}, DType::f64);
    auto g = ops::gram_basis(s, 5).to_vector();
    double worst = 0;
    for (int d = 0; d <= 5; ++d)
        for (int c = 0; c < 10; ++c)
            worst = std::max(worst, std::abs(g[static_cast<std::size_t>(d * 10 + c)] - closed(d, pts[static_cast<std::size_t>(c)])));
    CHECK(worst <= 1e-12);
    // Three-term recurrence holds at every point.
    for (int d = 1; d < 5; ++d)
        for (int c = 0; c < 10; ++c) {
            const double x = pts[static_cast<std::size_t>(c)];
            const double lhs = (d + 1) * g[static_cast<std::size_t>((d + 1) * 10 + c)];
            const double rhs = (2 * d + 1) * x * g[static_cast<std::size_t>(d * 10 + c)] - d * g[static_cast<std::size_t>((d - 1) * 10 + c)];
            CHECK(std::abs(lhs - rhs) <= 1e-12);
        }
}

TEST_CASE("masked_mse examples") {
    auto p = randn({1, 2, 3, 3}, 4);
    auto mask = Tensor::from_list({1, 1}, {1, 2}, DType::f64);
    CHECK(ops::masked_mse(p, p, mask).item() == 0.0);

    auto target = Tensor::zeros({1, 1, 2, 2}, DType::f64);
    auto pred = Tensor::full({1, 1, 2, 2}, 0.5, DType::f64);
    CHECK(ops::masked_mse(pred, target, Tensor::from_list({1}, {1, 1}, DType::f64)).item() == doctest::Approx(0.25));

    Tape tape;
    auto w = tape.watch(randn({1, 2, 3, 3}, 5));
    auto none = Tensor::zeros({1, 2}, DType::f64);
    auto loss = ops::masked_mse(w, p, none);
    CHECK(loss.item() == 0.0);
    CHECK(testutil::max_abs(tape.backward(loss).of(w)) == 0.0);

    Tape tape2;
    auto w2 = tape2.watch(randn({1, 2, 3, 3}, 6));
    auto g = tape2.backward(ops::masked_mse(w2, p, Tensor::from_list({1, 0}, {1, 2}, DType::f64))).of(w2).to_vector();
    for (int i = 9; i < 18; ++i) CHECK(g[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("pad_crop2d pads with zeros and crops from the top-left") {
    auto x = Tensor::from_list({1, 2, 3, 4}, {1, 1, 2, 2}, DType::f64);
    CHECK(ops::pad_crop2d(x, 3, 3).to_vector() == std::vector<double>{1, 2, 0, 3, 4, 0, 0, 0, 0});
    CHECK(ops::pad_crop2d(x, 1, 2).to_vector() == std::vector<double>{1, 2});
    auto r = randn({2, 3, 5, 6}, 7);
    CHECK(ops::pad_crop2d(ops::pad_crop2d(r, 8, 8), 5, 6).to_vector() == r.to_vector());
}
