#include <doctest.h>

#include "helpers.hpp"
#include "kanfpn/autodiff.hpp"
#include "kanfpn/gradcheck.hpp"
#include "kanfpn/ops.hpp"

using namespace kanfpn;

TEST_CASE("scope registry") {
    CHECK_THROWS_AS(gradcheck::find_scope("nope"), UnknownScope);
    for (const char* name : {"conv2d", "conv_transpose2d", "norm2d", "mhsa", "transformer_block", "channel_attention",
                             "spatial_attention", "cbam", "gram_basis", "kagn_conv2d_d0", "kagn_conv2d_d1", "kagn_conv2d",
                             "bottleneck_kagn_conv2d", "fpn_s2", "fpn_s4", "fpn_s5", "fpn_s6", "s4"}) {
        CAPTURE(name);
        CHECK_NOTHROW(gradcheck::find_scope(name));
    }
    for (const auto& s : gradcheck::scopes()) {
        if (s.kind == "op") CHECK(s.tolerance <= 1e-6);
        CHECK(s.tolerance <= 1e-5);
    }
}

TEST_CASE("representative scopes pass") {
    for (const char* name : {"conv2d", "kagn_conv2d", "cbam", "mhsa"}) {
        auto r = gradcheck::run(name, 1);
        CAPTURE(name);
        CHECK(r.passed());
        CHECK(r.max_rel_err <= 1e-6);
        CHECK_FALSE(r.groups.empty());
    }
}

TEST_CASE("a wrong backward rule is caught") {
    gradcheck::Problem p;
    p.inputs.push_back({"x", testutil::randn({3, 4}, 2)});
    p.loss = [](const nn::ParamMap&, const std::vector<Tensor>& in) {
        const auto& x = in[0];
        // Forward x^2 with a backward rule that forgets the factor 2.
        auto sq = record_op(ops::mul(x.detach(), x.detach()), {x}, [x](const Tensor& g) {
            return std::vector<Tensor>{ops::mul(g, x.detach())};
        });
        return ops::sum(sq);
    };
    auto bad = gradcheck::check("bad", p, 0, 1e-6);
    CHECK_FALSE(bad.passed());
    CHECK(bad.max_rel_err > 0.4);

    p.loss = [](const nn::ParamMap&, const std::vector<Tensor>& in) { return ops::sum(ops::mul(in[0], in[0])); };
    CHECK(gradcheck::check("good", p, 0, 1e-6).passed());
}
