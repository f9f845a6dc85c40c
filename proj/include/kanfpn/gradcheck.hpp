#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kanfpn/nn.hpp"

namespace kanfpn::gradcheck {

/// A scalar-valued f64 problem: parameters, extra differentiable inputs and a
/// loss built from both.
struct Problem {
    nn::ParamStore params;
    std::vector<std::pair<std::string, Tensor>> inputs;
    std::function<Tensor(const nn::ParamMap& params, const std::vector<Tensor>& inputs)> loss;
};

struct GroupReport {
    std::string name;
    std::int64_t checked = 0;
    std::int64_t refined = 0;  // coordinates re-measured at h / 4
    double max_rel_err = 0.0;
};

struct Report {
    std::string scope;
    std::uint64_t seed = 0;
    double tolerance = 0.0;
    double max_rel_err = 0.0;
    std::vector<GroupReport> groups;

    bool passed() const { return max_rel_err <= tolerance; }
};

struct Options {
    double h = 1e-5;
    /// Coordinates probed per tensor in addition to its largest-gradient entry.
    std::int64_t samples = 12;
};

/// Compares reverse-mode gradients with central differences on a sample of
/// coordinates. Error per coordinate:
///   |a - n| / max(|a|, |n|, 1e-2 * g_tensor, 1e-3 * g_all)
/// where g_tensor and g_all are the largest analytic magnitudes in the tensor
/// and across the whole problem. The floors keep entries whose true gradient
/// is zero (e.g. a bias followed by normalization) from dividing round-off
/// noise by round-off noise. A coordinate above tolerance is re-measured once
/// at h / 4 and keeps the smaller error.
Report check(const std::string& scope, const Problem& problem, std::uint64_t seed,
             double tolerance, const Options& opts = {});

struct Scope {
    std::string name;
    std::string kind;  // "op", "layer" or "stage"
    double tolerance = 1e-6;
    std::function<Problem(std::uint64_t seed)> build;
};

const std::vector<Scope>& scopes();
/// Throws UnknownScope.
const Scope& find_scope(const std::string& name);
Report run(const std::string& name, std::uint64_t seed, const Options& opts = {});

} // namespace kanfpn::gradcheck
