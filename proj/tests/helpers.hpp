#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kanfpn/nn.hpp"
#include "kanfpn/rng.hpp"
#include "kanfpn/tensor.hpp"

namespace testutil {

using kanfpn::DType;
using kanfpn::Shape;
using kanfpn::Tensor;

inline Tensor randn(const Shape& shape, std::uint64_t seed, DType dt = DType::f64, double scale = 1.0) {
    kanfpn::SplitMix64 rng(seed);
    std::vector<double> v(static_cast<std::size_t>(kanfpn::numel_of(shape)));
    for (auto& e : v) {
        e = scale * rng.normal();
    }
    return Tensor::from_vector(v, shape, dt);
}

inline Tensor uniform(const Shape& shape, std::uint64_t seed, double lo, double hi, DType dt = DType::f64) {
    kanfpn::SplitMix64 rng(seed);
    std::vector<double> v(static_cast<std::size_t>(kanfpn::numel_of(shape)));
    for (auto& e : v) {
        e = rng.uniform(lo, hi);
    }
    return Tensor::from_vector(v, shape, dt);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        return INFINITY;
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        return INFINITY;
    }
    return max_abs_diff(a.to_vector(), b.to_vector());
}

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.to_vector()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

/// Overwrites every parameter whose name matches `pred` with zeros.
template <class Pred>
void zero_params(kanfpn::nn::ParamStore& store, Pred pred) {
    for (const auto& p : std::vector<kanfpn::nn::Param>(store.params())) {
        if (pred(p.name)) {
            store.set(p.name, Tensor::zeros(p.value.shape(), p.value.dtype()));
        }
    }
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline bool contains(const std::string& s, const std::string& part) {
    return s.find(part) != std::string::npos;
}

} // namespace testutil
