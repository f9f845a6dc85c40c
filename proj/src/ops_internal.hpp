#pragma once

#include <string>
#include <vector>

#include "kanfpn/autodiff.hpp"
#include "kanfpn/ops.hpp"

namespace kanfpn::ops::detail {

inline void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ShapeMismatch(std::string(op) + ": mixed element types " + to_string(a.dtype()) +
                            " and " + to_string(b.dtype()));
    }
}

inline void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.ndim() != rank) {
        throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got " + to_string(x.shape()));
    }
}

template <class T>
std::vector<T> copy_of(const Tensor& x) {
    auto d = x.data<T>();
    return std::vector<T>(d.begin(), d.end());
}

/// Sums `grad` (shaped like a broadcast result) down to `target`.
Tensor reduce_to_shape(const Tensor& grad, const Shape& target);

} // namespace kanfpn::ops::detail
