#include "kanfpn/tensor.hpp"

#include <sstream>

namespace kanfpn {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

const char* to_string(DType dtype) {
    return dtype == DType::f32 ? "f32" : "f64";
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
    return full(std::move(shape), 0.0, dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    const auto n = static_cast<std::size_t>(numel_of(shape));
    return dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        return from_buffer(std::vector<T>(n, static_cast<T>(value)), std::move(shape));
    });
}

Tensor Tensor::from_vector(const std::vector<double>& values, Shape shape, DType dtype) {
    return dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        return from_buffer(std::vector<T>(values.begin(), values.end()), std::move(shape));
    });
}

Tensor Tensor::from_list(std::initializer_list<double> values, Shape shape, DType dtype) {
    return from_vector(std::vector<double>(values), std::move(shape), dtype);
}

DType Tensor::dtype() const {
    if (!storage_) {
        throw Error("dtype of undefined tensor");
    }
    return storage_->index() == 0 ? DType::f32 : DType::f64;
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(dtype(), [&](auto tag) {
        auto d = data<decltype(tag)>();
        return std::vector<double>(d.begin(), d.end());
    });
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= numel()) {
        throw Error("flat index " + std::to_string(flat_index) + " out of range for " +
                    to_string(shape_));
    }
    return dispatch(dtype(), [&](auto tag) {
        return static_cast<double>(data<decltype(tag)>()[static_cast<std::size_t>(flat_index)]);
    });
}

double Tensor::item() const {
    if (numel() != 1) {
        throw NotScalar("item() on tensor of shape " + to_string(shape_));
    }
    return at(0);
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) {
        return detach();
    }
    return dispatch(dtype(), [&](auto src_tag) {
        auto src = data<decltype(src_tag)>();
        return dispatch(target, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            return from_buffer(std::vector<D>(src.begin(), src.end()), shape_);
        });
    });
}

Tensor Tensor::detach() const {
    return Tensor(storage_, shape_);
}

Tensor Tensor::view(Shape shape) const {
    if (shape.empty() || numel_of(shape) != numel()) {
        throw ShapeMismatch("cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    return Tensor(storage_, std::move(shape));
}

} // namespace kanfpn
