#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kanfpn/error.hpp"

namespace kanfpn {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);
const char* to_string(DType dtype);

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
    if (dtype == DType::f32) {
        return fn(float{});
    }
    return fn(double{});
}

class Tape;

/// Handle to a node on a specific tape. Tensors created outside any tape, or
/// on a tape that has since been destroyed, carry an inactive handle.
struct NodeRef {
    std::uint64_t tape_uid = 0;
    std::int64_t id = -1;

    bool valid() const { return id >= 0; }
};

/// Immutable dense row-major array. Copies share the underlying buffer.
class Tensor {
public:
    using Buffer = std::variant<std::vector<float>, std::vector<double>>;

    Tensor() = default;

    static Tensor zeros(Shape shape, DType dtype = DType::f32);
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);
    static Tensor from_vector(const std::vector<double>& values, Shape shape,
                              DType dtype = DType::f32);
    static Tensor from_list(std::initializer_list<double> values, Shape shape,
                            DType dtype = DType::f32);

    template <class T>
    static Tensor from_buffer(std::vector<T> values, Shape shape);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t ndim() const { return shape_.size(); }
    std::int64_t numel() const { return numel_of(shape_); }
    DType dtype() const;

    template <class T>
    std::span<const T> data() const;

    std::vector<double> to_vector() const;
    double at(std::int64_t flat_index) const;
    /// Value of a single-element tensor.
    double item() const;

    /// Untracked copy with the requested element type.
    Tensor to(DType dtype) const;
    /// Same buffer, no tape participation.
    Tensor detach() const;
    /// Shares the buffer under a new shape with equal element count; untracked.
    Tensor view(Shape shape) const;

    const NodeRef& node() const { return node_; }
    bool tracked() const { return node_.valid(); }

    /// True when both tensors share one buffer.
    bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

private:
    friend class Tape;

    Tensor(std::shared_ptr<const Buffer> storage, Shape shape)
        : storage_(std::move(storage)), shape_(std::move(shape)) {}

    std::shared_ptr<const Buffer> storage_;
    Shape shape_;
    NodeRef node_;
};

template <class T>
Tensor Tensor::from_buffer(std::vector<T> values, Shape shape) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (shape.empty()) {
        throw ShapeMismatch("zero-dim tensors are not allowed; use shape [1]");
    }
    for (auto extent : shape) {
        if (extent < 1) {
            throw ShapeMismatch("non-positive extent in " + to_string(shape));
        }
    }
    if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
        throw ShapeMismatch("buffer of " + std::to_string(values.size()) +
                            " elements does not fill " + to_string(shape));
    }
    return Tensor(std::make_shared<const Buffer>(std::move(values)), std::move(shape));
}

template <class T>
std::span<const T> Tensor::data() const {
    if (!storage_) {
        throw Error("access to undefined tensor");
    }
    const auto* v = std::get_if<std::vector<T>>(storage_.get());
    if (v == nullptr) {
        throw Error(std::string("tensor holds ") + to_string(dtype()) +
                    ", requested other element type");
    }
    return {v->data(), v->size()};
}

} // namespace kanfpn
