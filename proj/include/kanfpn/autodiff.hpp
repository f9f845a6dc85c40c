#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kanfpn/tensor.hpp"

namespace kanfpn {

/// Maps the gradient of an op's output to gradients of its inputs. Returned
/// entries line up with the recorded inputs; undefined tensors mean "no
/// contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

class Gradients {
public:
    Gradients() = default;

    /// Gradient of the root with respect to `t`. Watched leaves that the root
    /// does not depend on yield zeros.
    Tensor of(const Tensor& t) const;
    bool has(const Tensor& t) const;

private:
    friend class Tape;

    std::uint64_t tape_uid_ = 0;
    std::vector<Tensor> grads_;
    std::vector<Shape> shapes_;
    std::vector<DType> dtypes_;
};

/// Define-by-run recorder. Constructing a tape makes it the active tape of the
/// calling thread until it is destroyed; ops executed while it is active and
/// fed by tracked inputs append nodes to it.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    /// Registers `leaf` as a differentiable input and returns a tracked handle
    /// sharing its buffer.
    Tensor watch(const Tensor& leaf);

    /// Reverse sweep from a [1]-shaped root. Releases the recorded closures.
    Gradients backward(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    std::uint64_t uid() const { return uid_; }

    /// Appends a node for `out` if any input is tracked by this tape and
    /// recording is enabled; otherwise returns `out` unchanged.
    Tensor record(Tensor out, const std::vector<Tensor>& inputs, BackwardFn fn);

    bool owns(const Tensor& t) const;

private:
    friend class NoGradGuard;

    struct Node {
        std::vector<std::int64_t> inputs;
        BackwardFn fn;
        Shape shape;
        DType dtype;
    };

    std::uint64_t uid_;
    Tape* previous_;
    bool enabled_ = true;
    std::vector<Node> nodes_;
};

/// Suspends recording on the active tape within a scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* tape_;
    bool was_enabled_;
};

/// Records `out` on the active tape (if any). Used by op implementations.
Tensor record_op(Tensor out, const std::vector<Tensor>& inputs, BackwardFn fn);

/// Central-difference gradient of a scalar function, computed in f64.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

} // namespace kanfpn
