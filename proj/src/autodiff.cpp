#include "kanfpn/autodiff.hpp"

#include <atomic>

namespace kanfpn {

namespace {

thread_local Tape* t_active = nullptr;
std::atomic<std::uint64_t> g_next_uid{1};

template <class T>
Tensor add_same_shape(const Tensor& a, const Tensor& b) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return Tensor::from_buffer(std::move(out), a.shape());
}

} // namespace

Tensor Gradients::of(const Tensor& t) const {
    if (!t.node().valid() || t.node().tape_uid != tape_uid_) {
        throw NoTape("tensor is not tracked by the tape that produced these gradients");
    }
    const auto id = static_cast<std::size_t>(t.node().id);
    if (grads_[id].defined()) {
        return grads_[id];
    }
    return Tensor::zeros(shapes_[id], dtypes_[id]);
}

bool Gradients::has(const Tensor& t) const {
    return t.node().valid() && t.node().tape_uid == tape_uid_ &&
           grads_[static_cast<std::size_t>(t.node().id)].defined();
}

Tape::Tape() : uid_(g_next_uid.fetch_add(1)), previous_(t_active) {
    t_active = this;
}

Tape::~Tape() {
    t_active = previous_;
}

Tape* Tape::active() {
    return t_active;
}

bool Tape::owns(const Tensor& t) const {
    return t.node().valid() && t.node().tape_uid == uid_;
}

Tensor Tape::watch(const Tensor& leaf) {
    Tensor out = leaf.detach();
    out.node_ = NodeRef{uid_, static_cast<std::int64_t>(nodes_.size())};
    nodes_.push_back(Node{{}, {}, leaf.shape(), leaf.dtype()});
    return out;
}

Tensor Tape::record(Tensor out, const std::vector<Tensor>& inputs, BackwardFn fn) {
    if (!enabled_) {
        return out;
    }
    Node node;
    bool any = false;
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.defined() && owns(in)) {
            node.inputs.push_back(in.node().id);
            any = true;
        } else {
            node.inputs.push_back(-1);
        }
    }
    if (!any) {
        return out;
    }
    node.fn = std::move(fn);
    node.shape = out.shape();
    node.dtype = out.dtype();
    out.node_ = NodeRef{uid_, static_cast<std::int64_t>(nodes_.size())};
    nodes_.push_back(std::move(node));
    return out;
}

Gradients Tape::backward(const Tensor& root) {
    if (!owns(root)) {
        throw NoTape("backward root is not tracked by this tape");
    }
    if (root.shape() != Shape{1}) {
        throw NotScalar("backward root must have shape [1], got " + to_string(root.shape()));
    }

    Gradients result;
    result.tape_uid_ = uid_;
    result.grads_.resize(nodes_.size());
    result.shapes_.reserve(nodes_.size());
    result.dtypes_.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        result.shapes_.push_back(n.shape);
        result.dtypes_.push_back(n.dtype);
    }

    NoGradGuard no_grad;
    auto& grads = result.grads_;
    grads[static_cast<std::size_t>(root.node().id)] = Tensor::full({1}, 1.0, root.dtype());
    for (auto id = root.node().id; id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        const Tensor& g = grads[static_cast<std::size_t>(id)];
        if (!g.defined() || !node.fn) {
            continue;
        }
        auto input_grads = node.fn(g);
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            const auto src = node.inputs[i];
            if (src < 0 || i >= input_grads.size() || !input_grads[i].defined()) {
                continue;
            }
            auto& slot = grads[static_cast<std::size_t>(src)];
            if (input_grads[i].shape() != nodes_[static_cast<std::size_t>(src)].shape) {
                throw ShapeMismatch("internal: gradient shape " + to_string(input_grads[i].shape()) +
                                    " for node of shape " +
                                    to_string(nodes_[static_cast<std::size_t>(src)].shape));
            }
            if (!slot.defined()) {
                slot = input_grads[i].detach();
            } else {
                slot = dispatch(slot.dtype(), [&](auto tag) {
                    return add_same_shape<decltype(tag)>(slot, input_grads[i]);
                });
            }
        }
    }
    // The tape is spent: drop closures and the tensors they captured.
    for (auto& node : nodes_) {
        node.fn = nullptr;
    }
    return result;
}

NoGradGuard::NoGradGuard() : tape_(Tape::active()), was_enabled_(tape_ ? tape_->enabled_ : false) {
    if (tape_) {
        tape_->enabled_ = false;
    }
}

NoGradGuard::~NoGradGuard() {
    if (tape_) {
        tape_->enabled_ = was_enabled_;
    }
}

Tensor record_op(Tensor out, const std::vector<Tensor>& inputs, BackwardFn fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        return out;
    }
    return tape->record(std::move(out), inputs, std::move(fn));
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) {
        throw InvalidSpec("finite difference step must be positive");
    }
    NoGradGuard no_grad;
    auto base = x.to_vector();
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto probe = base;
        probe[i] = base[i] + h;
        const double fp = f(Tensor::from_vector(probe, x.shape(), DType::f64));
        probe[i] = base[i] - h;
        const double fm = f(Tensor::from_vector(probe, x.shape(), DType::f64));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor::from_vector(grad, x.shape(), DType::f64);
}

} // namespace kanfpn
