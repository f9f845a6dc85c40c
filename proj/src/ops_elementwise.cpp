#include <algorithm>
#include <cmath>
#include <numeric>

#include "ops_internal.hpp"

namespace kanfpn::ops {

using detail::require_same_dtype;

namespace {

// Strides of `shape` aligned to an output of rank `rank`, zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    const std::size_t rank = out.size();
    std::vector<std::int64_t> strides(rank, 0);
    std::int64_t stride = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t src = shape.size() - 1 - i;
        const std::size_t dst = rank - 1 - i;
        strides[dst] = shape[src] == 1 ? 0 : stride;
        stride *= shape[src];
    }
    return strides;
}

template <class T, class F>
Tensor binary_kernel(const Tensor& a, const Tensor& b, F f) {
    auto x = a.template data<T>();
    auto y = b.template data<T>();
    if (a.shape() == b.shape()) {
        std::vector<T> out(x.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = f(x[i], y[i]);
        }
        return Tensor::from_buffer(std::move(out), a.shape());
    }
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const std::size_t rank = out_shape.size();
    std::vector<T> out(static_cast<std::size_t>(numel_of(out_shape)));
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    const std::int64_t inner = out_shape[rank - 1];
    const std::int64_t ia_step = sa[rank - 1];
    const std::int64_t ib_step = sb[rank - 1];
    for (std::size_t o = 0; o < out.size(); o += static_cast<std::size_t>(inner)) {
        std::int64_t pa = ia;
        std::int64_t pb = ib;
        for (std::int64_t j = 0; j < inner; ++j) {
            out[o + static_cast<std::size_t>(j)] = f(x[static_cast<std::size_t>(pa)], y[static_cast<std::size_t>(pb)]);
            pa += ia_step;
            pb += ib_step;
        }
        // advance odometer over the outer axes
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            ++idx[ax];
            ia += sa[ax];
            ib += sb[ax];
            if (idx[ax] < out_shape[ax]) {
                break;
            }
            ia -= sa[ax] * out_shape[ax];
            ib -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return Tensor::from_buffer(std::move(out), out_shape);
}

template <class T, class F>
Tensor unary_kernel(const Tensor& a, F f) {
    auto x = a.template data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(x[i]);
    }
    return Tensor::from_buffer(std::move(out), a.shape());
}

template <class F>
Tensor unary(const Tensor& a, F f) {
    return dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return unary_kernel<T>(a, [&](T v) { return static_cast<T>(f(v)); });
    });
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, F f) {
    return dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return binary_kernel<T>(a, b, [&](T u, T v) { return static_cast<T>(f(u, v)); });
    });
}

template <class T>
T sigmoid_of(T v) {
    if (v >= T(0)) {
        return T(1) / (T(1) + std::exp(-v));
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

} // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeMismatch("cannot broadcast " + to_string(a) + " with " + to_string(b));
        }
        out[rank - 1 - i] = std::max(ea, eb);
    }
    return out;
}

Tensor detail::reduce_to_shape(const Tensor& grad, const Shape& target) {
    if (grad.shape() == target) {
        return grad;
    }
    const auto st = broadcast_strides(target, grad.shape());
    return dispatch(grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = grad.template data<T>();
        std::vector<T> out(static_cast<std::size_t>(numel_of(target)), T(0));
        const Shape& gs = grad.shape();
        const std::size_t rank = gs.size();
        std::vector<std::int64_t> idx(rank, 0);
        std::int64_t pos = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            out[static_cast<std::size_t>(pos)] += g[i];
            for (std::size_t ax = rank; ax-- > 0;) {
                ++idx[ax];
                pos += st[ax];
                if (idx[ax] < gs[ax]) {
                    break;
                }
                pos -= st[ax] * gs[ax];
                idx[ax] = 0;
            }
        }
        return Tensor::from_buffer(std::move(out), target);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "add");
    auto out = binary(a, b, [](auto u, auto v) { return u + v; });
    return record_op(std::move(out), {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g) {
        return std::vector<Tensor>{detail::reduce_to_shape(g, sa), detail::reduce_to_shape(g, sb)};
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "sub");
    auto out = binary(a, b, [](auto u, auto v) { return u - v; });
    return record_op(std::move(out), {a, b}, [sa = a.shape(), sb = b.shape()](const Tensor& g) {
        return std::vector<Tensor>{detail::reduce_to_shape(g, sa),
                                   scale(detail::reduce_to_shape(g, sb), -1.0)};
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "mul");
    auto out = binary(a, b, [](auto u, auto v) { return u * v; });
    return record_op(std::move(out), {a, b}, [a = a.detach(), b = b.detach()](const Tensor& g) {
        return std::vector<Tensor>{detail::reduce_to_shape(mul(g, b), a.shape()),
                                   detail::reduce_to_shape(mul(g, a), b.shape())};
    });
}

Tensor scale(const Tensor& a, double alpha) {
    auto out = unary(a, [alpha](auto v) { return v * static_cast<decltype(v)>(alpha); });
    return record_op(std::move(out), {a}, [alpha](const Tensor& g) {
        return std::vector<Tensor>{scale(g, alpha)};
    });
}

Tensor tanh(const Tensor& a) {
    auto out = unary(a, [](auto v) { return std::tanh(v); });
    return record_op(out, {a}, [y = out.detach()](const Tensor& g) {
        return std::vector<Tensor>{binary(g, y, [](auto gv, auto yv) { return gv * (1 - yv * yv); })};
    });
}

Tensor sigmoid(const Tensor& a) {
    auto out = unary(a, [](auto v) { return sigmoid_of(v); });
    return record_op(out, {a}, [y = out.detach()](const Tensor& g) {
        return std::vector<Tensor>{binary(g, y, [](auto gv, auto yv) { return gv * yv * (1 - yv); })};
    });
}

Tensor silu(const Tensor& a) {
    auto out = unary(a, [](auto v) { return v * sigmoid_of(v); });
    return record_op(std::move(out), {a}, [x = a.detach()](const Tensor& g) {
        return std::vector<Tensor>{binary(g, x, [](auto gv, auto xv) {
            const auto s = sigmoid_of(xv);
            return gv * s * (1 + xv * (1 - s));
        })};
    });
}

Tensor relu(const Tensor& a) {
    auto out = unary(a, [](auto v) { return v > 0 ? v : decltype(v)(0); });
    return record_op(std::move(out), {a}, [x = a.detach()](const Tensor& g) {
        return std::vector<Tensor>{
            binary(g, x, [](auto gv, auto xv) { return xv > 0 ? gv : decltype(gv)(0); })};
    });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b, double alpha) {
    const bool binary_op = op == Elementwise::add || op == Elementwise::mul || op == Elementwise::sub;
    if (binary_op && !b.defined()) {
        throw ShapeMismatch("binary elementwise op requires a second operand");
    }
    switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::mul: return mul(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::silu: return silu(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::scale: return scale(a, alpha);
    }
    throw InvalidSpec("unknown elementwise op");
}

Tensor reshape(const Tensor& x, Shape shape) {
    auto out = x.view(std::move(shape));
    return record_op(std::move(out), {x}, [s = x.shape()](const Tensor& g) {
        return std::vector<Tensor>{g.view(s)};
    });
}

namespace {

template <class T>
Tensor permute_kernel(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& in = x.shape();
    const std::size_t rank = in.size();
    Shape out_shape(rank);
    std::vector<std::int64_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) {
        in_strides[i] = in_strides[i + 1] * in[i + 1];
    }
    std::vector<std::int64_t> step(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in[axes[i]];
        step[i] = in_strides[axes[i]];
    }
    auto src = x.template data<T>();
    std::vector<T> out(src.size());
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t pos = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = src[static_cast<std::size_t>(pos)];
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            pos += step[ax];
            if (idx[ax] < out_shape[ax]) {
                break;
            }
            pos -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return Tensor::from_buffer(std::move(out), out_shape);
}

} // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    if (axes.size() != x.ndim()) {
        throw ShapeMismatch("permute: axis list does not match rank of " + to_string(x.shape()));
    }
    std::vector<std::size_t> inverse(axes.size(), axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= axes.size() || inverse[axes[i]] != axes.size()) {
            throw ShapeMismatch("permute: axes are not a permutation");
        }
        inverse[axes[i]] = i;
    }
    auto out = dispatch(x.dtype(), [&](auto tag) { return permute_kernel<decltype(tag)>(x, axes); });
    return record_op(std::move(out), {x}, [inverse](const Tensor& g) {
        return std::vector<Tensor>{permute(g, inverse)};
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeMismatch("concat of zero tensors");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw ShapeMismatch("concat axis out of range");
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::int64_t> extents;
    for (const auto& p : parts) {
        require_same_dtype(parts.front(), p, "concat");
        if (p.ndim() != first.size()) {
            throw ShapeMismatch("concat: rank mismatch");
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && p.dim(i) != first[i]) {
                throw ShapeMismatch("concat: " + to_string(p.shape()) + " vs " + to_string(first));
            }
        }
        extents.push_back(p.dim(axis));
        out_shape[axis] += p.dim(axis);
    }
    std::int64_t outer = 1;
    std::int64_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= first[i];
    }
    for (std::size_t i = axis + 1; i < first.size(); ++i) {
        inner *= first[i];
    }
    auto out = dispatch(first.empty() ? DType::f32 : parts.front().dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> buf(static_cast<std::size_t>(numel_of(out_shape)));
        const std::int64_t row = out_shape[axis] * inner;
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            auto src = parts[k].data<T>();
            const std::int64_t chunk = extents[k] * inner;
            for (std::int64_t o = 0; o < outer; ++o) {
                std::copy_n(src.begin() + o * chunk, chunk, buf.begin() + o * row + offset);
            }
            offset += chunk;
        }
        return Tensor::from_buffer(std::move(buf), out_shape);
    });
    return record_op(std::move(out), parts, [extents, outer, inner, out_shape, axis](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto src = g.template data<T>();
            std::vector<Tensor> grads;
            const std::int64_t row = out_shape[axis] * inner;
            std::int64_t offset = 0;
            for (auto extent : extents) {
                const std::int64_t chunk = extent * inner;
                std::vector<T> buf(static_cast<std::size_t>(outer * chunk));
                for (std::int64_t o = 0; o < outer; ++o) {
                    std::copy_n(src.begin() + o * row + offset, chunk, buf.begin() + o * chunk);
                }
                Shape s = out_shape;
                s[axis] = extent;
                grads.push_back(Tensor::from_buffer(std::move(buf), s));
                offset += chunk;
            }
            return grads;
        });
    });
}

Tensor sum(const Tensor& x) {
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = x.template data<T>();
        // accumulate in double so f32 sums stay stable
        const double total = std::accumulate(d.begin(), d.end(), 0.0);
        return Tensor::from_buffer(std::vector<T>{static_cast<T>(total)}, {1});
    });
    return record_op(std::move(out), {x}, [s = x.shape()](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(s, g.item(), g.dtype())};
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

namespace {

struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t n = 1;
    std::int64_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + to_string(s));
    }
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) {
        r.outer *= s[i];
    }
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        r.inner *= s[i];
    }
    return r;
}

} // namespace

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = x.template data<T>();
        std::vector<T> buf(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t k = 0; k < sp.n; ++k) {
                const T* src = d.data() + (o * sp.n + k) * sp.inner;
                T* dst = buf.data() + o * sp.inner;
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                    dst[i] += src[i];
                }
            }
        }
        for (auto& v : buf) {
            v /= static_cast<T>(sp.n);
        }
        return Tensor::from_buffer(std::move(buf), out_shape);
    });
    return record_op(std::move(out), {x}, [sp, s = x.shape()](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.template data<T>();
            std::vector<T> buf(static_cast<std::size_t>(numel_of(s)));
            const T inv = T(1) / static_cast<T>(sp.n);
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t k = 0; k < sp.n; ++k) {
                    for (std::int64_t i = 0; i < sp.inner; ++i) {
                        buf[static_cast<std::size_t>((o * sp.n + k) * sp.inner + i)] =
                            gd[static_cast<std::size_t>(o * sp.inner + i)] * inv;
                    }
                }
            }
            return std::vector<Tensor>{Tensor::from_buffer(std::move(buf), s)};
        });
    });
}

Tensor reduce_max(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    std::vector<std::int64_t> arg(static_cast<std::size_t>(sp.outer * sp.inner));
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = x.template data<T>();
        std::vector<T> buf(arg.size());
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                std::int64_t best = o * sp.n * sp.inner + i;
                for (std::int64_t k = 1; k < sp.n; ++k) {
                    const std::int64_t p = (o * sp.n + k) * sp.inner + i;
                    if (d[static_cast<std::size_t>(p)] > d[static_cast<std::size_t>(best)]) {
                        best = p;
                    }
                }
                arg[static_cast<std::size_t>(o * sp.inner + i)] = best;
                buf[static_cast<std::size_t>(o * sp.inner + i)] = d[static_cast<std::size_t>(best)];
            }
        }
        return Tensor::from_buffer(std::move(buf), out_shape);
    });
    return record_op(std::move(out), {x}, [arg = std::move(arg), s = x.shape()](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.template data<T>();
            std::vector<T> buf(static_cast<std::size_t>(numel_of(s)), T(0));
            for (std::size_t i = 0; i < arg.size(); ++i) {
                buf[static_cast<std::size_t>(arg[i])] += gd[i];
            }
            return std::vector<Tensor>{Tensor::from_buffer(std::move(buf), s)};
        });
    });
}

Tensor softmax(const Tensor& x) {
    const std::int64_t n = x.shape().back();
    const std::int64_t rows = x.numel() / n;
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = x.template data<T>();
        std::vector<T> buf(d.size());
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* src = d.data() + r * n;
            T* dst = buf.data() + r * n;
            const T m = *std::max_element(src, src + n);
            T total = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                dst[i] = std::exp(src[i] - m);
                total += dst[i];
            }
            for (std::int64_t i = 0; i < n; ++i) {
                dst[i] /= total;
            }
        }
        return Tensor::from_buffer(std::move(buf), x.shape());
    });
    return record_op(out, {x}, [y = out.detach(), n, rows](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto yd = y.template data<T>();
            auto gd = g.template data<T>();
            std::vector<T> buf(yd.size());
            for (std::int64_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    dot += gd[static_cast<std::size_t>(r * n + i)] * yd[static_cast<std::size_t>(r * n + i)];
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const auto p = static_cast<std::size_t>(r * n + i);
                    buf[p] = yd[p] * (gd[p] - dot);
                }
            }
            return std::vector<Tensor>{Tensor::from_buffer(std::move(buf), y.shape())};
        });
    });
}

namespace {

// Normalizes `count` contiguous slices of length `n`; xhat and inv_std are
// returned for the backward pass.
template <class T>
void normalize_slices(const T* x, std::int64_t count, std::int64_t n, double eps, T* xhat,
                      T* inv_std) {
    for (std::int64_t s = 0; s < count; ++s) {
        const T* src = x + s * n;
        double mu = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            mu += src[i];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[s] = static_cast<T>(is);
        for (std::int64_t i = 0; i < n; ++i) {
            xhat[s * n + i] = static_cast<T>((src[i] - mu) * is);
        }
    }
}

// dx for one slice given dxhat = dy * gamma.
template <class T>
void normalize_backward(const T* dxhat, const T* xhat, T inv_std, std::int64_t n, T* dx) {
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        s1 += dxhat[i];
        s2 += static_cast<double>(dxhat[i]) * xhat[i];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        dx[i] = static_cast<T>(inv_std * (dxhat[i] - inv_n * s1 - xhat[i] * inv_n * s2));
    }
}

} // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::int64_t n = x.shape().back();
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
        throw ShapeMismatch("layer_norm affine params must be [" + std::to_string(n) + "]");
    }
    if (eps < 0.0 || (eps == 0.0 && n == 1)) {
        throw DegenerateInput("layer_norm over a single element requires eps > 0");
    }
    require_same_dtype(x, gamma, "layer_norm");
    require_same_dtype(x, beta, "layer_norm");
    const std::int64_t rows = x.numel() / n;
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        auto gd = gamma.template data<T>();
        auto bd = beta.template data<T>();
        std::vector<T> xhat(xd.size());
        std::vector<T> inv_std(static_cast<std::size_t>(rows));
        normalize_slices(xd.data(), rows, n, eps, xhat.data(), inv_std.data());
        std::vector<T> y(xd.size());
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t i = 0; i < n; ++i) {
                const auto p = static_cast<std::size_t>(r * n + i);
                y[p] = xhat[p] * gd[static_cast<std::size_t>(i)] + bd[static_cast<std::size_t>(i)];
            }
        }
        auto out = Tensor::from_buffer(std::move(y), x.shape());
        auto xhat_t = Tensor::from_buffer(std::move(xhat), x.shape());
        return record_op(std::move(out), {x, gamma, beta},
                         [xhat_t, inv_std = std::move(inv_std), g0 = gamma.detach(), n, rows](const Tensor& g) {
                             auto dy = g.template data<T>();
                             auto xh = xhat_t.template data<T>();
                             auto gm = g0.template data<T>();
                             std::vector<T> dx(dy.size());
                             std::vector<T> dgamma(static_cast<std::size_t>(n), T(0));
                             std::vector<T> dbeta(static_cast<std::size_t>(n), T(0));
                             std::vector<T> dxhat(static_cast<std::size_t>(n));
                             for (std::int64_t r = 0; r < rows; ++r) {
                                 for (std::int64_t i = 0; i < n; ++i) {
                                     const auto p = static_cast<std::size_t>(r * n + i);
                                     dxhat[static_cast<std::size_t>(i)] = dy[p] * gm[static_cast<std::size_t>(i)];
                                     dgamma[static_cast<std::size_t>(i)] += dy[p] * xh[p];
                                     dbeta[static_cast<std::size_t>(i)] += dy[p];
                                 }
                                 normalize_backward(dxhat.data(), xh.data() + r * n,
                                                    inv_std[static_cast<std::size_t>(r)], n,
                                                    dx.data() + r * n);
                             }
                             return std::vector<Tensor>{
                                 Tensor::from_buffer(std::move(dx), xhat_t.shape()),
                                 Tensor::from_buffer(std::move(dgamma), {n}),
                                 Tensor::from_buffer(std::move(dbeta), {n})};
                         });
    });
}

Tensor norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    detail::require_rank(x, 4, "norm2d");
    const std::int64_t B = x.dim(0);
    const std::int64_t C = x.dim(1);
    const std::int64_t n = x.dim(2) * x.dim(3);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw ShapeMismatch("norm2d affine params must be [" + std::to_string(C) + "]");
    }
    if (eps < 0.0) {
        throw InvalidSpec("norm2d eps must be non-negative");
    }
    if (eps == 0.0 && n == 1) {
        throw DegenerateInput("norm2d over a 1x1 map requires eps > 0");
    }
    require_same_dtype(x, gamma, "norm2d");
    require_same_dtype(x, beta, "norm2d");
    return dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        auto gd = gamma.template data<T>();
        auto bd = beta.template data<T>();
        std::vector<T> xhat(xd.size());
        std::vector<T> inv_std(static_cast<std::size_t>(B * C));
        normalize_slices(xd.data(), B * C, n, eps, xhat.data(), inv_std.data());
        std::vector<T> y(xd.size());
        for (std::int64_t s = 0; s < B * C; ++s) {
            const T gv = gd[static_cast<std::size_t>(s % C)];
            const T bv = bd[static_cast<std::size_t>(s % C)];
            for (std::int64_t i = 0; i < n; ++i) {
                y[static_cast<std::size_t>(s * n + i)] = xhat[static_cast<std::size_t>(s * n + i)] * gv + bv;
            }
        }
        auto out = Tensor::from_buffer(std::move(y), x.shape());
        auto xhat_t = Tensor::from_buffer(std::move(xhat), x.shape());
        return record_op(std::move(out), {x, gamma, beta},
                         [xhat_t, inv_std = std::move(inv_std), g0 = gamma.detach(), B, C, n](const Tensor& g) {
                             auto dy = g.template data<T>();
                             auto xh = xhat_t.template data<T>();
                             auto gm = g0.template data<T>();
                             std::vector<T> dx(dy.size());
                             std::vector<T> dgamma(static_cast<std::size_t>(C), T(0));
                             std::vector<T> dbeta(static_cast<std::size_t>(C), T(0));
                             std::vector<T> dxhat(static_cast<std::size_t>(n));
                             for (std::int64_t s = 0; s < B * C; ++s) {
                                 const auto c = static_cast<std::size_t>(s % C);
                                 double sg = 0.0;
                                 double sb = 0.0;
                                 for (std::int64_t i = 0; i < n; ++i) {
                                     const auto p = static_cast<std::size_t>(s * n + i);
                                     dxhat[static_cast<std::size_t>(i)] = dy[p] * gm[c];
                                     sg += static_cast<double>(dy[p]) * xh[p];
                                     sb += dy[p];
                                 }
                                 dgamma[c] += static_cast<T>(sg);
                                 dbeta[c] += static_cast<T>(sb);
                                 normalize_backward(dxhat.data(), xh.data() + s * n,
                                                    inv_std[static_cast<std::size_t>(s)], n,
                                                    dx.data() + s * n);
                             }
                             return std::vector<Tensor>{
                                 Tensor::from_buffer(std::move(dx), xhat_t.shape()),
                                 Tensor::from_buffer(std::move(dgamma), {C}),
                                 Tensor::from_buffer(std::move(dbeta), {C})};
                         });
    });
}

Tensor gram_basis(const Tensor& s, int degree) {
    detail::require_rank(s, 4, "gram_basis");
    if (degree < 0) {
        throw InvalidSpec("gram_basis degree must be >= 0");
    }
    const std::int64_t B = s.dim(0);
    const std::int64_t C = s.dim(1);
    const std::int64_t hw = s.dim(2) * s.dim(3);
    const std::int64_t D1 = degree + 1;
    const Shape out_shape{B, C * D1, s.dim(2), s.dim(3)};
    return dispatch(s.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto sd = s.template data<T>();
        for (auto v : sd) {
            if (!(std::abs(v) <= T(1) + T(1e-6))) {
                throw DomainViolation("basis argument outside [-1, 1]: " + std::to_string(v));
            }
        }
        std::vector<T> out(static_cast<std::size_t>(numel_of(out_shape)));
        // index of basis image d for input slice (b, c)
        auto at = [&](std::int64_t b, std::int64_t d, std::int64_t c) {
            return ((b * D1 + d) * C + c) * hw;
        };
        for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t c = 0; c < C; ++c) {
                const T* x = sd.data() + (b * C + c) * hw;
                T* g0 = out.data() + at(b, 0, c);
                std::fill_n(g0, hw, T(1));
                if (degree >= 1) {
                    std::copy_n(x, hw, out.data() + at(b, 1, c));
                }
                for (std::int64_t d = 1; d < degree; ++d) {
                    const T* gd = out.data() + at(b, d, c);
                    const T* gm = out.data() + at(b, d - 1, c);
                    T* gn = out.data() + at(b, d + 1, c);
                    for (std::int64_t i = 0; i < hw; ++i) {
                        gn[i] = (T(2 * d + 1) * x[i] * gd[i] - T(d) * gm[i]) / T(d + 1);
                    }
                }
            }
        }
        auto result = Tensor::from_buffer(std::move(out), out_shape);
        return record_op(result, {s}, [basis = result.detach(), s0 = s.detach(), degree, B, C, hw, D1](const Tensor& g) {
            auto gd = g.template data<T>();
            auto bd = basis.template data<T>();
            auto xd = s0.template data<T>();
            std::vector<T> ds(xd.size(), T(0));
            // derivative recurrence: G'_{d+1} = ((2d+1)(G_d + s G'_d) - d G'_{d-1}) / (d+1)
            std::vector<T> dprev(static_cast<std::size_t>(hw));
            std::vector<T> dcur(static_cast<std::size_t>(hw));
            std::vector<T> dnext(static_cast<std::size_t>(hw));
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* x = xd.data() + (b * C + c) * hw;
                    T* acc = ds.data() + (b * C + c) * hw;
                    if (degree == 0) {
                        continue;
                    }
                    std::fill(dprev.begin(), dprev.end(), T(0));
                    std::fill(dcur.begin(), dcur.end(), T(1));
                    const T* g1 = gd.data() + ((b * D1 + 1) * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        acc[i] += g1[i];
                    }
                    for (std::int64_t d = 1; d < degree; ++d) {
                        const T* Gd = bd.data() + ((b * D1 + d) * C + c) * hw;
                        const T* gn = gd.data() + ((b * D1 + d + 1) * C + c) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const auto k = static_cast<std::size_t>(i);
                            dnext[k] = (T(2 * d + 1) * (Gd[i] + x[i] * dcur[k]) - T(d) * dprev[k]) / T(d + 1);
                            acc[i] += gn[i] * dnext[k];
                        }
                        std::swap(dprev, dcur);
                        std::swap(dcur, dnext);
                    }
                }
            }
            return std::vector<Tensor>{Tensor::from_buffer(std::move(ds), s0.shape())};
        });
    });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    detail::require_rank(pred, 4, "masked_mse");
    if (pred.shape() != target.shape()) {
        throw ShapeMismatch("masked_mse: prediction " + to_string(pred.shape()) + " vs target " +
                            to_string(target.shape()));
    }
    const std::int64_t B = pred.dim(0);
    const std::int64_t K = pred.dim(1);
    const std::int64_t hw = pred.dim(2) * pred.dim(3);
    if (mask.shape() != Shape{B, K}) {
        throw ShapeMismatch("masked_mse: mask must be [B,K]");
    }
    require_same_dtype(pred, target, "masked_mse");
    auto m = mask.to_vector();
    double count = 0.0;
    for (double v : m) {
        count += v != 0.0 ? 1.0 : 0.0;
    }
    const double denom = count > 0.0 ? count * static_cast<double>(hw) : 1.0;
    return dispatch(pred.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto p = pred.template data<T>();
        auto t = target.template data<T>();
        double total = 0.0;
        for (std::int64_t bk = 0; bk < B * K; ++bk) {
            if (m[static_cast<std::size_t>(bk)] == 0.0) {
                continue;
            }
            for (std::int64_t i = 0; i < hw; ++i) {
                const auto q = static_cast<std::size_t>(bk * hw + i);
                const double d = static_cast<double>(p[q]) - static_cast<double>(t[q]);
                total += d * d;
            }
        }
        auto out = Tensor::from_buffer(std::vector<T>{static_cast<T>(total / denom)}, {1});
        return record_op(std::move(out), {pred, target},
                         [p0 = pred.detach(), t0 = target.detach(), m, denom, hw](const Tensor& g) {
                             auto pd = p0.template data<T>();
                             auto td = t0.template data<T>();
                             const double scale_factor = 2.0 * g.item() / denom;
                             std::vector<T> dp(pd.size(), T(0));
                             std::vector<T> dt(pd.size(), T(0));
                             for (std::size_t bk = 0; bk < m.size(); ++bk) {
                                 if (m[bk] == 0.0) {
                                     continue;
                                 }
                                 for (std::int64_t i = 0; i < hw; ++i) {
                                     const auto q = bk * static_cast<std::size_t>(hw) + static_cast<std::size_t>(i);
                                     dp[q] = static_cast<T>(scale_factor * (static_cast<double>(pd[q]) - td[q]));
                                     dt[q] = -dp[q];
                                 }
                             }
                             return std::vector<Tensor>{Tensor::from_buffer(std::move(dp), p0.shape()),
                                                        Tensor::from_buffer(std::move(dt), p0.shape())};
                         });
    });
}

} // namespace kanfpn::ops
