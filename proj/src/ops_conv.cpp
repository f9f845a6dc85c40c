#include <Eigen/Core>

#include <algorithm>

#include "ops_internal.hpp"

namespace kanfpn::ops {

using detail::require_rank;
using detail::require_same_dtype;

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

// C (+)= op(A) * op(B), all row-major.
template <class T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n,
          bool trans_a, bool trans_b, bool accumulate) {
    Map<T> C(c, m, n);
    auto run = [&](const auto& A, const auto& B) {
        if (accumulate) {
            C.noalias() += A * B;
        } else {
            C.noalias() = A * B;
        }
    };
    if (!trans_a && !trans_b) {
        run(MapC<T>(a, m, k), MapC<T>(b, k, n));
    } else if (!trans_a && trans_b) {
        run(MapC<T>(a, m, k), MapC<T>(b, n, k).transpose());
    } else if (trans_a && !trans_b) {
        run(MapC<T>(a, k, m).transpose(), MapC<T>(b, k, n));
    } else {
        run(MapC<T>(a, k, m).transpose(), MapC<T>(b, n, k).transpose());
    }
}

struct Window {
    std::int64_t channels;
    std::int64_t h, w;    // input plane
    std::int64_t kh, kw;  // kernel
    std::int64_t stride, pad;
    std::int64_t oh, ow;  // output plane

    std::int64_t rows() const { return channels * kh * kw; }
    std::int64_t cols() const { return oh * ow; }
};

std::int64_t conv_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    const std::int64_t span = in + 2 * p - k;
    return span < 0 ? 0 : span / s + 1;
}

// cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*s - p + i][ox*s - p + j]
template <class T>
void im2col(const T* x, const Window& g, T* cols) {
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + i;
                    T* dst = row + oy * g.ow;
                    if (y < 0 || y >= g.h) {
                        std::fill_n(dst, g.ow, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.h + y) * g.w;
                    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                        const std::int64_t xx = ox * g.stride - g.pad + j;
                        dst[ox] = (xx < 0 || xx >= g.w) ? T(0) : src[xx];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-adds columns back into the (zeroed) image.
template <class T>
void col2im(const T* cols, const Window& g, T* x) {
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kh; ++i) {
            for (std::int64_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
                for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                    const std::int64_t y = oy * g.stride - g.pad + i;
                    if (y < 0 || y >= g.h) {
                        continue;
                    }
                    const T* src = row + oy * g.ow;
                    T* dst = x + (c * g.h + y) * g.w;
                    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
                        const std::int64_t xx = ox * g.stride - g.pad + j;
                        if (xx >= 0 && xx < g.w) {
                            dst[xx] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

bool is_pointwise(const Window& g) {
    return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul");
    const bool batched = a.ndim() == 3;
    if (!(a.ndim() == 2 || batched) || !(b.ndim() == 2 || (batched && b.ndim() == 3))) {
        throw ShapeMismatch("matmul: unsupported ranks " + to_string(a.shape()) + " x " +
                            to_string(b.shape()));
    }
    const bool shared_b = b.ndim() == 2;
    const std::int64_t batch = batched ? a.dim(0) : 1;
    const std::int64_t m = a.dim(a.ndim() - 2);
    const std::int64_t k = a.dim(a.ndim() - 1);
    const std::int64_t kb = b.dim(b.ndim() - 2);
    const std::int64_t n = b.dim(b.ndim() - 1);
    if (k != kb || (!shared_b && b.dim(0) != batch)) {
        throw ShapeMismatch("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
    auto out = dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ad = a.template data<T>();
        auto bd = b.template data<T>();
        std::vector<T> c(static_cast<std::size_t>(batch * m * n));
        if (shared_b) {
            gemm(ad.data(), bd.data(), c.data(), batch * m, k, n, false, false, false);
        } else {
            for (std::int64_t i = 0; i < batch; ++i) {
                gemm(ad.data() + i * m * k, bd.data() + i * k * n, c.data() + i * m * n, m, k, n,
                     false, false, false);
            }
        }
        return Tensor::from_buffer(std::move(c), out_shape);
    });
    return record_op(std::move(out), {a, b},
                     [a0 = a.detach(), b0 = b.detach(), batch, m, k, n, shared_b](const Tensor& g) {
                         return dispatch(g.dtype(), [&](auto tag) {
                             using T = decltype(tag);
                             auto gd = g.template data<T>();
                             auto ad = a0.template data<T>();
                             auto bd = b0.template data<T>();
                             std::vector<T> da(ad.size());
                             std::vector<T> db(bd.size(), T(0));
                             if (shared_b) {
                                 // dA = dC B^T, dB = A^T dC
                                 gemm(gd.data(), bd.data(), da.data(), batch * m, n, k, false, true, false);
                                 gemm(ad.data(), gd.data(), db.data(), k, batch * m, n, true, false, false);
                             } else {
                                 for (std::int64_t i = 0; i < batch; ++i) {
                                     gemm(gd.data() + i * m * n, bd.data() + i * k * n, da.data() + i * m * k,
                                          m, n, k, false, true, false);
                                     gemm(ad.data() + i * m * k, gd.data() + i * m * n, db.data() + i * k * n,
                                          k, m, n, true, false, false);
                                 }
                             }
                             return std::vector<Tensor>{Tensor::from_buffer(std::move(da), a0.shape()),
                                                        Tensor::from_buffer(std::move(db), b0.shape())};
                         });
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(w, 2, "linear");
    const std::int64_t in = w.dim(0);
    const std::int64_t out = w.dim(1);
    if (x.shape().back() != in) {
        throw ShapeMismatch("linear: input " + to_string(x.shape()) + " vs weight " +
                            to_string(w.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out;
    auto y = matmul(reshape(x, {x.numel() / in, in}), w);
    if (bias.defined()) {
        if (bias.shape() != Shape{out}) {
            throw ShapeMismatch("linear: bias must be [" + std::to_string(out) + "]");
        }
        y = add(y, bias);
    }
    return reshape(y, out_shape);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t padding, std::int64_t groups) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    require_same_dtype(x, w, "conv2d");
    if (stride < 1 || padding < 0 || groups < 1) {
        throw InvalidGeometry("conv2d: stride >= 1, padding >= 0, groups >= 1 required");
    }
    const std::int64_t B = x.dim(0);
    const std::int64_t C = x.dim(1);
    const std::int64_t O = w.dim(0);
    if (C % groups != 0 || O % groups != 0) {
        throw ShapeMismatch("conv2d: channels " + std::to_string(C) + "->" + std::to_string(O) +
                            " not divisible by groups " + std::to_string(groups));
    }
    const std::int64_t Cg = C / groups;
    const std::int64_t Og = O / groups;
    if (w.dim(1) != Cg) {
        throw ShapeMismatch("conv2d: weight " + to_string(w.shape()) + " does not match input " +
                            to_string(x.shape()) + " with groups " + std::to_string(groups));
    }
    if (bias.defined()) {
        require_same_dtype(x, bias, "conv2d");
        if (bias.shape() != Shape{O}) {
            throw ShapeMismatch("conv2d: bias must be [" + std::to_string(O) + "]");
        }
    }
    Window g{Cg, x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, padding, 0, 0};
    g.oh = conv_extent(g.h, g.kh, stride, padding);
    g.ow = conv_extent(g.w, g.kw, stride, padding);
    if (g.oh < 1 || g.ow < 1) {
        throw InvalidGeometry("conv2d: kernel " + to_string(w.shape()) + " with padding " +
                              std::to_string(padding) + " does not fit input " + to_string(x.shape()));
    }
    const Shape out_shape{B, O, g.oh, g.ow};
    const bool pointwise = is_pointwise(g);

    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        auto wd = w.template data<T>();
        std::vector<T> y(static_cast<std::size_t>(numel_of(out_shape)));
        std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
        for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                const T* src = xd.data() + (b * C + gi * Cg) * g.h * g.w;
                const T* colp = src;
                if (!pointwise) {
                    im2col(src, g, cols.data());
                    colp = cols.data();
                }
                gemm(wd.data() + gi * Og * g.rows(), colp, y.data() + (b * O + gi * Og) * g.cols(), Og,
                     g.rows(), g.cols(), false, false, false);
            }
        }
        if (bias.defined()) {
            auto bd = bias.template data<T>();
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t o = 0; o < O; ++o) {
                    T* row = y.data() + (b * O + o) * g.cols();
                    const T bv = bd[static_cast<std::size_t>(o)];
                    for (std::int64_t i = 0; i < g.cols(); ++i) {
                        row[i] += bv;
                    }
                }
            }
        }
        return Tensor::from_buffer(std::move(y), out_shape);
    });

    return record_op(
        std::move(out), {x, w, bias},
        [x0 = x.detach(), w0 = w.detach(), has_bias = bias.defined(), g, B, C, O, Cg, Og, groups,
         pointwise](const Tensor& grad) {
            return dispatch(grad.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto gd = grad.template data<T>();
                auto xd = x0.template data<T>();
                auto wd = w0.template data<T>();
                std::vector<T> dx(xd.size(), T(0));
                std::vector<T> dw(wd.size(), T(0));
                std::vector<T> cols(static_cast<std::size_t>(g.rows() * g.cols()));
                std::vector<T> dcols(pointwise ? 0 : cols.size());
                for (std::int64_t b = 0; b < B; ++b) {
                    for (std::int64_t gi = 0; gi < groups; ++gi) {
                        const T* src = xd.data() + (b * C + gi * Cg) * g.h * g.w;
                        const T* dy = gd.data() + (b * O + gi * Og) * g.cols();
                        T* dsrc = dx.data() + (b * C + gi * Cg) * g.h * g.w;
                        const T* colp = src;
                        if (!pointwise) {
                            im2col(src, g, cols.data());
                            colp = cols.data();
                        }
                        // dW_g += dY * cols^T
                        gemm(dy, colp, dw.data() + gi * Og * g.rows(), Og, g.cols(), g.rows(), false, true,
                             true);
                        // dcols = W_g^T * dY
                        if (pointwise) {
                            gemm(wd.data() + gi * Og * g.rows(), dy, dsrc, g.rows(), Og, g.cols(), true,
                                 false, true);
                        } else {
                            gemm(wd.data() + gi * Og * g.rows(), dy, dcols.data(), g.rows(), Og, g.cols(),
                                 true, false, false);
                            col2im(dcols.data(), g, dsrc);
                        }
                    }
                }
                std::vector<Tensor> grads{Tensor::from_buffer(std::move(dx), x0.shape()),
                                          Tensor::from_buffer(std::move(dw), w0.shape()), Tensor{}};
                if (has_bias) {
                    std::vector<T> db(static_cast<std::size_t>(O), T(0));
                    for (std::int64_t b = 0; b < B; ++b) {
                        for (std::int64_t o = 0; o < O; ++o) {
                            const T* row = gd.data() + (b * O + o) * g.cols();
                            double acc = 0.0;
                            for (std::int64_t i = 0; i < g.cols(); ++i) {
                                acc += row[i];
                            }
                            db[static_cast<std::size_t>(o)] += static_cast<T>(acc);
                        }
                    }
                    grads[2] = Tensor::from_buffer(std::move(db), {O});
                }
                return grads;
            });
        });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t padding) {
    require_rank(x, 4, "conv_transpose2d input");
    require_rank(w, 4, "conv_transpose2d weight");
    require_same_dtype(x, w, "conv_transpose2d");
    if (stride < 1 || padding < 0) {
        throw InvalidGeometry("conv_transpose2d: stride >= 1 and padding >= 0 required");
    }
    const std::int64_t B = x.dim(0);
    const std::int64_t Ci = x.dim(1);
    if (w.dim(0) != Ci) {
        throw ShapeMismatch("conv_transpose2d: weight " + to_string(w.shape()) + " vs input " +
                            to_string(x.shape()));
    }
    const std::int64_t Co = w.dim(1);
    const std::int64_t H = x.dim(2);
    const std::int64_t W = x.dim(3);
    const std::int64_t Ho = (H - 1) * stride - 2 * padding + w.dim(2);
    const std::int64_t Wo = (W - 1) * stride - 2 * padding + w.dim(3);
    if (Ho < 1 || Wo < 1) {
        throw InvalidGeometry("conv_transpose2d: output extent below 1 for input " +
                              to_string(x.shape()));
    }
    // The forward pass is col2im over the geometry of the matching conv2d,
    // whose output plane is exactly H x W.
    const Window g{Co, Ho, Wo, w.dim(2), w.dim(3), stride, padding, H, W};
    const Shape out_shape{B, Co, Ho, Wo};
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        auto wd = w.template data<T>();
        std::vector<T> y(static_cast<std::size_t>(numel_of(out_shape)), T(0));
        std::vector<T> cols(static_cast<std::size_t>(g.rows() * g.cols()));
        for (std::int64_t b = 0; b < B; ++b) {
            gemm(wd.data(), xd.data() + b * Ci * H * W, cols.data(), g.rows(), Ci, g.cols(), true, false,
                 false);
            col2im(cols.data(), g, y.data() + b * Co * Ho * Wo);
        }
        return Tensor::from_buffer(std::move(y), out_shape);
    });
    return record_op(std::move(out), {x, w},
                     [x0 = x.detach(), w0 = w.detach(), g, B, Ci, stride, padding](const Tensor& grad) {
                         // dX is the forward conv of the output gradient with the same kernel.
                         Tensor dx = conv2d(grad, w0, {}, stride, padding, 1);
                         Tensor dw = dispatch(grad.dtype(), [&](auto tag) {
                             using T = decltype(tag);
                             auto gd = grad.template data<T>();
                             auto xd = x0.template data<T>();
                             std::vector<T> dwb(static_cast<std::size_t>(w0.numel()), T(0));
                             std::vector<T> cols(static_cast<std::size_t>(g.rows() * g.cols()));
                             for (std::int64_t b = 0; b < B; ++b) {
                                 im2col(gd.data() + b * g.channels * g.h * g.w, g, cols.data());
                                 gemm(xd.data() + b * Ci * g.cols(), cols.data(), dwb.data(), Ci, g.cols(),
                                      g.rows(), false, true, true);
                             }
                             return Tensor::from_buffer(std::move(dwb), w0.shape());
                         });
                         return std::vector<Tensor>{dx, dw};
                     });
}

Tensor pool2d(Pool kind, const Tensor& x, std::int64_t k, std::int64_t s) {
    require_rank(x, 4, "pool2d");
    const std::int64_t B = x.dim(0);
    const std::int64_t C = x.dim(1);
    const std::int64_t H = x.dim(2);
    const std::int64_t W = x.dim(3);
    std::int64_t kh = k;
    std::int64_t kw = k;
    std::int64_t sh = s;
    std::int64_t sw = s;
    if (kind == Pool::global_max || kind == Pool::global_avg) {
        kh = sh = H;
        kw = sw = W;
    } else if (k < 1 || s < 1) {
        throw InvalidGeometry("pool2d: window and stride must be positive");
    }
    const bool is_max = kind == Pool::max || kind == Pool::global_max;
    const std::int64_t oh = kh > H ? 0 : (H - kh) / sh + 1;
    const std::int64_t ow = kw > W ? 0 : (W - kw) / sw + 1;
    if (oh < 1 || ow < 1) {
        throw InvalidGeometry("pool2d: window " + std::to_string(k) + " does not fit " +
                              to_string(x.shape()));
    }
    const Shape out_shape{B, C, oh, ow};
    std::vector<std::int64_t> arg(is_max ? static_cast<std::size_t>(numel_of(out_shape)) : 0);
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        std::vector<T> y(static_cast<std::size_t>(numel_of(out_shape)));
        const T inv = T(1) / static_cast<T>(kh * kw);
        for (std::int64_t p = 0; p < B * C; ++p) {
            const T* plane = xd.data() + p * H * W;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const auto o = static_cast<std::size_t>((p * oh + oy) * ow + ox);
                    if (is_max) {
                        std::int64_t best = oy * sh * W + ox * sw;
                        for (std::int64_t i = 0; i < kh; ++i) {
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t q = (oy * sh + i) * W + ox * sw + j;
                                if (plane[q] > plane[best]) {
                                    best = q;
                                }
                            }
                        }
                        arg[o] = p * H * W + best;
                        y[o] = plane[best];
                    } else {
                        T acc = 0;
                        for (std::int64_t i = 0; i < kh; ++i) {
                            for (std::int64_t j = 0; j < kw; ++j) {
                                acc += plane[(oy * sh + i) * W + ox * sw + j];
                            }
                        }
                        y[o] = acc * inv;
                    }
                }
            }
        }
        return Tensor::from_buffer(std::move(y), out_shape);
    });
    return record_op(
        std::move(out), {x},
        [arg = std::move(arg), is_max, in_shape = x.shape(), kh, kw, sh, sw, oh, ow](const Tensor& g) {
            return dispatch(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto gd = g.template data<T>();
                std::vector<T> dx(static_cast<std::size_t>(numel_of(in_shape)), T(0));
                if (is_max) {
                    for (std::size_t o = 0; o < arg.size(); ++o) {
                        dx[static_cast<std::size_t>(arg[o])] += gd[o];
                    }
                } else {
                    const std::int64_t H = in_shape[2];
                    const std::int64_t W = in_shape[3];
                    const T inv = T(1) / static_cast<T>(kh * kw);
                    for (std::int64_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
                        T* plane = dx.data() + p * H * W;
                        for (std::int64_t oy = 0; oy < oh; ++oy) {
                            for (std::int64_t ox = 0; ox < ow; ++ox) {
                                const T v = gd[static_cast<std::size_t>((p * oh + oy) * ow + ox)] * inv;
                                for (std::int64_t i = 0; i < kh; ++i) {
                                    for (std::int64_t j = 0; j < kw; ++j) {
                                        plane[(oy * sh + i) * W + ox * sw + j] += v;
                                    }
                                }
                            }
                        }
                    }
                }
                return std::vector<Tensor>{Tensor::from_buffer(std::move(dx), in_shape)};
            });
        });
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const std::int64_t P = x.dim(0) * x.dim(1);
    const std::int64_t H = x.dim(2);
    const std::int64_t W = x.dim(3);
    const Shape out_shape{x.dim(0), x.dim(1), 2 * H, 2 * W};
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xd = x.template data<T>();
        std::vector<T> y(static_cast<std::size_t>(numel_of(out_shape)));
        for (std::int64_t p = 0; p < P; ++p) {
            for (std::int64_t i = 0; i < 2 * H; ++i) {
                const T* src = xd.data() + (p * H + i / 2) * W;
                T* dst = y.data() + (p * 2 * H + i) * 2 * W;
                for (std::int64_t j = 0; j < 2 * W; ++j) {
                    dst[j] = src[j / 2];
                }
            }
        }
        return Tensor::from_buffer(std::move(y), out_shape);
    });
    return record_op(std::move(out), {x}, [in_shape = x.shape(), P, H, W](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.template data<T>();
            std::vector<T> dx(static_cast<std::size_t>(P * H * W), T(0));
            for (std::int64_t p = 0; p < P; ++p) {
                for (std::int64_t i = 0; i < 2 * H; ++i) {
                    const T* src = gd.data() + (p * 2 * H + i) * 2 * W;
                    T* dst = dx.data() + (p * H + i / 2) * W;
                    for (std::int64_t j = 0; j < 2 * W; ++j) {
                        dst[j / 2] += src[j];
                    }
                }
            }
            return std::vector<Tensor>{Tensor::from_buffer(std::move(dx), in_shape)};
        });
    });
}

Tensor pad_crop2d(const Tensor& x, std::int64_t h, std::int64_t w) {
    require_rank(x, 4, "pad_crop2d");
    if (h < 1 || w < 1) {
        throw InvalidGeometry("pad_crop2d target extent must be positive");
    }
    const std::int64_t P = x.dim(0) * x.dim(1);
    const std::int64_t H = x.dim(2);
    const std::int64_t W = x.dim(3);
    const std::int64_t rows = std::min(H, h);
    const std::int64_t cols = std::min(W, w);
    // Copies the shared top-left window from a [P,sh,sw] buffer into [P,dh,dw].
    auto copy = [P, rows, cols](auto src, std::int64_t sh, std::int64_t sw, auto* dst,
                                std::int64_t dh, std::int64_t dw) {
        for (std::int64_t p = 0; p < P; ++p) {
            for (std::int64_t i = 0; i < rows; ++i) {
                std::copy_n(src.data() + (p * sh + i) * sw, cols, dst + (p * dh + i) * dw);
            }
        }
    };
    const Shape out_shape{x.dim(0), x.dim(1), h, w};
    auto out = dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> y(static_cast<std::size_t>(numel_of(out_shape)), T(0));
        copy(x.template data<T>(), H, W, y.data(), h, w);
        return Tensor::from_buffer(std::move(y), out_shape);
    });
    return record_op(std::move(out), {x}, [in_shape = x.shape(), H, W, h, w, copy, P](const Tensor& g) {
        return dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            std::vector<T> dx(static_cast<std::size_t>(P * H * W), T(0));
            copy(g.template data<T>(), h, w, dx.data(), H, W);
            return std::vector<Tensor>{Tensor::from_buffer(std::move(dx), in_shape)};
        });
    });
}

} // namespace kanfpn::ops
