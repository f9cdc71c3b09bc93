#ifndef STDIFF_KERNELS_HPP
#define STDIFF_KERNELS_HPP

#include "stdiff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <vector>

// Plain-tensor compute kernels (forward and backward passes). The autodiff
// layer wraps these; metrics and datasets call them directly.
namespace stdiff::kernels {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvSpec {
    Eigen::Index kh = 3, kw = 3;
    Eigen::Index stride = 1;
    Eigen::Index pad = 1;

    Eigen::Index out_dim(Eigen::Index in, Eigen::Index k) const {
        return (in + 2 * pad - k) / stride + 1;
    }
};

// Gathers conv patches: rows = output pixels, cols = (cin, ky, kx).
template <typename S>
void im2col(const Tensor<S>& x, const ConvSpec& cs, Mat<S>& m) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const Eigen::Index Ho = cs.out_dim(H, cs.kh), Wo = cs.out_dim(W, cs.kw);
    m.setZero(Ho * Wo, C * cs.kh * cs.kw);
    for (Eigen::Index c = 0; c < C; ++c) {
        const S* plane = x.data.data() + c * H * W;
        for (Eigen::Index ky = 0; ky < cs.kh; ++ky) {
            for (Eigen::Index kx = 0; kx < cs.kw; ++kx) {
                const Eigen::Index col = (c * cs.kh + ky) * cs.kw + kx;
                S* dst = m.data() + col * Ho * Wo;
                for (Eigen::Index yo = 0; yo < Ho; ++yo) {
                    const Eigen::Index yi = yo * cs.stride - cs.pad + ky;
                    if (yi < 0 || yi >= H) continue;
                    const S* src = plane + yi * W;
                    if (cs.stride == 1) {
                        // valid xo range: 0 <= xo - pad + kx < W
                        const Eigen::Index xo_lo = std::max<Eigen::Index>(0, cs.pad - kx);
                        const Eigen::Index xo_hi = std::min<Eigen::Index>(Wo, W + cs.pad - kx);
                        if (xo_hi > xo_lo)
                            std::memcpy(dst + yo * Wo + xo_lo, src + xo_lo - cs.pad + kx,
                                        sizeof(S) * static_cast<std::size_t>(xo_hi - xo_lo));
                    } else {
                        for (Eigen::Index xo = 0; xo < Wo; ++xo) {
                            const Eigen::Index xi = xo * cs.stride - cs.pad + kx;
                            if (xi >= 0 && xi < W) dst[yo * Wo + xo] = src[xi];
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of an im2col-layout gradient back onto the input.
template <typename S>
void col2im_add(const Mat<S>& m, const ConvSpec& cs, Tensor<S>& dx) {
    const Eigen::Index C = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    const Eigen::Index Ho = cs.out_dim(H, cs.kh), Wo = cs.out_dim(W, cs.kw);
    for (Eigen::Index c = 0; c < C; ++c) {
        S* plane = dx.data.data() + c * H * W;
        for (Eigen::Index ky = 0; ky < cs.kh; ++ky) {
            for (Eigen::Index kx = 0; kx < cs.kw; ++kx) {
                const Eigen::Index col = (c * cs.kh + ky) * cs.kw + kx;
                const S* src = m.data() + col * Ho * Wo;
                for (Eigen::Index yo = 0; yo < Ho; ++yo) {
                    const Eigen::Index yi = yo * cs.stride - cs.pad + ky;
                    if (yi < 0 || yi >= H) continue;
                    S* drow = plane + yi * W;
                    for (Eigen::Index xo = 0; xo < Wo; ++xo) {
                        const Eigen::Index xi = xo * cs.stride - cs.pad + kx;
                        if (xi >= 0 && xi < W) drow[xi] += src[yo * Wo + xo];
                    }
                }
            }
        }
    }
}

// weight layout: (Cout, Cin, kh, kw); bias (Cout) optional (empty = none).
template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                         const ConvSpec& cs) {
    const Eigen::Index Cin = x.shape[0], H = x.shape[1], W = x.shape[2];
    const Eigen::Index Cout = w.shape[0];
    if (w.shape[1] != Cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(w.shape[1]) +
                                    " input channels, got " + std::to_string(Cin));
    const Eigen::Index Ho = cs.out_dim(H, cs.kh), Wo = cs.out_dim(W, cs.kw);
    const Eigen::Index K = Cin * cs.kh * cs.kw;

    Mat<S> m;
    im2col(x, cs, m);
    // (K, Cout) GEMM operand from the OIHW weight blob
    Mat<S> wm(K, Cout);
    for (Eigen::Index o = 0; o < Cout; ++o)
        for (Eigen::Index j = 0; j < K; ++j) wm(j, o) = w.data[o * K + j];

    Mat<S> out = m * wm;  // (HoWo, Cout)
    Tensor<S> y(Shape::chw(Cout, Ho, Wo));
    for (Eigen::Index o = 0; o < Cout; ++o) {
        auto col = out.col(o);
        if (b.numel() > 0) col.array() += b.data[o];
        std::memcpy(y.data.data() + o * Ho * Wo, col.data(),
                    sizeof(S) * static_cast<std::size_t>(Ho * Wo));
    }
    return y;
}

// Accumulates into dx/dw/db when the pointers are non-null.
template <typename S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy,
                     const ConvSpec& cs, Tensor<S>* dx, Tensor<S>* dw, Tensor<S>* db) {
    const Eigen::Index Cin = x.shape[0];
    const Eigen::Index Cout = w.shape[0];
    const Eigen::Index Ho = dy.shape[1], Wo = dy.shape[2];
    const Eigen::Index K = Cin * cs.kh * cs.kw;

    Eigen::Map<const Mat<S>> dout(dy.data.data(), Ho * Wo, Cout);  // planes as columns

    if (db && db->numel() > 0)
        for (Eigen::Index o = 0; o < Cout; ++o) db->data[o] += dout.col(o).sum();

    if (dw) {
        Mat<S> m;
        im2col(x, cs, m);
        Mat<S> dwm = m.transpose() * dout;  // (K, Cout)
        for (Eigen::Index o = 0; o < Cout; ++o)
            for (Eigen::Index j = 0; j < K; ++j) dw->data[o * K + j] += dwm(j, o);
    }

    if (dx) {
        Mat<S> wm(K, Cout);
        for (Eigen::Index o = 0; o < Cout; ++o)
            for (Eigen::Index j = 0; j < K; ++j) wm(j, o) = w.data[o * K + j];
        Mat<S> dm = dout * wm.transpose();  // (HoWo, K)
        col2im_add(dm, cs, *dx);
    }
}

template <typename S>
Tensor<S> maxpool2_forward(const Tensor<S>& x, std::vector<Eigen::Index>& argmax) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (H % 2 || W % 2)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " + x.shape.str());
    const Eigen::Index Ho = H / 2, Wo = W / 2;
    Tensor<S> y(Shape::chw(C, Ho, Wo));
    argmax.resize(static_cast<std::size_t>(C * Ho * Wo));
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index yo = 0; yo < Ho; ++yo)
            for (Eigen::Index xo = 0; xo < Wo; ++xo) {
                Eigen::Index best = (c * H + 2 * yo) * W + 2 * xo;
                S bv = x.data[best];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const Eigen::Index i = (c * H + 2 * yo + dy) * W + 2 * xo + dx;
                        if (x.data[i] > bv) {
                            bv = x.data[i];
                            best = i;
                        }
                    }
                const Eigen::Index o = (c * Ho + yo) * Wo + xo;
                y.data[o] = bv;
                argmax[static_cast<std::size_t>(o)] = best;
            }
    return y;
}

template <typename S>
void maxpool2_backward(const Tensor<S>& dy, const std::vector<Eigen::Index>& argmax,
                       Tensor<S>& dx) {
    for (Eigen::Index o = 0; o < dy.numel(); ++o)
        dx.data[argmax[static_cast<std::size_t>(o)]] += dy.data[o];
}

template <typename S>
Tensor<S> nearest_upsample2_forward(const Tensor<S>& x) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Tensor<S> y(Shape::chw(C, 2 * H, 2 * W));
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index yi = 0; yi < H; ++yi)
            for (Eigen::Index xi = 0; xi < W; ++xi) {
                const S v = x.chw(c, yi, xi);
                y.chw(c, 2 * yi, 2 * xi) = v;
                y.chw(c, 2 * yi, 2 * xi + 1) = v;
                y.chw(c, 2 * yi + 1, 2 * xi) = v;
                y.chw(c, 2 * yi + 1, 2 * xi + 1) = v;
            }
    return y;
}

template <typename S>
void nearest_upsample2_backward(const Tensor<S>& dy, Tensor<S>& dx) {
    const Eigen::Index C = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index yi = 0; yi < H; ++yi)
            for (Eigen::Index xi = 0; xi < W; ++xi)
                dx.chw(c, yi, xi) += dy.chw(c, 2 * yi, 2 * xi) + dy.chw(c, 2 * yi, 2 * xi + 1) +
                                     dy.chw(c, 2 * yi + 1, 2 * xi) +
                                     dy.chw(c, 2 * yi + 1, 2 * xi + 1);
}

struct BilinearAxis {
    std::vector<Eigen::Index> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets (1 - w1)
};

inline BilinearAxis bilinear_axis(Eigen::Index in, Eigen::Index out) {
    BilinearAxis ax;
    ax.i0.resize(static_cast<std::size_t>(out));
    ax.i1.resize(static_cast<std::size_t>(out));
    ax.w1.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Eigen::Index o = 0; o < out; ++o) {
        double f = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (f < 0) f = 0;
        if (f > static_cast<double>(in - 1)) f = static_cast<double>(in - 1);
        const auto lo = static_cast<Eigen::Index>(std::floor(f));
        const Eigen::Index hi = std::min(lo + 1, in - 1);
        ax.i0[static_cast<std::size_t>(o)] = lo;
        ax.i1[static_cast<std::size_t>(o)] = hi;
        ax.w1[static_cast<std::size_t>(o)] = f - static_cast<double>(lo);
    }
    return ax;
}

template <typename S>
Tensor<S> bilinear_resize_forward(const Tensor<S>& x, Eigen::Index Ho, Eigen::Index Wo) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const BilinearAxis ay = bilinear_axis(H, Ho), ax = bilinear_axis(W, Wo);
    Tensor<S> y(Shape::chw(C, Ho, Wo));
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index yo = 0; yo < Ho; ++yo) {
            const auto y0 = ay.i0[static_cast<std::size_t>(yo)], y1 = ay.i1[static_cast<std::size_t>(yo)];
            const double wy = ay.w1[static_cast<std::size_t>(yo)];
            for (Eigen::Index xo = 0; xo < Wo; ++xo) {
                const auto x0 = ax.i0[static_cast<std::size_t>(xo)], x1 = ax.i1[static_cast<std::size_t>(xo)];
                const double wx = ax.w1[static_cast<std::size_t>(xo)];
                const double v = (1 - wy) * ((1 - wx) * x.chw(c, y0, x0) + wx * x.chw(c, y0, x1)) +
                                 wy * ((1 - wx) * x.chw(c, y1, x0) + wx * x.chw(c, y1, x1));
                y.chw(c, yo, xo) = static_cast<S>(v);
            }
        }
    return y;
}

template <typename S>
void bilinear_resize_backward(const Tensor<S>& dy, Tensor<S>& dx) {
    const Eigen::Index C = dx.shape[0], H = dx.shape[1], W = dx.shape[2];
    const Eigen::Index Ho = dy.shape[1], Wo = dy.shape[2];
    const BilinearAxis ay = bilinear_axis(H, Ho), ax = bilinear_axis(W, Wo);
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index yo = 0; yo < Ho; ++yo) {
            const auto y0 = ay.i0[static_cast<std::size_t>(yo)], y1 = ay.i1[static_cast<std::size_t>(yo)];
            const double wy = ay.w1[static_cast<std::size_t>(yo)];
            for (Eigen::Index xo = 0; xo < Wo; ++xo) {
                const auto x0 = ax.i0[static_cast<std::size_t>(xo)], x1 = ax.i1[static_cast<std::size_t>(xo)];
                const double wx = ax.w1[static_cast<std::size_t>(xo)];
                const S g = dy.chw(c, yo, xo);
                dx.chw(c, y0, x0) += static_cast<S>((1 - wy) * (1 - wx)) * g;
                dx.chw(c, y0, x1) += static_cast<S>((1 - wy) * wx) * g;
                dx.chw(c, y1, x0) += static_cast<S>(wy * (1 - wx)) * g;
                dx.chw(c, y1, x1) += static_cast<S>(wy * wx) * g;
            }
        }
}

// Group normalization without affine params; returns normalized tensor and
// fills per-group mean / reciprocal std (biased variance).
template <typename S>
Tensor<S> groupnorm_forward(const Tensor<S>& x, Eigen::Index groups, S eps,
                            std::vector<S>& mean, std::vector<S>& rstd) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (C % groups != 0)
        throw std::invalid_argument("groupnorm: channels " + std::to_string(C) +
                                    " not divisible by groups " + std::to_string(groups));
    const Eigen::Index gs = C / groups, n = gs * H * W;
    mean.resize(static_cast<std::size_t>(groups));
    rstd.resize(static_cast<std::size_t>(groups));
    Tensor<S> y(x.shape);
    for (Eigen::Index g = 0; g < groups; ++g) {
        auto seg = x.data.segment(g * n, n);
        const S mu = seg.mean();
        const S var = (seg - mu).square().mean();
        const S r = S(1) / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(g)] = mu;
        rstd[static_cast<std::size_t>(g)] = r;
        y.data.segment(g * n, n) = (seg - mu) * r;
    }
    return y;
}

template <typename S>
void groupnorm_backward(const Tensor<S>& x, const std::vector<S>& mean, const std::vector<S>& rstd,
                        const Tensor<S>& dy, Eigen::Index groups, Tensor<S>& dx) {
    const Eigen::Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const Eigen::Index gs = C / groups, n = gs * H * W;
    for (Eigen::Index g = 0; g < groups; ++g) {
        auto xs = x.data.segment(g * n, n);
        auto gs_ = dy.data.segment(g * n, n);
        const S mu = mean[static_cast<std::size_t>(g)];
        const S r = rstd[static_cast<std::size_t>(g)];
        Eigen::Array<S, Eigen::Dynamic, 1> xhat = (xs - mu) * r;
        const S gmean = gs_.mean();
        const S gxmean = (gs_ * xhat).mean();
        dx.data.segment(g * n, n) += r * (gs_ - gmean - xhat * gxmean);
    }
}

// y = W x + b with W stored row-major as shape (out, in).
template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    const Eigen::Index out = w.shape[0], in = w.shape[1];
    if (x.numel() != in)
        throw std::invalid_argument("linear: input size " + std::to_string(x.numel()) +
                                    " != " + std::to_string(in));
    using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> wm(w.data.data(), out, in);
    Tensor<S> y(Shape{out});
    y.data.matrix() = wm * x.data.matrix();
    if (b.numel() > 0) y.data += b.data;
    return y;
}

template <typename S>
void linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, Tensor<S>* dx,
                     Tensor<S>* dw, Tensor<S>* db) {
    const Eigen::Index out = w.shape[0], in = w.shape[1];
    using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> wm(w.data.data(), out, in);
    if (dx) dx->data.matrix() += wm.transpose() * dy.data.matrix();
    if (dw) {
        Eigen::Map<RowMat> dwm(dw->data.data(), out, in);
        dwm.noalias() += dy.data.matrix() * x.data.matrix().transpose();
    }
    if (db && db->numel() > 0) db->data += dy.data;
}

}  // namespace stdiff::kernels

#endif
