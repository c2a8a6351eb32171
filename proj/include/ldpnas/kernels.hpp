#pragma once

// Forward/backward kernels for the fixed op set. All tensors NCHW; gradients
// are accumulated (+=) into the caller's buffers.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "ldpnas/net_graph.hpp"

namespace ldpnas::kernels {

template <class Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using MapMat = Eigen::Map<RowMat<Scalar>>;
template <class Scalar>
using CMapMat = Eigen::Map<const RowMat<Scalar>>;

struct ConvGeom {
    int cin, cout, h, w, ho, wo, kh, kw, ph, pw, stride, groups;
    int cin_g() const { return cin / groups; }
    int cout_g() const { return cout / groups; }
    int rows() const { return cin_g() * kh * kw; }
    int cols() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
    bool depthwise() const { return groups == cin && groups == cout; }

    static ConvGeom of(const LayerNode& n) {
        return {n.in_shape.c, n.out_shape.c, n.in_shape.h, n.in_shape.w, n.out_shape.h, n.out_shape.w,
                n.kh,         n.kw,          n.kh / 2,     n.kw / 2,     n.stride,       n.groups};
    }
};

template <class Scalar>
void im2col(const Scalar* x, const ConvGeom& g, Scalar* col) {
    for (int c = 0; c < g.cin_g(); ++c) {
        const Scalar* xc = x + std::size_t(c) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                Scalar* row = col + std::size_t((c * g.kh + ki) * g.kw + kj) * g.cols();
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = oh * g.stride - g.ph + ki;
                    Scalar* out = row + std::size_t(oh) * g.wo;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(out, out + g.wo, Scalar(0));
                        continue;
                    }
                    const Scalar* xr = xc + std::size_t(ih) * g.w;
                    for (int ow = 0; ow < g.wo; ++ow) {
                        const int iw = ow * g.stride - g.pw + kj;
                        out[ow] = (iw < 0 || iw >= g.w) ? Scalar(0) : xr[iw];
                    }
                }
            }
        }
    }
}

template <class Scalar>
void col2im_add(const Scalar* col, const ConvGeom& g, Scalar* dx) {
    for (int c = 0; c < g.cin_g(); ++c) {
        Scalar* dxc = dx + std::size_t(c) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const Scalar* row = col + std::size_t((c * g.kh + ki) * g.kw + kj) * g.cols();
                for (int oh = 0; oh < g.ho; ++oh) {
                    const int ih = oh * g.stride - g.ph + ki;
                    if (ih < 0 || ih >= g.h) continue;
                    const Scalar* in = row + std::size_t(oh) * g.wo;
                    Scalar* dr = dxc + std::size_t(ih) * g.w;
                    for (int ow = 0; ow < g.wo; ++ow) {
                        const int iw = ow * g.stride - g.pw + kj;
                        if (iw >= 0 && iw < g.w) dr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

/// Output columns [lo, hi) whose tap kj lands inside the input row.
inline void valid_cols(const ConvGeom& g, int kj, int& lo, int& hi) {
    const int off = kj - g.pw;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    hi = g.w - 1 - off < 0 ? 0 : std::min(g.wo, (g.w - 1 - off) / g.stride + 1);
    if (hi < lo) hi = lo;
}

template <class Scalar>
void depthwise_forward(const Scalar* x, const Scalar* w, const Scalar* b, const ConvGeom& g, int batch, Scalar* y) {
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < g.cin; ++c) {
            const Scalar* xc = x + (std::size_t(n) * g.cin + c) * g.h * g.w;
            const Scalar* wc = w + std::size_t(c) * g.kh * g.kw;
            Scalar* yc = y + (std::size_t(n) * g.cout + c) * g.ho * g.wo;
            std::fill(yc, yc + std::size_t(g.ho) * g.wo, b[c]);
            for (int ki = 0; ki < g.kh; ++ki) {
                for (int kj = 0; kj < g.kw; ++kj) {
                    const Scalar wv = wc[ki * g.kw + kj];
                    int lo, hi;
                    valid_cols(g, kj, lo, hi);
                    const int off = kj - g.pw;
                    for (int oh = 0; oh < g.ho; ++oh) {
                        const int ih = oh * g.stride - g.ph + ki;
                        if (ih < 0 || ih >= g.h) continue;
                        const Scalar* xr = xc + std::size_t(ih) * g.w + off;
                        Scalar* yr = yc + std::size_t(oh) * g.wo;
                        if (g.stride == 1)
                            for (int ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow];
                        else
                            for (int ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow * g.stride];
                    }
                }
            }
        }
    }
}

template <class Scalar>
void depthwise_backward(const Scalar* x, const Scalar* w, const Scalar* dy, const ConvGeom& g, int batch, Scalar* dx,
                        Scalar* dw, Scalar* db) {
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < g.cin; ++c) {
            const Scalar* xc = x + (std::size_t(n) * g.cin + c) * g.h * g.w;
            const Scalar* wc = w + std::size_t(c) * g.kh * g.kw;
            const Scalar* dyc = dy + (std::size_t(n) * g.cout + c) * g.ho * g.wo;
            Scalar* dxc = dx + (std::size_t(n) * g.cin + c) * g.h * g.w;
            Scalar* dwc = dw + std::size_t(c) * g.kh * g.kw;
            Scalar bsum = 0;
            for (std::size_t k = 0; k < std::size_t(g.ho) * g.wo; ++k) bsum += dyc[k];
            db[c] += bsum;
            for (int ki = 0; ki < g.kh; ++ki) {
                for (int kj = 0; kj < g.kw; ++kj) {
                    const Scalar wv = wc[ki * g.kw + kj];
                    int lo, hi;
                    valid_cols(g, kj, lo, hi);
                    const int off = kj - g.pw;
                    Scalar acc = 0;
                    for (int oh = 0; oh < g.ho; ++oh) {
                        const int ih = oh * g.stride - g.ph + ki;
                        if (ih < 0 || ih >= g.h) continue;
                        const Scalar* xr = xc + std::size_t(ih) * g.w + off;
                        Scalar* dxr = dxc + std::size_t(ih) * g.w + off;
                        const Scalar* dyr = dyc + std::size_t(oh) * g.wo;
                        if (g.stride == 1) {
                            for (int ow = lo; ow < hi; ++ow) {
                                acc += dyr[ow] * xr[ow];
                                dxr[ow] += dyr[ow] * wv;
                            }
                        } else {
                            for (int ow = lo; ow < hi; ++ow) {
                                acc += dyr[ow] * xr[ow * g.stride];
                                dxr[ow * g.stride] += dyr[ow] * wv;
                            }
                        }
                    }
                    dwc[ki * g.kw + kj] += acc;
                }
            }
        }
    }
}

/// Grouped 2-D convolution, zero padding k/2. Weights [cout][cin/groups][kh][kw], then bias [cout].
template <class Scalar>
void conv_forward(const Scalar* x, const Scalar* w, const Scalar* b, const ConvGeom& g, int batch, Scalar* y) {
    if (g.depthwise()) return depthwise_forward(x, w, b, g, batch, y);
    std::vector<Scalar> col(g.pointwise() ? 0 : std::size_t(g.rows()) * g.cols());
    for (int n = 0; n < batch; ++n) {
        for (int gi = 0; gi < g.groups; ++gi) {
            const Scalar* xg = x + (std::size_t(n) * g.cin + std::size_t(gi) * g.cin_g()) * g.h * g.w;
            Scalar* yg = y + (std::size_t(n) * g.cout + std::size_t(gi) * g.cout_g()) * g.cols();
            CMapMat<Scalar> W(w + std::size_t(gi) * g.cout_g() * g.rows(), g.cout_g(), g.rows());
            MapMat<Scalar> Y(yg, g.cout_g(), g.cols());
            if (g.pointwise()) {
                Y.noalias() = W * CMapMat<Scalar>(xg, g.rows(), g.cols());
            } else {
                im2col(xg, g, col.data());
                Y.noalias() = W * CMapMat<Scalar>(col.data(), g.rows(), g.cols());
            }
            for (int o = 0; o < g.cout_g(); ++o) Y.row(o).array() += b[gi * g.cout_g() + o];
        }
    }
}

template <class Scalar>
void conv_backward(const Scalar* x, const Scalar* w, const Scalar* dy, const ConvGeom& g, int batch, Scalar* dx,
                   Scalar* dw, Scalar* db) {
    if (g.depthwise()) return depthwise_backward(x, w, dy, g, batch, dx, dw, db);
    std::vector<Scalar> col(g.pointwise() ? 0 : std::size_t(g.rows()) * g.cols());
    std::vector<Scalar> dcol(col.size());
    for (int n = 0; n < batch; ++n) {
        for (int gi = 0; gi < g.groups; ++gi) {
            const std::size_t xoff = (std::size_t(n) * g.cin + std::size_t(gi) * g.cin_g()) * g.h * g.w;
            const Scalar* dyg = dy + (std::size_t(n) * g.cout + std::size_t(gi) * g.cout_g()) * g.cols();
            CMapMat<Scalar> W(w + std::size_t(gi) * g.cout_g() * g.rows(), g.cout_g(), g.rows());
            MapMat<Scalar> dW(dw + std::size_t(gi) * g.cout_g() * g.rows(), g.cout_g(), g.rows());
            CMapMat<Scalar> dY(dyg, g.cout_g(), g.cols());
            for (int o = 0; o < g.cout_g(); ++o) db[gi * g.cout_g() + o] += dY.row(o).sum();
            if (g.pointwise()) {
                CMapMat<Scalar> X(x + xoff, g.rows(), g.cols());
                dW.noalias() += dY * X.transpose();
                MapMat<Scalar>(dx + xoff, g.rows(), g.cols()).noalias() += W.transpose() * dY;
            } else {
                im2col(x + xoff, g, col.data());
                dW.noalias() += dY * CMapMat<Scalar>(col.data(), g.rows(), g.cols()).transpose();
                MapMat<Scalar>(dcol.data(), g.rows(), g.cols()).noalias() = W.transpose() * dY;
                col2im_add(dcol.data(), g, dx + xoff);
            }
        }
    }
}

} // namespace ldpnas::kernels
