#pragma once

// Forward and reverse kernels for the OpGraph operator set. Templated on the
// scalar so the gradient checker can replay graphs in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "srae/graph.hpp"
#include "srae/tensor.hpp"

namespace srae::detail {

template <typename T>
using TensorT = BasicTensor<T>;

struct ConvGeometry {
    int n, h, w, ci, kh, kw, co, oh, ow, stride, pad;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
    int span = in + 2 * pad - k;
    return span < 0 ? 0 : span / stride + 1;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline bool conv_is_pointwise(const ConvGeometry& g) {
    return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Patch matrix of example n: one row per output pixel, (kh, kw, ci) columns.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, int n, T* cols) {
    const std::size_t ci = static_cast<std::size_t>(g.ci);
    const std::size_t row = static_cast<std::size_t>(g.kh) * g.kw * ci;
    for (int oh = 0; oh < g.oh; ++oh) {
        for (int ow = 0; ow < g.ow; ++ow) {
            T* dst = cols + (static_cast<std::size_t>(oh) * g.ow + ow) * row;
            for (int kh = 0; kh < g.kh; ++kh) {
                const int ih = oh * g.stride - g.pad + kh;
                for (int kw = 0; kw < g.kw; ++kw) {
                    const int iw = ow * g.stride - g.pad + kw;
                    T* d = dst + (static_cast<std::size_t>(kh) * g.kw + kw) * ci;
                    if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) {
                        std::fill(d, d + ci, T(0));
                    } else {
                        const T* src = x + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * ci;
                        std::copy(src, src + ci, d);
                    }
                }
            }
        }
    }
}

// Scatter-adds a patch-matrix gradient back onto example n of dx.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, int n, T* dx) {
    const std::size_t ci = static_cast<std::size_t>(g.ci);
    const std::size_t row = static_cast<std::size_t>(g.kh) * g.kw * ci;
    for (int oh = 0; oh < g.oh; ++oh) {
        for (int ow = 0; ow < g.ow; ++ow) {
            const T* src = cols + (static_cast<std::size_t>(oh) * g.ow + ow) * row;
            for (int kh = 0; kh < g.kh; ++kh) {
                const int ih = oh * g.stride - g.pad + kh;
                if (ih < 0 || ih >= g.h) continue;
                for (int kw = 0; kw < g.kw; ++kw) {
                    const int iw = ow * g.stride - g.pad + kw;
                    if (iw < 0 || iw >= g.w) continue;
                    const T* s = src + (static_cast<std::size_t>(kh) * g.kw + kw) * ci;
                    T* d = dx + ((static_cast<std::size_t>(n) * g.h + ih) * g.w + iw) * ci;
                    for (std::size_t c = 0; c < ci; ++c) d[c] += s[c];
                }
            }
        }
    }
}

// Convolution as one GEMM per example: out_n = patches_n * W + b.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* out) {
    const Eigen::Index pixels = static_cast<Eigen::Index>(g.oh) * g.ow;
    const Eigen::Index k = static_cast<Eigen::Index>(g.kh) * g.kw * g.ci;
    const bool pointwise = conv_is_pointwise(g);
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(pixels * k));
    ConstMatMap<T> weight(w, k, g.co);
    for (int n = 0; n < g.n; ++n) {
        const T* patches = x + static_cast<std::size_t>(n) * pixels * k;
        if (!pointwise) {
            im2col(g, x, n, cols.data());
            patches = cols.data();
        }
        MatMap<T> o(out + static_cast<std::size_t>(n) * pixels * g.co, pixels, g.co);
        o.noalias() = ConstMatMap<T>(patches, pixels, k) * weight;
        if (b) o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b, g.co);
    }
}

// dx, dw and db are each optional (nullptr when not needed) and are
// overwritten. Weight and bias gradients are summed per example in T and
// across examples in double.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dout, T* dx, T* dw, T* db) {
    const Eigen::Index pixels = static_cast<Eigen::Index>(g.oh) * g.ow;
    const Eigen::Index k = static_cast<Eigen::Index>(g.kh) * g.kw * g.ci;
    const bool pointwise = conv_is_pointwise(g);
    const std::size_t wsize = static_cast<std::size_t>(k) * g.co;
    ConstMatMap<T> weight(w, k, g.co);

    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(pixels * k));
    std::vector<T> dcols(dx && !pointwise ? static_cast<std::size_t>(pixels * k) : 0);
    RowMatrix<T> dw_example(dw ? k : 0, dw ? g.co : 0);
    std::vector<double> dw_acc(dw ? wsize : 0, 0.0);
    std::vector<double> db_acc(db ? static_cast<std::size_t>(g.co) : 0, 0.0);
    if (dx) std::fill(dx, dx + static_cast<std::size_t>(g.n) * g.h * g.w * g.ci, T(0));

    for (int n = 0; n < g.n; ++n) {
        ConstMatMap<T> go(dout + static_cast<std::size_t>(n) * pixels * g.co, pixels, g.co);
        if (db) {
            for (Eigen::Index p = 0; p < pixels; ++p)
                for (int d = 0; d < g.co; ++d) db_acc[static_cast<std::size_t>(d)] += static_cast<double>(go(p, d));
        }
        if (dw) {
            const T* patches = x + static_cast<std::size_t>(n) * pixels * k;
            if (!pointwise) {
                im2col(g, x, n, cols.data());
                patches = cols.data();
            }
            dw_example.noalias() = ConstMatMap<T>(patches, pixels, k).transpose() * go;
            const T* src = dw_example.data();
            for (std::size_t i = 0; i < wsize; ++i) dw_acc[i] += static_cast<double>(src[i]);
        }
        if (dx) {
            if (pointwise) {
                MatMap<T>(dx + static_cast<std::size_t>(n) * pixels * k, pixels, k).noalias() = go * weight.transpose();
            } else {
                MatMap<T>(dcols.data(), pixels, k).noalias() = go * weight.transpose();
                col2im(g, dcols.data(), n, dx);
            }
        }
    }
    if (dw) {
        for (std::size_t i = 0; i < wsize; ++i) dw[i] = static_cast<T>(dw_acc[i]);
    }
    if (db) {
        for (int d = 0; d < g.co; ++d) db[d] = static_cast<T>(db_acc[static_cast<std::size_t>(d)]);
    }
}

template <typename T>
void dense_forward(int n, int in, int out, const T* x, const T* w, const T* b, T* y) {
    for (int r = 0; r < n; ++r) {
        T* yr = y + static_cast<std::size_t>(r) * out;
        const T* xr = x + static_cast<std::size_t>(r) * in;
        for (int o = 0; o < out; ++o) yr[o] = b ? b[o] : T(0);
        for (int i = 0; i < in; ++i) {
            const T v = xr[i];
            const T* wr = w + static_cast<std::size_t>(i) * out;
            for (int o = 0; o < out; ++o) yr[o] += v * wr[o];
        }
    }
}

template <typename T>
void dense_backward(int n, int in, int out, const T* x, const T* w, const T* dy, T* dx, T* dw,
                    T* db) {
    if (dx) {
        for (int r = 0; r < n; ++r) {
            const T* gr = dy + static_cast<std::size_t>(r) * out;
            T* dxr = dx + static_cast<std::size_t>(r) * in;
            for (int i = 0; i < in; ++i) {
                const T* wr = w + static_cast<std::size_t>(i) * out;
                double acc = 0.0;
                for (int o = 0; o < out; ++o) acc += static_cast<double>(gr[o]) * wr[o];
                dxr[i] = static_cast<T>(acc);
            }
        }
    }
    if (dw) {
        std::vector<double> acc(static_cast<std::size_t>(in) * out, 0.0);
        for (int r = 0; r < n; ++r) {
            const T* gr = dy + static_cast<std::size_t>(r) * out;
            const T* xr = x + static_cast<std::size_t>(r) * in;
            for (int i = 0; i < in; ++i) {
                const double v = xr[i];
                double* ar = acc.data() + static_cast<std::size_t>(i) * out;
                for (int o = 0; o < out; ++o) ar[o] += v * gr[o];
            }
        }
        for (std::size_t i = 0; i < acc.size(); ++i) dw[i] = static_cast<T>(acc[i]);
    }
    if (db) {
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int r = 0; r < n; ++r) acc += dy[static_cast<std::size_t>(r) * out + o];
            db[o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void upsample2x_forward(int n, int h, int w, int c, const T* x, T* y) {
    const int oh = 2 * h, ow = 2 * w;
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const T* src = x + ((static_cast<std::size_t>(b) * h + i / 2) * w + j / 2) * c;
                T* dst = y + ((static_cast<std::size_t>(b) * oh + i) * ow + j) * c;
                std::copy(src, src + c, dst);
            }
}

template <typename T>
void upsample2x_backward(int n, int h, int w, int c, const T* dy, T* dx) {
    const int oh = 2 * h, ow = 2 * w;
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                T* dst = dx + ((static_cast<std::size_t>(b) * h + i) * w + j) * c;
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            acc += dy[((static_cast<std::size_t>(b) * oh + 2 * i + di) * ow + 2 * j + dj) * c + ch];
                    dst[ch] = static_cast<T>(acc);
                }
            }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(xr[c] - mx));
        for (std::size_t c = 0; c < cols; ++c)
            yr[c] = static_cast<T>(std::exp(static_cast<double>(xr[c] - mx)) / total);
    }
}

}  // namespace srae::detail
