#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hazeclip/image.hpp"

namespace hazeclip {

// Two-tap linear interpolation weights along one axis (half-pixel centres,
// edge-clamped), shared by the bilinear resize and its transpose.
struct AxisTaps {
    std::vector<int> lo, hi;
    std::vector<double> w_hi;

    AxisTaps(int in, int out) : lo(out), hi(out), w_hi(out) {
        const double scale = static_cast<double>(in) / out;
        for (int i = 0; i < out; ++i) {
            double src = (i + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            lo[i] = i0;
            hi[i] = std::min(i0 + 1, in - 1);
            w_hi[i] = src - i0;
        }
    }
};

template <typename T>
Image<T> resize_bilinear(const Image<T>& in, int out_h, int out_w) {
    if (in.height() == out_h && in.width() == out_w) return in;
    const AxisTaps ty(in.height(), out_h), tx(in.width(), out_w);
    Image<T> out(out_h, out_w);
    for (int r = 0; r < out_h; ++r) {
        const T wy = static_cast<T>(ty.w_hi[r]);
        for (int c = 0; c < out_w; ++c) {
            const T wx = static_cast<T>(tx.w_hi[c]);
            for (int ch = 0; ch < 3; ++ch) {
                const T top = in(ty.lo[r], tx.lo[c], ch) * (1 - wx) + in(ty.lo[r], tx.hi[c], ch) * wx;
                const T bot = in(ty.hi[r], tx.lo[c], ch) * (1 - wx) + in(ty.hi[r], tx.hi[c], ch) * wx;
                out(r, c, ch) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

// Adjoint of resize_bilinear: scatters output gradients back to the source grid.
template <typename T>
Image<T> resize_bilinear_transpose(const Image<T>& grad_out, int in_h, int in_w) {
    if (grad_out.height() == in_h && grad_out.width() == in_w) return grad_out;
    const AxisTaps ty(in_h, grad_out.height()), tx(in_w, grad_out.width());
    Image<T> g(in_h, in_w);
    for (int r = 0; r < grad_out.height(); ++r) {
        const T wy = static_cast<T>(ty.w_hi[r]);
        for (int c = 0; c < grad_out.width(); ++c) {
            const T wx = static_cast<T>(tx.w_hi[c]);
            for (int ch = 0; ch < 3; ++ch) {
                const T v = grad_out(r, c, ch);
                g(ty.lo[r], tx.lo[c], ch) += v * (1 - wy) * (1 - wx);
                g(ty.lo[r], tx.hi[c], ch) += v * (1 - wy) * wx;
                g(ty.hi[r], tx.lo[c], ch) += v * wy * (1 - wx);
                g(ty.hi[r], tx.hi[c], ch) += v * wy * wx;
            }
        }
    }
    return g;
}

}  // namespace hazeclip
