#pragma once

// Brute-force reference implementations, kept independent of the production
// kernels on purpose: plain nested loops, no BLAS, no shared helpers.

#include <vector>

#include "lvd/tensor.hpp"

namespace oracles {

// six nested loops, zero same-padding, cross-correlation
template <typename S>
lvd::Tensor<S> conv2d_loops(const lvd::Tensor<S>& x, const lvd::Tensor<S>& w,
                            const lvd::Tensor<S>& b) {
    int64_t bs = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int64_t ph = kh / 2, pw = kw / 2;
    lvd::Tensor<S> out = lvd::Tensor<S>::zeros({bs, cout, h, ww});
    for (int64_t n = 0; n < bs; n++)
        for (int64_t co = 0; co < cout; co++)
            for (int64_t y = 0; y < h; y++)
                for (int64_t xx = 0; xx < ww; xx++) {
                    S acc = b.defined() ? b.data()[co] : S(0);
                    for (int64_t ci = 0; ci < cin; ci++)
                        for (int64_t i = 0; i < kh; i++)
                            for (int64_t j = 0; j < kw; j++) {
                                int64_t sy = y + i - ph, sx = xx + j - pw;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= ww) continue;
                                acc += x.data()[((n * cin + ci) * h + sy) * ww + sx] *
                                       w.data()[((co * cin + ci) * kh + i) * kw + j];
                            }
                    out.data()[((n * cout + co) * h + y) * ww + xx] = acc;
                }
    return out;
}

// loop over the frame axis at each spatial location
template <typename S>
lvd::Tensor<S> conv1d_temporal_loops(const lvd::Tensor<S>& x,
                                     const lvd::Tensor<S>& w) {
    int64_t bs = x.dim(0), cin = x.dim(1), f = x.dim(2), h = x.dim(3), ww = x.dim(4);
    int64_t cout = w.dim(0), kt = w.dim(2);
    int64_t ct = kt / 2;
    lvd::Tensor<S> out = lvd::Tensor<S>::zeros({bs, cout, f, h, ww});
    for (int64_t n = 0; n < bs; n++)
        for (int64_t co = 0; co < cout; co++)
            for (int64_t ff = 0; ff < f; ff++)
                for (int64_t y = 0; y < h; y++)
                    for (int64_t xx = 0; xx < ww; xx++) {
                        S acc = S(0);
                        for (int64_t ci = 0; ci < cin; ci++)
                            for (int64_t dt = 0; dt < kt; dt++) {
                                int64_t sf = ff + dt - ct;
                                if (sf < 0 || sf >= f) continue;
                                acc += x.data()[(((n * cin + ci) * f + sf) * h + y) * ww + xx] *
                                       w.data()[(co * cin + ci) * kt + dt];
                            }
                        out.data()[(((n * cout + co) * f + ff) * h + y) * ww + xx] = acc;
                    }
    return out;
}

template <typename S>
S max_abs_diff(const lvd::Tensor<S>& a, const lvd::Tensor<S>& b) {
    S worst = S(0);
    for (int64_t i = 0; i < a.numel(); i++)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace oracles
