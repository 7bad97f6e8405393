#pragma once

#include <algorithm>
#include <cmath>

#include "lvd/gemm.hpp"
#include "lvd/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes the forward
// value into a fresh tensor and, when the tape is recording and any input
// requires grad, appends one backward closure. Backward closures only read
// output grads and accumulate (+=) into input grads, in a fixed summation
// order, so replays are deterministic and additive.

namespace lvd {

template <typename S>
bool track(Tape<S>& tp, std::initializer_list<const Tensor<S>*> inputs) {
    if (!tp.recording()) return false;
    for (const Tensor<S>* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <typename S>
Tensor<S> make_out(Shape shape, bool req) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), req);
    return t;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
void check_same_shape(Tensor<S> a, Tensor<S> b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(strcat_(op, ": shape mismatch ", shape_str(a.shape()),
                                 " vs ", shape_str(b.shape())));
}

template <typename S>
Tensor<S> add(Tape<S>& tp, Tensor<S> a, Tensor<S> b) {
    check_same_shape(a, b, "add");
    bool req = track(tp, {&a, &b});
    Tensor<S> out = make_out<S>(a.shape(), req);
    const S* ap = a.data();
    const S* bp = b.data();
    S* op_ = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) op_[i] = ap[i] + bp[i];
    if (req)
        tp.record(out, [a, b, out]() mutable {
            const S* g = out.grad();
            int64_t m = out.numel();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < m; i++) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < m; i++) gb[i] += g[i];
            }
        });
    return out;
}

template <typename S>
Tensor<S> sub(Tape<S>& tp, Tensor<S> a, Tensor<S> b) {
    check_same_shape(a, b, "sub");
    bool req = track(tp, {&a, &b});
    Tensor<S> out = make_out<S>(a.shape(), req);
    const S* ap = a.data();
    const S* bp = b.data();
    S* op_ = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) op_[i] = ap[i] - bp[i];
    if (req)
        tp.record(out, [a, b, out]() mutable {
            const S* g = out.grad();
            int64_t m = out.numel();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < m; i++) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < m; i++) gb[i] -= g[i];
            }
        });
    return out;
}

template <typename S>
Tensor<S> mul(Tape<S>& tp, Tensor<S> a, Tensor<S> b) {
    check_same_shape(a, b, "mul");
    bool req = track(tp, {&a, &b});
    Tensor<S> out = make_out<S>(a.shape(), req);
    const S* ap = a.data();
    const S* bp = b.data();
    S* op_ = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) op_[i] = ap[i] * bp[i];
    if (req)
        tp.record(out, [a, b, out]() mutable {
            const S* g = out.grad();
            int64_t m = out.numel();
            if (a.requires_grad()) {
                S* ga = a.grad();
                const S* bp2 = b.data();
                for (int64_t i = 0; i < m; i++) ga[i] += g[i] * bp2[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                const S* ap2 = a.data();
                for (int64_t i = 0; i < m; i++) gb[i] += g[i] * ap2[i];
            }
        });
    return out;
}

template <typename S>
Tensor<S> scale(Tape<S>& tp, Tensor<S> a, S c) {
    bool req = track(tp, {&a});
    Tensor<S> out = make_out<S>(a.shape(), req);
    const S* ap = a.data();
    S* op_ = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) op_[i] = ap[i] * c;
    if (req)
        tp.record(out, [a, out, c]() mutable {
            const S* g = out.grad();
            S* ga = a.grad();
            int64_t m = out.numel();
            for (int64_t i = 0; i < m; i++) ga[i] += g[i] * c;
        });
    return out;
}

template <typename S>
Tensor<S> silu(Tape<S>& tp, Tensor<S> a) {
    bool req = track(tp, {&a});
    Tensor<S> out = make_out<S>(a.shape(), req);
    const S* ap = a.data();
    S* op_ = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) {
        S sg = S(1) / (S(1) + std::exp(-ap[i]));
        op_[i] = ap[i] * sg;
    }
    if (req)
        tp.record(out, [a, out]() mutable {
            const S* g = out.grad();
            const S* ap2 = a.data();
            S* ga = a.grad();
            int64_t m = out.numel();
            for (int64_t i = 0; i < m; i++) {
                S sg = S(1) / (S(1) + std::exp(-ap2[i]));
                ga[i] += g[i] * (sg * (S(1) + ap2[i] * (S(1) - sg)));
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// matmul: a [..,m,k] x b [..,k,n] -> [..,m,n], batch prefixes broadcast
// against each other (equal or 1, missing dims count as 1).

template <typename S>
Tensor<S> matmul(Tape<S>& tp, Tensor<S> a, Tensor<S> b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError(strcat_("matmul: rank must be >= 2, got ",
                                 shape_str(a.shape()), " x ", shape_str(b.shape())));
    int64_t m = a.dim(-2), ka = a.dim(-1);
    int64_t kb = b.dim(-2), n = b.dim(-1);
    if (ka != kb)
        throw ShapeError(strcat_("matmul: inner extents disagree, ",
                                 shape_str(a.shape()), " x ", shape_str(b.shape())));
    int ba_rank = a.rank() - 2, bb_rank = b.rank() - 2;
    int batch_rank = std::max(ba_rank, bb_rank);
    Shape batch(static_cast<size_t>(batch_rank));
    for (int i = 0; i < batch_rank; i++) {
        int64_t da = (i >= batch_rank - ba_rank) ? a.dim(i - (batch_rank - ba_rank)) : 1;
        int64_t db = (i >= batch_rank - bb_rank) ? b.dim(i - (batch_rank - bb_rank)) : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(strcat_("matmul: batch prefixes incompatible, ",
                                     shape_str(a.shape()), " x ", shape_str(b.shape())));
        batch[static_cast<size_t>(i)] = std::max(da, db);
    }
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    bool req = track(tp, {&a, &b});
    Tensor<S> out = make_out<S>(out_shape, req);

    int64_t nbatch = shape_numel(batch);
    // per-batch element offsets with stride 0 on broadcast dims
    auto batch_offsets = [&](Tensor<S> t, int t_batch_rank,
                             int64_t slice) {
        std::vector<int64_t> offs(static_cast<size_t>(nbatch), 0);
        std::vector<int64_t> idx(static_cast<size_t>(batch_rank), 0);
        for (int64_t bi = 0; bi < nbatch; bi++) {
            int64_t off = 0, stride = slice;
            for (int i = t_batch_rank - 1; i >= 0; i--) {
                int64_t e = t.dim(i);
                int64_t x = idx[static_cast<size_t>(i + batch_rank - t_batch_rank)];
                off += (e == 1 ? 0 : x) * stride;
                stride *= e;
            }
            offs[static_cast<size_t>(bi)] = off;
            for (int i = batch_rank - 1; i >= 0; i--) {
                if (++idx[static_cast<size_t>(i)] < batch[static_cast<size_t>(i)]) break;
                idx[static_cast<size_t>(i)] = 0;
            }
        }
        return offs;
    };
    std::vector<int64_t> a_off = batch_offsets(a, ba_rank, m * ka);
    std::vector<int64_t> b_off = batch_offsets(b, bb_rank, ka * n);
    for (int64_t bi = 0; bi < nbatch; bi++) {
        gemm(false, false, m, n, ka, S(1), a.data() + a_off[static_cast<size_t>(bi)], ka,
             b.data() + b_off[static_cast<size_t>(bi)], n, S(0),
             out.data() + bi * m * n, n);
    }
    if (req)
        tp.record(out, [a, b, out, a_off, b_off, m, n, ka, nbatch]() mutable {
            const S* g = out.grad();
            for (int64_t bi = 0; bi < nbatch; bi++) {
                const S* gb_ = g + bi * m * n;
                if (a.requires_grad()) {
                    // da += g x b^T
                    gemm(false, true, m, ka, n, S(1), gb_, n,
                         b.data() + b_off[static_cast<size_t>(bi)], n, S(1),
                         a.grad() + a_off[static_cast<size_t>(bi)], ka);
                }
                if (b.requires_grad()) {
                    // db += a^T x g
                    gemm(true, false, ka, n, m, S(1),
                         a.data() + a_off[static_cast<size_t>(bi)], ka, gb_, n, S(1),
                         b.grad() + b_off[static_cast<size_t>(bi)], n);
                }
            }
        });
    return out;
}

// linear: x [.., K] x w [K, M] + b[M]
template <typename S>
Tensor<S> linear(Tape<S>& tp, Tensor<S> x, Tensor<S> w,
                 Tensor<S> b = {}) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
    int64_t k = w.dim(0), mout = w.dim(1);
    if (x.dim(-1) != k)
        throw ShapeError(strcat_("linear: input width ", x.dim(-1),
                                 " != weight rows ", k));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != mout))
        throw ShapeError("linear: bias shape mismatch");
    int64_t rows = x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = mout;
    bool req = track(tp, {&x, &w, &b});
    Tensor<S> out = make_out<S>(out_shape, req);
    if (b.defined()) {
        S* op_ = out.data();
        const S* bp = b.data();
        for (int64_t r = 0; r < rows; r++)
            for (int64_t j = 0; j < mout; j++) op_[r * mout + j] = bp[j];
        gemm(false, false, rows, mout, k, S(1), x.data(), k, w.data(), mout, S(1),
             out.data(), mout);
    } else {
        gemm(false, false, rows, mout, k, S(1), x.data(), k, w.data(), mout, S(0),
             out.data(), mout);
    }
    if (req)
        tp.record(out, [x, w, b, out, rows, k, mout]() mutable {
            const S* g = out.grad();
            if (x.requires_grad())
                gemm(false, true, rows, k, mout, S(1), g, mout, w.data(), mout, S(1),
                     x.grad(), k);
            if (w.requires_grad())
                gemm(true, false, k, mout, rows, S(1), x.data(), k, g, mout, S(1),
                     w.grad(), mout);
            if (b.defined() && b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t r = 0; r < rows; r++)
                    for (int64_t j = 0; j < mout; j++) gb[j] += g[r * mout + j];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// conv2d, odd kernel, zero same-padding, cross-correlation convention.
// x [B,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] optional -> [B,Cout,H,W]

template <typename S>
void im2col(const S* x, int64_t cin, int64_t h, int64_t w_, int64_t kh, int64_t kw,
            S* col) {
    int64_t ph = kh / 2, pw = kw / 2;
    int64_t hw = h * w_;
    S* cp = col;
    for (int64_t c = 0; c < cin; c++) {
        const S* xc = x + c * hw;
        for (int64_t i = 0; i < kh; i++) {
            for (int64_t j = 0; j < kw; j++) {
                for (int64_t y = 0; y < h; y++) {
                    int64_t sy = y + i - ph;
                    if (sy < 0 || sy >= h) {
                        for (int64_t xx = 0; xx < w_; xx++) *cp++ = S(0);
                        continue;
                    }
                    const S* row = xc + sy * w_;
                    for (int64_t xx = 0; xx < w_; xx++) {
                        int64_t sx = xx + j - pw;
                        *cp++ = (sx < 0 || sx >= w_) ? S(0) : row[sx];
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_acc(const S* col, int64_t cin, int64_t h, int64_t w_, int64_t kh,
                int64_t kw, S* dx) {
    int64_t ph = kh / 2, pw = kw / 2;
    int64_t hw = h * w_;
    const S* cp = col;
    for (int64_t c = 0; c < cin; c++) {
        S* xc = dx + c * hw;
        for (int64_t i = 0; i < kh; i++) {
            for (int64_t j = 0; j < kw; j++) {
                for (int64_t y = 0; y < h; y++) {
                    int64_t sy = y + i - ph;
                    if (sy < 0 || sy >= h) {
                        cp += w_;
                        continue;
                    }
                    S* row = xc + sy * w_;
                    for (int64_t xx = 0; xx < w_; xx++) {
                        int64_t sx = xx + j - pw;
                        S v = *cp++;
                        if (sx >= 0 && sx < w_) row[sx] += v;
                    }
                }
            }
        }
    }
}

template <typename S>
Tensor<S> conv2d(Tape<S>& tp, Tensor<S> x, Tensor<S> w,
                 Tensor<S> b = {}) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError(strcat_("conv2d: expected x rank 4 and w rank 4, got ",
                                 shape_str(x.shape()), " and ", shape_str(w.shape())));
    int64_t bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw ShapeError(strcat_("conv2d: channel mismatch, input has ", cin,
                                 " but kernel expects ", w.dim(1)));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd");
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeError("conv2d: bias shape mismatch");
    bool req = track(tp, {&x, &w, &b});
    Tensor<S> out = make_out<S>({bsz, cout, h, ww}, req);
    int64_t hw = h * ww;
    int64_t ck = cin * kh * kw;
    std::vector<S> col(static_cast<size_t>(ck * hw));
    for (int64_t nb = 0; nb < bsz; nb++) {
        im2col(x.data() + nb * cin * hw, cin, h, ww, kh, kw, col.data());
        S* on = out.data() + nb * cout * hw;
        if (b.defined()) {
            const S* bp = b.data();
            for (int64_t c = 0; c < cout; c++)
                for (int64_t i = 0; i < hw; i++) on[c * hw + i] = bp[c];
            gemm(false, false, cout, hw, ck, S(1), w.data(), ck, col.data(), hw,
                 S(1), on, hw);
        } else {
            gemm(false, false, cout, hw, ck, S(1), w.data(), ck, col.data(), hw,
                 S(0), on, hw);
        }
    }
    if (req)
        tp.record(out, [x, w, b, out, bsz, cin, cout, h, ww, kh, kw]() mutable {
            int64_t hw = h * ww;
            int64_t ck = cin * kh * kw;
            const S* g = out.grad();
            std::vector<S> col(static_cast<size_t>(ck * hw));
            std::vector<S> dcol;
            if (x.requires_grad()) dcol.resize(static_cast<size_t>(ck * hw));
            for (int64_t nb = 0; nb < bsz; nb++) {
                const S* gn = g + nb * cout * hw;
                if (w.requires_grad()) {
                    im2col(x.data() + nb * cin * hw, cin, h, ww, kh, kw, col.data());
                    gemm(false, true, cout, ck, hw, S(1), gn, hw, col.data(), hw,
                         S(1), w.grad(), ck);
                }
                if (x.requires_grad()) {
                    gemm(true, false, ck, hw, cout, S(1), w.data(), ck, gn, hw,
                         S(0), dcol.data(), hw);
                    col2im_acc(dcol.data(), cin, h, ww, kh, kw,
                               x.grad() + nb * cin * hw);
                }
            }
            if (b.defined() && b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t nb = 0; nb < bsz; nb++)
                    for (int64_t c = 0; c < cout; c++) {
                        const S* gr = g + (nb * cout + c) * hw;
                        S acc = S(0);
                        for (int64_t i = 0; i < hw; i++) acc += gr[i];
                        gb[c] += acc;
                    }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// temporal conv along the frame axis, zero same-padding, per (h,w) location.
// x [B,C,F,H,W], w [Cout,Cin,kt] -> [B,Cout,F,H,W]

template <typename S>
Tensor<S> conv1d_temporal(Tape<S>& tp, Tensor<S> x, Tensor<S> w) {
    if (x.rank() != 5 || w.rank() != 3)
        throw ShapeError(strcat_("conv1d_temporal: expected x rank 5, w rank 3, got ",
                                 shape_str(x.shape()), " and ", shape_str(w.shape())));
    int64_t bsz = x.dim(0), cin = x.dim(1), f = x.dim(2), h = x.dim(3), ww = x.dim(4);
    int64_t cout = w.dim(0), kt = w.dim(2);
    if (w.dim(1) != cin)
        throw ShapeError(strcat_("conv1d_temporal: channel mismatch, input has ",
                                 cin, " but kernel expects ", w.dim(1)));
    if (kt % 2 == 0) throw ShapeError("conv1d_temporal: kernel extent must be odd");
    bool req = track(tp, {&x, &w});
    Tensor<S> out = make_out<S>({bsz, cout, f, h, ww}, req);
    int64_t hw = h * ww;
    int64_t fhw = f * hw;
    int64_t ct = kt / 2;
    std::vector<S> wdt(static_cast<size_t>(cout * cin));
    for (int64_t nb = 0; nb < bsz; nb++) {
        for (int64_t dt = 0; dt < kt; dt++) {
            int64_t o = dt - ct;
            int64_t f0 = std::max<int64_t>(0, -o);
            int64_t f1 = f - std::max<int64_t>(0, o);
            if (f1 <= f0) continue;
            for (int64_t co = 0; co < cout; co++)
                for (int64_t ci = 0; ci < cin; ci++)
                    wdt[static_cast<size_t>(co * cin + ci)] =
                        w.data()[(co * cin + ci) * kt + dt];
            int64_t len = (f1 - f0) * hw;
            gemm(false, false, cout, len, cin, S(1), wdt.data(), cin,
                 x.data() + nb * cin * fhw + (f0 + o) * hw, fhw, S(1),
                 out.data() + nb * cout * fhw + f0 * hw, fhw);
        }
    }
    if (req)
        tp.record(out, [x, w, out, bsz, cin, cout, f, hw, kt]() mutable {
            int64_t fhw = f * hw;
            int64_t ct = kt / 2;
            const S* g = out.grad();
            std::vector<S> wdt(static_cast<size_t>(cout * cin));
            std::vector<S> dwdt(static_cast<size_t>(cout * cin));
            for (int64_t dt = 0; dt < kt; dt++) {
                int64_t o = dt - ct;
                int64_t f0 = std::max<int64_t>(0, -o);
                int64_t f1 = f - std::max<int64_t>(0, o);
                if (f1 <= f0) continue;
                int64_t len = (f1 - f0) * hw;
                if (x.requires_grad()) {
                    for (int64_t co = 0; co < cout; co++)
                        for (int64_t ci = 0; ci < cin; ci++)
                            wdt[static_cast<size_t>(ci * cout + co)] =
                                w.data()[(co * cin + ci) * kt + dt];
                    for (int64_t nb = 0; nb < bsz; nb++)
                        gemm(false, false, cin, len, cout, S(1), wdt.data(), cout,
                             g + nb * cout * fhw + f0 * hw, fhw, S(1),
                             x.grad() + nb * cin * fhw + (f0 + o) * hw, fhw);
                }
                if (w.requires_grad()) {
                    std::fill(dwdt.begin(), dwdt.end(), S(0));
                    for (int64_t nb = 0; nb < bsz; nb++)
                        gemm(false, true, cout, cin, len, S(1),
                             g + nb * cout * fhw + f0 * hw, fhw,
                             x.data() + nb * cin * fhw + (f0 + o) * hw, fhw, S(1),
                             dwdt.data(), cin);
                    S* gw = w.grad();
                    for (int64_t co = 0; co < cout; co++)
                        for (int64_t ci = 0; ci < cin; ci++)
                            gw[(co * cin + ci) * kt + dt] +=
                                dwdt[static_cast<size_t>(co * cin + ci)];
                }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// group normalization: per-sample, per-group zero mean / unit variance over
// (channels-in-group x everything after the channel axis). No affine term.

template <typename S>
Tensor<S> group_norm(Tape<S>& tp, Tensor<S> x, int64_t groups,
                     S eps = S(1e-5)) {
    if (x.rank() < 2) throw ShapeError("group_norm: rank must be >= 2");
    int64_t n = x.dim(0), c = x.dim(1);
    if (groups < 1 || c % groups != 0)
        throw ShapeError(strcat_("group_norm: channels ", c,
                                 " not divisible by groups ", groups));
    int64_t rest = x.numel() / (n * c);
    int64_t cg = c / groups;
    int64_t gsz = cg * rest;
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(x.shape(), req);
    std::vector<S> invstd(static_cast<size_t>(n * groups));
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < n; i++) {
        for (int64_t g = 0; g < groups; g++) {
            const S* base = xp + (i * c + g * cg) * rest;
            S mean = S(0);
            for (int64_t k = 0; k < gsz; k++) mean += base[k];
            mean /= static_cast<S>(gsz);
            S var = S(0);
            for (int64_t k = 0; k < gsz; k++) {
                S d = base[k] - mean;
                var += d * d;
            }
            var /= static_cast<S>(gsz);
            S r = S(1) / std::sqrt(var + eps);
            invstd[static_cast<size_t>(i * groups + g)] = r;
            S* ob = op_ + (i * c + g * cg) * rest;
            for (int64_t k = 0; k < gsz; k++) ob[k] = (base[k] - mean) * r;
        }
    }
    if (req)
        tp.record(out, [x, out, invstd, n, groups, cg, rest]() mutable {
            int64_t gsz = cg * rest;
            const S* g = out.grad();
            const S* y = out.data();
            S* gx = x.grad();
            int64_t c = cg * groups;
            for (int64_t i = 0; i < n; i++) {
                for (int64_t gi = 0; gi < groups; gi++) {
                    int64_t off = (i * c + gi * cg) * rest;
                    S s1 = S(0), s2 = S(0);
                    for (int64_t k = 0; k < gsz; k++) {
                        s1 += g[off + k];
                        s2 += g[off + k] * y[off + k];
                    }
                    s1 /= static_cast<S>(gsz);
                    s2 /= static_cast<S>(gsz);
                    S r = invstd[static_cast<size_t>(i * groups + gi)];
                    for (int64_t k = 0; k < gsz; k++)
                        gx[off + k] += r * (g[off + k] - s1 - y[off + k] * s2);
                }
            }
        });
    return out;
}

// per-channel affine y = x*gamma_c + beta_c on [N,C,...]
template <typename S>
Tensor<S> channel_affine(Tape<S>& tp, Tensor<S> x, Tensor<S> gamma,
                         Tensor<S> beta) {
    if (x.rank() < 2) throw ShapeError("channel_affine: rank must be >= 2");
    int64_t n = x.dim(0), c = x.dim(1);
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("channel_affine: gamma/beta must have one value per channel");
    int64_t rest = x.numel() / (n * c);
    bool req = track(tp, {&x, &gamma, &beta});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    const S* gp = gamma.data();
    const S* bp = beta.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < n; i++)
        for (int64_t ch = 0; ch < c; ch++) {
            int64_t off = (i * c + ch) * rest;
            for (int64_t k = 0; k < rest; k++)
                op_[off + k] = xp[off + k] * gp[ch] + bp[ch];
        }
    if (req)
        tp.record(out, [x, gamma, beta, out, n, c, rest]() mutable {
            const S* g = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                const S* gp2 = gamma.data();
                for (int64_t i = 0; i < n; i++)
                    for (int64_t ch = 0; ch < c; ch++) {
                        int64_t off = (i * c + ch) * rest;
                        for (int64_t k = 0; k < rest; k++)
                            gx[off + k] += g[off + k] * gp2[ch];
                    }
            }
            if (gamma.requires_grad()) {
                S* gg = gamma.grad();
                const S* xp2 = x.data();
                for (int64_t i = 0; i < n; i++)
                    for (int64_t ch = 0; ch < c; ch++) {
                        int64_t off = (i * c + ch) * rest;
                        S acc = S(0);
                        for (int64_t k = 0; k < rest; k++)
                            acc += g[off + k] * xp2[off + k];
                        gg[ch] += acc;
                    }
            }
            if (beta.requires_grad()) {
                S* gb = beta.grad();
                for (int64_t i = 0; i < n; i++)
                    for (int64_t ch = 0; ch < c; ch++) {
                        int64_t off = (i * c + ch) * rest;
                        S acc = S(0);
                        for (int64_t k = 0; k < rest; k++) acc += g[off + k];
                        gb[ch] += acc;
                    }
            }
        });
    return out;
}

// scale-shift modulation y = x*(k+1) + s with per-sample, per-channel (k,s).
// x [N,C,...], k and s [N,C].
template <typename S>
Tensor<S> scale_shift_mod(Tape<S>& tp, Tensor<S> x, Tensor<S> k,
                          Tensor<S> s) {
    if (x.rank() < 2) throw ShapeError("scale_shift_mod: rank must be >= 2");
    int64_t n = x.dim(0), c = x.dim(1);
    if (k.numel() != n * c || s.numel() != n * c)
        throw ShapeError(strcat_("scale_shift_mod: k/s must be [N,C]=[", n, ",", c,
                                 "], got ", shape_str(k.shape()), " and ",
                                 shape_str(s.shape())));
    int64_t rest = x.numel() / (n * c);
    bool req = track(tp, {&x, &k, &s});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    const S* kp = k.data();
    const S* sp = s.data();
    S* op_ = out.data();
    for (int64_t nc = 0; nc < n * c; nc++) {
        int64_t off = nc * rest;
        S km = kp[nc] + S(1);
        S sv = sp[nc];
        for (int64_t i = 0; i < rest; i++) op_[off + i] = xp[off + i] * km + sv;
    }
    if (req)
        tp.record(out, [x, k, s, out, n, c, rest]() mutable {
            const S* g = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                const S* kp2 = k.data();
                for (int64_t nc = 0; nc < n * c; nc++) {
                    int64_t off = nc * rest;
                    S km = kp2[nc] + S(1);
                    for (int64_t i = 0; i < rest; i++) gx[off + i] += g[off + i] * km;
                }
            }
            if (k.requires_grad()) {
                S* gk = k.grad();
                const S* xp2 = x.data();
                for (int64_t nc = 0; nc < n * c; nc++) {
                    int64_t off = nc * rest;
                    S acc = S(0);
                    for (int64_t i = 0; i < rest; i++) acc += g[off + i] * xp2[off + i];
                    gk[nc] += acc;
                }
            }
            if (s.requires_grad()) {
                S* gs = s.grad();
                for (int64_t nc = 0; nc < n * c; nc++) {
                    int64_t off = nc * rest;
                    S acc = S(0);
                    for (int64_t i = 0; i < rest; i++) acc += g[off + i];
                    gs[nc] += acc;
                }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted. Rejects NaN input.

template <typename S>
Tensor<S> softmax(Tape<S>& tp, Tensor<S> x, int axis) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range");
    const S* xp = x.data();
    int64_t nx = x.numel();
    for (int64_t i = 0; i < nx; i++)
        if (std::isnan(xp[i])) throw NumericError("softmax: NaN input");
    int64_t mid = x.dim(axis);
    int64_t inner = 1;
    for (int i = axis + 1; i < r; i++) inner *= x.dim(i);
    int64_t outer = nx / (mid * inner);
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(x.shape(), req);
    S* op_ = out.data();
    for (int64_t o = 0; o < outer; o++)
        for (int64_t in = 0; in < inner; in++) {
            int64_t base = o * mid * inner + in;
            S mx = xp[base];
            for (int64_t j = 1; j < mid; j++)
                mx = std::max(mx, xp[base + j * inner]);
            S sum = S(0);
            for (int64_t j = 0; j < mid; j++) {
                S e = std::exp(xp[base + j * inner] - mx);
                op_[base + j * inner] = e;
                sum += e;
            }
            S r_ = S(1) / sum;
            for (int64_t j = 0; j < mid; j++) op_[base + j * inner] *= r_;
        }
    if (req)
        tp.record(out, [x, out, outer, mid, inner]() mutable {
            const S* g = out.grad();
            const S* y = out.data();
            S* gx = x.grad();
            for (int64_t o = 0; o < outer; o++)
                for (int64_t in = 0; in < inner; in++) {
                    int64_t base = o * mid * inner + in;
                    S dot = S(0);
                    for (int64_t j = 0; j < mid; j++)
                        dot += g[base + j * inner] * y[base + j * inner];
                    for (int64_t j = 0; j < mid; j++)
                        gx[base + j * inner] +=
                            y[base + j * inner] * (g[base + j * inner] - dot);
                }
        });
    return out;
}

// ---------------------------------------------------------------------------
// layout ops

// Odometer walk over a row-major output, tracking the mapped source offset.
template <typename Fn>
void detail_permute_walk(const Shape& out_shape,
                         const std::vector<int64_t>& stride, Fn&& fn) {
    int r = static_cast<int>(out_shape.size());
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    int64_t total = shape_numel(out_shape);
    for (int64_t i = 0; i < total; i++) {
        fn(i, src);
        for (int d = r - 1; d >= 0; d--) {
            src += stride[static_cast<size_t>(d)];
            if (++idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            src -= stride[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

template <typename S>
Tensor<S> permute(Tape<S>& tp, Tensor<S> x, const std::vector<int>& perm) {
    int r = x.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ShapeError("permute: perm length must equal rank");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; i++) {
        int p = perm[static_cast<size_t>(i)];
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
        out_shape[static_cast<size_t>(i)] = x.dim(p);
    }
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(out_shape, req);
    // input strides, rearranged per output dim
    std::vector<int64_t> xstride(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; i--)
        xstride[static_cast<size_t>(i)] = xstride[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    std::vector<int64_t> stride_for_out(static_cast<size_t>(r));
    for (int i = 0; i < r; i++)
        stride_for_out[static_cast<size_t>(i)] = xstride[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    {
        const S* xp = x.data();
        S* op_ = out.data();
        detail_permute_walk(out_shape, stride_for_out,
                            [&](int64_t i, int64_t src) { op_[i] = xp[src]; });
    }
    if (req)
        tp.record(out, [x, out, stride_for_out]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            detail_permute_walk(out.shape(), stride_for_out,
                                [&](int64_t i, int64_t src) { gx[src] += g[i]; });
        });
    return out;
}

template <typename S>
Tensor<S> concat(Tape<S>& tp, std::vector<Tensor<S>> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int r = parts[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; i++)
            if (i != axis && p.dim(i) != parts[0].dim(i))
                throw ShapeError(strcat_("concat: shape mismatch ",
                                         shape_str(p.shape()), " vs ",
                                         shape_str(parts[0].shape())));
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total_axis;
    bool req = false;
    if (tp.recording())
        for (const auto& p : parts)
            if (p.requires_grad()) req = true;
    Tensor<S> out = make_out<S>(out_shape, req);
    int64_t inner = 1;
    for (int i = axis + 1; i < r; i++) inner *= parts[0].dim(i);
    int64_t outer = out.numel() / (total_axis * inner);
    int64_t out_row = total_axis * inner;
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t row = p.dim(axis) * inner;
        const S* pp = p.data();
        S* op_ = out.data();
        for (int64_t o = 0; o < outer; o++)
            std::copy(pp + o * row, pp + (o + 1) * row, op_ + o * out_row + off);
        off += row;
    }
    if (req)
        tp.record(out, [parts, out, outer, out_row, inner]() mutable {
            (void)inner;
            const S* g = out.grad();
            int64_t off2 = 0;
            for (auto& p : parts) {
                int64_t row = p.numel() / outer;
                if (p.requires_grad()) {
                    S* gp = p.grad();
                    for (int64_t o = 0; o < outer; o++) {
                        const S* src = g + o * out_row + off2;
                        S* dst = gp + o * row;
                        for (int64_t i = 0; i < row; i++) dst[i] += src[i];
                    }
                }
                off2 += row;
            }
        });
    return out;
}

template <typename S>
Tensor<S> slice(Tape<S>& tp, Tensor<S> x, int axis, int64_t start,
                int64_t len) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw ShapeError(strcat_("slice: range [", start, ",", start + len,
                                 ") out of extent ", x.dim(axis)));
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(out_shape, req);
    int64_t inner = 1;
    for (int i = axis + 1; i < r; i++) inner *= x.dim(i);
    int64_t in_row = x.dim(axis) * inner;
    int64_t out_row = len * inner;
    int64_t outer = x.numel() / in_row;
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t o = 0; o < outer; o++)
        std::copy(xp + o * in_row + start * inner,
                  xp + o * in_row + (start + len) * inner, op_ + o * out_row);
    if (req)
        tp.record(out, [x, out, outer, in_row, out_row, start, inner]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t o = 0; o < outer; o++) {
                S* dst = gx + o * in_row + start * inner;
                const S* src = g + o * out_row;
                for (int64_t i = 0; i < out_row; i++) dst[i] += src[i];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// resampling on [N,C,H,W]

template <typename S>
Tensor<S> avg_pool2d(Tape<S>& tp, Tensor<S> x) {
    if (x.rank() != 4) throw ShapeError("avg_pool2d: expected rank 4");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("avg_pool2d: spatial extents must be even");
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>({n, c, h / 2, w / 2}, req);
    const S* xp = x.data();
    S* op_ = out.data();
    int64_t oh = h / 2, ow = w / 2;
    for (int64_t nc = 0; nc < n * c; nc++) {
        const S* xb = xp + nc * h * w;
        S* ob = op_ + nc * oh * ow;
        for (int64_t y = 0; y < oh; y++)
            for (int64_t xx = 0; xx < ow; xx++) {
                const S* p = xb + 2 * y * w + 2 * xx;
                ob[y * ow + xx] = (p[0] + p[1] + p[w] + p[w + 1]) * S(0.25);
            }
    }
    if (req)
        tp.record(out, [x, out, n, c, h, w]() mutable {
            int64_t oh = h / 2, ow = w / 2;
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t nc = 0; nc < n * c; nc++) {
                const S* gb = g + nc * oh * ow;
                S* xb = gx + nc * h * w;
                for (int64_t y = 0; y < oh; y++)
                    for (int64_t xx = 0; xx < ow; xx++) {
                        S v = gb[y * ow + xx] * S(0.25);
                        S* p = xb + 2 * y * w + 2 * xx;
                        p[0] += v;
                        p[1] += v;
                        p[w] += v;
                        p[w + 1] += v;
                    }
            }
        });
    return out;
}

template <typename S>
Tensor<S> upsample_nearest2x(Tape<S>& tp, Tensor<S> x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2x: expected rank 4");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>({n, c, h * 2, w * 2}, req);
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t nc = 0; nc < n * c; nc++) {
        const S* xb = xp + nc * h * w;
        S* ob = op_ + nc * 4 * h * w;
        for (int64_t y = 0; y < 2 * h; y++)
            for (int64_t xx = 0; xx < 2 * w; xx++)
                ob[y * 2 * w + xx] = xb[(y / 2) * w + xx / 2];
    }
    if (req)
        tp.record(out, [x, out, n, c, h, w]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t nc = 0; nc < n * c; nc++) {
                const S* gb = g + nc * 4 * h * w;
                S* xb = gx + nc * h * w;
                for (int64_t y = 0; y < 2 * h; y++)
                    for (int64_t xx = 0; xx < 2 * w; xx++)
                        xb[(y / 2) * w + xx / 2] += gb[y * 2 * w + xx];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// reductions and batch-wise helpers

template <typename S>
Tensor<S> sum_all(Tape<S>& tp, Tensor<S> x) {
    bool req = track(tp, {&x});
    S acc = S(0);
    const S* xp = x.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; i++) acc += xp[i];
    Tensor<S> out = Tensor<S>::from_data({1}, {acc}, req);
    if (req)
        tp.record(out, [x, out]() mutable {
            S g = out.grad()[0];
            S* gx = x.grad();
            int64_t m = x.numel();
            for (int64_t i = 0; i < m; i++) gx[i] += g;
        });
    return out;
}

template <typename S>
Tensor<S> mean_all(Tape<S>& tp, Tensor<S> x) {
    return scale(tp, sum_all(tp, x), S(1) / static_cast<S>(x.numel()));
}

// [B, ...] -> [B], mean over everything but the leading axis
template <typename S>
Tensor<S> mean_per_sample(Tape<S>& tp, Tensor<S> x) {
    if (x.rank() < 2) throw ShapeError("mean_per_sample: rank must be >= 2");
    int64_t b = x.dim(0);
    int64_t rest = x.numel() / b;
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>({b}, req);
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < b; i++) {
        S acc = S(0);
        const S* base = xp + i * rest;
        for (int64_t k = 0; k < rest; k++) acc += base[k];
        op_[i] = acc / static_cast<S>(rest);
    }
    if (req)
        tp.record(out, [x, out, b, rest]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t i = 0; i < b; i++) {
                S v = g[i] / static_cast<S>(rest);
                S* base = gx + i * rest;
                for (int64_t k = 0; k < rest; k++) base[k] += v;
            }
        });
    return out;
}

// scale_out * sum_b weights[b] * v[b], weights held constant
template <typename S>
Tensor<S> weighted_sum(Tape<S>& tp, Tensor<S> v,
                       const std::vector<S>& weights, S scale_out) {
    if (v.rank() != 1 || v.numel() != static_cast<int64_t>(weights.size()))
        throw ShapeError("weighted_sum: v must be [B] matching weights");
    bool req = track(tp, {&v});
    S acc = S(0);
    const S* vp = v.data();
    for (size_t i = 0; i < weights.size(); i++) acc += weights[i] * vp[i];
    Tensor<S> out = Tensor<S>::from_data({1}, {acc * scale_out}, req);
    if (req)
        tp.record(out, [v, out, weights, scale_out]() mutable {
            S g = out.grad()[0];
            S* gv = v.grad();
            for (size_t i = 0; i < weights.size(); i++)
                gv[i] += g * scale_out * weights[i];
        });
    return out;
}

// y[b,...] = c[b] * x[b,...], c held constant
template <typename S>
Tensor<S> scale_per_sample(Tape<S>& tp, Tensor<S> x,
                           const std::vector<S>& c) {
    int64_t b = x.dim(0);
    if (static_cast<int64_t>(c.size()) != b)
        throw ShapeError("scale_per_sample: coefficient count must match batch");
    int64_t rest = x.numel() / b;
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < b; i++) {
        S cv = c[static_cast<size_t>(i)];
        for (int64_t k = 0; k < rest; k++) op_[i * rest + k] = xp[i * rest + k] * cv;
    }
    if (req)
        tp.record(out, [x, out, c, b, rest]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t i = 0; i < b; i++) {
                S cv = c[static_cast<size_t>(i)];
                for (int64_t k = 0; k < rest; k++) gx[i * rest + k] += g[i * rest + k] * cv;
            }
        });
    return out;
}

// y[n,t,:] = x[n,t,:] + p[t,:]  (learned positional table)
template <typename S>
Tensor<S> add_rowwise(Tape<S>& tp, Tensor<S> x, Tensor<S> p) {
    if (x.rank() != 3 || p.rank() != 2 || x.dim(1) != p.dim(0) || x.dim(2) != p.dim(1))
        throw ShapeError(strcat_("add_rowwise: incompatible ", shape_str(x.shape()),
                                 " and ", shape_str(p.shape())));
    int64_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
    bool req = track(tp, {&x, &p});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    const S* pp = p.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < n; i++)
        for (int64_t j = 0; j < t * c; j++) op_[i * t * c + j] = xp[i * t * c + j] + pp[j];
    if (req)
        tp.record(out, [x, p, out, n, t, c]() mutable {
            const S* g = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                int64_t m = n * t * c;
                for (int64_t i = 0; i < m; i++) gx[i] += g[i];
            }
            if (p.requires_grad()) {
                S* gp = p.grad();
                for (int64_t i = 0; i < n; i++)
                    for (int64_t j = 0; j < t * c; j++) gp[j] += g[i * t * c + j];
            }
        });
    return out;
}

// y[b,f,:] = x[b,f,:] + z[b,:]
template <typename S>
Tensor<S> add_per_sample(Tape<S>& tp, Tensor<S> x, Tensor<S> z) {
    if (x.rank() != 3 || z.rank() != 2 || x.dim(0) != z.dim(0) || x.dim(2) != z.dim(1))
        throw ShapeError(strcat_("add_per_sample: incompatible ", shape_str(x.shape()),
                                 " and ", shape_str(z.shape())));
    int64_t b = x.dim(0), f = x.dim(1), e = x.dim(2);
    bool req = track(tp, {&x, &z});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    const S* zp = z.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < b; i++)
        for (int64_t j = 0; j < f; j++)
            for (int64_t k = 0; k < e; k++)
                op_[(i * f + j) * e + k] = xp[(i * f + j) * e + k] + zp[i * e + k];
    if (req)
        tp.record(out, [x, z, out, b, f, e]() mutable {
            const S* g = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                int64_t m = b * f * e;
                for (int64_t i = 0; i < m; i++) gx[i] += g[i];
            }
            if (z.requires_grad()) {
                S* gz = z.grad();
                for (int64_t i = 0; i < b; i++)
                    for (int64_t j = 0; j < f; j++)
                        for (int64_t k = 0; k < e; k++)
                            gz[i * e + k] += g[(i * f + j) * e + k];
            }
        });
    return out;
}

// [B,C,H,W] -> [B,C,F,H,W] by repeating along a new frame axis
template <typename S>
Tensor<S> repeat_frames(Tape<S>& tp, Tensor<S> x, int64_t f) {
    if (x.rank() != 4) throw ShapeError("repeat_frames: expected rank 4");
    int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>({b, c, f, h, w}, req);
    const S* xp = x.data();
    S* op_ = out.data();
    int64_t hw = h * w;
    for (int64_t bc = 0; bc < b * c; bc++)
        for (int64_t fi = 0; fi < f; fi++)
            std::copy(xp + bc * hw, xp + (bc + 1) * hw, op_ + (bc * f + fi) * hw);
    if (req)
        tp.record(out, [x, out, b, c, f, hw]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t bc = 0; bc < b * c; bc++)
                for (int64_t fi = 0; fi < f; fi++) {
                    const S* src = g + (bc * f + fi) * hw;
                    S* dst = gx + bc * hw;
                    for (int64_t i = 0; i < hw; i++) dst[i] += src[i];
                }
        });
    return out;
}

// rows with mask=true are replaced by a learned null embedding
// x [B,F,E], null_row [E], mask[b] true => replace
template <typename S>
Tensor<S> replace_masked_rows(Tape<S>& tp, Tensor<S> x,
                              Tensor<S> null_row,
                              const std::vector<uint8_t>& replace) {
    if (x.rank() != 3 || null_row.numel() != x.dim(2))
        throw ShapeError("replace_masked_rows: expected x [B,F,E] and null [E]");
    int64_t b = x.dim(0), f = x.dim(1), e = x.dim(2);
    if (static_cast<int64_t>(replace.size()) != b)
        throw ShapeError("replace_masked_rows: mask length must match batch");
    bool req = track(tp, {&x, &null_row});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    const S* np = null_row.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < b; i++) {
        if (replace[static_cast<size_t>(i)]) {
            for (int64_t j = 0; j < f; j++)
                std::copy(np, np + e, op_ + (i * f + j) * e);
        } else {
            std::copy(xp + i * f * e, xp + (i + 1) * f * e, op_ + i * f * e);
        }
    }
    if (req)
        tp.record(out, [x, null_row, out, replace, b, f, e]() mutable {
            const S* g = out.grad();
            for (int64_t i = 0; i < b; i++) {
                if (replace[static_cast<size_t>(i)]) {
                    if (null_row.requires_grad()) {
                        S* gn = null_row.grad();
                        for (int64_t j = 0; j < f; j++)
                            for (int64_t k = 0; k < e; k++)
                                gn[k] += g[(i * f + j) * e + k];
                    }
                } else if (x.requires_grad()) {
                    S* gx = x.grad();
                    for (int64_t j = 0; j < f * e; j++)
                        gx[i * f * e + j] += g[i * f * e + j];
                }
            }
        });
    return out;
}

// samples with mask=true are zeroed (used for the unconditional reference)
template <typename S>
Tensor<S> zero_masked_samples(Tape<S>& tp, Tensor<S> x,
                              const std::vector<uint8_t>& zero) {
    int64_t b = x.dim(0);
    if (static_cast<int64_t>(zero.size()) != b)
        throw ShapeError("zero_masked_samples: mask length must match batch");
    int64_t rest = x.numel() / b;
    bool req = track(tp, {&x});
    Tensor<S> out = make_out<S>(x.shape(), req);
    const S* xp = x.data();
    S* op_ = out.data();
    for (int64_t i = 0; i < b; i++)
        if (!zero[static_cast<size_t>(i)])
            std::copy(xp + i * rest, xp + (i + 1) * rest, op_ + i * rest);
    if (req)
        tp.record(out, [x, out, zero, b, rest]() mutable {
            const S* g = out.grad();
            S* gx = x.grad();
            for (int64_t i = 0; i < b; i++)
                if (!zero[static_cast<size_t>(i)])
                    for (int64_t k = 0; k < rest; k++)
                        gx[i * rest + k] += g[i * rest + k];
        });
    return out;
}

// mean cross entropy over rows of logits [N,K] with integer labels
template <typename S>
Tensor<S> cross_entropy_logits(Tape<S>& tp, Tensor<S> logits,
                               const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_logits: expected [N,K]");
    int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy_logits: label count must match rows");
    for (int lab : labels)
        if (lab < 0 || lab >= k)
            throw ShapeError("cross_entropy_logits: label out of range");
    bool req = track(tp, {&logits});
    const S* lp = logits.data();
    S loss = S(0);
    for (int64_t i = 0; i < n; i++) {
        const S* row = lp + i * k;
        S mx = row[0];
        for (int64_t j = 1; j < k; j++) mx = std::max(mx, row[j]);
        S sum = S(0);
        for (int64_t j = 0; j < k; j++) sum += std::exp(row[j] - mx);
        S lse = mx + std::log(sum);
        loss += lse - row[labels[static_cast<size_t>(i)]];
    }
    loss /= static_cast<S>(n);
    Tensor<S> out = Tensor<S>::from_data({1}, {loss}, req);
    if (req)
        tp.record(out, [logits, out, labels, n, k]() mutable {
            S g = out.grad()[0] / static_cast<S>(n);
            const S* lp2 = logits.data();
            S* gl = logits.grad();
            for (int64_t i = 0; i < n; i++) {
                const S* row = lp2 + i * k;
                S mx = row[0];
                for (int64_t j = 1; j < k; j++) mx = std::max(mx, row[j]);
                S sum = S(0);
                for (int64_t j = 0; j < k; j++) sum += std::exp(row[j] - mx);
                for (int64_t j = 0; j < k; j++) {
                    S p = std::exp(row[j] - mx) / sum;
                    gl[i * k + j] += g * (p - (j == labels[static_cast<size_t>(i)] ? S(1) : S(0)));
                }
            }
        });
    return out;
}

}  // namespace lvd
