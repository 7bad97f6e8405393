#pragma once

#include <string>

#include "lvd/ops.hpp"
#include "lvd/params.hpp"

namespace lvd {

template <typename S>
struct Linear {
    Tensor<S> w, b;

    static Linear create(ParamStore<S>& ps, const std::string& prefix, int64_t in,
                         int64_t out, Rng& rng, bool zero_init = false,
                         double gain = 1.0) {
        Linear l;
        l.w = ps.add(prefix + ".w",
                     zero_init ? Tensor<S>::zeros({in, out}, true)
                               : kaiming_normal<S>({in, out}, in, rng, gain));
        l.b = ps.add(prefix + ".b", Tensor<S>::zeros({out}, true));
        return l;
    }

    Tensor<S> operator()(Tape<S>& tp, Tensor<S> x) const {
        return linear(tp, x, w, b);
    }
};

template <typename S>
struct Conv2dLayer {
    Tensor<S> w, b;

    static Conv2dLayer create(ParamStore<S>& ps, const std::string& prefix,
                              int64_t cin, int64_t cout, int64_t k, Rng& rng,
                              bool zero_init = false) {
        Conv2dLayer l;
        l.w = ps.add(prefix + ".w",
                     zero_init ? Tensor<S>::zeros({cout, cin, k, k}, true)
                               : kaiming_normal<S>({cout, cin, k, k}, cin * k * k, rng));
        l.b = ps.add(prefix + ".b", Tensor<S>::zeros({cout}, true));
        return l;
    }

    Tensor<S> operator()(Tape<S>& tp, Tensor<S> x) const {
        return conv2d(tp, x, w, b);
    }
};

// Temporal mixing kernel, delta-initialized: the block starts as a pure
// per-frame model and learns temporal coupling.
template <typename S>
struct TemporalConv {
    Tensor<S> w;  // [C, C, kt]

    static TemporalConv create(ParamStore<S>& ps, const std::string& prefix,
                               int64_t c, int64_t kt) {
        TemporalConv l;
        Tensor<S> w = Tensor<S>::zeros({c, c, kt}, true);
        for (int64_t i = 0; i < c; i++) w.data()[(i * c + i) * kt + kt / 2] = S(1);
        l.w = ps.add(prefix + ".w", w);
        return l;
    }

    Tensor<S> operator()(Tape<S>& tp, Tensor<S> x) const {
        return conv1d_temporal(tp, x, w);
    }
};

// [B,C,F,H,W] <-> [B*F,C,H,W]
template <typename S>
Tensor<S> fold_frames(Tape<S>& tp, Tensor<S> x) {
    int64_t b = x.dim(0), c = x.dim(1), f = x.dim(2), h = x.dim(3), w = x.dim(4);
    return permute(tp, x, {0, 2, 1, 3, 4}).reshaped({b * f, c, h, w});
}

template <typename S>
Tensor<S> unfold_frames(Tape<S>& tp, Tensor<S> x, int64_t b) {
    int64_t bf = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t f = bf / b;
    return permute(tp, x.reshaped({b, f, c, h, w}), {0, 2, 1, 3, 4});
}

// A 2D convolution per frame followed by a 1D convolution over frames at
// each spatial location. Residual connection when channel counts agree.
template <typename S>
struct Pseudo3dConv {
    Conv2dLayer<S> spatial;
    TemporalConv<S> temporal;
    bool residual = true;
    int64_t cin = 0, cout = 0;

    static Pseudo3dConv create(ParamStore<S>& ps, const std::string& prefix,
                               int64_t cin, int64_t cout, int64_t k, int64_t kt,
                               Rng& rng, bool residual = true) {
        Pseudo3dConv l;
        l.spatial = Conv2dLayer<S>::create(ps, prefix + ".s", cin, cout, k, rng);
        l.temporal = TemporalConv<S>::create(ps, prefix + ".t", cout, kt);
        l.residual = residual;
        l.cin = cin;
        l.cout = cout;
        return l;
    }

    // x [B,C,F,H,W] -> [B,C',F,H,W]; skip_temporal exposes the 2D-only path
    Tensor<S> forward(Tape<S>& tp, Tensor<S> x, bool skip_temporal = false) const {
        int64_t b = x.dim(0);
        Tensor<S> h = fold_frames(tp, x);
        h = spatial(tp, h);
        Tensor<S> y = unfold_frames(tp, h, b);
        if (!skip_temporal) y = temporal(tp, y);
        if (residual && cin == cout) y = add(tp, y, x);
        return y;
    }
};

// Multi-head self-attention over [N,T,C] with a learned positional table.
template <typename S>
struct SelfAttention {
    Linear<S> qkv;
    Linear<S> proj;    // zero-initialized: identity block at init
    Tensor<S> pos;     // [T_max, C]
    int64_t heads = 1;
    int64_t channels = 0;

    static SelfAttention create(ParamStore<S>& ps, const std::string& prefix,
                                int64_t c, int64_t t_max, int64_t heads, Rng& rng) {
        if (c % heads != 0)
            throw ShapeError(strcat_("attention: channels ", c,
                                     " not divisible by heads ", heads));
        SelfAttention a;
        a.qkv = Linear<S>::create(ps, prefix + ".qkv", c, 3 * c, rng);
        a.proj = Linear<S>::create(ps, prefix + ".proj", c, c, rng, /*zero_init=*/true);
        a.pos = ps.add(prefix + ".pos", Tensor<S>::randn({t_max, c}, rng, S(0.02), true));
        a.heads = heads;
        a.channels = c;
        return a;
    }

    Tensor<S> forward(Tape<S>& tp, Tensor<S> x) const {
        int64_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
        if (c != channels) throw ShapeError("attention: channel mismatch");
        if (t > pos.dim(0))
            throw ShapeError(strcat_("attention: ", t, " tokens exceed table of ",
                                     pos.dim(0)));
        Tensor<S> p = (t == pos.dim(0)) ? pos : slice(tp, pos, 0, 0, t);
        Tensor<S> tin = add_rowwise(tp, x, p);
        Tensor<S> qkv3 = qkv(tp, tin);  // [N,T,3C]
        int64_t d = c / heads;
        auto split_heads = [&](int64_t off) {
            Tensor<S> part = slice(tp, qkv3, 2, off, c);
            return permute(tp, part.reshaped({n, t, heads, d}), {0, 2, 1, 3});
        };
        Tensor<S> q = split_heads(0);
        Tensor<S> k = split_heads(c);
        Tensor<S> v = split_heads(2 * c);
        q = scale(tp, q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(d))));
        Tensor<S> scores = matmul(tp, q, permute(tp, k, {0, 1, 3, 2}));  // [N,h,T,T]
        Tensor<S> attn = softmax(tp, scores, -1);
        Tensor<S> ctx = matmul(tp, attn, v);  // [N,h,T,d]
        ctx = permute(tp, ctx, {0, 2, 1, 3}).reshaped({n, t, c});
        return proj(tp, ctx);
    }
};

}  // namespace lvd
