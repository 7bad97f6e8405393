#include <cmath>

#include "lvd/metrics.hpp"

namespace lvd {

namespace {

inline float at(const std::vector<float>& img, int64_t h, int64_t w, int64_t y,
                int64_t x) {
    y = std::clamp<int64_t>(y, 0, h - 1);
    x = std::clamp<int64_t>(x, 0, w - 1);
    return img[static_cast<size_t>(y * w + x)];
}

}  // namespace

void horn_schunck(const std::vector<float>& prev, const std::vector<float>& next,
                  int64_t h, int64_t w, std::vector<float>& u, std::vector<float>& v,
                  double alpha, int iters) {
    if (prev.size() != static_cast<size_t>(h * w) || next.size() != prev.size())
        throw ShapeError("horn_schunck: image size mismatch");
    // forward-difference gradients averaged over the 2x2x2 cube
    std::vector<float> ex(static_cast<size_t>(h * w)), ey(ex.size()), et(ex.size());
    for (int64_t y = 0; y < h; y++)
        for (int64_t x = 0; x < w; x++) {
            double gx = (at(prev, h, w, y, x + 1) - at(prev, h, w, y, x) +
                         at(prev, h, w, y + 1, x + 1) - at(prev, h, w, y + 1, x) +
                         at(next, h, w, y, x + 1) - at(next, h, w, y, x) +
                         at(next, h, w, y + 1, x + 1) - at(next, h, w, y + 1, x)) /
                        4.0;
            double gy = (at(prev, h, w, y + 1, x) - at(prev, h, w, y, x) +
                         at(prev, h, w, y + 1, x + 1) - at(prev, h, w, y, x + 1) +
                         at(next, h, w, y + 1, x) - at(next, h, w, y, x) +
                         at(next, h, w, y + 1, x + 1) - at(next, h, w, y, x + 1)) /
                        4.0;
            double gt = (at(next, h, w, y, x) - at(prev, h, w, y, x) +
                         at(next, h, w, y + 1, x) - at(prev, h, w, y + 1, x) +
                         at(next, h, w, y, x + 1) - at(prev, h, w, y, x + 1) +
                         at(next, h, w, y + 1, x + 1) - at(prev, h, w, y + 1, x + 1)) /
                        4.0;
            ex[static_cast<size_t>(y * w + x)] = static_cast<float>(gx);
            ey[static_cast<size_t>(y * w + x)] = static_cast<float>(gy);
            et[static_cast<size_t>(y * w + x)] = static_cast<float>(gt);
        }

    u.assign(static_cast<size_t>(h * w), 0.0f);
    v.assign(static_cast<size_t>(h * w), 0.0f);
    std::vector<float> ub(u.size()), vb(v.size());
    for (int it = 0; it < iters; it++) {
        // weighted neighborhood average (classic 1/6, 1/12 stencil)
        for (int64_t y = 0; y < h; y++)
            for (int64_t x = 0; x < w; x++) {
                auto avg = [&](const std::vector<float>& f) {
                    return (at(f, h, w, y - 1, x) + at(f, h, w, y + 1, x) +
                            at(f, h, w, y, x - 1) + at(f, h, w, y, x + 1)) /
                               6.0 +
                           (at(f, h, w, y - 1, x - 1) + at(f, h, w, y - 1, x + 1) +
                            at(f, h, w, y + 1, x - 1) + at(f, h, w, y + 1, x + 1)) /
                               12.0;
                };
                ub[static_cast<size_t>(y * w + x)] = static_cast<float>(avg(u));
                vb[static_cast<size_t>(y * w + x)] = static_cast<float>(avg(v));
            }
        for (int64_t i = 0; i < h * w; i++) {
            double exx = ex[static_cast<size_t>(i)], eyy = ey[static_cast<size_t>(i)];
            double frac = (exx * ub[static_cast<size_t>(i)] + eyy * vb[static_cast<size_t>(i)] +
                           et[static_cast<size_t>(i)]) /
                          (alpha * alpha + exx * exx + eyy * eyy);
            u[static_cast<size_t>(i)] = static_cast<float>(ub[static_cast<size_t>(i)] - exx * frac);
            v[static_cast<size_t>(i)] = static_cast<float>(vb[static_cast<size_t>(i)] - eyy * frac);
        }
    }
}

std::vector<float> flow_magnitude(const Tensor<float>& video) {
    int64_t f = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
    if (f < 2) throw DataError("flow_magnitude: need at least 2 frames");
    auto gray = [&](int64_t fr) {
        std::vector<float> g(static_cast<size_t>(h * w), 0.0f);
        for (int64_t ch = 0; ch < c; ch++) {
            const float* p = video.data() + (fr * c + ch) * h * w;
            for (int64_t i = 0; i < h * w; i++)
                g[static_cast<size_t>(i)] +=
                    (p[i] + 1.0f) * 0.5f * 255.0f / static_cast<float>(c);
        }
        return g;
    };
    std::vector<float> acc(static_cast<size_t>(h * w), 0.0f);
    std::vector<float> prev = gray(0);
    std::vector<float> u, v;
    for (int64_t fr = 1; fr < f; fr++) {
        std::vector<float> next = gray(fr);
        horn_schunck(prev, next, h, w, u, v);
        for (int64_t i = 0; i < h * w; i++)
            acc[static_cast<size_t>(i)] +=
                std::sqrt(u[static_cast<size_t>(i)] * u[static_cast<size_t>(i)] +
                          v[static_cast<size_t>(i)] * v[static_cast<size_t>(i)]);
        prev.swap(next);
    }
    for (auto& x : acc) x /= static_cast<float>(f - 1);
    return acc;
}

}  // namespace lvd
