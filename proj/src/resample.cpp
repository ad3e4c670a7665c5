#include "umrl/detail/resample.hpp"

#include <cstddef>

namespace umrl::detail {

namespace {

struct Tap {
    int lo;
    int hi;
    double w_lo;
    double w_hi;
};

// Source taps for output index o of a 2x upsampled axis of length n.
// Source coordinate is (o + 0.5) / 2 - 0.5.
Tap bilinear_tap(int o, int n)
{
    const int k = o / 2;
    if (o % 2 == 0) {
        const int lo = k > 0 ? k - 1 : 0;
        return {lo, k, 0.25, 0.75};
    }
    const int hi = k + 1 < n ? k + 1 : n - 1;
    return {k, hi, 0.75, 0.25};
}

} // namespace

void area_half(const double* src, int c, int h, int w, double* dst)
{
    const int oh = h / 2;
    const int ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        const double* s = src + static_cast<std::size_t>(ch) * h * w;
        double* d = dst + static_cast<std::size_t>(ch) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const double* r0 = s + static_cast<std::size_t>(2 * y) * w;
            const double* r1 = r0 + w;
            for (int x = 0; x < ow; ++x) {
                d[y * ow + x] = 0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
            }
        }
    }
}

void area_half_adjoint(const double* grad_out, int c, int h, int w, double* grad_in)
{
    const int oh = h / 2;
    const int ow = w / 2;
    for (int ch = 0; ch < c; ++ch) {
        const double* g = grad_out + static_cast<std::size_t>(ch) * oh * ow;
        double* d = grad_in + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const double v = 0.25 * g[y * ow + x];
                d[(2 * y) * w + 2 * x] += v;
                d[(2 * y) * w + 2 * x + 1] += v;
                d[(2 * y + 1) * w + 2 * x] += v;
                d[(2 * y + 1) * w + 2 * x + 1] += v;
            }
        }
    }
}

void bilinear_double(const double* src, int c, int h, int w, double* dst)
{
    const int oh = 2 * h;
    const int ow = 2 * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* s = src + static_cast<std::size_t>(ch) * h * w;
        double* d = dst + static_cast<std::size_t>(ch) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const Tap ty = bilinear_tap(y, h);
            const double* r0 = s + static_cast<std::size_t>(ty.lo) * w;
            const double* r1 = s + static_cast<std::size_t>(ty.hi) * w;
            for (int x = 0; x < ow; ++x) {
                const Tap tx = bilinear_tap(x, w);
                const double top = tx.w_lo * r0[tx.lo] + tx.w_hi * r0[tx.hi];
                const double bottom = tx.w_lo * r1[tx.lo] + tx.w_hi * r1[tx.hi];
                d[y * ow + x] = ty.w_lo * top + ty.w_hi * bottom;
            }
        }
    }
}

void bilinear_double_adjoint(const double* grad_out, int c, int h, int w, double* grad_in)
{
    const int oh = 2 * h;
    const int ow = 2 * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* g = grad_out + static_cast<std::size_t>(ch) * oh * ow;
        double* d = grad_in + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < oh; ++y) {
            const Tap ty = bilinear_tap(y, h);
            double* r0 = d + static_cast<std::size_t>(ty.lo) * w;
            double* r1 = d + static_cast<std::size_t>(ty.hi) * w;
            for (int x = 0; x < ow; ++x) {
                const Tap tx = bilinear_tap(x, w);
                const double v = g[y * ow + x];
                r0[tx.lo] += ty.w_lo * tx.w_lo * v;
                r0[tx.hi] += ty.w_lo * tx.w_hi * v;
                r1[tx.lo] += ty.w_hi * tx.w_lo * v;
                r1[tx.hi] += ty.w_hi * tx.w_hi * v;
            }
        }
    }
}

void nearest_double(const double* src, int c, int h, int w, double* dst)
{
    const int ow = 2 * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* s = src + static_cast<std::size_t>(ch) * h * w;
        double* d = dst + static_cast<std::size_t>(ch) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            const double* row = s + static_cast<std::size_t>(y / 2) * w;
            for (int x = 0; x < ow; ++x) d[y * ow + x] = row[x / 2];
        }
    }
}

void nearest_double_adjoint(const double* grad_out, int c, int h, int w, double* grad_in)
{
    const int ow = 2 * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* g = grad_out + static_cast<std::size_t>(ch) * 4 * h * w;
        double* d = grad_in + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            double* row = d + static_cast<std::size_t>(y / 2) * w;
            for (int x = 0; x < ow; ++x) row[x / 2] += g[y * ow + x];
        }
    }
}

} // namespace umrl::detail
