#include "mvanon/image.hpp"

#include <algorithm>
#include <cmath>

namespace mvanon {

std::array<double, 3> sample_bilinear(const Image8& img, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = std::min(static_cast<int>(x), img.width - 2 >= 0 ? img.width - 2 : 0);
    const int y0 = std::min(static_cast<int>(y), img.height - 2 >= 0 ? img.height - 2 : 0);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0, fy = y - y0;
    const auto* p00 = img.px(x0, y0);
    const auto* p10 = img.px(x1, y0);
    const auto* p01 = img.px(x0, y1);
    const auto* p11 = img.px(x1, y1);
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
        const double top = p00[c] * (1.0 - fx) + p10[c] * fx;
        const double bot = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    return out;
}

namespace {

struct ClippedRect {
    int x0, y0, x1, y1;  // half-open
    bool empty() const { return x0 >= x1 || y0 >= y1; }
};

ClippedRect clip_box(const Image8& img, const BBox2D& box) {
    ClippedRect r{};
    r.x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
    r.y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
    r.x1 = std::min(img.width, static_cast<int>(std::ceil(box.x_max)));
    r.y1 = std::min(img.height, static_cast<int>(std::ceil(box.y_max)));
    return r;
}

std::vector<double> gaussian_kernel(int size) {
    const double sigma = size / 6.0;
    std::vector<double> k(size);
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace

void fill_rect(Image8& img, const BBox2D& box, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const ClippedRect rc = clip_box(img, box);
    if (rc.empty()) return;
    for (int y = rc.y0; y < rc.y1; ++y)
        for (int x = rc.x0; x < rc.x1; ++x) img.set(x, y, r, g, b);
}

void pixelate_rect(Image8& img, const BBox2D& box, int block) {
    const ClippedRect rc = clip_box(img, box);
    if (rc.empty() || block < 1) return;
    for (int by = rc.y0; by < rc.y1; by += block) {
        for (int bx = rc.x0; bx < rc.x1; bx += block) {
            const int ex = std::min(bx + block, rc.x1);
            const int ey = std::min(by + block, rc.y1);
            long sum[3] = {0, 0, 0};
            long count = 0;
            for (int y = by; y < ey; ++y)
                for (int x = bx; x < ex; ++x) {
                    const auto* p = img.px(x, y);
                    sum[0] += p[0]; sum[1] += p[1]; sum[2] += p[2];
                    ++count;
                }
            const auto avg = [&](int c) {
                return static_cast<std::uint8_t>((sum[c] + count / 2) / count);
            };
            const std::uint8_t r = avg(0), g = avg(1), b = avg(2);
            for (int y = by; y < ey; ++y)
                for (int x = bx; x < ex; ++x) img.set(x, y, r, g, b);
        }
    }
}

void blur_rect(Image8& img, const BBox2D& box, int kernel_size) {
    const ClippedRect rc = clip_box(img, box);
    if (rc.empty() || kernel_size < 3) return;
    const auto kernel = gaussian_kernel(kernel_size);
    const int half = kernel_size / 2;
    const int w = rc.x1 - rc.x0, h = rc.y1 - rc.y0;

    // Horizontal pass reads the full frame so the blur blends with context
    // at the box border instead of ringing against it.
    std::vector<double> tmp(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int i = 0; i < kernel_size; ++i) {
                const int sx = std::clamp(rc.x0 + x + i - half, 0, img.width - 1);
                const auto* p = img.px(sx, rc.y0 + y);
                acc[0] += kernel[i] * p[0];
                acc[1] += kernel[i] * p[1];
                acc[2] += kernel[i] * p[2];
            }
            double* t = &tmp[(static_cast<std::size_t>(y) * w + x) * 3];
            t[0] = acc[0]; t[1] = acc[1]; t[2] = acc[2];
        }
    }
    // Vertical pass: rows above/below the box come from the original frame,
    // horizontally blurred on the fly.
    const auto row_sample = [&](int x, int sy) -> std::array<double, 3> {
        const int yy = std::clamp(sy, 0, img.height - 1);
        if (yy >= rc.y0 && yy < rc.y1) {
            const double* t = &tmp[(static_cast<std::size_t>(yy - rc.y0) * w + x) * 3];
            return {t[0], t[1], t[2]};
        }
        double acc[3] = {0, 0, 0};
        for (int i = 0; i < kernel_size; ++i) {
            const int sx = std::clamp(rc.x0 + x + i - half, 0, img.width - 1);
            const auto* p = img.px(sx, yy);
            acc[0] += kernel[i] * p[0];
            acc[1] += kernel[i] * p[1];
            acc[2] += kernel[i] * p[2];
        }
        return {acc[0], acc[1], acc[2]};
    };
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int i = 0; i < kernel_size; ++i) {
                const auto s = row_sample(x, rc.y0 + y + i - half);
                acc[0] += kernel[i] * s[0];
                acc[1] += kernel[i] * s[1];
                acc[2] += kernel[i] * s[2];
            }
            auto* o = &out[(static_cast<std::size_t>(y) * w + x) * 3];
            for (int c = 0; c < 3; ++c)
                o[c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto* o = &out[(static_cast<std::size_t>(y) * w + x) * 3];
            img.set(rc.x0 + x, rc.y0 + y, o[0], o[1], o[2]);
        }
}

}  // namespace mvanon
