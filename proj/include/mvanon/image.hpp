#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mvanon/geometry.hpp"

namespace mvanon {

// Interleaved 8-bit RGB raster, row-major, origin top-left.
struct Image8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> data;  // 3 channels

    Image8() = default;
    Image8(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    std::uint8_t* px(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* px(int x, int y) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        auto* p = px(x, y);
        p[0] = r; p[1] = g; p[2] = b;
    }
};

// Bilinear sample in pixel units; coordinates clamped to the valid range.
std::array<double, 3> sample_bilinear(const Image8& img, double x, double y);

// Region edits used by the redaction backends. Boxes are half-open and are
// clipped to the frame before any work happens.
void fill_rect(Image8& img, const BBox2D& box, std::uint8_t r, std::uint8_t g, std::uint8_t b);
void pixelate_rect(Image8& img, const BBox2D& box, int block);
void blur_rect(Image8& img, const BBox2D& box, int kernel_size);

}  // namespace mvanon
