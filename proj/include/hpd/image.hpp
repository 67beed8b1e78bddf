#ifndef HPD_IMAGE_HPP
#define HPD_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hpd/tensor.hpp"

namespace hpd {

struct RgbImage {
    std::int64_t h = 0, w = 0;
    std::vector<unsigned char> px;  // RGB, row-major, 3 bytes per pixel

    RgbImage() = default;
    RgbImage(std::int64_t h_, std::int64_t w_)
        : h(h_), w(w_), px(static_cast<std::size_t>(h_ * w_ * 3), 0) {}

    void set(std::int64_t y, std::int64_t x, unsigned char r, unsigned char g, unsigned char b) {
        const std::size_t o = static_cast<std::size_t>((y * w + x) * 3);
        px[o] = r;
        px[o + 1] = g;
        px[o + 2] = b;
    }
};

// 8-bit RGB PNG (color type 2, filter 0 scanlines, zlib-compressed).
void write_png(const std::string& path, const RgbImage& img);

// Grayscale base image with ground-truth contours in white and predicted
// foreground contours in per-class colors on top. A contour pixel is a
// foreground pixel with at least one 4-neighbor of a different class.
RgbImage render_overlay(const Tensor4f& image, const LabelMap& pred, const LabelMap& gt);

void emit_overlay(const Tensor4f& image, const LabelMap& pred, const LabelMap& gt,
                  const std::string& path);

}  // namespace hpd

#endif  // HPD_IMAGE_HPP
