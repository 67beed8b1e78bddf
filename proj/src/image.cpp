#include "hpd/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hpd {

namespace {

void put_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + type_at,
                            static_cast<uInt>(4 + data.size()));
    put_u32be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const RgbImage& img) {
    if (img.h < 1 || img.w < 1 ||
        img.px.size() != static_cast<std::size_t>(img.h * img.w * 3))
        throw ValueError("write_png: malformed image buffer");

    // Scanlines with leading filter byte 0.
    const std::size_t stride = static_cast<std::size_t>(img.w) * 3;
    std::vector<unsigned char> raw(static_cast<std::size_t>(img.h) * (stride + 1));
    for (std::int64_t y = 0; y < img.h; ++y) {
        unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        row[0] = 0;
        std::memcpy(row + 1, img.px.data() + static_cast<std::size_t>(y) * stride, stride);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("write_png: zlib compression failed for " + path);
    comp.resize(comp_len);

    std::vector<unsigned char> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
    put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace

    std::vector<unsigned char> file;
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    file.insert(file.end(), sig, sig + 8);
    put_chunk(file, "IHDR", ihdr);
    put_chunk(file, "IDAT", comp);
    put_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

namespace {

bool is_contour(const LabelMap& m, std::int64_t y, std::int64_t x) {
    const std::int32_t v = m.at(0, y, x);
    if (v == 0) return false;
    if (y > 0 && m.at(0, y - 1, x) != v) return true;
    if (y + 1 < m.h && m.at(0, y + 1, x) != v) return true;
    if (x > 0 && m.at(0, y, x - 1) != v) return true;
    if (x + 1 < m.w && m.at(0, y, x + 1) != v) return true;
    return false;
}

constexpr unsigned char kPalette[8][3] = {
    {230, 60, 60},   // class 1
    {80, 200, 90},   // class 2
    {70, 120, 230},  // class 3
    {240, 160, 40},  {200, 80, 200}, {60, 200, 200}, {160, 120, 60}, {120, 120, 220},
};

}  // namespace

RgbImage render_overlay(const Tensor4f& image, const LabelMap& pred, const LabelMap& gt) {
    const Shape4 s = image.shape();
    if (s.n != 1 || s.c != 1) throw ShapeError("render_overlay: image must be (1, 1, h, w)");
    if (pred.n != 1 || gt.n != 1 || pred.h != s.h || pred.w != s.w || gt.h != s.h || gt.w != s.w)
        throw ShapeError("render_overlay: label maps must match the image");

    RgbImage out(s.h, s.w);
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x) {
            const float v = std::clamp(image.at(0, 0, y, x), 0.0f, 1.0f);
            const auto g = static_cast<unsigned char>(std::lround(v * 255.0f));
            out.set(y, x, g, g, g);
        }
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            if (is_contour(gt, y, x)) out.set(y, x, 255, 255, 255);
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            if (is_contour(pred, y, x)) {
                const auto* c = kPalette[(pred.at(0, y, x) - 1) % 8];
                out.set(y, x, c[0], c[1], c[2]);
            }
    return out;
}

void emit_overlay(const Tensor4f& image, const LabelMap& pred, const LabelMap& gt,
                  const std::string& path) {
    write_png(path, render_overlay(image, pred, gt));
}

}  // namespace hpd
