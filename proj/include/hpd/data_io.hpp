#ifndef HPD_DATA_IO_HPP
#define HPD_DATA_IO_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hpd/rng.hpp"
#include "hpd/tensor.hpp"

namespace hpd {

// Load failures are distinguishable by type: malformed header vs short file
// vs payload corruption.
struct FormatError : IoError {
    using IoError::IoError;
};
struct TruncationError : IoError {
    using IoError::IoError;
};
struct ChecksumError : IoError {
    using IoError::IoError;
};

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr Dtype dtype_of() {
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

namespace io {

inline void write_bytes(std::ostream& out, const void* p, std::size_t len) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
    if (!out) throw IoError("write failed");
}

inline void write_u8(std::ostream& out, std::uint8_t v) { write_bytes(out, &v, 1); }

inline void write_u32le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    write_bytes(out, b, 4);
}

inline void write_u64le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 8);
}

inline void read_bytes(std::istream& in, void* p, std::size_t len, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
    if (static_cast<std::size_t>(in.gcount()) != len)
        throw TruncationError(std::string("truncated file while reading ") + what);
}

inline std::uint8_t read_u8(std::istream& in, const char* what) {
    std::uint8_t v;
    read_bytes(in, &v, 1, what);
    return v;
}

inline std::uint32_t read_u32le(std::istream& in, const char* what) {
    unsigned char b[4];
    read_bytes(in, b, 4, what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t read_u64le(std::istream& in, const char* what) {
    unsigned char b[8];
    read_bytes(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

}  // namespace io

namespace detail {

// Little-endian scalar serialization; a straight copy on little-endian hosts.
template <class T>
void scalars_to_le(const T* src, std::int64_t count, std::vector<char>& out) {
    out.resize(static_cast<std::size_t>(count) * sizeof(T));
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data(), src, out.size());
    } else {
        using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        for (std::int64_t i = 0; i < count; ++i) {
            const U u = std::bit_cast<U>(src[i]);
            for (std::size_t k = 0; k < sizeof(T); ++k)
                out[static_cast<std::size_t>(i) * sizeof(T) + k] =
                    static_cast<char>((u >> (8 * k)) & 0xff);
        }
    }
}

template <class T>
void scalars_from_le(const std::vector<char>& in, T* dst, std::int64_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, in.data(), static_cast<std::size_t>(count) * sizeof(T));
    } else {
        using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        for (std::int64_t i = 0; i < count; ++i) {
            U u = 0;
            for (std::size_t k = 0; k < sizeof(T); ++k)
                u |= static_cast<U>(static_cast<unsigned char>(
                         in[static_cast<std::size_t>(i) * sizeof(T) + k]))
                     << (8 * k);
            dst[i] = std::bit_cast<T>(u);
        }
    }
}

}  // namespace detail

inline constexpr char kTensorMagic[4] = {'H', 'P', 'D', 'T'};
inline constexpr std::uint8_t kTensorVersion = 1;

// Record layout: magic "HPDT", version u8, dtype u8 (1=f32, 2=f64), rank u8
// (always 4), 4 little-endian u32 extents (n,c,h,w), little-endian row-major
// payload, trailing u64 FNV-1a checksum over the payload bytes.
template <class T>
void save_tensor(std::ostream& out, const Tensor4<T>& t) {
    io::write_bytes(out, kTensorMagic, 4);
    io::write_u8(out, kTensorVersion);
    io::write_u8(out, static_cast<std::uint8_t>(dtype_of<T>()));
    io::write_u8(out, 4);
    const Shape4 s = t.shape();
    for (std::int64_t e : {s.n, s.c, s.h, s.w}) {
        if (e > std::int64_t(0xffffffffu)) throw ValueError("tensor extent exceeds u32 range");
        io::write_u32le(out, static_cast<std::uint32_t>(e));
    }
    std::vector<char> payload;
    detail::scalars_to_le(t.data(), t.size(), payload);
    io::write_bytes(out, payload.data(), payload.size());
    io::write_u64le(out, fnv1a64(payload.data(), payload.size()));
}

template <class T>
Tensor4<T> load_tensor(std::istream& in) {
    char magic[4];
    io::read_bytes(in, magic, 4, "magic");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad magic, not a tensor file");
    const std::uint8_t version = io::read_u8(in, "version");
    if (version != kTensorVersion)
        throw FormatError("unsupported tensor file version " + std::to_string(version));
    const std::uint8_t dtype = io::read_u8(in, "dtype");
    if (dtype != static_cast<std::uint8_t>(Dtype::f32) &&
        dtype != static_cast<std::uint8_t>(Dtype::f64))
        throw FormatError("unknown dtype code " + std::to_string(dtype));
    if (dtype != static_cast<std::uint8_t>(dtype_of<T>()))
        throw FormatError("dtype mismatch: file holds " +
                          std::string(dtype == 1 ? "f32" : "f64") + ", caller expects " +
                          std::string(dtype_of<T>() == Dtype::f32 ? "f32" : "f64"));
    const std::uint8_t rank = io::read_u8(in, "rank");
    if (rank != 4) throw FormatError("unsupported rank " + std::to_string(rank));
    Shape4 s{};
    s.n = io::read_u32le(in, "extent n");
    s.c = io::read_u32le(in, "extent c");
    s.h = io::read_u32le(in, "extent h");
    s.w = io::read_u32le(in, "extent w");
    const std::int64_t count = checked_count(s);
    std::vector<char> payload(static_cast<std::size_t>(count) * sizeof(T));
    io::read_bytes(in, payload.data(), payload.size(), "payload");
    const std::uint64_t stored = io::read_u64le(in, "checksum");
    const std::uint64_t actual = fnv1a64(payload.data(), payload.size());
    if (stored != actual) throw ChecksumError("payload checksum mismatch");
    Tensor4<T> t(s);
    detail::scalars_from_le(payload, t.data(), count);
    return t;
}

template <class T>
void save_tensor(const std::string& path, const Tensor4<T>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    save_tensor(out, t);
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

template <class T>
Tensor4<T> load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    try {
        return load_tensor<T>(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    } catch (const TruncationError& e) {
        throw TruncationError(path + ": " + e.what());
    } catch (const ChecksumError& e) {
        throw ChecksumError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Synthetic segmentation data

struct SegSample {
    std::string id;
    Tensor4f image;  // (1, 1, h, w), values in [0, 1]
    LabelMap labels; // n = 1
};

namespace detail {

struct EllipseGeom {
    double cx, cy;     // center, pixels
    double rx, ry;     // radii, pixels
    double cs, sn;     // rotation
    double ring_rho;   // outer normalized radius of the ring
    double rmin;

    // Normalized elliptical radius: 1.0 on the ellipse boundary.
    double rho(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = cs * dx + sn * dy;
        const double v = -sn * dx + cs * dy;
        return std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
    }
};

}  // namespace detail

// Each sample: a rotated ellipse (class 1) with a thin surrounding ring
// (class 2 when classes >= 3) and a small separate blob of 4-5 px diameter
// (class 3 when classes >= 4), over background (class 0). Image is the label
// regions at distinct mean intensities plus Gaussian noise, clamped to [0,1].
// Pure function of (seed, index): sample i is generated from
// derive_seed(seed, i), so generation order and worker count do not matter.
inline SegSample gen_sample(std::uint64_t seed, std::int64_t index, int size, int classes) {
    if (classes < 2) throw ConfigError("gen_synthetic: classes must be >= 2");
    if (size < 32) throw ConfigError("gen_synthetic: size must be >= 32");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));

    detail::EllipseGeom g{};
    g.cx = rng.uniform(0.40, 0.60) * size;
    g.cy = rng.uniform(0.40, 0.60) * size;
    g.rx = rng.uniform(0.14, 0.22) * size;
    g.ry = rng.uniform(0.14, 0.22) * size;
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    g.cs = std::cos(theta);
    g.sn = std::sin(theta);
    const double thickness = rng.uniform(3.0, 4.5);
    g.rmin = std::min(g.rx, g.ry);
    g.ring_rho = 1.0 + thickness / g.rmin;

    // Blob center: outside the ring with at least 1 px of clearance, at
    // least 2 px inside the image border. Rejection-sample, then fall back
    // to a deterministic grid scan for the clearest spot (draws nothing, so
    // the random stream is the same on both paths).
    const double blob_r = rng.uniform(2.0, 2.5);
    double bx = 0, by = 0;
    bool placed = false;
    const double lo = 2.0 + blob_r, hi = size - 3.0 - blob_r;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        const double x = rng.uniform(lo, hi);
        const double y = rng.uniform(lo, hi);
        if ((g.rho(x, y) - g.ring_rho) * g.rmin >= blob_r + 1.0) {
            bx = x;
            by = y;
            placed = true;
        }
    }
    if (!placed) {
        double best = -1.0;
        for (int iy = 0; iy < 8; ++iy)
            for (int ix = 0; ix < 8; ++ix) {
                const double x = lo + (hi - lo) * ix / 7.0;
                const double y = lo + (hi - lo) * iy / 7.0;
                const double clear = (g.rho(x, y) - g.ring_rho) * g.rmin;
                if (clear > best) {
                    best = clear;
                    bx = x;
                    by = y;
                }
            }
        placed = best >= blob_r + 1.0;
    }
    if (!placed) throw ConfigError("gen_synthetic: cannot place blob, size too small");

    SegSample s;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "%06lld", static_cast<long long>(index));
    s.id = idbuf;
    s.image = Tensor4f({1, 1, size, size});
    s.labels = LabelMap(1, size, size);

    // Mean intensity per class: background 0.13, ellipse 0.61, ring 0.37,
    // blob 0.87 — adjacent means sit ~4.8 sigma apart so boundaries stay
    // recoverable under the noise, and the task remains non-trivial.
    static constexpr double kMeans[4] = {0.13, 0.61, 0.37, 0.87};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double rho = g.rho(x + 0.5, y + 0.5);
            int cls = 0;
            if (rho <= 1.0)
                cls = 1;
            else if (rho <= g.ring_rho && classes >= 3)
                cls = 2;
            if (classes >= 4 && cls == 0) {
                const double dx = x + 0.5 - bx, dy = y + 0.5 - by;
                if (dx * dx + dy * dy <= blob_r * blob_r) cls = 3;
            }
            s.labels.at(0, y, x) = cls;
        }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = kMeans[s.labels.at(0, y, x)] + rng.normal(0.0, 0.05);
            s.image.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return s;
}

inline std::vector<SegSample> gen_synthetic(std::uint64_t seed, std::int64_t n_samples, int size,
                                            int classes) {
    if (n_samples < 1) throw ConfigError("gen_synthetic: n_samples must be >= 1");
    std::vector<SegSample> out;
    out.reserve(static_cast<std::size_t>(n_samples));
    for (std::int64_t i = 0; i < n_samples; ++i) out.push_back(gen_sample(seed, i, size, classes));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directory: samples/{id}.img.hpdt + samples/{id}.lbl.hpdt and a
// manifest.txt with one id per line. Labels travel as f32 tensors holding
// integral values.

inline Tensor4f labels_to_tensor(const LabelMap& m) {
    Tensor4f t({m.n, 1, m.h, m.w});
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m.v.size()); ++i)
        t.data()[i] = static_cast<float>(m.v[static_cast<std::size_t>(i)]);
    return t;
}

inline LabelMap tensor_to_labels(const Tensor4f& t) {
    const Shape4 s = t.shape();
    if (s.c != 1) throw ValueError("label tensor must have a single channel");
    LabelMap m(s.n, s.h, s.w);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const float v = t.data()[i];
        const float r = std::nearbyint(v);
        if (v != r || v < 0.0f || v > 1e6f)
            throw ValueError("label tensor holds non-integral or negative value");
        m.v[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(r);
    }
    return m;
}

inline void save_dataset(const std::string& dir, const std::vector<SegSample>& samples) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "samples", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    for (const SegSample& s : samples) {
        const fs::path base = fs::path(dir) / "samples" / s.id;
        save_tensor(base.string() + ".img.hpdt", s.image);
        save_tensor(base.string() + ".lbl.hpdt", labels_to_tensor(s.labels));
        manifest << s.id << "\n";
    }
    manifest.flush();
    if (!manifest) throw IoError("manifest write failed in " + dir);
}

inline std::vector<std::string> load_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.txt");
    if (!in) throw IoError("cannot open manifest in " + dir);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    if (ids.empty()) throw IoError("empty manifest in " + dir);
    return ids;
}

inline SegSample load_sample(const std::string& dir, const std::string& id) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(dir) / "samples" / id;
    SegSample s;
    s.id = id;
    try {
        s.image = load_tensor<float>(base.string() + ".img.hpdt");
        s.labels = tensor_to_labels(load_tensor<float>(base.string() + ".lbl.hpdt"));
    } catch (const IoError& e) {
        throw IoError("sample " + id + " in " + dir + ": " + e.what());
    }
    if (s.image.shape().n != 1 || s.labels.n != 1 || s.image.shape().h != s.labels.h ||
        s.image.shape().w != s.labels.w)
        throw ValueError("sample " + id + ": image/label shape mismatch");
    return s;
}

inline std::vector<SegSample> load_dataset(const std::string& dir) {
    std::vector<SegSample> out;
    for (const std::string& id : load_manifest(dir)) out.push_back(load_sample(dir, id));
    return out;
}

}  // namespace hpd

#endif  // HPD_DATA_IO_HPP
