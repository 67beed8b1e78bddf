#ifndef HPD_TENSOR_HPP
#define HPD_TENSOR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace hpd {

// Error taxonomy shared by the whole library.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Misuse of an API contract (e.g. backward with an inference-mode cache).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

// (batch, channel, height, width) extents of a dense rank-4 tensor.
struct Shape4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;

    std::int64_t count() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
};

inline std::string to_string(const Shape4& s) {
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
           std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

// Element count with zero/negative/overflow checks; throws ShapeError.
inline std::int64_t checked_count(const Shape4& s) {
    const std::int64_t ext[4] = {s.n, s.c, s.h, s.w};
    std::int64_t count = 1;
    for (std::int64_t e : ext) {
        if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + to_string(s));
        if (__builtin_mul_overflow(count, e, &count))
            throw ShapeError("tensor extents overflow: " + to_string(s));
    }
    return count;
}

// Dense rank-4 tensor, row-major NCHW. Flat offset of (i,j,y,x) is
// ((i*c + j)*h + y)*w + x. Scalar type is float or double; the dtype is a
// property of the tensor, not a global.
template <class T>
class Tensor4 {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor4 supports float and double only");

public:
    Tensor4() = default;

    explicit Tensor4(Shape4 shape, T fill = T(0))
        : shape_(shape), data_(static_cast<std::size_t>(checked_count(shape)), fill) {}

    Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != checked_count(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + to_string(shape_));
    }

    const Shape4& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    std::int64_t offset(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) const {
        return ((i * shape_.c + j) * shape_.h + y) * shape_.w + x;
    }

    T& at(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(offset(i, j, y, x))];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(offset(i, j, y, x))];
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

// Elementwise combine of two same-shape tensors, fixed element order.
template <class T, class F>
Tensor4<T> map2(const Tensor4<T>& a, const Tensor4<T>& b, F f) {
    if (!(a.shape() == b.shape()))
        throw ShapeError("map2: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    Tensor4<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t count = a.size();
    for (std::int64_t i = 0; i < count; ++i) po[i] = f(pa[i], pb[i]);
    return out;
}

template <class T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    return map2(a, b, [](T x, T y) { return x + y; });
}
template <class T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b) {
    return map2(a, b, [](T x, T y) { return x - y; });
}
template <class T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
    return map2(a, b, [](T x, T y) { return x * y; });
}

template <class T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError("add_inplace: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    T* pa = a.data();
    const T* pb = b.data();
    const std::int64_t count = a.size();
    for (std::int64_t i = 0; i < count; ++i) pa[i] += pb[i];
}

template <class T>
void scale_inplace(Tensor4<T>& a, T s) {
    for (T& v : a.vec()) v *= s;
}

// Integer label map (batch, height, width); values index segmentation classes.
struct LabelMap {
    std::int64_t n = 0, h = 0, w = 0;
    std::vector<std::int32_t> v;

    LabelMap() = default;
    LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
        : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * h_ * w_), fill) {
        if (n_ < 1 || h_ < 1 || w_ < 1) throw ShapeError("label map extents must be >= 1");
    }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    std::int32_t& at(std::int64_t i, std::int64_t y, std::int64_t x) {
        return v[static_cast<std::size_t>((i * h + y) * w + x)];
    }
    std::int32_t at(std::int64_t i, std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>((i * h + y) * w + x)];
    }

    bool operator==(const LabelMap&) const = default;
};

}  // namespace hpd

#endif  // HPD_TENSOR_HPP
