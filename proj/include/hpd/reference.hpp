#ifndef HPD_REFERENCE_HPP
#define HPD_REFERENCE_HPP

#include <limits>

#include "hpd/tensor.hpp"

// Naive nested-loop reference kernels. Deliberately written with none of the
// blocking/branch-elimination of the production kernels; these are the
// independent oracles the fast paths are verified (and benchmarked) against.

namespace hpd::reference {

template <class T>
struct PooledRef {
    Tensor4<T> out;
    std::vector<std::int32_t> idx;  // flat y*w+x offset in the source plane
};

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace detail

template <class T, bool Min>
PooledRef<T> naive_extreme_pool(const Tensor4<T>& x, int k, bool pad) {
    const Shape4 s = x.shape();
    const std::int64_t ho = pad ? detail::ceil_div(s.h, k) : s.h / k;
    const std::int64_t wo = pad ? detail::ceil_div(s.w, k) : s.w / k;
    PooledRef<T> r{Tensor4<T>({s.n, s.c, ho, wo}), {}};
    r.idx.resize(static_cast<std::size_t>(r.out.size()));
    std::size_t o = 0;
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t j = 0; j < s.c; ++j)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    bool first = true;
                    T best = T(0);
                    std::int32_t besti = 0;
                    for (std::int64_t dy = 0; dy < k; ++dy)
                        for (std::int64_t dx = 0; dx < k; ++dx) {
                            const std::int64_t y = oy * k + dy;
                            const std::int64_t xx = ox * k + dx;
                            if (y >= s.h || xx >= s.w) continue;  // padding never wins
                            const T v = x.at(i, j, y, xx);
                            const bool better = first || (Min ? v < best : v > best);
                            if (better) {
                                best = v;
                                besti = static_cast<std::int32_t>(y * s.w + xx);
                                first = false;
                            }
                        }
                    r.out.data()[o] = best;
                    r.idx[o] = besti;
                    ++o;
                }
    return r;
}

template <class T>
PooledRef<T> naive_min_pool(const Tensor4<T>& x, int k, bool pad = false) {
    return naive_extreme_pool<T, true>(x, k, pad);
}

template <class T>
PooledRef<T> naive_max_pool(const Tensor4<T>& x, int k, bool pad = false) {
    return naive_extreme_pool<T, false>(x, k, pad);
}

template <class T>
Tensor4<T> naive_avg_pool(const Tensor4<T>& x, int k, bool pad = false) {
    const Shape4 s = x.shape();
    const std::int64_t ho = pad ? detail::ceil_div(s.h, k) : s.h / k;
    const std::int64_t wo = pad ? detail::ceil_div(s.w, k) : s.w / k;
    Tensor4<T> out({s.n, s.c, ho, wo});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t j = 0; j < s.c; ++j)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    T sum = T(0);
                    std::int64_t cnt = 0;
                    for (std::int64_t dy = 0; dy < k; ++dy)
                        for (std::int64_t dx = 0; dx < k; ++dx) {
                            const std::int64_t y = oy * k + dy;
                            const std::int64_t xx = ox * k + dx;
                            if (y >= s.h || xx >= s.w) continue;
                            sum += x.at(i, j, y, xx);
                            ++cnt;
                        }
                    out.at(i, j, oy, ox) = sum / static_cast<T>(cnt);
                }
    return out;
}

// 1x1 convolution: out[i,o,y,x] = bias[o] + sum_j w[o,j] * x[i,j,y,x].
template <class T>
Tensor4<T> naive_conv1x1(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias) {
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    Tensor4<T> out({s.n, co, s.h, s.w});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t xx = 0; xx < s.w; ++xx) {
                    T acc = bias.data()[o];
                    for (std::int64_t j = 0; j < s.c; ++j)
                        acc += weight.at(o, j, 0, 0) * x.at(i, j, y, xx);
                    out.at(i, o, y, xx) = acc;
                }
    return out;
}

// 3x3 same-padding cross-correlation, stride 1, zero border.
template <class T>
Tensor4<T> naive_conv3x3_same(const Tensor4<T>& x, const Tensor4<T>& weight,
                              const Tensor4<T>& bias) {
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    Tensor4<T> out({s.n, co, s.h, s.w});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t xx = 0; xx < s.w; ++xx) {
                    T acc = bias.data()[o];
                    for (std::int64_t j = 0; j < s.c; ++j)
                        for (std::int64_t dy = -1; dy <= 1; ++dy)
                            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                                const std::int64_t yy = y + dy;
                                const std::int64_t xs = xx + dx;
                                if (yy < 0 || yy >= s.h || xs < 0 || xs >= s.w) continue;
                                acc += weight.at(o, j, dy + 1, dx + 1) * x.at(i, j, yy, xs);
                            }
                    out.at(i, o, y, xx) = acc;
                }
    return out;
}

// 2x2 kernel, stride 2 cross-correlation (the strided-conv baseline).
template <class T>
Tensor4<T> naive_strided_conv2x2(const Tensor4<T>& x, const Tensor4<T>& weight,
                                 const Tensor4<T>& bias) {
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    Tensor4<T> out({s.n, co, s.h / 2, s.w / 2});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t oy = 0; oy < s.h / 2; ++oy)
                for (std::int64_t ox = 0; ox < s.w / 2; ++ox) {
                    T acc = bias.data()[o];
                    for (std::int64_t j = 0; j < s.c; ++j)
                        for (std::int64_t dy = 0; dy < 2; ++dy)
                            for (std::int64_t dx = 0; dx < 2; ++dx)
                                acc += weight.at(o, j, dy, dx) * x.at(i, j, oy * 2 + dy, ox * 2 + dx);
                    out.at(i, o, oy, ox) = acc;
                }
    return out;
}

}  // namespace hpd::reference

#endif  // HPD_REFERENCE_HPP
