#ifndef HPD_HPD_HPP
#define HPD_HPD_HPP

#include "hpd/ops.hpp"
#include "hpd/rng.hpp"

namespace hpd {

// How the min- and max-pooled maps are combined before the 1x1 conv:
// sum adds them elementwise (channel count unchanged), concat stacks them
// (doubles the conv input width).
enum class Fusion { sum, concat };

inline const char* to_string(Fusion f) { return f == Fusion::sum ? "sum" : "concat"; }

template <class T>
struct HpdParams {
    Fusion fusion = Fusion::sum;
    Conv1x1Params<T> conv;  // c_in (sum) or 2*c_in (concat) -> c_out
    BatchNormParams<T> bn;  // over c_out
};

template <class T>
struct MinMaxFused {
    Tensor4<T> fused;
    PoolIndices min_idx;
    PoolIndices max_idx;
};

// F(x) = min_pool(x) + max_pool(x), elementwise over pooled windows.
template <class T>
MinMaxFused<T> minmax_fuse(const Tensor4<T>& x, int k, PadMode pad = PadMode::none) {
    auto [mn, mni] = min_pool2d(x, k, pad);
    auto [mx, mxi] = max_pool2d(x, k, pad);
    return {add(mn, mx), std::move(mni), std::move(mxi)};
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    const Shape4 sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
    Tensor4<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::int64_t plane = sa.h * sa.w;
    for (std::int64_t i = 0; i < sa.n; ++i) {
        T* dst = out.data() + i * (sa.c + sb.c) * plane;
        const T* pa = a.data() + i * sa.c * plane;
        const T* pb = b.data() + i * sb.c * plane;
        std::copy(pa, pa + sa.c * plane, dst);
        std::copy(pb, pb + sb.c * plane, dst + sa.c * plane);
    }
    return out;
}

// Channels [c0, c0+count) of x as a standalone tensor.
template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::int64_t c0, std::int64_t count) {
    const Shape4 s = x.shape();
    if (c0 < 0 || count < 1 || c0 + count > s.c)
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + count) + ") outside " + to_string(s));
    Tensor4<T> out({s.n, count, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t i = 0; i < s.n; ++i) {
        const T* src = x.data() + (i * s.c + c0) * plane;
        std::copy(src, src + count * plane, out.data() + i * count * plane);
    }
    return out;
}

template <class T>
HpdParams<T> hpd_init(std::int64_t c_in, std::int64_t c_out, Fusion fusion, Rng& rng) {
    if (c_in < 1 || c_out < 1) throw ValueError("hpd_init: channel counts must be >= 1");
    const std::int64_t conv_in = fusion == Fusion::concat ? 2 * c_in : c_in;
    const T bound = std::sqrt(T(3) / static_cast<T>(conv_in));
    HpdParams<T> p;
    p.fusion = fusion;
    p.conv.weight = rng_uniform<T>(rng, {c_out, conv_in, 1, 1}, -bound, bound);
    p.conv.bias = Tensor4<T>({c_out, 1, 1, 1}, T(0));
    p.bn = batchnorm_init<T>(c_out);
    return p;
}

template <class T>
struct HpdCache {
    Shape4 input_shape{};
    Fusion fusion = Fusion::sum;
    PoolIndices min_idx;
    PoolIndices max_idx;
    Tensor4<T> conv_in;   // fused (sum) or stacked (concat) pooled maps
    BatchNormCache<T> bn;
    Tensor4<T> pre_relu;  // BN output
};

template <class T>
std::pair<Tensor4<T>, HpdCache<T>> hpd_forward(const Tensor4<T>& x, HpdParams<T>& p, int k,
                                               bool training, PadMode pad = PadMode::none) {
    HpdCache<T> cache;
    cache.input_shape = x.shape();
    cache.fusion = p.fusion;
    if (p.fusion == Fusion::sum) {
        auto fused = minmax_fuse(x, k, pad);
        cache.min_idx = std::move(fused.min_idx);
        cache.max_idx = std::move(fused.max_idx);
        cache.conv_in = std::move(fused.fused);
    } else {
        auto [mn, mni] = min_pool2d(x, k, pad);
        auto [mx, mxi] = max_pool2d(x, k, pad);
        cache.min_idx = std::move(mni);
        cache.max_idx = std::move(mxi);
        cache.conv_in = concat_channels(mn, mx);
    }
    Tensor4<T> z = conv1x1_forward(cache.conv_in, p.conv);
    auto [bn_out, bn_cache] = batchnorm_forward(z, p.bn, training);
    cache.bn = std::move(bn_cache);
    cache.pre_relu = std::move(bn_out);
    Tensor4<T> y = relu(cache.pre_relu);
    return {std::move(y), std::move(cache)};
}

template <class T>
struct HpdGrads {
    Tensor4<T> x;
    Tensor4<T> conv_weight;
    Tensor4<T> conv_bias;
    Tensor4<T> bn_gamma;
    Tensor4<T> bn_beta;
};

// Chain rule through relu, BN, conv, then the fusion: in sum mode the fused
// gradient flows through both index sets (a window whose min and max coincide
// receives it twice); in concat mode each channel half routes through its own
// indices.
template <class T>
HpdGrads<T> hpd_backward(const Tensor4<T>& grad_out, const HpdParams<T>& p,
                         const HpdCache<T>& cache) {
    if (p.fusion != cache.fusion) throw UsageError("hpd_backward: cache fusion mode mismatch");
    Tensor4<T> g = relu_backward(grad_out, cache.pre_relu);
    BatchNormGrads<T> gbn = batchnorm_backward(g, cache.bn);
    Conv1x1Grads<T> gconv = conv1x1_backward(gbn.x, cache.conv_in, p.conv);

    Tensor4<T> gx(cache.input_shape, T(0));
    if (p.fusion == Fusion::sum) {
        gx = pool_backward(gconv.x, cache.min_idx, cache.input_shape);
        add_inplace(gx, pool_backward(gconv.x, cache.max_idx, cache.input_shape));
    } else {
        const std::int64_t half = gconv.x.shape().c / 2;
        gx = pool_backward(slice_channels(gconv.x, 0, half), cache.min_idx, cache.input_shape);
        add_inplace(gx,
                    pool_backward(slice_channels(gconv.x, half, half), cache.max_idx, cache.input_shape));
    }
    return {std::move(gx), std::move(gconv.weight), std::move(gconv.bias), std::move(gbn.gamma),
            std::move(gbn.beta)};
}

}  // namespace hpd

#endif  // HPD_HPD_HPP
