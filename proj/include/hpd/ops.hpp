#ifndef HPD_OPS_HPP
#define HPD_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "hpd/tensor.hpp"

namespace hpd {

// Non-divisible spatial extents are a hard error unless sentinel padding is
// requested; min pooling pads with +max, max pooling with lowest, so padding
// never wins a window. Every (possibly partial) window holds at least one
// real element.
enum class PadMode { none, sentinel };

// Per-output-cell flat spatial offset (y*w + x within the source channel
// plane) of the selected input element. Deterministic under the
// first-in-row-major tie rule.
struct PoolIndices {
    Shape4 shape;                  // pooled output shape
    std::vector<std::int32_t> idx;
};

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

inline std::pair<std::int64_t, std::int64_t> pooled_dims(const Shape4& s, int k, PadMode pad) {
    if (k < 1) throw ValueError("pooling window k must be >= 1");
    if (pad == PadMode::none && (s.h % k != 0 || s.w % k != 0))
        throw ShapeError("spatial extents " + to_string(s) + " not divisible by k=" +
                         std::to_string(k) + " (enable sentinel padding or reshape)");
    if (s.h * s.w > std::numeric_limits<std::int32_t>::max())
        throw ShapeError("channel plane too large for 32-bit pooling indices");
    return {ceil_div(s.h, k), ceil_div(s.w, k)};
}

// Extreme pooling over one padded-or-exact channel plane. The window scan is
// position-outer / output-cell-inner with branchless selects, so the inner
// loop has no data-dependent control flow. Strict compare keeps the first
// element in row-major order on ties.
template <class T, bool Min>
void extreme_pool_plane(const T* in, std::int64_t h, std::int64_t w, int k, std::int64_t ho,
                        std::int64_t wo, T* out, std::int32_t* oidx, std::vector<T>& scratch) {
    const std::int64_t hp = ho * static_cast<std::int64_t>(k);
    const std::int64_t wp = wo * static_cast<std::int64_t>(k);
    const bool padded = (hp != h || wp != w);
    const T* src = in;
    std::int64_t sw = w;
    if (padded) {
        const T sentinel = Min ? std::numeric_limits<T>::max() : std::numeric_limits<T>::lowest();
        scratch.assign(static_cast<std::size_t>(hp * wp), sentinel);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) scratch[static_cast<std::size_t>(y * wp + x)] = in[y * w + x];
        src = scratch.data();
        sw = wp;
    }
    for (std::int64_t oy = 0; oy < ho; ++oy) {
        const std::int64_t y0 = oy * k;
        T* orow = out + oy * wo;
        std::int32_t* irow = oidx + oy * wo;
        for (std::int64_t ox = 0; ox < wo; ++ox) {
            orow[ox] = src[y0 * sw + ox * k];
            irow[ox] = static_cast<std::int32_t>(y0 * sw + ox * k);
        }
        for (int dy = 0; dy < k; ++dy) {
            const T* row = src + (y0 + dy) * sw;
            for (int dx = 0; dx < k; ++dx) {
                if (dy == 0 && dx == 0) continue;
                const std::int32_t base = static_cast<std::int32_t>((y0 + dy) * sw + dx);
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const T v = row[ox * k + dx];
                    const bool better = Min ? (v < orow[ox]) : (v > orow[ox]);
                    orow[ox] = better ? v : orow[ox];
                    irow[ox] = better ? static_cast<std::int32_t>(base + ox * k) : irow[ox];
                }
            }
        }
    }
    if (padded) {
        // Selected cells are always real; remap padded offsets to the
        // unpadded plane.
        for (std::int64_t o = 0; o < ho * wo; ++o) {
            const std::int32_t p = oidx[o];
            oidx[o] = static_cast<std::int32_t>((p / wp) * w + (p % wp));
        }
    }
}

template <class T, bool Min>
std::pair<Tensor4<T>, PoolIndices> extreme_pool(const Tensor4<T>& x, int k, PadMode pad) {
    const Shape4 s = x.shape();
    const auto [ho, wo] = pooled_dims(s, k, pad);
    Tensor4<T> out({s.n, s.c, ho, wo});
    PoolIndices pi{out.shape(), std::vector<std::int32_t>(static_cast<std::size_t>(out.size()))};
    std::vector<T> scratch;
    const std::int64_t planes = s.n * s.c;
    for (std::int64_t p = 0; p < planes; ++p)
        extreme_pool_plane<T, Min>(x.data() + p * s.h * s.w, s.h, s.w, k, ho, wo,
                                   out.data() + p * ho * wo, pi.idx.data() + p * ho * wo, scratch);
    return {std::move(out), std::move(pi)};
}

}  // namespace detail

template <class T>
std::pair<Tensor4<T>, PoolIndices> min_pool2d(const Tensor4<T>& x, int k,
                                              PadMode pad = PadMode::none) {
    return detail::extreme_pool<T, true>(x, k, pad);
}

template <class T>
std::pair<Tensor4<T>, PoolIndices> max_pool2d(const Tensor4<T>& x, int k,
                                              PadMode pad = PadMode::none) {
    return detail::extreme_pool<T, false>(x, k, pad);
}

template <class T>
Tensor4<T> avg_pool2d(const Tensor4<T>& x, int k, PadMode pad = PadMode::none) {
    const Shape4 s = x.shape();
    const auto [ho, wo] = detail::pooled_dims(s, k, pad);
    Tensor4<T> out({s.n, s.c, ho, wo}, T(0));
    const std::int64_t planes = s.n * s.c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* in = x.data() + p * s.h * s.w;
        T* acc = out.data() + p * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t y0 = oy * k;
            T* arow = acc + oy * wo;
            for (int dy = 0; dy < k && y0 + dy < s.h; ++dy) {
                const T* row = in + (y0 + dy) * s.w;
                for (int dx = 0; dx < k; ++dx) {
                    const std::int64_t wo_full = (s.w - dx + k - 1) / k;  // cells whose (dy,dx) tap is real
                    for (std::int64_t ox = 0; ox < wo_full; ++ox) arow[ox] += row[ox * k + dx];
                }
            }
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const std::int64_t cy = std::min<std::int64_t>(k, s.h - y0);
                const std::int64_t cx = std::min<std::int64_t>(k, s.w - ox * k);
                arow[ox] = arow[ox] / static_cast<T>(cy * cx);
            }
        }
    }
    return out;
}

// Routes each pooled cell's gradient to the input element it came from,
// accumulating (+=) so overlapping index sets sum correctly.
template <class T>
Tensor4<T> pool_backward(const Tensor4<T>& grad_out, const PoolIndices& indices,
                         Shape4 input_shape) {
    if (!(grad_out.shape() == indices.shape))
        throw ShapeError("pool_backward: grad shape " + to_string(grad_out.shape()) +
                         " does not match indices shape " + to_string(indices.shape));
    if (input_shape.n != indices.shape.n || input_shape.c != indices.shape.c)
        throw ShapeError("pool_backward: input shape " + to_string(input_shape) +
                         " inconsistent with indices shape " + to_string(indices.shape));
    Tensor4<T> gx(input_shape, T(0));
    const std::int64_t plane = input_shape.h * input_shape.w;
    const std::int64_t oplane = indices.shape.h * indices.shape.w;
    const std::int64_t planes = input_shape.n * input_shape.c;
    for (std::int64_t p = 0; p < planes; ++p) {
        T* g = gx.data() + p * plane;
        const T* go = grad_out.data() + p * oplane;
        const std::int32_t* ix = indices.idx.data() + p * oplane;
        for (std::int64_t o = 0; o < oplane; ++o) g[ix[o]] += go[o];
    }
    return gx;
}

// Spreads each pooled cell's gradient uniformly over its window (backward of
// avg_pool2d without padding).
template <class T>
Tensor4<T> avg_pool2d_backward(const Tensor4<T>& grad_out, int k, Shape4 input_shape) {
    if (k < 1) throw ValueError("pooling window k must be >= 1");
    const Shape4 os = grad_out.shape();
    if (os.n != input_shape.n || os.c != input_shape.c || os.h * k != input_shape.h ||
        os.w * k != input_shape.w)
        throw ShapeError("avg_pool2d_backward: shapes inconsistent");
    Tensor4<T> gx(input_shape);
    const T inv = T(1) / static_cast<T>(k * k);
    for (std::int64_t i = 0; i < os.n; ++i)
        for (std::int64_t j = 0; j < os.c; ++j)
            for (std::int64_t oy = 0; oy < os.h; ++oy)
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    const T g = grad_out.at(i, j, oy, ox) * inv;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx)
                            gx.at(i, j, oy * k + dy, ox * k + dx) = g;
                }
    return gx;
}

// ---------------------------------------------------------------------------
// 1x1 convolution

template <class T>
struct Conv1x1Params {
    Tensor4<T> weight;  // (c_out, c_in, 1, 1)
    Tensor4<T> bias;    // (c_out, 1, 1, 1)

    std::int64_t c_out() const { return weight.shape().n; }
    std::int64_t c_in() const { return weight.shape().c; }
};

namespace detail {

template <class T>
void check_conv1x1(const Shape4& xs, const Conv1x1Params<T>& p) {
    const Shape4 ws = p.weight.shape();
    if (ws.h != 1 || ws.w != 1)
        throw ShapeError("conv1x1: weight must be (c_out, c_in, 1, 1), got " + to_string(ws));
    if (xs.c != ws.c)
        throw ShapeError("conv1x1: input channels " + std::to_string(xs.c) +
                         " do not match weight c_in " + std::to_string(ws.c));
    if (p.bias.size() != ws.n) throw ShapeError("conv1x1: bias length must equal c_out");
}

// Fixed-order four-lane reduction; deterministic and vectorizable.
template <class T>
T dot(const T* a, const T* b, std::int64_t count) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::int64_t i = 0;
    for (; i + 4 <= count; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T tail = 0;
    for (; i < count; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::int64_t count) {
    for (std::int64_t i = 0; i < count; ++i) y[i] += alpha * x[i];
}

template <class T>
T sum(const T* a, std::int64_t count) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::int64_t i = 0;
    for (; i + 4 <= count; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    T tail = 0;
    for (; i < count; ++i) tail += a[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace detail

template <class T>
Tensor4<T> conv1x1_forward(const Tensor4<T>& x, const Conv1x1Params<T>& p) {
    detail::check_conv1x1(x.shape(), p);
    const Shape4 s = x.shape();
    const std::int64_t co = p.c_out();
    const std::int64_t plane = s.h * s.w;
    Tensor4<T> out({s.n, co, s.h, s.w});
    for (std::int64_t i = 0; i < s.n; ++i) {
        const T* xin = x.data() + i * s.c * plane;
        for (std::int64_t o = 0; o < co; ++o) {
            T* oplane = out.data() + (i * co + o) * plane;
            const T b = p.bias.data()[o];
            for (std::int64_t e = 0; e < plane; ++e) oplane[e] = b;
            for (std::int64_t j = 0; j < s.c; ++j)
                detail::axpy(p.weight.at(o, j, 0, 0), xin + j * plane, oplane, plane);
        }
    }
    return out;
}

template <class T>
struct Conv1x1Grads {
    Tensor4<T> x;
    Tensor4<T> weight;
    Tensor4<T> bias;
};

template <class T>
Conv1x1Grads<T> conv1x1_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x,
                                 const Conv1x1Params<T>& p) {
    detail::check_conv1x1(x.shape(), p);
    const Shape4 s = x.shape();
    const std::int64_t co = p.c_out();
    if (!(grad_out.shape() == Shape4{s.n, co, s.h, s.w}))
        throw ShapeError("conv1x1_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " inconsistent with forward output");
    const std::int64_t plane = s.h * s.w;
    Conv1x1Grads<T> g{Tensor4<T>(s, T(0)), Tensor4<T>(p.weight.shape(), T(0)),
                      Tensor4<T>(p.bias.shape(), T(0))};
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o) {
            const T* go = grad_out.data() + (i * co + o) * plane;
            g.bias.data()[o] += detail::sum(go, plane);
            for (std::int64_t j = 0; j < s.c; ++j) {
                const T* xj = x.data() + (i * s.c + j) * plane;
                T* gxj = g.x.data() + (i * s.c + j) * plane;
                g.weight.at(o, j, 0, 0) += detail::dot(go, xj, plane);
                detail::axpy(p.weight.at(o, j, 0, 0), go, gxj, plane);
            }
        }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over n*h*w)

template <class T>
struct BatchNormParams {
    Tensor4<T> gamma;         // (c,1,1,1) scale
    Tensor4<T> beta;          // (c,1,1,1) shift
    Tensor4<T> running_mean;  // (c,1,1,1)
    Tensor4<T> running_var;   // (c,1,1,1), >= 0
    T eps = T(1e-5);
    T momentum = T(0.1);

    std::int64_t channels() const { return gamma.shape().n; }
};

template <class T>
BatchNormParams<T> batchnorm_init(std::int64_t channels) {
    BatchNormParams<T> p;
    p.gamma = Tensor4<T>({channels, 1, 1, 1}, T(1));
    p.beta = Tensor4<T>({channels, 1, 1, 1}, T(0));
    p.running_mean = Tensor4<T>({channels, 1, 1, 1}, T(0));
    p.running_var = Tensor4<T>({channels, 1, 1, 1}, T(1));
    return p;
}

template <class T>
struct BatchNormCache {
    bool training = false;
    Tensor4<T> xhat;          // normalized input (training only)
    std::vector<T> inv_std;   // per channel
    std::vector<T> gamma;     // snapshot for backward
};

// Training: normalize with batch statistics (biased variance) and update the
// running stats by EMA, the variance one with the unbiased estimator.
// Inference: normalize with running stats; no cache payload.
template <class T>
std::pair<Tensor4<T>, BatchNormCache<T>> batchnorm_forward(const Tensor4<T>& x,
                                                           BatchNormParams<T>& p, bool training) {
    const Shape4 s = x.shape();
    const std::int64_t c = p.channels();
    if (s.c != c)
        throw ShapeError("batchnorm: input channels " + std::to_string(s.c) +
                         " do not match parameter length " + std::to_string(c));
    if (!(p.eps > T(0))) throw ValueError("batchnorm: eps must be > 0");
    const std::int64_t plane = s.h * s.w;
    const std::int64_t m = s.n * plane;  // samples per channel

    Tensor4<T> out(s);
    BatchNormCache<T> cache;
    cache.training = training;
    cache.gamma.assign(p.gamma.data(), p.gamma.data() + c);
    cache.inv_std.resize(static_cast<std::size_t>(c));

    if (training) {
        if (m < 2)
            throw ValueError("batchnorm: degenerate batch, training needs n*h*w >= 2 per channel");
        cache.xhat = Tensor4<T>(s);
        for (std::int64_t j = 0; j < c; ++j) {
            T total = 0;
            for (std::int64_t i = 0; i < s.n; ++i)
                total += detail::sum(x.data() + (i * c + j) * plane, plane);
            const T mean = total / static_cast<T>(m);
            T sqdev = 0;
            for (std::int64_t i = 0; i < s.n; ++i) {
                const T* xp = x.data() + (i * c + j) * plane;
                T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
                std::int64_t e = 0;
                for (; e + 4 <= plane; e += 4) {
                    const T d0 = xp[e] - mean, d1 = xp[e + 1] - mean;
                    const T d2 = xp[e + 2] - mean, d3 = xp[e + 3] - mean;
                    s0 += d0 * d0;
                    s1 += d1 * d1;
                    s2 += d2 * d2;
                    s3 += d3 * d3;
                }
                T tail = 0;
                for (; e < plane; ++e) {
                    const T d = xp[e] - mean;
                    tail += d * d;
                }
                sqdev += ((s0 + s1) + (s2 + s3)) + tail;
            }
            const T var = sqdev / static_cast<T>(m);  // biased, used for normalization
            const T inv_std = T(1) / std::sqrt(var + p.eps);
            cache.inv_std[static_cast<std::size_t>(j)] = inv_std;

            const T var_unbiased = sqdev / static_cast<T>(m - 1);
            p.running_mean.data()[j] = (T(1) - p.momentum) * p.running_mean.data()[j] + p.momentum * mean;
            p.running_var.data()[j] = (T(1) - p.momentum) * p.running_var.data()[j] + p.momentum * var_unbiased;

            const T g = p.gamma.data()[j];
            const T b = p.beta.data()[j];
            for (std::int64_t i = 0; i < s.n; ++i) {
                const T* xp = x.data() + (i * c + j) * plane;
                T* hp = cache.xhat.data() + (i * c + j) * plane;
                T* op = out.data() + (i * c + j) * plane;
                for (std::int64_t e = 0; e < plane; ++e) {
                    const T xh = (xp[e] - mean) * inv_std;
                    hp[e] = xh;
                    op[e] = g * xh + b;
                }
            }
        }
    } else {
        for (std::int64_t j = 0; j < c; ++j) {
            const T mean = p.running_mean.data()[j];
            const T inv_std = T(1) / std::sqrt(p.running_var.data()[j] + p.eps);
            cache.inv_std[static_cast<std::size_t>(j)] = inv_std;
            const T g = p.gamma.data()[j];
            const T b = p.beta.data()[j];
            for (std::int64_t i = 0; i < s.n; ++i) {
                const T* xp = x.data() + (i * c + j) * plane;
                T* op = out.data() + (i * c + j) * plane;
                for (std::int64_t e = 0; e < plane; ++e) op[e] = g * (xp[e] - mean) * inv_std + b;
            }
        }
    }
    return {std::move(out), std::move(cache)};
}

template <class T>
struct BatchNormGrads {
    Tensor4<T> x;
    Tensor4<T> gamma;  // (c,1,1,1)
    Tensor4<T> beta;   // (c,1,1,1)
};

// Full chain through the batch statistics:
//   dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
// with dxhat = grad_out * gamma.
template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& grad_out, const BatchNormCache<T>& cache) {
    if (!cache.training)
        throw UsageError("batchnorm_backward requires a training-mode forward cache");
    const Shape4 s = cache.xhat.shape();
    if (!(grad_out.shape() == s))
        throw ShapeError("batchnorm_backward: grad_out shape " + to_string(grad_out.shape()) +
                         " does not match cached forward " + to_string(s));
    const std::int64_t c = s.c;
    const std::int64_t plane = s.h * s.w;
    const std::int64_t m = s.n * plane;

    BatchNormGrads<T> g{Tensor4<T>(s), Tensor4<T>({c, 1, 1, 1}, T(0)), Tensor4<T>({c, 1, 1, 1}, T(0))};
    for (std::int64_t j = 0; j < c; ++j) {
        T sum_go = 0;
        T sum_go_xhat = 0;
        for (std::int64_t i = 0; i < s.n; ++i) {
            const T* go = grad_out.data() + (i * c + j) * plane;
            const T* xh = cache.xhat.data() + (i * c + j) * plane;
            sum_go += detail::sum(go, plane);
            sum_go_xhat += detail::dot(go, xh, plane);
        }
        g.beta.data()[j] = sum_go;
        g.gamma.data()[j] = sum_go_xhat;

        const T gamma = cache.gamma[static_cast<std::size_t>(j)];
        const T inv_std = cache.inv_std[static_cast<std::size_t>(j)];
        const T k1 = gamma * inv_std;
        const T mean_go = sum_go / static_cast<T>(m);
        const T mean_go_xhat = sum_go_xhat / static_cast<T>(m);
        for (std::int64_t i = 0; i < s.n; ++i) {
            const T* go = grad_out.data() + (i * c + j) * plane;
            const T* xh = cache.xhat.data() + (i * c + j) * plane;
            T* gx = g.x.data() + (i * c + j) * plane;
            for (std::int64_t e = 0; e < plane; ++e)
                gx[e] = k1 * (go[e] - mean_go - xh[e] * mean_go_xhat);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <class T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    const T* xp = x.data();
    T* op = out.data();
    const std::int64_t count = x.size();
    for (std::int64_t i = 0; i < count; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
    return out;
}

// Subgradient at exactly 0 is 0.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x) {
    if (!(grad_out.shape() == x.shape()))
        throw ShapeError("relu_backward: shape mismatch");
    Tensor4<T> gx(x.shape());
    const T* g = grad_out.data();
    const T* xp = x.data();
    T* o = gx.data();
    const std::int64_t count = x.size();
    for (std::int64_t i = 0; i < count; ++i) o[i] = xp[i] > T(0) ? g[i] : T(0);
    return gx;
}

// ---------------------------------------------------------------------------
// Strided 2x2 convolution, stride 2 (baseline downsampler)

namespace detail {

template <class T>
void check_strided_conv(const Shape4& xs, const Tensor4<T>& weight, const Tensor4<T>& bias) {
    const Shape4 ws = weight.shape();
    if (ws.h != 2 || ws.w != 2)
        throw ShapeError("strided_conv2x2: weight must be (c_out, c_in, 2, 2), got " + to_string(ws));
    if (xs.c != ws.c)
        throw ShapeError("strided_conv2x2: input channels do not match weight c_in");
    if (bias.size() != ws.n) throw ShapeError("strided_conv2x2: bias length must equal c_out");
    if (xs.h % 2 != 0 || xs.w % 2 != 0)
        throw ShapeError("strided_conv2x2: spatial extents must be even, got " + to_string(xs));
}

}  // namespace detail

template <class T>
Tensor4<T> strided_conv2x2_forward(const Tensor4<T>& x, const Tensor4<T>& weight,
                                   const Tensor4<T>& bias) {
    detail::check_strided_conv(x.shape(), weight, bias);
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    const std::int64_t ho = s.h / 2, wo = s.w / 2;
    Tensor4<T> out({s.n, co, ho, wo});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o) {
            T* op = out.data() + (i * co + o) * ho * wo;
            const T b = bias.data()[o];
            for (std::int64_t e = 0; e < ho * wo; ++e) op[e] = b;
            for (std::int64_t j = 0; j < s.c; ++j) {
                const T* xp = x.data() + (i * s.c + j) * s.h * s.w;
                const T w00 = weight.at(o, j, 0, 0), w01 = weight.at(o, j, 0, 1);
                const T w10 = weight.at(o, j, 1, 0), w11 = weight.at(o, j, 1, 1);
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const T* r0 = xp + (2 * oy) * s.w;
                    const T* r1 = xp + (2 * oy + 1) * s.w;
                    T* orow = op + oy * wo;
                    // tap-by-tap accumulation, same rounding as the nested-loop form
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        T acc = orow[ox];
                        acc += w00 * r0[2 * ox];
                        acc += w01 * r0[2 * ox + 1];
                        acc += w10 * r1[2 * ox];
                        acc += w11 * r1[2 * ox + 1];
                        orow[ox] = acc;
                    }
                }
            }
        }
    return out;
}

template <class T>
struct StridedConvGrads {
    Tensor4<T> x;
    Tensor4<T> weight;
    Tensor4<T> bias;
};

template <class T>
StridedConvGrads<T> strided_conv2x2_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x,
                                             const Tensor4<T>& weight) {
    const Shape4 s = x.shape();
    const Shape4 ws = weight.shape();
    const std::int64_t co = ws.n;
    const std::int64_t ho = s.h / 2, wo = s.w / 2;
    if (!(grad_out.shape() == Shape4{s.n, co, ho, wo}))
        throw ShapeError("strided_conv2x2_backward: grad_out shape inconsistent with forward");
    StridedConvGrads<T> g{Tensor4<T>(s, T(0)), Tensor4<T>(ws, T(0)),
                          Tensor4<T>({co, 1, 1, 1}, T(0))};
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o) {
            const T* go = grad_out.data() + (i * co + o) * ho * wo;
            g.bias.data()[o] += detail::sum(go, ho * wo);
            for (std::int64_t j = 0; j < s.c; ++j) {
                const T* xp = x.data() + (i * s.c + j) * s.h * s.w;
                T* gxp = g.x.data() + (i * s.c + j) * s.h * s.w;
                T a00 = 0, a01 = 0, a10 = 0, a11 = 0;
                const T w00 = weight.at(o, j, 0, 0), w01 = weight.at(o, j, 0, 1);
                const T w10 = weight.at(o, j, 1, 0), w11 = weight.at(o, j, 1, 1);
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const T* r0 = xp + (2 * oy) * s.w;
                    const T* r1 = xp + (2 * oy + 1) * s.w;
                    T* gr0 = gxp + (2 * oy) * s.w;
                    T* gr1 = gxp + (2 * oy + 1) * s.w;
                    const T* grow = go + oy * wo;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const T gv = grow[ox];
                        a00 += gv * r0[2 * ox];
                        a01 += gv * r0[2 * ox + 1];
                        a10 += gv * r1[2 * ox];
                        a11 += gv * r1[2 * ox + 1];
                        gr0[2 * ox] += gv * w00;
                        gr0[2 * ox + 1] += gv * w01;
                        gr1[2 * ox] += gv * w10;
                        gr1[2 * ox + 1] += gv * w11;
                    }
                }
                g.weight.at(o, j, 0, 0) += a00;
                g.weight.at(o, j, 0, 1) += a01;
                g.weight.at(o, j, 1, 0) += a10;
                g.weight.at(o, j, 1, 1) += a11;
            }
        }
    return g;
}

}  // namespace hpd

#endif  // HPD_OPS_HPP
