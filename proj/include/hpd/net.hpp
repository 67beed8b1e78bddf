#ifndef HPD_NET_HPP
#define HPD_NET_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hpd/data_io.hpp"
#include "hpd/hpd.hpp"

namespace hpd {

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero-padded to same spatial size

namespace detail {

template <class T>
void check_conv3x3(const Shape4& xs, const Tensor4<T>& weight, const Tensor4<T>& bias) {
    const Shape4 ws = weight.shape();
    if (ws.h != 3 || ws.w != 3)
        throw ShapeError("conv3x3: weight must be (c_out, c_in, 3, 3), got " + to_string(ws));
    if (xs.c != ws.c) throw ShapeError("conv3x3: input channels do not match weight c_in");
    if (bias.size() != ws.n) throw ShapeError("conv3x3: bias length must equal c_out");
}

}  // namespace detail

template <class T>
Tensor4<T> conv3x3_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& bias) {
    detail::check_conv3x3(x.shape(), weight, bias);
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    const std::int64_t plane = s.h * s.w;
    Tensor4<T> out({s.n, co, s.h, s.w});
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o) {
            T* op = out.data() + (i * co + o) * plane;
            const T bv = bias.data()[o];
            for (std::int64_t e = 0; e < plane; ++e) op[e] = bv;
            for (std::int64_t j = 0; j < s.c; ++j) {
                const T* xp = x.data() + (i * s.c + j) * plane;
                const T* wp = weight.data() + (o * s.c + j) * 9;
                for (int dy = -1; dy <= 1; ++dy) {
                    const std::int64_t y0 = dy < 0 ? 1 : 0;
                    const std::int64_t y1 = s.h - (dy > 0 ? 1 : 0);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const T wv = wp[(dy + 1) * 3 + (dx + 1)];
                        const std::int64_t x0 = dx < 0 ? 1 : 0;
                        const std::int64_t x1 = s.w - (dx > 0 ? 1 : 0);
                        for (std::int64_t y = y0; y < y1; ++y)
                            detail::axpy(wv, xp + (y + dy) * s.w + (x0 + dx), op + y * s.w + x0,
                                         x1 - x0);
                    }
                }
            }
        }
    return out;
}

template <class T>
struct Conv3x3Grads {
    Tensor4<T> x;
    Tensor4<T> weight;
    Tensor4<T> bias;
};

template <class T>
Conv3x3Grads<T> conv3x3_backward(const Tensor4<T>& grad_out, const Tensor4<T>& x,
                                 const Tensor4<T>& weight) {
    const Shape4 s = x.shape();
    const std::int64_t co = weight.shape().n;
    if (!(grad_out.shape() == Shape4{s.n, co, s.h, s.w}))
        throw ShapeError("conv3x3_backward: grad_out shape inconsistent with forward");
    const std::int64_t plane = s.h * s.w;
    Conv3x3Grads<T> g{Tensor4<T>(s, T(0)), Tensor4<T>(weight.shape(), T(0)),
                      Tensor4<T>({co, 1, 1, 1}, T(0))};
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t o = 0; o < co; ++o) {
            const T* go = grad_out.data() + (i * co + o) * plane;
            g.bias.data()[o] += detail::sum(go, plane);
            for (std::int64_t j = 0; j < s.c; ++j) {
                const T* xp = x.data() + (i * s.c + j) * plane;
                T* gxp = g.x.data() + (i * s.c + j) * plane;
                const T* wp = weight.data() + (o * s.c + j) * 9;
                T* gwp = g.weight.data() + (o * s.c + j) * 9;
                for (int dy = -1; dy <= 1; ++dy) {
                    const std::int64_t y0 = dy < 0 ? 1 : 0;
                    const std::int64_t y1 = s.h - (dy > 0 ? 1 : 0);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const std::int64_t x0 = dx < 0 ? 1 : 0;
                        const std::int64_t x1 = s.w - (dx > 0 ? 1 : 0);
                        const T wv = wp[(dy + 1) * 3 + (dx + 1)];
                        T acc = 0;
                        for (std::int64_t y = y0; y < y1; ++y) {
                            const T* gorow = go + y * s.w + x0;
                            const T* xrow = xp + (y + dy) * s.w + (x0 + dx);
                            T* gxrow = gxp + (y + dy) * s.w + (x0 + dx);
                            acc += detail::dot(gorow, xrow, x1 - x0);
                            detail::axpy(wv, gorow, gxrow, x1 - x0);
                        }
                        gwp[(dy + 1) * 3 + (dx + 1)] += acc;
                    }
                }
            }
        }
    return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling

template <class T>
Tensor4<T> upsample2x_nearest(const Tensor4<T>& x) {
    const Shape4 s = x.shape();
    Tensor4<T> out({s.n, s.c, 2 * s.h, 2 * s.w});
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        const T* in = x.data() + p * s.h * s.w;
        T* op = out.data() + p * 4 * s.h * s.w;
        for (std::int64_t y = 0; y < s.h; ++y) {
            T* r0 = op + (2 * y) * 2 * s.w;
            T* r1 = r0 + 2 * s.w;
            const T* irow = in + y * s.w;
            for (std::int64_t x2 = 0; x2 < s.w; ++x2) {
                const T v = irow[x2];
                r0[2 * x2] = v;
                r0[2 * x2 + 1] = v;
                r1[2 * x2] = v;
                r1[2 * x2 + 1] = v;
            }
        }
    }
    return out;
}

template <class T>
Tensor4<T> upsample2x_backward(const Tensor4<T>& grad_out) {
    const Shape4 s = grad_out.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
        throw ShapeError("upsample2x_backward: grad extents must be even");
    const std::int64_t h = s.h / 2, w = s.w / 2;
    Tensor4<T> gx({s.n, s.c, h, w});
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        const T* go = grad_out.data() + p * s.h * s.w;
        T* g = gx.data() + p * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            const T* r0 = go + (2 * y) * s.w;
            const T* r1 = r0 + s.w;
            T* grow = g + y * w;
            for (std::int64_t x = 0; x < w; ++x)
                grow[x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Downsampler { maxpool, hpd, avgpool, stridedconv };

inline const char* to_string(Downsampler d) {
    switch (d) {
        case Downsampler::maxpool: return "maxpool";
        case Downsampler::hpd: return "hpd";
        case Downsampler::avgpool: return "avgpool";
        case Downsampler::stridedconv: return "stridedconv";
    }
    throw UsageError("unreachable downsampler value");
}

inline Downsampler parse_downsampler(const std::string& s) {
    if (s == "maxpool") return Downsampler::maxpool;
    if (s == "hpd") return Downsampler::hpd;
    if (s == "avgpool") return Downsampler::avgpool;
    if (s == "stridedconv") return Downsampler::stridedconv;
    throw ConfigError("unknown downsampler '" + s + "'");
}

inline Fusion parse_fusion(const std::string& s) {
    if (s == "sum") return Fusion::sum;
    if (s == "concat") return Fusion::concat;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

// Encoder width doubles per stage. An hpd or stridedconv stage performs the
// doubling inside the downsampler; after a maxpool/avgpool stage the next
// block's first conv doubles instead.
struct NetConfig {
    int depth = 3;
    int base_channels = 16;
    int in_channels = 1;
    int classes = 4;
    std::vector<Downsampler> downsamplers;  // empty: derived from num_hpd
    Fusion fusion = Fusion::sum;
    int num_hpd = 0;  // first num_hpd stages hpd, rest maxpool (when downsamplers empty)

    std::int64_t width(int stage) const {
        return static_cast<std::int64_t>(base_channels) << stage;
    }

    std::vector<Downsampler> resolved_downsamplers() const {
        if (!downsamplers.empty()) {
            if (static_cast<int>(downsamplers.size()) != depth)
                throw ConfigError("downsamplers list length " +
                                  std::to_string(downsamplers.size()) + " != depth " +
                                  std::to_string(depth));
            return downsamplers;
        }
        if (num_hpd < 0 || num_hpd > depth)
            throw ConfigError("num_hpd " + std::to_string(num_hpd) + " outside [0, depth=" +
                              std::to_string(depth) + "]");
        std::vector<Downsampler> out(static_cast<std::size_t>(depth), Downsampler::maxpool);
        for (int s = 0; s < num_hpd; ++s) out[static_cast<std::size_t>(s)] = Downsampler::hpd;
        return out;
    }

    void validate() const {
        if (depth < 1 || depth > 8) throw ConfigError("depth must be in [1, 8]");
        if (base_channels < 1 || base_channels > 512)
            throw ConfigError("base_channels must be in [1, 512]");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (classes < 2) throw ConfigError("classes must be >= 2");
        (void)resolved_downsamplers();
    }
};

inline std::string to_text(const NetConfig& cfg) {
    std::string s;
    s += "depth=" + std::to_string(cfg.depth) + "\n";
    s += "base_channels=" + std::to_string(cfg.base_channels) + "\n";
    s += "in_channels=" + std::to_string(cfg.in_channels) + "\n";
    s += "classes=" + std::to_string(cfg.classes) + "\n";
    s += "fusion=" + std::string(to_string(cfg.fusion)) + "\n";
    s += "downsamplers=";
    const auto ds = cfg.resolved_downsamplers();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (i) s += ",";
        s += to_string(ds[i]);
    }
    s += "\n";
    return s;
}

inline NetConfig net_config_from_text(const std::string& text) {
    NetConfig cfg;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("bad config line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "depth")
            cfg.depth = std::stoi(val);
        else if (key == "base_channels")
            cfg.base_channels = std::stoi(val);
        else if (key == "in_channels")
            cfg.in_channels = std::stoi(val);
        else if (key == "classes")
            cfg.classes = std::stoi(val);
        else if (key == "fusion")
            cfg.fusion = parse_fusion(val);
        else if (key == "downsamplers") {
            cfg.downsamplers.clear();
            std::size_t p = 0;
            while (p <= val.size()) {
                std::size_t c = val.find(',', p);
                if (c == std::string::npos) c = val.size();
                cfg.downsamplers.push_back(parse_downsampler(val.substr(p, c - p)));
                p = c + 1;
            }
        } else
            throw ConfigError("unknown config key '" + key + "'");
    }
    if (cfg.downsamplers.empty())
        throw ConfigError("serialized config is missing the downsamplers list");
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Layers

template <class T>
struct ConvBnRelu {
    Tensor4<T> w, b;  // 3x3 conv
    BatchNormParams<T> bn;
    Tensor4<T> gw, gb, ggamma, gbeta;
};

template <class T>
struct CbrCache {
    Tensor4<T> x;
    BatchNormCache<T> bn;
    Tensor4<T> pre_relu;
};

template <class T>
ConvBnRelu<T> make_cbr(std::int64_t c_in, std::int64_t c_out) {
    ConvBnRelu<T> l;
    l.w = Tensor4<T>({c_out, c_in, 3, 3});
    l.b = Tensor4<T>({c_out, 1, 1, 1});
    l.bn = batchnorm_init<T>(c_out);
    l.gw = Tensor4<T>(l.w.shape());
    l.gb = Tensor4<T>(l.b.shape());
    l.ggamma = Tensor4<T>({c_out, 1, 1, 1});
    l.gbeta = Tensor4<T>({c_out, 1, 1, 1});
    return l;
}

template <class T>
Tensor4<T> cbr_forward(ConvBnRelu<T>& l, const Tensor4<T>& x, bool training, CbrCache<T>& cache) {
    cache.x = x;
    Tensor4<T> z = conv3x3_forward(x, l.w, l.b);
    auto [bn_out, bn_cache] = batchnorm_forward(z, l.bn, training);
    cache.bn = std::move(bn_cache);
    cache.pre_relu = std::move(bn_out);
    return relu(cache.pre_relu);
}

// Accumulates parameter gradients (+=); call zero_grads before each step.
template <class T>
Tensor4<T> cbr_backward(ConvBnRelu<T>& l, const CbrCache<T>& cache, const Tensor4<T>& grad) {
    Tensor4<T> g = relu_backward(grad, cache.pre_relu);
    BatchNormGrads<T> gbn = batchnorm_backward(g, cache.bn);
    add_inplace(l.ggamma, gbn.gamma);
    add_inplace(l.gbeta, gbn.beta);
    Conv3x3Grads<T> gc = conv3x3_backward(gbn.x, cache.x, l.w);
    add_inplace(l.gw, gc.weight);
    add_inplace(l.gb, gc.bias);
    return std::move(gc.x);
}

template <class T>
struct ConvBlock {
    ConvBnRelu<T> c1, c2;
};

template <class T>
struct BlockCache {
    CbrCache<T> c1, c2;
};

template <class T>
ConvBlock<T> make_block(std::int64_t c_in, std::int64_t c_out) {
    return {make_cbr<T>(c_in, c_out), make_cbr<T>(c_out, c_out)};
}

template <class T>
Tensor4<T> block_forward(ConvBlock<T>& b, const Tensor4<T>& x, bool training,
                         BlockCache<T>& cache) {
    Tensor4<T> y = cbr_forward(b.c1, x, training, cache.c1);
    return cbr_forward(b.c2, y, training, cache.c2);
}

template <class T>
Tensor4<T> block_backward(ConvBlock<T>& b, const BlockCache<T>& cache, const Tensor4<T>& grad) {
    Tensor4<T> g = cbr_backward(b.c2, cache.c2, grad);
    return cbr_backward(b.c1, cache.c1, g);
}

template <class T>
struct DownStage {
    Downsampler kind = Downsampler::maxpool;
    HpdParams<T> hpd;  // kind == hpd
    Tensor4<T> g_hpd_w, g_hpd_b, g_hpd_gamma, g_hpd_beta;
    Tensor4<T> sw, sb;  // kind == stridedconv, (c_out, c_in, 2, 2)
    Tensor4<T> g_sw, g_sb;
};

template <class T>
struct DownCache {
    Shape4 in_shape{};
    PoolIndices pool;
    HpdCache<T> hpd;
    Tensor4<T> x;  // stridedconv input
};

template <class T>
Tensor4<T> down_forward(DownStage<T>& d, const Tensor4<T>& x, bool training, DownCache<T>& cache) {
    cache.in_shape = x.shape();
    switch (d.kind) {
        case Downsampler::maxpool: {
            auto [y, idx] = max_pool2d(x, 2);
            cache.pool = std::move(idx);
            return std::move(y);
        }
        case Downsampler::avgpool:
            return avg_pool2d(x, 2);
        case Downsampler::hpd: {
            auto [y, hc] = hpd_forward(x, d.hpd, 2, training);
            cache.hpd = std::move(hc);
            return std::move(y);
        }
        case Downsampler::stridedconv:
            cache.x = x;
            return strided_conv2x2_forward(x, d.sw, d.sb);
    }
    throw UsageError("unreachable downsampler value");
}

template <class T>
Tensor4<T> down_backward(DownStage<T>& d, const DownCache<T>& cache, const Tensor4<T>& grad) {
    switch (d.kind) {
        case Downsampler::maxpool:
            return pool_backward(grad, cache.pool, cache.in_shape);
        case Downsampler::avgpool:
            return avg_pool2d_backward(grad, 2, cache.in_shape);
        case Downsampler::hpd: {
            HpdGrads<T> g = hpd_backward(grad, d.hpd, cache.hpd);
            add_inplace(d.g_hpd_w, g.conv_weight);
            add_inplace(d.g_hpd_b, g.conv_bias);
            add_inplace(d.g_hpd_gamma, g.bn_gamma);
            add_inplace(d.g_hpd_beta, g.bn_beta);
            return std::move(g.x);
        }
        case Downsampler::stridedconv: {
            StridedConvGrads<T> g = strided_conv2x2_backward(grad, cache.x, d.sw);
            add_inplace(d.g_sw, g.weight);
            add_inplace(d.g_sb, g.bias);
            return std::move(g.x);
        }
    }
    throw UsageError("unreachable downsampler value");
}

// ---------------------------------------------------------------------------
// Whole net

template <class T>
struct NetParams {
    NetConfig cfg;
    ConvBlock<T> stem;                 // enc0, full resolution
    std::vector<DownStage<T>> down;    // down{s}, s = 0..depth-1
    std::vector<ConvBlock<T>> enc;     // enc{s+1} follows down{s}
    std::vector<ConvBnRelu<T>> up;     // up[i]: width(i+1) -> width(i) after 2x upsample
    std::vector<ConvBlock<T>> dec;     // dec[i]: concat(up out, skip i) -> width(i)
    Conv1x1Params<T> head;             // width(0) -> classes
    Tensor4<T> g_head_w, g_head_b;
};

// Named view over every tensor in the net. Learnables carry a grad pointer;
// BN running stats carry nullptr and are excluded from count_params and the
// optimizer but included in checkpoints. decay marks conv weights, the only
// tensors weight decay applies to.
template <class T>
struct ParamRef {
    std::string name;
    Tensor4<T>* value;
    Tensor4<T>* grad;
    bool decay;
};

namespace detail {

template <class T>
void push_bn(std::vector<ParamRef<T>>& out, const std::string& prefix, BatchNormParams<T>& bn,
             Tensor4<T>& ggamma, Tensor4<T>& gbeta) {
    out.push_back({prefix + ".gamma", &bn.gamma, &ggamma, false});
    out.push_back({prefix + ".beta", &bn.beta, &gbeta, false});
    out.push_back({prefix + ".running_mean", &bn.running_mean, nullptr, false});
    out.push_back({prefix + ".running_var", &bn.running_var, nullptr, false});
}

template <class T>
void push_cbr(std::vector<ParamRef<T>>& out, const std::string& conv_name,
              const std::string& bn_name, ConvBnRelu<T>& l) {
    out.push_back({conv_name + ".weight", &l.w, &l.gw, true});
    out.push_back({conv_name + ".bias", &l.b, &l.gb, false});
    push_bn(out, bn_name, l.bn, l.ggamma, l.gbeta);
}

template <class T>
void push_block(std::vector<ParamRef<T>>& out, const std::string& prefix, ConvBlock<T>& b) {
    push_cbr(out, prefix + ".conv1", prefix + ".bn1", b.c1);
    push_cbr(out, prefix + ".conv2", prefix + ".bn2", b.c2);
}

}  // namespace detail

template <class T>
std::vector<ParamRef<T>> params(NetParams<T>& net) {
    std::vector<ParamRef<T>> out;
    detail::push_block(out, "enc0", net.stem);
    const int depth = net.cfg.depth;
    for (int s = 0; s < depth; ++s) {
        DownStage<T>& d = net.down[static_cast<std::size_t>(s)];
        const std::string dn = "down" + std::to_string(s);
        if (d.kind == Downsampler::hpd) {
            out.push_back({dn + ".conv.weight", &d.hpd.conv.weight, &d.g_hpd_w, true});
            out.push_back({dn + ".conv.bias", &d.hpd.conv.bias, &d.g_hpd_b, false});
            detail::push_bn(out, dn + ".bn", d.hpd.bn, d.g_hpd_gamma, d.g_hpd_beta);
        } else if (d.kind == Downsampler::stridedconv) {
            out.push_back({dn + ".conv.weight", &d.sw, &d.g_sw, true});
            out.push_back({dn + ".conv.bias", &d.sb, &d.g_sb, false});
        }
        detail::push_block(out, "enc" + std::to_string(s + 1),
                           net.enc[static_cast<std::size_t>(s)]);
    }
    for (int i = depth - 1; i >= 0; --i) {
        const std::string un = "up" + std::to_string(i + 1);
        detail::push_cbr(out, un + ".conv", un + ".bn", net.up[static_cast<std::size_t>(i)]);
        detail::push_block(out, "dec" + std::to_string(i), net.dec[static_cast<std::size_t>(i)]);
    }
    out.push_back({"head.weight", &net.head.weight, &net.g_head_w, true});
    out.push_back({"head.bias", &net.head.bias, &net.g_head_b, false});
    return out;
}

// True when the downsampler itself changes the channel count.
inline bool doubles_channels(Downsampler d) {
    return d == Downsampler::hpd || d == Downsampler::stridedconv;
}

// Every conv weight is drawn from its own stream keyed by the tensor name,
// so adding or removing a stage leaves every other tensor's values intact.
// Bound = 0.35 * sqrt(3 / fan_in): batch norm renormalizes activations no
// matter the scale, but the step a filter takes relative to its own norm
// grows as the init shrinks, and the short poly-decayed schedule needs that
// headroom — 0.35 measurably speeds convergence without destabilizing it.
template <class T>
NetParams<T> build_net(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    NetParams<T> net;
    net.cfg = cfg;
    const auto ds = cfg.resolved_downsamplers();
    const int depth = cfg.depth;

    net.stem = make_block<T>(cfg.in_channels, cfg.width(0));
    for (int s = 0; s < depth; ++s) {
        DownStage<T> d;
        d.kind = ds[static_cast<std::size_t>(s)];
        const std::int64_t cin = cfg.width(s);
        const std::int64_t cout = cfg.width(s + 1);
        if (d.kind == Downsampler::hpd) {
            const std::int64_t conv_in = cfg.fusion == Fusion::concat ? 2 * cin : cin;
            d.hpd.fusion = cfg.fusion;
            d.hpd.conv.weight = Tensor4<T>({cout, conv_in, 1, 1});
            d.hpd.conv.bias = Tensor4<T>({cout, 1, 1, 1});
            d.hpd.bn = batchnorm_init<T>(cout);
            d.g_hpd_w = Tensor4<T>(d.hpd.conv.weight.shape());
            d.g_hpd_b = Tensor4<T>(d.hpd.conv.bias.shape());
            d.g_hpd_gamma = Tensor4<T>({cout, 1, 1, 1});
            d.g_hpd_beta = Tensor4<T>({cout, 1, 1, 1});
        } else if (d.kind == Downsampler::stridedconv) {
            d.sw = Tensor4<T>({cout, cin, 2, 2});
            d.sb = Tensor4<T>({cout, 1, 1, 1});
            d.g_sw = Tensor4<T>(d.sw.shape());
            d.g_sb = Tensor4<T>(d.sb.shape());
        }
        net.down.push_back(std::move(d));
        const std::int64_t enc_in = doubles_channels(ds[static_cast<std::size_t>(s)]) ? cout : cin;
        net.enc.push_back(make_block<T>(enc_in, cout));
    }
    for (int i = 0; i < depth; ++i) {
        net.up.push_back(make_cbr<T>(cfg.width(i + 1), cfg.width(i)));
        net.dec.push_back(make_block<T>(2 * cfg.width(i), cfg.width(i)));
    }
    net.head.weight = Tensor4<T>({cfg.classes, cfg.width(0), 1, 1});
    net.head.bias = Tensor4<T>({cfg.classes, 1, 1, 1});
    net.g_head_w = Tensor4<T>(net.head.weight.shape());
    net.g_head_b = Tensor4<T>(net.head.bias.shape());

    for (ParamRef<T>& ref : params(net)) {
        if (!ref.decay) continue;  // only conv weights draw random values
        const Shape4 ws = ref.value->shape();
        const std::int64_t fan_in = ws.c * ws.h * ws.w;
        const T bound = T(0.35) * std::sqrt(T(3) / static_cast<T>(fan_in));
        Rng rng(derive_seed(seed, fnv1a64(ref.name)));
        *ref.value = rng_uniform<T>(rng, ws, -bound, bound);
    }
    return net;
}

template <class T>
void zero_grads(NetParams<T>& net) {
    for (ParamRef<T>& ref : params(net))
        if (ref.grad) std::fill(ref.grad->vec().begin(), ref.grad->vec().end(), T(0));
}

template <class T>
std::int64_t count_params(NetParams<T>& net) {
    std::int64_t total = 0;
    for (const ParamRef<T>& ref : params(net))
        if (ref.grad) total += ref.value->size();
    return total;
}

template <class T>
struct NetCache {
    BlockCache<T> stem;
    std::vector<DownCache<T>> down;
    std::vector<BlockCache<T>> enc;
    std::vector<CbrCache<T>> up;    // cache.x holds the upsampled tensor
    std::vector<BlockCache<T>> dec; // cache.c1.x holds the concatenated tensor
    Tensor4<T> head_in;
};

template <class T>
std::pair<Tensor4<T>, NetCache<T>> net_forward(const Tensor4<T>& x, NetParams<T>& net,
                                               bool training) {
    const NetConfig& cfg = net.cfg;
    const Shape4 s = x.shape();
    if (s.c != cfg.in_channels)
        throw ShapeError("net_forward: input has " + std::to_string(s.c) + " channels, config " +
                         std::to_string(cfg.in_channels));
    const std::int64_t div = std::int64_t(1) << cfg.depth;
    if (s.h % div != 0 || s.w % div != 0)
        throw ShapeError("net_forward: spatial dims " + to_string(s) + " not divisible by 2^" +
                         std::to_string(cfg.depth));

    NetCache<T> cache;
    cache.down.resize(static_cast<std::size_t>(cfg.depth));
    cache.enc.resize(static_cast<std::size_t>(cfg.depth));
    cache.up.resize(static_cast<std::size_t>(cfg.depth));
    cache.dec.resize(static_cast<std::size_t>(cfg.depth));

    std::vector<Tensor4<T>> skips;  // skips[s] = encoder output at width(s)
    Tensor4<T> a = block_forward(net.stem, x, training, cache.stem);
    for (int s2 = 0; s2 < cfg.depth; ++s2) {
        skips.push_back(a);
        Tensor4<T> d = down_forward(net.down[static_cast<std::size_t>(s2)], a, training,
                                    cache.down[static_cast<std::size_t>(s2)]);
        a = block_forward(net.enc[static_cast<std::size_t>(s2)], d, training,
                          cache.enc[static_cast<std::size_t>(s2)]);
    }
    for (int i = cfg.depth - 1; i >= 0; --i) {
        Tensor4<T> u = upsample2x_nearest(a);
        u = cbr_forward(net.up[static_cast<std::size_t>(i)], u, training,
                        cache.up[static_cast<std::size_t>(i)]);
        Tensor4<T> cat = concat_channels(u, skips[static_cast<std::size_t>(i)]);
        a = block_forward(net.dec[static_cast<std::size_t>(i)], cat, training,
                          cache.dec[static_cast<std::size_t>(i)]);
    }
    cache.head_in = a;
    Tensor4<T> logits = conv1x1_forward(a, net.head);
    return {std::move(logits), std::move(cache)};
}

// Accumulates parameter gradients; returns grad wrt the input.
template <class T>
Tensor4<T> net_backward(const Tensor4<T>& grad_logits, NetParams<T>& net,
                        const NetCache<T>& cache) {
    const NetConfig& cfg = net.cfg;
    Conv1x1Grads<T> gh = conv1x1_backward(grad_logits, cache.head_in, net.head);
    add_inplace(net.g_head_w, gh.weight);
    add_inplace(net.g_head_b, gh.bias);
    Tensor4<T> g = std::move(gh.x);

    std::vector<Tensor4<T>> gskips(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) {
        g = block_backward(net.dec[static_cast<std::size_t>(i)],
                           cache.dec[static_cast<std::size_t>(i)], g);
        const std::int64_t wi = cfg.width(i);
        gskips[static_cast<std::size_t>(i)] = slice_channels(g, wi, wi);
        Tensor4<T> gu = slice_channels(g, 0, wi);
        gu = cbr_backward(net.up[static_cast<std::size_t>(i)], cache.up[static_cast<std::size_t>(i)],
                          gu);
        g = upsample2x_backward(gu);
    }
    for (int s = cfg.depth - 1; s >= 0; --s) {
        g = block_backward(net.enc[static_cast<std::size_t>(s)],
                           cache.enc[static_cast<std::size_t>(s)], g);
        g = down_backward(net.down[static_cast<std::size_t>(s)],
                          cache.down[static_cast<std::size_t>(s)], g);
        add_inplace(g, gskips[static_cast<std::size_t>(s)]);
    }
    return block_backward(net.stem, cache.stem, g);
}

// ---------------------------------------------------------------------------
// FLOPs accounting. Convention: one multiply-accumulate = 2 FLOPs; a conv
// adds c_out bias adds per output position; one pooling comparison = 1 FLOP
// (k*k-1 per window for min/max, k*k for avg: k*k-1 adds plus the divide);
// minmax fusion adds 1 per output cell in sum mode; BN = 2 FLOPs/element,
// ReLU = 1; nearest upsample and concat = 0.

namespace flops {

inline std::int64_t conv(std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t n,
                         std::int64_t h, std::int64_t w) {
    return n * h * w * (2 * k * k * cin * cout + cout);
}

inline std::int64_t bn(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return 2 * n * c * h * w;
}

inline std::int64_t relu(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return n * c * h * w;
}

inline std::int64_t cbr(std::int64_t k, std::int64_t cin, std::int64_t cout, std::int64_t n,
                        std::int64_t h, std::int64_t w) {
    return conv(k, cin, cout, n, h, w) + bn(n, cout, h, w) + relu(n, cout, h, w);
}

inline std::int64_t block(std::int64_t cin, std::int64_t cout, std::int64_t n, std::int64_t h,
                          std::int64_t w) {
    return cbr(3, cin, cout, n, h, w) + cbr(3, cout, cout, n, h, w);
}

}  // namespace flops

inline std::int64_t count_flops(const NetConfig& cfg, Shape4 input) {
    cfg.validate();
    if (input.c != cfg.in_channels) throw ShapeError("count_flops: channel mismatch");
    const std::int64_t div = std::int64_t(1) << cfg.depth;
    if (input.h % div != 0 || input.w % div != 0)
        throw ShapeError("count_flops: spatial dims not divisible by 2^depth");
    const auto ds = cfg.resolved_downsamplers();
    const std::int64_t n = input.n;
    std::int64_t total = flops::block(cfg.in_channels, cfg.width(0), n, input.h, input.w);
    for (int s = 0; s < cfg.depth; ++s) {
        const std::int64_t cin = cfg.width(s), cout = cfg.width(s + 1);
        const std::int64_t ho = input.h >> (s + 1), wo = input.w >> (s + 1);
        std::int64_t enc_in = cin;
        switch (ds[static_cast<std::size_t>(s)]) {
            case Downsampler::maxpool:
                total += n * cin * ho * wo * 3;
                break;
            case Downsampler::avgpool:
                total += n * cin * ho * wo * 4;
                break;
            case Downsampler::hpd:
                if (cfg.fusion == Fusion::sum) {
                    total += n * cin * ho * wo * 7;  // 2*(k*k-1) comparisons + 1 add
                    total += flops::cbr(1, cin, cout, n, ho, wo);
                } else {
                    total += n * cin * ho * wo * 6;
                    total += flops::cbr(1, 2 * cin, cout, n, ho, wo);
                }
                enc_in = cout;
                break;
            case Downsampler::stridedconv:
                total += flops::conv(2, cin, cout, n, ho, wo);
                enc_in = cout;
                break;
        }
        total += flops::block(enc_in, cout, n, ho, wo);
    }
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const std::int64_t h = input.h >> i, w = input.w >> i;
        total += flops::cbr(3, cfg.width(i + 1), cfg.width(i), n, h, w);
        total += flops::block(2 * cfg.width(i), cfg.width(i), n, h, w);
    }
    total += flops::conv(1, cfg.width(0), cfg.classes, n, input.h, input.w);
    return total;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "HPDC", version u8, u32 config text length + bytes, u32
// record count, then per record u32 name length + name + one tensor record.

inline constexpr char kCheckpointMagic[4] = {'H', 'P', 'D', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, NetParams<T>& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    io::write_bytes(out, kCheckpointMagic, 4);
    io::write_u8(out, kCheckpointVersion);
    const std::string cfg_text = to_text(net.cfg);
    io::write_u32le(out, static_cast<std::uint32_t>(cfg_text.size()));
    io::write_bytes(out, cfg_text.data(), cfg_text.size());
    auto refs = params(net);
    io::write_u32le(out, static_cast<std::uint32_t>(refs.size()));
    for (const ParamRef<T>& ref : refs) {
        io::write_u32le(out, static_cast<std::uint32_t>(ref.name.size()));
        io::write_bytes(out, ref.name.data(), ref.name.size());
        save_tensor(out, *ref.value);
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

template <class T>
NetParams<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    io::read_bytes(in, magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(path + ": bad magic, not a checkpoint");
    const std::uint8_t version = io::read_u8(in, "version");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = io::read_u32le(in, "config length");
    std::string cfg_text(cfg_len, '\0');
    io::read_bytes(in, cfg_text.data(), cfg_len, "config text");
    NetConfig cfg = net_config_from_text(cfg_text);
    NetParams<T> net = build_net<T>(cfg, 0);
    auto refs = params(net);
    const std::uint32_t count = io::read_u32le(in, "record count");
    if (count != refs.size())
        throw FormatError(path + ": checkpoint holds " + std::to_string(count) +
                          " tensors, net expects " + std::to_string(refs.size()));
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = io::read_u32le(in, "name length");
        std::string name(name_len, '\0');
        io::read_bytes(in, name.data(), name_len, "name");
        if (name != refs[r].name)
            throw FormatError(path + ": unexpected tensor '" + name + "', expected '" +
                              refs[r].name + "'");
        Tensor4<T> t = load_tensor<T>(in);
        if (!(t.shape() == refs[r].value->shape()))
            throw FormatError(path + ": tensor '" + name + "' has shape " + to_string(t.shape()) +
                              ", net expects " + to_string(refs[r].value->shape()));
        *refs[r].value = std::move(t);
    }
    return net;
}

}  // namespace hpd

#endif  // HPD_NET_HPP
