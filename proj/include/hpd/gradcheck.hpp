#ifndef HPD_GRADCHECK_HPP
#define HPD_GRADCHECK_HPP

#include <cmath>
#include <string>
#include <vector>

#include "hpd/hpd.hpp"
#include "hpd/net.hpp"
#include "hpd/ops.hpp"
#include "hpd/rng.hpp"
#include "hpd/train.hpp"

namespace hpd {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0;
    double tol = 0;

    bool pass() const { return max_rel_err < tol; }
};

namespace gradcheck_detail {

// Relative error with a zero carve-out: parameters whose true gradient
// vanishes (conv biases feeding batch norm are mean-removed) leave the
// central difference as pure rounding noise ~ f*eps/2h ~ 1e-10, and the
// ratio of two numerical zeros says nothing. Both sides below 1e-9 counts
// as exact; genuine gradients in these nets are orders of magnitude larger.
inline double rel_err(double a, double b) {
    if (std::abs(a) < 1e-9 && std::abs(b) < 1e-9) return 0.0;
    return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-8);
}

// Central finite difference of f() wrt every element of x.
template <class F>
Tensor4d fd_grad(Tensor4d& x, F&& f, double h = 1e-5) {
    Tensor4d g(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double fp = f();
        x.data()[i] = orig - h;
        const double fm = f();
        x.data()[i] = orig;
        g.data()[i] = (fp - fm) / (2 * h);
    }
    return g;
}

inline double max_rel_err(const Tensor4d& analytic, const Tensor4d& fd) {
    double worst = 0;
    for (std::int64_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, rel_err(analytic.data()[i], fd.data()[i]));
    return worst;
}

inline double dot_all(const Tensor4d& a, const Tensor4d& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

// True when every pooling window (k x k tiles, partial at the edges) has all
// pairwise element differences above the margin, so a +-h nudge cannot flip
// a selection.
inline bool tie_free(const Tensor4d& x, int k, double margin = 1e-4) {
    const Shape4 s = x.shape();
    const std::int64_t ho = (s.h + k - 1) / k, wo = (s.w + k - 1) / k;
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
        const double* plane = x.data() + p * s.h * s.w;
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double vals[16];
                int count = 0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const std::int64_t y = oy * k + dy, xx = ox * k + dx;
                        if (y < s.h && xx < s.w) vals[count++] = plane[y * s.w + xx];
                    }
                for (int a = 0; a < count; ++a)
                    for (int b = a + 1; b < count; ++b)
                        if (std::abs(vals[a] - vals[b]) <= margin) return false;
            }
    }
    return true;
}

inline Tensor4d tie_free_tensor(Rng& rng, Shape4 s, int k) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Tensor4d x = rng_uniform<double>(rng, s, -1.0, 1.0);
        if (tie_free(x, k)) return x;
    }
    throw UsageError("tie_free_tensor: could not draw a tie-free tensor");
}

}  // namespace gradcheck_detail

// Finite-difference verification of every backward in the library. Each
// check projects the op output onto a fixed random tensor R so the upstream
// gradient is non-degenerate, then compares the analytic gradient of
// sum(R * op(x)) with central differences (double precision, h = 1e-5).
// Elementwise and linear ops must agree to 1e-4; anything chained through
// batch statistics gets 1e-3.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 1234) {
    using namespace gradcheck_detail;
    std::vector<GradCheckResult> results;

    auto pool_check = [&](const char* name, bool is_min, PadMode pad, Shape4 s) {
        Rng rng(derive_seed(seed, fnv1a64(name)));
        Tensor4d x = tie_free_tensor(rng, s, 2);
        auto fwd = [&](const Tensor4d& t) {
            return is_min ? min_pool2d(t, 2, pad) : max_pool2d(t, 2, pad);
        };
        auto [out, idx] = fwd(x);
        const Tensor4d r = rng_uniform<double>(rng, out.shape(), -1.0, 1.0);
        const Tensor4d analytic = pool_backward(r, idx, s);
        const Tensor4d fd = fd_grad(x, [&] { return dot_all(fwd(x).first, r); });
        results.push_back({name, max_rel_err(analytic, fd), 1e-4});
    };
    pool_check("min_pool2d", true, PadMode::none, {1, 2, 4, 4});
    pool_check("max_pool2d", false, PadMode::none, {1, 2, 4, 4});
    pool_check("min_pool2d.pad", true, PadMode::sentinel, {1, 2, 5, 5});
    pool_check("max_pool2d.pad", false, PadMode::sentinel, {1, 2, 5, 5});

    {
        Rng rng(derive_seed(seed, fnv1a64("avg_pool2d")));
        Tensor4d x = rng_uniform<double>(rng, {2, 2, 4, 4}, -1.0, 1.0);
        const Tensor4d r = rng_uniform<double>(rng, {2, 2, 2, 2}, -1.0, 1.0);
        const Tensor4d analytic = avg_pool2d_backward(r, 2, x.shape());
        const Tensor4d fd = fd_grad(x, [&] { return dot_all(avg_pool2d(x, 2), r); });
        results.push_back({"avg_pool2d", max_rel_err(analytic, fd), 1e-4});
    }

    {
        Rng rng(derive_seed(seed, fnv1a64("conv1x1")));
        Tensor4d x = rng_uniform<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
        Conv1x1Params<double> p;
        p.weight = rng_uniform<double>(rng, {5, 3, 1, 1}, -1.0, 1.0);
        p.bias = rng_uniform<double>(rng, {5, 1, 1, 1}, -1.0, 1.0);
        const Tensor4d r = rng_uniform<double>(rng, {2, 5, 4, 4}, -1.0, 1.0);
        auto f = [&] { return dot_all(conv1x1_forward(x, p), r); };
        const Conv1x1Grads<double> g = conv1x1_backward(r, x, p);
        double worst = max_rel_err(g.x, fd_grad(x, f));
        worst = std::max(worst, max_rel_err(g.weight, fd_grad(p.weight, f)));
        worst = std::max(worst, max_rel_err(g.bias, fd_grad(p.bias, f)));
        results.push_back({"conv1x1", worst, 1e-4});
    }

    {
        Rng rng(derive_seed(seed, fnv1a64("strided_conv2x2")));
        Tensor4d x = rng_uniform<double>(rng, {1, 3, 4, 4}, -1.0, 1.0);
        Tensor4d w = rng_uniform<double>(rng, {4, 3, 2, 2}, -1.0, 1.0);
        Tensor4d b = rng_uniform<double>(rng, {4, 1, 1, 1}, -1.0, 1.0);
        const Tensor4d r = rng_uniform<double>(rng, {1, 4, 2, 2}, -1.0, 1.0);
        auto f = [&] { return dot_all(strided_conv2x2_forward(x, w, b), r); };
        const StridedConvGrads<double> g = strided_conv2x2_backward(r, x, w);
        double worst = max_rel_err(g.x, fd_grad(x, f));
        worst = std::max(worst, max_rel_err(g.weight, fd_grad(w, f)));
        worst = std::max(worst, max_rel_err(g.bias, fd_grad(b, f)));
        results.push_back({"strided_conv2x2", worst, 1e-4});
    }

    {
        Rng rng(derive_seed(seed, fnv1a64("conv3x3")));
        Tensor4d x = rng_uniform<double>(rng, {1, 2, 5, 5}, -1.0, 1.0);
        Tensor4d w = rng_uniform<double>(rng, {3, 2, 3, 3}, -1.0, 1.0);
        Tensor4d b = rng_uniform<double>(rng, {3, 1, 1, 1}, -1.0, 1.0);
        const Tensor4d r = rng_uniform<double>(rng, {1, 3, 5, 5}, -1.0, 1.0);
        auto f = [&] { return dot_all(conv3x3_forward(x, w, b), r); };
        const Conv3x3Grads<double> g = conv3x3_backward(r, x, w);
        double worst = max_rel_err(g.x, fd_grad(x, f));
        worst = std::max(worst, max_rel_err(g.weight, fd_grad(w, f)));
        worst = std::max(worst, max_rel_err(g.bias, fd_grad(b, f)));
        results.push_back({"conv3x3", worst, 1e-4});
    }

    {
        Rng rng(derive_seed(seed, fnv1a64("batchnorm")));
        Tensor4d x = rng_uniform<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
        BatchNormParams<double> p = batchnorm_init<double>(3);
        p.gamma = rng_uniform<double>(rng, {3, 1, 1, 1}, 0.5, 1.5);
        p.beta = rng_uniform<double>(rng, {3, 1, 1, 1}, -0.5, 0.5);
        const Tensor4d r = rng_uniform<double>(rng, {2, 3, 4, 4}, -1.0, 1.0);
        auto f = [&] {
            BatchNormParams<double> scratch = p;
            return dot_all(batchnorm_forward(x, scratch, true).first, r);
        };
        BatchNormParams<double> scratch = p;
        auto [out, cache] = batchnorm_forward(x, scratch, true);
        const BatchNormGrads<double> g = batchnorm_backward(r, cache);
        double worst = max_rel_err(g.x, fd_grad(x, f));
        worst = std::max(worst, max_rel_err(g.gamma, fd_grad(p.gamma, f)));
        worst = std::max(worst, max_rel_err(g.beta, fd_grad(p.beta, f)));
        results.push_back({"batchnorm", worst, 1e-3});
    }

    {
        Rng rng(derive_seed(seed, fnv1a64("relu")));
        Tensor4d x({1, 2, 4, 4});
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const double mag = rng.uniform(1e-3, 1.0);
            x.data()[i] = rng.next_u64() & 1 ? mag : -mag;
        }
        const Tensor4d r = rng_uniform<double>(rng, x.shape(), -1.0, 1.0);
        const Tensor4d analytic = relu_backward(r, x);
        const Tensor4d fd = fd_grad(x, [&] { return dot_all(relu(x), r); });
        results.push_back({"relu", max_rel_err(analytic, fd), 1e-4});
    }

    auto hpd_check = [&](const char* name, Fusion fusion) {
        Rng rng(derive_seed(seed, fnv1a64(name)));
        Tensor4d x = tie_free_tensor(rng, {1, 3, 8, 8}, 2);
        HpdParams<double> p = hpd_init<double>(3, 5, fusion, rng);
        const Tensor4d r = rng_uniform<double>(rng, {1, 5, 4, 4}, -1.0, 1.0);
        auto f = [&] {
            HpdParams<double> scratch = p;
            return dot_all(hpd_forward(x, scratch, 2, true).first, r);
        };
        HpdParams<double> scratch = p;
        auto [out, cache] = hpd_forward(x, scratch, 2, true);
        const HpdGrads<double> g = hpd_backward(r, scratch, cache);
        double worst = max_rel_err(g.x, fd_grad(x, f));
        worst = std::max(worst, max_rel_err(g.conv_weight, fd_grad(p.conv.weight, f)));
        worst = std::max(worst, max_rel_err(g.conv_bias, fd_grad(p.conv.bias, f)));
        worst = std::max(worst, max_rel_err(g.bn_gamma, fd_grad(p.bn.gamma, f)));
        worst = std::max(worst, max_rel_err(g.bn_beta, fd_grad(p.bn.beta, f)));
        results.push_back({name, worst, 1e-3});
    };
    hpd_check("hpd.sum", Fusion::sum);
    hpd_check("hpd.concat", Fusion::concat);

    {
        Rng rng(derive_seed(seed, fnv1a64("loss_ce_dice")));
        Tensor4d logits = rng_uniform<double>(rng, {1, 3, 4, 4}, -2.0, 2.0);
        LabelMap labels(1, 4, 4);
        for (auto& v : labels.v) v = static_cast<std::int32_t>(rng.next_below(3));
        const LossResult<double> analytic = loss_ce_dice(logits, labels, 0.5);
        const Tensor4d fd =
            fd_grad(logits, [&] { return loss_ce_dice(logits, labels, 0.5).loss; });
        results.push_back({"loss_ce_dice", max_rel_err(analytic.grad, fd), 1e-3});
    }

    auto net_check = [&](const char* name, int num_hpd) {
        NetConfig cfg;
        cfg.depth = 1;
        cfg.base_channels = 4;
        cfg.in_channels = 1;
        cfg.classes = 3;
        cfg.num_hpd = num_hpd;
        Rng rng(derive_seed(seed, fnv1a64(name)));
        NetParams<double> net = build_net<double>(cfg, rng.next_u64());
        Tensor4d x = rng_uniform<double>(rng, {1, 1, 8, 8}, 0.0, 1.0);
        LabelMap labels(1, 8, 8);
        for (auto& v : labels.v) v = static_cast<std::int32_t>(rng.next_below(3));
        auto f = [&] {
            auto [logits, cache] = net_forward(x, net, true);
            return loss_ce_dice(logits, labels, 0.5).loss;
        };
        zero_grads(net);
        auto [logits, cache] = net_forward(x, net, true);
        const LossResult<double> loss = loss_ce_dice(logits, labels, 0.5);
        const Tensor4d gx = net_backward(loss.grad, net, cache);
        double worst = max_rel_err(gx, fd_grad(x, f));
        for (ParamRef<double>& ref : params(net)) {
            if (!ref.grad) continue;
            worst = std::max(worst, max_rel_err(*ref.grad, fd_grad(*ref.value, f)));
        }
        results.push_back({name, worst, 1e-3});
    };
    net_check("net.depth1.hpd", 1);
    net_check("net.depth1.maxpool", 0);

    return results;
}

}  // namespace hpd

#endif  // HPD_GRADCHECK_HPP
