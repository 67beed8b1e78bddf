#ifndef HPD_TRAIN_HPP
#define HPD_TRAIN_HPP

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hpd/data_io.hpp"
#include "hpd/metrics.hpp"
#include "hpd/net.hpp"
#include "hpd/parallel.hpp"

namespace hpd {

struct TrainConfig {
    double base_lr = 0.01;
    double power = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    std::int64_t max_iters = 200;
    std::uint64_t seed = 42;
    double loss_mix = 0.9;  // lambda: loss = lambda*CE + (1-lambda)*soft-Dice
    std::int64_t log_every = 10;
    std::int64_t eval_every = 0;  // 0: no periodic validation

    void validate() const {
        if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
        if (!(power > 0)) throw ConfigError("power must be > 0");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs it)");
        if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
        if (!(loss_mix >= 0 && loss_mix <= 1)) throw ConfigError("loss_mix must be in [0, 1]");
        if (log_every < 1) throw ConfigError("log_every must be >= 1");
        if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    }
};

inline double poly_lr(std::int64_t iter, std::int64_t max_iters, double base_lr, double power) {
    if (max_iters < 1) throw ValueError("poly_lr: max_iters must be >= 1");
    if (iter < 0 || iter > max_iters) throw ValueError("poly_lr: iter outside [0, max_iters]");
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iters),
                              power);
}

inline double poly_lr(std::int64_t iter, std::int64_t max_iters, const TrainConfig& cfg) {
    return poly_lr(iter, max_iters, cfg.base_lr, cfg.power);
}

// theta <- theta - lr * (g + wd * theta), decay only where the ref says so
// (conv weights; never biases or BN gamma/beta).
template <class T>
void sgd_step(std::vector<ParamRef<T>>& refs, double lr, double weight_decay) {
    for (ParamRef<T>& ref : refs) {
        if (!ref.grad) continue;
        if (!(ref.grad->shape() == ref.value->shape()))
            throw ShapeError("sgd_step: grad/param shape mismatch for " + ref.name);
        T* th = ref.value->data();
        const T* g = ref.grad->data();
        const std::int64_t count = ref.value->size();
        const T l = static_cast<T>(lr);
        if (ref.decay) {
            const T wd = static_cast<T>(weight_decay);
            for (std::int64_t i = 0; i < count; ++i) th[i] -= l * (g[i] + wd * th[i]);
        } else {
            for (std::int64_t i = 0; i < count; ++i) th[i] -= l * g[i];
        }
    }
}

template <class T>
struct LossResult {
    double loss = 0;
    Tensor4<T> grad;  // wrt logits
};

// lambda * softmax-cross-entropy + (1 - lambda) * (1 - mean soft Dice).
// CE is inverse-frequency weighted per batch: pixels of class c weigh
// 1/G_c, normalized by the number of classes present, so the thin ring and
// the small blob contribute the same aggregate pull as the background that
// outnumbers them 300:1. An unweighted pixel mean starves rare classes —
// their logits get suppressed toward the class prior early on and the
// remaining gradient (proportional to the softmax probability) cannot
// recover them within a short poly-decayed schedule. Uniform logits still
// give CE = ln C exactly. Soft Dice is computed per class over the whole
// batch from softmax probabilities,
//   D_c = (2*S_c + eps) / (P_c + G_c + eps),
// with S_c = sum p_c*g_c, P_c = sum p_c, G_c = |gt == c|, eps = 1e-5, and is
// averaged over ALL classes including background (the metric mdsc excludes
// it; the loss wants background supervision). The gradient is analytic,
// chained through the softmax.
template <class T>
LossResult<T> loss_ce_dice(const Tensor4<T>& logits, const LabelMap& labels, double lambda) {
    const Shape4 s = logits.shape();
    if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
        throw ShapeError("loss_ce_dice: labels shape does not match logits");
    if (!(lambda >= 0 && lambda <= 1)) throw ValueError("loss_ce_dice: lambda outside [0, 1]");
    const std::int64_t C = s.c;
    const std::int64_t plane = s.h * s.w;
    constexpr double eps = 1e-5;

    Tensor4<T> probs(s);
    std::vector<double> inter(static_cast<std::size_t>(C), 0.0);  // S_c
    std::vector<double> psum(static_cast<std::size_t>(C), 0.0);   // P_c
    std::vector<double> gsum(static_cast<std::size_t>(C), 0.0);   // G_c
    std::vector<double> nll(static_cast<std::size_t>(C), 0.0);    // sum -ln p[label] per class
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t e = 0; e < plane; ++e) {
            const std::int32_t label = labels.v[static_cast<std::size_t>(i * plane + e)];
            if (label < 0 || label >= C)
                throw ValueError("loss_ce_dice: label " + std::to_string(label) +
                                 " outside [0, " + std::to_string(C) + ")");
            const T* z = logits.data() + i * C * plane + e;
            T* p = probs.data() + i * C * plane + e;
            double zmax = z[0];
            for (std::int64_t c = 1; c < C; ++c) zmax = std::max<double>(zmax, z[c * plane]);
            double norm = 0;
            for (std::int64_t c = 0; c < C; ++c) {
                const double q = std::exp(static_cast<double>(z[c * plane]) - zmax);
                p[c * plane] = static_cast<T>(q);
                norm += q;
            }
            const double inv = 1.0 / norm;
            for (std::int64_t c = 0; c < C; ++c) {
                const double q = static_cast<double>(p[c * plane]) * inv;
                p[c * plane] = static_cast<T>(q);
                psum[static_cast<std::size_t>(c)] += q;
            }
            const double pl = static_cast<double>(p[label * plane]);
            nll[static_cast<std::size_t>(label)] -= std::log(std::max(pl, 1e-300));
            inter[static_cast<std::size_t>(label)] += pl;
            gsum[static_cast<std::size_t>(label)] += 1.0;
        }

    // Per-class CE weights: pixels of class c weigh 1/G_c, normalized by the
    // number of classes present in the batch.
    double present = 0;
    for (std::int64_t c = 0; c < C; ++c)
        if (gsum[static_cast<std::size_t>(c)] > 0) present += 1.0;
    double ce = 0;
    std::vector<double> wce(static_cast<std::size_t>(C), 0.0);  // lambda * w_c / present
    for (std::int64_t c = 0; c < C; ++c) {
        const std::size_t cc = static_cast<std::size_t>(c);
        if (gsum[cc] <= 0) continue;
        ce += nll[cc] / gsum[cc];
        wce[cc] = lambda / (gsum[cc] * present);
    }
    ce /= present;

    std::vector<double> dice(static_cast<std::size_t>(C));
    std::vector<double> qa(static_cast<std::size_t>(C));  // dL_dice/dp_c, constant part
    std::vector<double> qb(static_cast<std::size_t>(C));  // extra when gt == c
    double dice_mean = 0;
    for (std::int64_t c = 0; c < C; ++c) {
        const std::size_t cc = static_cast<std::size_t>(c);
        const double denom = psum[cc] + gsum[cc] + eps;
        dice[cc] = (2.0 * inter[cc] + eps) / denom;
        dice_mean += dice[cc];
        const double a = (1.0 - lambda) / (static_cast<double>(C) * denom);
        qa[cc] = a * dice[cc];
        qb[cc] = 2.0 * a;
    }
    dice_mean /= static_cast<double>(C);

    LossResult<T> r;
    r.loss = lambda * ce + (1.0 - lambda) * (1.0 - dice_mean);
    r.grad = Tensor4<T>(s);
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t e = 0; e < plane; ++e) {
            const std::int32_t label = labels.v[static_cast<std::size_t>(i * plane + e)];
            const T* p = probs.data() + i * C * plane + e;
            T* g = r.grad.data() + i * C * plane + e;
            // q_c = dL_dice/dp_c at this pixel; softmax chain needs sum q*p.
            double qdotp = 0;
            for (std::int64_t c = 0; c < C; ++c)
                qdotp += qa[static_cast<std::size_t>(c)] * static_cast<double>(p[c * plane]);
            qdotp -= qb[static_cast<std::size_t>(label)] * static_cast<double>(p[label * plane]);
            for (std::int64_t c = 0; c < C; ++c) {
                const double pc = static_cast<double>(p[c * plane]);
                const double is_label = c == label ? 1.0 : 0.0;
                const double qc = qa[static_cast<std::size_t>(c)] -
                                  qb[static_cast<std::size_t>(c)] * is_label;
                g[c * plane] = static_cast<T>(wce[static_cast<std::size_t>(label)] *
                                                  (pc - is_label) +
                                              pc * (qc - qdotp));
            }
        }
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    double mdsc = 1.0;                  // mean over images of per-image foreground mDSC
    std::vector<double> per_class_dsc; // from dataset-aggregated confusion counts
    std::int64_t images = 0;
};

inline EvalResult evaluate(NetParams<float>& net, const std::vector<SegSample>& samples,
                           int max_workers = 0) {
    if (samples.empty()) throw ValueError("evaluate: empty sample set");
    const int classes = net.cfg.classes;
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    std::vector<double> per_image(static_cast<std::size_t>(n));
    std::vector<std::vector<ConfusionCounts>> counts(
        static_cast<std::size_t>(n), std::vector<ConfusionCounts>(static_cast<std::size_t>(classes)));
    parallel_for(n, [&](std::int64_t i) {
        const SegSample& s = samples[static_cast<std::size_t>(i)];
        auto [logits, cache] = net_forward(s.image, net, false);
        const LabelMap pred = argmax_channels(logits);
        per_image[static_cast<std::size_t>(i)] = mdsc(pred, s.labels, classes).mean;
        for (int c = 0; c < classes; ++c)
            counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                confusion(pred, s.labels, c);
    }, max_workers);

    EvalResult r;
    r.images = n;
    double total = 0;
    for (double v : per_image) total += v;
    r.mdsc = total / static_cast<double>(n);
    r.per_class_dsc.resize(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        ConfusionCounts agg;
        for (std::int64_t i = 0; i < n; ++i) {
            const ConfusionCounts& cc = counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            agg.tp += cc.tp;
            agg.fp += cc.fp;
            agg.fn += cc.fn;
        }
        r.per_class_dsc[static_cast<std::size_t>(c)] = dsc_from_counts(agg);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct MetricPoint {
    std::int64_t iter = 0;  // 1-based, after the step
    double lr = 0;
    double loss = 0;
    double mdsc = 0;
    bool has_mdsc = false;
};

inline std::string format_metric_line(const MetricPoint& m) {
    char buf[160];
    if (m.has_mdsc)
        std::snprintf(buf, sizeof buf, "iter=%lld lr=%.17g loss=%.17g mdsc=%.17g",
                      static_cast<long long>(m.iter), m.lr, m.loss, m.mdsc);
    else
        std::snprintf(buf, sizeof buf, "iter=%lld lr=%.17g loss=%.17g",
                      static_cast<long long>(m.iter), m.lr, m.loss);
    return buf;
}

namespace detail {

inline void check_dataset(const std::vector<SegSample>& set, const NetConfig& cfg,
                          const char* split) {
    if (set.empty()) throw ValueError(std::string("empty ") + split + " dataset");
    const Shape4 first = set.front().image.shape();
    const std::int64_t div = std::int64_t(1) << cfg.depth;
    if (first.h % div != 0 || first.w % div != 0)
        throw ValueError(std::string(split) + " images " + to_string(first) +
                         " not divisible by 2^depth");
    if (first.c != cfg.in_channels)
        throw ValueError(std::string(split) + " images have wrong channel count");
    for (const SegSample& s : set) {
        if (!(s.image.shape() == first))
            throw ValueError(std::string(split) + " sample " + s.id + " has mismatched shape");
        for (std::int32_t v : s.labels.v)
            if (v < 0 || v >= cfg.classes)
                throw ValueError(std::string(split) + " sample " + s.id + " has label " +
                                 std::to_string(v) + " outside [0, " +
                                 std::to_string(cfg.classes) + ")");
    }
}

inline std::pair<Tensor4f, LabelMap> make_batch(const std::vector<SegSample>& set,
                                                const std::vector<std::int64_t>& idx) {
    const Shape4 s = set.front().image.shape();
    Tensor4f images({static_cast<std::int64_t>(idx.size()), s.c, s.h, s.w});
    LabelMap labels(static_cast<std::int64_t>(idx.size()), s.h, s.w);
    const std::int64_t plane = s.c * s.h * s.w;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const SegSample& sample = set[static_cast<std::size_t>(idx[b])];
        std::copy(sample.image.data(), sample.image.data() + plane,
                  images.data() + static_cast<std::int64_t>(b) * plane);
        std::copy(sample.labels.v.begin(), sample.labels.v.end(),
                  labels.v.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(s.h * s.w)));
    }
    return {std::move(images), std::move(labels)};
}

}  // namespace detail

// Deterministic SGD training: seeded shuffled batches, poly schedule, weight
// decay on conv weights. Logs every log_every iterations (and on the last),
// evaluating the validation set every eval_every when given one.
inline std::pair<NetParams<float>, std::vector<MetricPoint>> train(
    const NetConfig& net_cfg, const TrainConfig& tc, const std::vector<SegSample>& train_set,
    const std::vector<SegSample>* val_set = nullptr, std::ostream* log = nullptr) {
    net_cfg.validate();
    tc.validate();
    detail::check_dataset(train_set, net_cfg, "train");
    if (val_set) detail::check_dataset(*val_set, net_cfg, "val");

    NetParams<float> net = build_net<float>(net_cfg, tc.seed);
    std::vector<MetricPoint> history;
    if (tc.max_iters == 0) return {std::move(net), std::move(history)};

    auto refs = params(net);
    Rng shuffle_rng(derive_seed(tc.seed, fnv1a64("batch-shuffle")));
    std::vector<std::int64_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    std::size_t pos = order.size();  // forces a shuffle before the first batch

    std::vector<std::int64_t> batch_idx(static_cast<std::size_t>(tc.batch_size));
    for (std::int64_t iter = 0; iter < tc.max_iters; ++iter) {
        const double lr = poly_lr(iter, tc.max_iters, tc);
        for (int b = 0; b < tc.batch_size; ++b) {
            if (pos == order.size()) {
                shuffle(order, shuffle_rng);
                pos = 0;
            }
            batch_idx[static_cast<std::size_t>(b)] = order[pos++];
        }
        auto [images, labels] = detail::make_batch(train_set, batch_idx);
        auto [logits, cache] = net_forward(images, net, true);
        LossResult<float> loss = loss_ce_dice(logits, labels, tc.loss_mix);
        zero_grads(net);
        net_backward(loss.grad, net, cache);
        sgd_step(refs, lr, tc.weight_decay);

        const bool last = iter + 1 == tc.max_iters;
        const bool want_log = (iter + 1) % tc.log_every == 0 || last;
        const bool want_eval =
            val_set && ((tc.eval_every > 0 && (iter + 1) % tc.eval_every == 0) || last);
        if (want_log || want_eval) {
            MetricPoint m;
            m.iter = iter + 1;
            m.lr = lr;
            m.loss = loss.loss;
            if (want_eval) {
                m.mdsc = evaluate(net, *val_set).mdsc;
                m.has_mdsc = true;
            }
            history.push_back(m);
            if (log) (*log) << format_metric_line(m) << "\n";
        }
    }
    return {std::move(net), std::move(history)};
}

// ---------------------------------------------------------------------------
// Ablation sweep over the number of leading HPD stages

struct AblateRow {
    int num_hpd = 0;
    std::int64_t n_params = 0;
    std::int64_t flops = 0;  // single-sample forward at the dataset resolution
    double val_mdsc = 0;
    double final_loss = 0;
};

inline std::vector<AblateRow> ablate(NetConfig base_cfg, const TrainConfig& tc,
                                     const std::vector<int>& sweep,
                                     const std::vector<SegSample>& train_set,
                                     const std::vector<SegSample>& val_set,
                                     std::ostream* log = nullptr) {
    if (sweep.empty()) throw ConfigError("ablate: empty sweep");
    base_cfg.downsamplers.clear();
    std::vector<AblateRow> rows;
    for (int n : sweep) {
        NetConfig cfg = base_cfg;
        cfg.num_hpd = n;
        cfg.validate();
        if (log) (*log) << "ablate num_hpd=" << n << "\n";
        auto [net, history] = train(cfg, tc, train_set, &val_set, log);
        AblateRow row;
        row.num_hpd = n;
        row.n_params = count_params(net);
        const Shape4 s = train_set.front().image.shape();
        row.flops = count_flops(cfg, {1, s.c, s.h, s.w});
        row.val_mdsc = evaluate(net, val_set).mdsc;
        row.final_loss = history.empty() ? 0.0 : history.back().loss;
        rows.push_back(row);
    }
    return rows;
}

inline std::string ablate_table_tsv(const std::vector<AblateRow>& rows) {
    std::string out = "num_hpd\tparams\tflops\tval_mdsc\tfinal_loss\n";
    char buf[160];
    for (const AblateRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d\t%lld\t%lld\t%.17g\t%.17g\n", r.num_hpd,
                      static_cast<long long>(r.n_params), static_cast<long long>(r.flops),
                      r.val_mdsc, r.final_loss);
        out += buf;
    }
    return out;
}

inline std::string ablate_table_text(const std::vector<AblateRow>& rows) {
    std::string out = "num_hpd      params        flops   val_mdsc   final_loss\n";
    char buf[160];
    for (const AblateRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%7d  %10lld  %11lld  %9.4f  %11.4f\n", r.num_hpd,
                      static_cast<long long>(r.n_params), static_cast<long long>(r.flops),
                      r.val_mdsc, r.final_loss);
        out += buf;
    }
    return out;
}

}  // namespace hpd

#endif  // HPD_TRAIN_HPP
