#ifndef HPD_METRICS_HPP
#define HPD_METRICS_HPP

#include <cstdint>
#include <vector>

#include "hpd/tensor.hpp"

namespace hpd {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
};

inline void check_same_maps(const LabelMap& a, const LabelMap& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw ShapeError("label maps differ in shape");
}

inline ConfusionCounts confusion(const LabelMap& pred, const LabelMap& gt, std::int32_t cls) {
    check_same_maps(pred, gt);
    ConfusionCounts c;
    const std::size_t count = pred.v.size();
    for (std::size_t i = 0; i < count; ++i) {
        const bool p = pred.v[i] == cls;
        const bool g = gt.v[i] == cls;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
    }
    return c;
}

// DSC = 2TP / (2TP + FP + FN). A class absent from both maps scores 1
// (nothing to find, nothing falsely found).
inline double dsc_from_counts(const ConfusionCounts& c) {
    const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double dsc(const LabelMap& pred, const LabelMap& gt, std::int32_t cls) {
    return dsc_from_counts(confusion(pred, gt, cls));
}

struct MdscResult {
    double mean = 1.0;                  // over foreground classes present in gt
    std::vector<double> per_class;     // dsc for every class, background included
    std::vector<bool> gt_present;      // class appears in gt
};

// Mean DSC over foreground classes (class 0 excluded). Classes absent from
// the ground truth are skipped in the mean; if no foreground class is
// present at all the mean is 1 by the same nothing-to-find convention.
inline MdscResult mdsc(const LabelMap& pred, const LabelMap& gt, int classes) {
    if (classes < 2) throw ValueError("mdsc: classes must be >= 2");
    check_same_maps(pred, gt);
    MdscResult r;
    r.per_class.resize(static_cast<std::size_t>(classes));
    r.gt_present.assign(static_cast<std::size_t>(classes), false);
    for (std::int32_t v : gt.v) {
        if (v < 0 || v >= classes) throw ValueError("mdsc: gt label outside [0, classes)");
        r.gt_present[static_cast<std::size_t>(v)] = true;
    }
    double total = 0;
    int counted = 0;
    for (int cls = 0; cls < classes; ++cls) {
        const double d = dsc(pred, gt, cls);
        r.per_class[static_cast<std::size_t>(cls)] = d;
        if (cls > 0 && r.gt_present[static_cast<std::size_t>(cls)]) {
            total += d;
            ++counted;
        }
    }
    r.mean = counted > 0 ? total / counted : 1.0;
    return r;
}

// Per-pixel argmax over channels; ties go to the lowest class index.
template <class T>
LabelMap argmax_channels(const Tensor4<T>& logits) {
    const Shape4 s = logits.shape();
    LabelMap m(s.n, s.h, s.w);
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t i = 0; i < s.n; ++i)
        for (std::int64_t e = 0; e < plane; ++e) {
            const T* base = logits.data() + i * s.c * plane + e;
            T best = base[0];
            std::int32_t arg = 0;
            for (std::int64_t c = 1; c < s.c; ++c) {
                const T v = base[c * plane];
                if (v > best) {
                    best = v;
                    arg = static_cast<std::int32_t>(c);
                }
            }
            m.v[static_cast<std::size_t>(i * plane + e)] = arg;
        }
    return m;
}

}  // namespace hpd

#endif  // HPD_METRICS_HPP
