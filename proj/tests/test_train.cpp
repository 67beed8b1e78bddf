#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "hpd/data_io.hpp"
#include "hpd/gradcheck.hpp"
#include "hpd/train.hpp"

using namespace hpd;

namespace {

NetConfig tiny_cfg(int num_hpd) {
    NetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.classes = 3;
    cfg.num_hpd = num_hpd;
    return cfg;
}

TrainConfig tiny_tc(std::int64_t iters) {
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_iters = iters;
    tc.seed = 7;
    tc.log_every = 5;
    return tc;
}

}  // namespace

TEST_CASE("poly schedule endpoints and midpoint") {
    TrainConfig tc;
    CHECK(poly_lr(0, 100, tc) == 0.01);
    CHECK(poly_lr(100, 100, tc) == 0.0);
    CHECK(poly_lr(50, 100, 0.01, 1.0) == doctest::Approx(0.005).epsilon(1e-12));

    double prev = poly_lr(0, 50, tc);
    for (std::int64_t i = 1; i <= 50; ++i) {
        const double lr = poly_lr(i, 50, tc);
        CHECK(lr < prev);
        prev = lr;
    }

    CHECK_THROWS_AS((void)poly_lr(101, 100, tc), ValueError);
    CHECK_THROWS_AS((void)poly_lr(-1, 100, tc), ValueError);
    CHECK_THROWS_AS((void)poly_lr(0, 0, tc), ValueError);
}

TEST_CASE("sgd step arithmetic") {
    Tensor4d theta(Shape4{1, 1, 1, 1}, 1.0);
    Tensor4d grad(Shape4{1, 1, 1, 1}, 0.0);
    std::vector<ParamRef<double>> refs{{"w", &theta, &grad, true}};

    sgd_step(refs, 0.0, 0.1);  // lr 0: untouched
    CHECK(theta.vec()[0] == 1.0);

    sgd_step(refs, 0.1, 0.1);  // theta' = 1 - 0.1 * (0 + 0.1 * 1)
    CHECK(theta.vec()[0] == doctest::Approx(0.99).epsilon(1e-15));

    grad = Tensor4d(Shape4{1, 1, 1, 1}, 2.0);
    theta = Tensor4d(Shape4{1, 1, 1, 1}, 1.0);
    sgd_step(refs, 0.5, 0.0);
    CHECK(theta.vec()[0] == 0.0);

    Tensor4d wrong(Shape4{1, 1, 1, 2});
    refs[0].grad = &wrong;
    CHECK_THROWS_AS(sgd_step(refs, 0.1, 0.0), ShapeError);
}

TEST_CASE("decay-free params are untouched by pure weight decay") {
    NetParams<double> net = build_net<double>(tiny_cfg(1), 3);
    auto refs = params(net);
    zero_grads(net);

    std::vector<Tensor4d> before;
    for (auto& r : refs) before.push_back(*r.value);

    const double wd = 1e-2;
    double shrink = 1.0;
    for (int i = 0; i < 10; ++i) {
        const double lr = poly_lr(i, 10, 0.05, 0.9);
        sgd_step(refs, lr, wd);
        shrink *= 1.0 - lr * wd;
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& now = refs[i].value->vec();
        const auto& was = before[i].vec();
        for (std::size_t e = 0; e < now.size(); ++e) {
            if (refs[i].decay) {
                if (was[e] != 0.0)
                    CHECK(std::abs(now[e] / was[e] - shrink) < 1e-12);
            } else {
                CHECK(now[e] == was[e]);
            }
        }
    }
}

TEST_CASE("uniform logits over two classes give a ln 2 cross entropy") {
    Tensor4d logits(Shape4{1, 2, 2, 2}, 0.0);
    LabelMap labels(1, 2, 2);
    const auto r = loss_ce_dice(logits, labels, 1.0);  // pure CE
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("confident correct logits drive the loss to zero") {
    Tensor4d logits(Shape4{1, 3, 2, 2}, 0.0);
    LabelMap labels(1, 2, 2);
    labels.v = {0, 1, 2, 1};
    const std::int64_t plane = 4;
    for (std::int64_t e = 0; e < plane; ++e)
        logits.data()[labels.v[static_cast<std::size_t>(e)] * plane + e] = 50.0;
    const auto r = loss_ce_dice(logits, labels, 0.5);
    CHECK(r.loss < 1e-5);
}

TEST_CASE("loss rejects out-of-range labels and bad lambda") {
    Tensor4d logits(Shape4{1, 2, 1, 2}, 0.0);
    LabelMap labels(1, 1, 2);
    labels.v = {0, 2};
    CHECK_THROWS_AS((void)loss_ce_dice(logits, labels, 0.5), ValueError);
    labels.v = {0, 1};
    CHECK_THROWS_AS((void)loss_ce_dice(logits, labels, 1.5), ValueError);
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(77);
    Tensor4d logits = rng_uniform<double>(rng, Shape4{2, 3, 3, 3}, -1.0, 1.0);
    LabelMap labels(2, 3, 3);
    for (std::int32_t& v : labels.v) v = static_cast<std::int32_t>(rng.next_below(3));

    for (double lambda : {0.0, 0.5, 1.0}) {
        const auto r = loss_ce_dice(logits, labels, lambda);
        const Tensor4d fd = gradcheck_detail::fd_grad(
            logits, [&] { return loss_ce_dice(logits, labels, lambda).loss; });
        CHECK(gradcheck_detail::max_rel_err(r.grad, fd) < 1e-3);
    }
}

TEST_CASE("one sgd step on a fixed batch decreases the loss") {
    const auto samples = gen_synthetic(4242, 4, 32, 3);
    NetConfig cfg = tiny_cfg(1);
    NetParams<float> net = build_net<float>(cfg, 5);

    Tensor4f batch(Shape4{4, 1, 32, 32});
    LabelMap labels(4, 32, 32);
    for (int i = 0; i < 4; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        std::copy(s.image.vec().begin(), s.image.vec().end(),
                  batch.vec().begin() + i * 32 * 32);
        std::copy(s.labels.v.begin(), s.labels.v.end(), labels.v.begin() + i * 32 * 32);
    }

    auto [logits, cache] = net_forward(batch, net, true);
    const auto before = loss_ce_dice(logits, labels, 0.5);
    zero_grads(net);
    net_backward(before.grad, net, cache);
    auto refs = params(net);
    sgd_step(refs, 0.05, 0.0);

    auto [logits2, cache2] = net_forward(batch, net, true);
    const auto after = loss_ce_dice(logits2, labels, 0.5);
    CHECK(after.loss < before.loss);
}

TEST_CASE("train with zero iterations returns the initial net") {
    const auto data = gen_synthetic(11, 4, 32, 3);
    auto [net, history] = train(tiny_cfg(0), tiny_tc(0), data);
    CHECK(history.empty());
    NetParams<float> fresh = build_net<float>(tiny_cfg(0), tiny_tc(0).seed);
    auto ra = params(net), rb = params(fresh);
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].value == *rb[i].value);
}

TEST_CASE("training is bit-deterministic in params and logs") {
    const auto data = gen_synthetic(12, 6, 32, 3);
    const auto val = gen_synthetic(13, 2, 32, 3);

    std::ostringstream log1, log2;
    auto [n1, h1] = train(tiny_cfg(1), tiny_tc(10), data, &val, &log1);
    auto [n2, h2] = train(tiny_cfg(1), tiny_tc(10), data, &val, &log2);

    auto ra = params(n1), rb = params(n2);
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].value == *rb[i].value);
    CHECK(log1.str() == log2.str());
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].iter == h2[i].iter);
        CHECK(h1[i].lr == h2[i].lr);
        CHECK(h1[i].loss == h2[i].loss);
    }
}

TEST_CASE("training rejects bad datasets up front") {
    const std::vector<SegSample> empty;
    CHECK_THROWS_AS((void)train(tiny_cfg(0), tiny_tc(5), empty), ValueError);

    auto bad = gen_synthetic(14, 2, 32, 4);  // labels reach 3, net has 3 classes
    CHECK_THROWS_AS((void)train(tiny_cfg(0), tiny_tc(5), bad), ValueError);

    auto odd = gen_synthetic(16, 2, 34, 3);  // 34 not divisible by 2^depth
    CHECK_THROWS_AS((void)train(tiny_cfg(0), tiny_tc(5), odd), ValueError);
}

TEST_CASE("train config validation") {
    TrainConfig tc;
    tc.batch_size = 1;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc.batch_size = 8;
    tc.base_lr = 0.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc.base_lr = 0.01;
    tc.loss_mix = 1.5;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("evaluate aggregates per-image mdsc") {
    const auto val = gen_synthetic(17, 3, 32, 3);
    NetParams<float> net = build_net<float>(tiny_cfg(0), 1);
    const EvalResult r = evaluate(net, val);
    CHECK(r.images == 3);
    CHECK(r.mdsc >= 0.0);
    CHECK(r.mdsc <= 1.0);
    CHECK(r.per_class_dsc.size() == 3);

    const EvalResult r1 = evaluate(net, val, 1);
    CHECK(r1.mdsc == r.mdsc);  // worker count cannot change the numbers
}

TEST_CASE("ablation rows are reproducible and match a plain train run") {
    const auto data = gen_synthetic(18, 6, 32, 3);
    const auto val = gen_synthetic(19, 2, 32, 3);
    const TrainConfig tc = tiny_tc(6);

    const auto rows = ablate(tiny_cfg(0), tc, {0, 1}, data, val);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].num_hpd == 0);
    CHECK(rows[1].num_hpd == 1);
    CHECK(rows[1].n_params > rows[0].n_params);

    const auto rows2 = ablate(tiny_cfg(0), tc, {0, 1}, data, val);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].val_mdsc == rows2[i].val_mdsc);
        CHECK(rows[i].final_loss == rows2[i].final_loss);
    }

    auto [net, history] = train(tiny_cfg(0), tc, data, &val);
    const EvalResult ev = evaluate(net, val);
    CHECK(rows[0].val_mdsc == ev.mdsc);
    CHECK(rows[0].final_loss == history.back().loss);

    const std::string tsv = ablate_table_tsv(rows);
    CHECK(tsv.rfind("num_hpd\t", 0) == 0);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 3);  // header + 2 rows
    const std::string text = ablate_table_text(rows);
    CHECK(text.find("num_hpd") != std::string::npos);
}
