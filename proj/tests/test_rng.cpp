#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "hpd/rng.hpp"

using namespace hpd;

TEST_CASE("splitmix64 known sequence") {
    // reference outputs for seed 1234567 from the published splitmix64 code
    std::uint64_t s = 1234567;
    CHECK(splitmix64(s) == 6457827717110365317ull);
    CHECK(splitmix64(s) == 3203168211198807973ull);
    CHECK(splitmix64(s) == 9817491932198370423ull);
}

TEST_CASE("fnv1a64 known digests") {
    CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ull);
}

TEST_CASE("derive_seed decorrelates indices") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(42, 7) == derive_seed(42, 7));
    CHECK(derive_seed(42, 7) != derive_seed(43, 7));
}

TEST_CASE("generator is deterministic per seed") {
    Rng a(99), b(99), c(100);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform stays in range and rejects bad bounds") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.uniform(-2.0, 3.0);
        CHECK(v >= -2.0);
        CHECK(v < 3.0);
    }
    CHECK_THROWS_AS((void)rng.uniform(1.0, 1.0), ValueError);
    CHECK_THROWS_AS((void)rng.uniform(2.0f, -1.0f), ValueError);
}

TEST_CASE("normal moments are sane") {
    Rng rng(17);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal(1.5, 2.0);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(mean == doctest::Approx(1.5).epsilon(0.02));
    CHECK(var == doctest::Approx(4.0).epsilon(0.02));
}

TEST_CASE("next_below is unbiased enough and bounded") {
    Rng rng(3);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) ++hist[rng.next_below(7)];
    for (int count : hist) CHECK(count > 9300);  // uniform would be 10000
    CHECK_THROWS_AS((void)rng.next_below(0), ValueError);
}

TEST_CASE("shuffle permutes and is seed stable") {
    std::vector<int> v(20);
    for (int i = 0; i < 20; ++i) v[i] = i;
    std::vector<int> w = v;

    Rng r1(8), r2(8);
    shuffle(v, r1);
    shuffle(w, r2);
    CHECK(v == w);

    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("rng_uniform fills the requested shape") {
    Rng rng(11);
    const Tensor4f t = rng_uniform<float>(rng, Shape4{2, 3, 4, 5}, -1.0f, 1.0f);
    CHECK(t.shape() == Shape4{2, 3, 4, 5});
    float lo = 1e9f, hi = -1e9f;
    for (float x : t.vec()) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    CHECK(lo >= -1.0f);
    CHECK(hi < 1.0f);
    CHECK(lo < -0.5f);
    CHECK(hi > 0.5f);
}
