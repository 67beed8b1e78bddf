#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hpd/tensor.hpp"

using namespace hpd;

TEST_CASE("shape count and equality") {
    Shape4 s{2, 3, 4, 5};
    CHECK(s.count() == 120);
    CHECK(s == Shape4{2, 3, 4, 5});
    CHECK_FALSE(s == Shape4{2, 3, 5, 4});
    CHECK(to_string(s) == "(2,3,4,5)");
}

TEST_CASE("tensor is NCHW row major") {
    Tensor4f t(Shape4{2, 3, 4, 5});
    CHECK(t.size() == 120);
    CHECK(t.offset(0, 0, 0, 0) == 0);
    CHECK(t.offset(0, 0, 0, 1) == 1);
    CHECK(t.offset(0, 0, 1, 0) == 5);
    CHECK(t.offset(0, 1, 0, 0) == 20);
    CHECK(t.offset(1, 0, 0, 0) == 60);
    CHECK(t.offset(1, 2, 3, 4) == 119);

    t.at(1, 2, 3, 4) = 7.5f;
    CHECK(t.vec()[119] == 7.5f);
}

TEST_CASE("construction validates extents") {
    CHECK_THROWS_AS(Tensor4f(Shape4{0, 1, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Tensor4f(Shape4{1, -2, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Tensor4f(Shape4{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
    Tensor4f ok(Shape4{1, 2, 2, 2}, std::vector<float>(8, 1.0f));
    CHECK(ok.at(0, 1, 1, 1) == 1.0f);
}

TEST_CASE("fill value applies everywhere") {
    Tensor4d t(Shape4{1, 1, 2, 2}, 3.25);
    for (double v : t.vec()) CHECK(v == 3.25);
}

TEST_CASE("elementwise helpers") {
    Shape4 s{1, 2, 1, 2};
    Tensor4f a(s, std::vector<float>{1, 2, 3, 4});
    Tensor4f b(s, std::vector<float>{10, 20, 30, 40});

    CHECK(add(a, b).vec() == std::vector<float>{11, 22, 33, 44});
    CHECK(sub(b, a).vec() == std::vector<float>{9, 18, 27, 36});
    CHECK(mul(a, b).vec() == std::vector<float>{10, 40, 90, 160});

    Tensor4f c = a;
    add_inplace(c, b);
    CHECK(c == add(a, b));
    scale_inplace(c, 0.5f);
    CHECK(c.vec() == std::vector<float>{5.5f, 11, 16.5f, 22});

    Tensor4f wrong(Shape4{1, 2, 2, 1});
    CHECK_THROWS_AS((void)add(a, wrong), ShapeError);
    CHECK_THROWS_AS(add_inplace(c, wrong), ShapeError);
}

TEST_CASE("label map layout") {
    LabelMap m(2, 3, 4, 1);
    CHECK(m.size() == 24);
    for (std::int32_t v : m.v) CHECK(v == 1);
    m.at(1, 2, 3) = 9;
    CHECK(m.v[23] == 9);
    CHECK_THROWS_AS(LabelMap(0, 1, 1), ShapeError);
}
