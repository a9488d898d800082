#include <apu/dual.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using apu::Dual;
using apu::value_of;

namespace {

// Central-difference oracle for d/dx f(x).
template <typename F>
double fd(F f, double x, double h = 1e-6) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("dual seed and value round-trip") {
    auto x = Dual<3>::seed(2.5, 1);
    CHECK(x.v == 2.5);
    CHECK(x.d[0] == 0.0);
    CHECK(x.d[1] == 1.0);
    CHECK(x.d[2] == 0.0);
    CHECK(value_of(x) == 2.5);
    CHECK(value_of(1.25) == 1.25);
}

TEST_CASE("dual arithmetic matches finite differences") {
    auto f = [](auto x) {
        return exp(sin(x)) / sqrt(x + 2.0) + log(x + 3.0) * x - 0.5 * x * x;
    };
    for (double x0 : {-0.7, 0.0, 0.3, 1.9, 4.2}) {
        auto y = f(Dual<1>::seed(x0, 0));
        const double want = fd([&](double t) { return f(t); }, x0);
        CHECK_THAT(y.d[0], Catch::Matchers::WithinAbs(want, 1e-7));
        CHECK_THAT(y.v, Catch::Matchers::WithinRel(f(x0), 1e-14));
    }
}

TEST_CASE("dual partial derivatives for multivariate expressions") {
    auto f = [](auto x, auto y, auto z) {
        return x * y / z + sqrt(x * z) - cos(y) * (x - z) + 2.0 / (y + 4.0);
    };
    const double x0 = 1.3, y0 = -0.4, z0 = 2.1;
    auto r = f(Dual<3>::seed(x0, 0), Dual<3>::seed(y0, 1), Dual<3>::seed(z0, 2));
    CHECK_THAT(r.d[0], Catch::Matchers::WithinAbs(
                           fd([&](double t) { return f(t, y0, z0); }, x0), 1e-7));
    CHECK_THAT(r.d[1], Catch::Matchers::WithinAbs(
                           fd([&](double t) { return f(x0, t, z0); }, y0), 1e-7));
    CHECK_THAT(r.d[2], Catch::Matchers::WithinAbs(
                           fd([&](double t) { return f(x0, y0, t); }, z0), 1e-7));
}

TEST_CASE("dual mixed scalar-dual operators") {
    auto x = Dual<2>::seed(3.0, 0);
    CHECK((2.0 + x).v == 5.0);
    CHECK((x + 2.0).v == 5.0);
    CHECK((2.0 - x).v == -1.0);
    CHECK((2.0 - x).d[0] == -1.0);
    CHECK((2.0 * x).d[0] == 2.0);
    CHECK((6.0 / x).v == 2.0);
    CHECK_THAT((6.0 / x).d[0], Catch::Matchers::WithinAbs(-6.0 / 9.0, 1e-15));
    CHECK((-x).v == -3.0);
    CHECK((-x).d[0] == -1.0);
}

TEST_CASE("dual comparisons and branch helpers use values") {
    auto a = Dual<1>::seed(1.0, 0);
    auto b = Dual<1>::seed(2.0, 0);
    CHECK(a < b);
    CHECK(b > a);
    CHECK(a <= a);
    CHECK(min(a, b).v == 1.0);
    CHECK(max(a, b).v == 2.0);
    // min/max keep the winning branch's derivative.
    auto c = 3.0 * a;
    CHECK(min(c, b).d[0] == 1.0);   // b wins, seeded derivative 1
    CHECK(max(c, b).d[0] == 3.0);   // c wins, derivative 3
    auto n = Dual<1>::seed(-2.0, 0);
    CHECK(abs(n).v == 2.0);
    CHECK(abs(n).d[0] == -1.0);
}

TEST_CASE("dual sqrt/exp/log derivative identities") {
    const double x0 = 1.7;
    auto x = Dual<1>::seed(x0, 0);
    CHECK_THAT(sqrt(x).d[0], Catch::Matchers::WithinRel(0.5 / std::sqrt(x0), 1e-12));
    CHECK_THAT(exp(x).d[0], Catch::Matchers::WithinRel(std::exp(x0), 1e-12));
    CHECK_THAT(log(x).d[0], Catch::Matchers::WithinRel(1.0 / x0, 1e-12));
    CHECK_THAT(sin(x).d[0], Catch::Matchers::WithinRel(std::cos(x0), 1e-12));
    CHECK_THAT(cos(x).d[0], Catch::Matchers::WithinRel(-std::sin(x0), 1e-12));
}

TEST_CASE("dual chain through deep composition stays exact") {
    // y = ((x^2 + 1)^2 + 1)^2; dy/dx has a closed form.
    auto x = Dual<1>::seed(0.8, 0);
    auto s1 = x * x + 1.0;
    auto s2 = s1 * s1 + 1.0;
    auto y = s2 * s2;
    const double v1 = 0.8 * 0.8 + 1.0;
    const double v2 = v1 * v1 + 1.0;
    const double dy = 2.0 * v2 * (2.0 * v1 * (2.0 * 0.8));
    CHECK_THAT(y.d[0], Catch::Matchers::WithinRel(dy, 1e-13));
}
