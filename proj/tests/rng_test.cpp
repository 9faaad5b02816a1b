#include <doctest.h>

#include <cmath>

#include "acdit/rng.hpp"

using acdit::Rng;

TEST_CASE("identical seeds give identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(42), d(43);
    bool all_equal = true;
    for (int i = 0; i < 16; ++i) all_equal = all_equal && (c.next_u64() == d.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("state save/restore resumes the exact stream") {
    Rng a(7);
    for (int i = 0; i < 37; ++i) a.normal();
    const auto st = a.state();
    std::vector<double> expect;
    for (int i = 0; i < 50; ++i) expect.push_back(a.normal());
    Rng b(0);
    b.set_state(st);
    for (int i = 0; i < 50; ++i) CHECK(b.normal() == expect[static_cast<size_t>(i)]);
}

TEST_CASE("uniform_int stays in range and covers values") {
    Rng rng(5);
    std::vector<int> hits(10, 0);
    for (int i = 0; i < 5000; ++i) {
        const int64_t v = rng.uniform_int(10);
        REQUIRE(v >= 0);
        REQUIRE(v < 10);
        ++hits[static_cast<size_t>(v)];
    }
    for (int h : hits) CHECK(h > 300);
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(11);
    double sum = 0.0, sum2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("uniform stays in [0,1)") {
    Rng rng(13);
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }
}
