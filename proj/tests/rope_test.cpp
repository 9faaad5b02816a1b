#include <doctest.h>

#include <cmath>

#include "acdit/rng.hpp"
#include "acdit/rope.hpp"

using namespace acdit;

namespace {

// Independent textbook 1-D rotary implementation: dims (2i, 2i+1) rotated by
// m * base^(-2i/d), evaluated directly per vector.
std::vector<double> rope_1d_reference(const std::vector<double>& x, int64_t m, double base) {
    const int64_t d = static_cast<int64_t>(x.size());
    std::vector<double> y(x.size());
    for (int64_t i = 0; i < d / 2; ++i) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
        const double a = static_cast<double>(m) * theta;
        y[static_cast<size_t>(2 * i)] = x[static_cast<size_t>(2 * i)] * std::cos(a) -
                                        x[static_cast<size_t>(2 * i + 1)] * std::sin(a);
        y[static_cast<size_t>(2 * i + 1)] = x[static_cast<size_t>(2 * i)] * std::sin(a) +
                                            x[static_cast<size_t>(2 * i + 1)] * std::cos(a);
    }
    return y;
}

Tensor random_qk(Rng& rng, int64_t T, int64_t H, int64_t D) {
    std::vector<float> v(static_cast<size_t>(T * H * D));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor::from_data({T, H, D}, std::move(v));
}

double head_dot(const Tensor& a, int64_t ta, const Tensor& b, int64_t tb, int64_t h, int64_t D) {
    double acc = 0.0;
    for (int64_t d = 0; d < D; ++d) {
        acc += static_cast<double>(a.data()[static_cast<size_t>((ta * a.dim(1) + h) * D + d)]) *
               static_cast<double>(b.data()[static_cast<size_t>((tb * b.dim(1) + h) * D + d)]);
    }
    return acc;
}

}  // namespace

TEST_CASE("derive_base formula values") {
    CHECK(derive_base(32) == doctest::Approx(100.0));
    CHECK(derive_base(1024) == doctest::Approx(2700.0));
    CHECK(derive_base(1) == doctest::Approx(100.0));
    CHECK_THROWS_AS(derive_base(0), ShapeError);
}

TEST_CASE("segment split: even parts, remainder to leading dims") {
    CHECK(split_segments(16, 2) == std::vector<int64_t>{8, 8});
    CHECK(split_segments(16, 3) == std::vector<int64_t>{6, 6, 4});
    CHECK(split_segments(10, 3) == std::vector<int64_t>{4, 4, 2});
    CHECK(split_segments(6, 3) == std::vector<int64_t>{2, 2, 2});
    CHECK_THROWS_AS(split_segments(4, 3), ShapeError);
}

TEST_CASE("zero positions leave vectors untouched") {
    auto cfg = make_rope_config(8, {16, 16});
    Rng rng(2);
    Tensor x = random_qk(rng, 3, 2, 8);
    RopeTable tbl = build_rope_table(cfg, {{0, 0}, {0, 0}, {0, 0}});
    Tensor y = apply_rope_nd(x, tbl);
    for (int64_t i = 0; i < x.size(); ++i) {
        CHECK(y.data()[static_cast<size_t>(i)] == x.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("D=1 equals the independent 1-D implementation") {
    const int64_t D = 8, T = 5;
    auto cfg = make_rope_config(D, {32});
    CHECK(cfg.bases[0] == doctest::Approx(100.0));
    Rng rng(3);
    Tensor x = random_qk(rng, T, 1, D);
    std::vector<std::vector<int64_t>> pos;
    for (int64_t t = 0; t < T; ++t) pos.push_back({t * 5 % 32});
    Tensor y = apply_rope_nd(x, build_rope_table(cfg, pos));
    for (int64_t t = 0; t < T; ++t) {
        std::vector<double> row(static_cast<size_t>(D));
        for (int64_t d = 0; d < D; ++d) row[static_cast<size_t>(d)] = x.data()[static_cast<size_t>(t * D + d)];
        const auto want = rope_1d_reference(row, pos[static_cast<size_t>(t)][0], 100.0);
        for (int64_t d = 0; d < D; ++d) {
            CHECK(y.data()[static_cast<size_t>(t * D + d)] ==
                  doctest::Approx(want[static_cast<size_t>(d)]).epsilon(1e-6));
        }
    }
}

TEST_CASE("norm preservation to 1e-6 for random positions") {
    auto cfg = make_rope_config(12, {16, 16, 8});
    Rng rng(4);
    const int64_t T = 8, H = 2, D = 12;
    Tensor x = random_qk(rng, T, H, D);
    std::vector<std::vector<int64_t>> pos;
    for (int64_t t = 0; t < T; ++t) {
        pos.push_back({rng.uniform_int(16), rng.uniform_int(16), rng.uniform_int(8)});
    }
    Tensor y = apply_rope_nd(x, build_rope_table(cfg, pos));
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t h = 0; h < H; ++h) {
            const double nx = std::sqrt(head_dot(x, t, x, t, h, D));
            const double ny = std::sqrt(head_dot(y, t, y, t, h, D));
            CHECK(std::abs(nx - ny) < 1e-6 * std::max(1.0, nx));
        }
    }
}

TEST_CASE("dot products depend only on position offsets (translation invariance)") {
    auto cfg = make_rope_config(8, {64, 64});
    Rng rng(5);
    const int64_t H = 1, D = 8;
    Tensor q = random_qk(rng, 1, H, D);
    Tensor k = random_qk(rng, 1, H, D);
    const std::vector<int64_t> m = {5, 9}, mp = {2, 11};
    for (const std::vector<int64_t>& shift : {std::vector<int64_t>{7, 3}, {20, 40}, {0, 13}}) {
        Tensor q0 = apply_rope_nd(q, build_rope_table(cfg, {m}));
        Tensor k0 = apply_rope_nd(k, build_rope_table(cfg, {mp}));
        const std::vector<int64_t> ms = {m[0] + shift[0], m[1] + shift[1]};
        const std::vector<int64_t> mps = {mp[0] + shift[0], mp[1] + shift[1]};
        Tensor q1 = apply_rope_nd(q, build_rope_table(cfg, {ms}));
        Tensor k1 = apply_rope_nd(k, build_rope_table(cfg, {mps}));
        CHECK(std::abs(head_dot(q0, 0, k0, 0, 0, D) - head_dot(q1, 0, k1, 0, 0, D)) < 1e-5);
    }
}

TEST_CASE("zeroing segment j of q and k makes logits independent of m_j") {
    auto cfg = make_rope_config(8, {32, 32});  // segments 4 + 4
    Rng rng(6);
    const int64_t D = 8;
    std::vector<float> qv(D), kv(D);
    for (auto& v : qv) v = static_cast<float>(rng.normal());
    for (auto& v : kv) v = static_cast<float>(rng.normal());
    // zero the second segment (dims 4..8)
    for (int64_t d = 4; d < 8; ++d) {
        qv[static_cast<size_t>(d)] = 0.0f;
        kv[static_cast<size_t>(d)] = 0.0f;
    }
    Tensor q = Tensor::from_data({1, 1, D}, qv);
    Tensor k = Tensor::from_data({1, 1, D}, kv);
    double base_logit = 0.0;
    bool first = true;
    for (int64_t m1 : {0, 7, 19, 31}) {
        Tensor qr = apply_rope_nd(q, build_rope_table(cfg, {{3, m1}}));
        Tensor kr = apply_rope_nd(k, build_rope_table(cfg, {{9, (m1 * 2 + 5) % 32}}));
        const double logit = head_dot(qr, 0, kr, 0, 0, D);
        if (first) {
            base_logit = logit;
            first = false;
        } else {
            CHECK(logit == doctest::Approx(base_logit).epsilon(1e-6));
        }
    }
}

TEST_CASE("positions outside the configured maxima are rejected") {
    auto cfg = make_rope_config(8, {16, 16});
    CHECK_THROWS_AS(build_rope_table(cfg, {{16, 0}}), ShapeError);
    CHECK_THROWS_AS(build_rope_table(cfg, {{0, -1}}), ShapeError);
}
