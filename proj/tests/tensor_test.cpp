#include <doctest.h>

#include <cmath>

#include "acdit/rng.hpp"
#include "acdit/tensor.hpp"
#include "fd_check.hpp"
#include "oracles.hpp"

using namespace acdit;
using refops::dvec;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, bool grad = false, float scale = 1.0f) {
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = scale * static_cast<float>(rng.normal());
    return grad ? Tensor::param(shape, std::move(v)) : Tensor::from_data(shape, std::move(v));
}

dvec to_d(const Tensor& t) { return dvec(t.data().begin(), t.data().end()); }

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Tensor I = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor r = matmul(I, m);
    CHECK(r.data()[0] == 5.0f);
    CHECK(r.data()[1] == 6.0f);
    CHECK(r.data()[2] == 7.0f);
    CHECK(r.data()[3] == 8.0f);

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-7));
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(1);
    Tensor a = random_tensor(rng, {4, 5});
    Tensor b = random_tensor(rng, {5, 3});
    Tensor c = matmul(a, b);
    const dvec want = refops::matmul(to_d(a), to_d(b), 4, 5, 3);
    for (int64_t i = 0; i < c.size(); ++i) {
        CHECK(c.data()[static_cast<size_t>(i)] ==
              doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("matmul batched leading dims against oracle") {
    Rng rng(2);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {4, 5});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    const dvec want = refops::matmul(to_d(a), to_d(b), 6, 4, 5);
    for (int64_t i = 0; i < c.size(); ++i) {
        CHECK(c.data()[static_cast<size_t>(i)] ==
              doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("rms_norm examples") {
    Tensor x = Tensor::from_data({2}, {3.0f, -3.0f});
    Tensor w = Tensor::from_data({2}, {1.0f, 1.0f});
    Tensor y = rms_norm(x, w, 0.0f);
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(-1.0));

    Tensor z = rms_norm(Tensor::zeros({3, 4}), Tensor::from_data({4}, {1, 1, 1, 1}), 1e-6f);
    for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("rms_norm matches the direct formula") {
    Rng rng(3);
    Tensor x = random_tensor(rng, {5, 8});
    Tensor w = random_tensor(rng, {8});
    Tensor y = rms_norm(x, w, 1e-6f);
    const dvec wd = to_d(w);
    const dvec want = refops::rms_norm(to_d(x), &wd, 5, 8, 1e-6);
    for (int64_t i = 0; i < y.size(); ++i) {
        CHECK(y.data()[static_cast<size_t>(i)] ==
              doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("attention: singleton softmax returns the value row") {
    Rng rng(4);
    Tensor q = random_tensor(rng, {1, 1, 6});
    Tensor k = random_tensor(rng, {1, 1, 6});
    Tensor v = random_tensor(rng, {1, 1, 6});
    BoolMatrix mask(1, 1, 1);
    Tensor out = masked_softmax_attention(q, k, v, mask, 0.5f);
    for (int64_t i = 0; i < 6; ++i) {
        CHECK(out.data()[static_cast<size_t>(i)] == v.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("attention: a hard mask selects exactly the permitted key") {
    Rng rng(5);
    const int64_t Sk = 5, D = 4;
    Tensor q = random_tensor(rng, {1, 1, D});
    Tensor k = random_tensor(rng, {Sk, 1, D});
    Tensor v = random_tensor(rng, {Sk, 1, D});
    for (int64_t j = 0; j < Sk; ++j) {
        BoolMatrix mask(1, Sk, 0);
        mask.set(0, j, true);
        Tensor out = masked_softmax_attention(q, k, v, mask, 1.0f);
        for (int64_t d = 0; d < D; ++d) {
            CHECK(out.data()[static_cast<size_t>(d)] == v.data()[static_cast<size_t>(j * D + d)]);
        }
    }
}

TEST_CASE("attention matches the key-deletion oracle on a random 6-token case") {
    Rng rng(6);
    const int64_t S = 6, H = 2, D = 4;
    Tensor q = random_tensor(rng, {S, H, D});
    Tensor k = random_tensor(rng, {S, H, D});
    Tensor v = random_tensor(rng, {S, H, D});
    BoolMatrix mask(S, S, 0);
    for (int64_t i = 0; i < S; ++i) {
        for (int64_t j = 0; j < S; ++j) mask.set(i, j, rng.uniform() < 0.5);
        mask.set(i, i, true);  // keep each row non-empty
    }
    Tensor out = masked_softmax_attention(q, k, v, mask, 0.5f);
    const dvec want =
        refops::attention_delete_masked(to_d(q), to_d(k), to_d(v), mask.data, 1, S, S, H, D, 0.5);
    for (int64_t i = 0; i < out.size(); ++i) {
        CHECK(out.data()[static_cast<size_t>(i)] ==
              doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("attention equals oracle for every block-structured mask up to 8 tokens") {
    // All (N, B) block structures with N*B <= 8, both training-mask halves.
    Rng rng(7);
    for (int64_t B = 1; B <= 4; ++B) {
        for (int64_t N = 1; N * B <= 8; ++N) {
            const int64_t L = N * B, S = 2 * L, H = 1, D = 4;
            BoolMatrix mask(S, S, 0);
            for (int64_t qi = 0; qi < S; ++qi) {
                for (int64_t kj = 0; kj < S; ++kj) {
                    const bool qn = qi >= L, kn = kj >= L;
                    const int64_t qb = (qn ? qi - L : qi) / B, kb = (kn ? kj - L : kj) / B;
                    bool ok = false;
                    if (!qn && !kn) ok = kb <= qb;
                    if (qn && !kn) ok = kb < qb;
                    if (qn && kn) ok = kb == qb;
                    mask.set(qi, kj, ok);
                }
            }
            Tensor q = random_tensor(rng, {S, H, D});
            Tensor k = random_tensor(rng, {S, H, D});
            Tensor v = random_tensor(rng, {S, H, D});
            Tensor out = masked_softmax_attention(q, k, v, mask, 0.7f);
            const dvec want = refops::attention_delete_masked(to_d(q), to_d(k), to_d(v), mask.data,
                                                              1, S, S, H, D, 0.7);
            for (int64_t i = 0; i < out.size(); ++i) {
                CHECK(out.data()[static_cast<size_t>(i)] ==
                      doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("attention weights sum to one over permitted keys") {
    // With v = identity (H=1, D=Sk) the output row is the weight row itself.
    Rng rng(8);
    const int64_t Sq = 4, Sk = 6;
    Tensor q = random_tensor(rng, {Sq, 1, Sk});
    Tensor k = random_tensor(rng, {Sk, 1, Sk});
    std::vector<float> eye(static_cast<size_t>(Sk * Sk), 0.0f);
    for (int64_t j = 0; j < Sk; ++j) eye[static_cast<size_t>(j * Sk + j)] = 1.0f;
    Tensor v = Tensor::from_data({Sk, 1, Sk}, std::move(eye));
    BoolMatrix mask(Sq, Sk, 0);
    for (int64_t i = 0; i < Sq; ++i) {
        for (int64_t j = 0; j < Sk; ++j) mask.set(i, j, rng.uniform() < 0.6);
        mask.set(i, (i * 2) % Sk, true);
    }
    Tensor out = masked_softmax_attention(q, k, v, mask, 1.0f);
    for (int64_t i = 0; i < Sq; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < Sk; ++j) {
            const float w = out.data()[static_cast<size_t>(i * Sk + j)];
            if (!mask.at(i, j)) CHECK(w == 0.0f);
            CHECK(w >= 0.0f);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("attention rejects a fully masked query row") {
    Tensor q = Tensor::zeros({2, 1, 4});
    Tensor k = Tensor::zeros({2, 1, 4});
    Tensor v = Tensor::zeros({2, 1, 4});
    BoolMatrix mask(2, 2, 0);
    mask.set(0, 0, true);
    CHECK_THROWS_AS(masked_softmax_attention(q, k, v, mask, 1.0f), ShapeError);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2p") {
    Rng rng(9);
    Tensor p = random_tensor(rng, {3, 4}, true);
    backward(sum_all(p));
    for (int64_t i = 0; i < p.size(); ++i) CHECK(p.grad()[static_cast<size_t>(i)] == 1.0f);

    Tensor p2 = random_tensor(rng, {5}, true);
    backward(sum_all(mul(p2, p2)));
    for (int64_t i = 0; i < p2.size(); ++i) {
        CHECK(p2.grad()[static_cast<size_t>(i)] ==
              doctest::Approx(2.0f * p2.data()[static_cast<size_t>(i)]).epsilon(1e-6));
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor p = Tensor::param({3}, {1, 2, 3});
    CHECK_THROWS_AS(backward(add(p, p)), ShapeError);
}

TEST_CASE("non-finite op outputs are surfaced as errors") {
    Tensor big = Tensor::from_data({2}, {3e38f, 1.0f});
    CHECK_THROWS_AS(scale(big, 10.0f), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::numeric_limits<float>::quiet_NaN()}), NumericError);
}

TEST_CASE("no tape is built under NoGradGuard") {
    Tensor p = Tensor::param({2}, {1, 2});
    NoGradGuard ng;
    Tensor y = mul(p, p);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

// ---- finite differences per op (double oracle vs float backward) ----

TEST_CASE("fd: matmul and bias") {
    Rng rng(10);
    auto a = random_tensor(rng, {3, 4}, true);
    auto b = random_tensor(rng, {4, 5}, true);
    auto bias = random_tensor(rng, {5}, true);
    auto w = random_tensor(rng, {3, 5});  // fixed weights onto a scalar
    const dvec wd = to_d(w);
    auto rep = reftest::check_fd(
        {a, b, bias},
        [&](const std::vector<Tensor>& ps) {
            return sum_all(mul(w, add_bias(matmul(ps[0], ps[1]), ps[2])));
        },
        [&](const std::vector<dvec>& vs) {
            dvec y = refops::add_bias(refops::matmul(vs[0], vs[1], 3, 4, 5), vs[2], 3, 5);
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) acc += wd[i] * y[i];
            return acc;
        });
    CHECK(rep.pass_fraction() >= 0.99);
}

TEST_CASE("fd: rms_norm and head_rms_norm") {
    Rng rng(11);
    auto x = random_tensor(rng, {4, 8}, true);
    auto w = random_tensor(rng, {8}, true);
    auto probe = random_tensor(rng, {4, 8});
    const dvec pd = to_d(probe);
    auto rep = reftest::check_fd(
        {x, w},
        [&](const std::vector<Tensor>& ps) {
            return sum_all(mul(probe, rms_norm(ps[0], ps[1], 1e-6f)));
        },
        [&](const std::vector<dvec>& vs) {
            dvec y = refops::rms_norm(vs[0], &vs[1], 4, 8, 1e-6);
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) acc += pd[i] * y[i];
            return acc;
        });
    CHECK(rep.pass_fraction() >= 0.99);

    auto xh = random_tensor(rng, {3, 8}, true);
    auto wh = random_tensor(rng, {4}, true);
    auto probe2 = random_tensor(rng, {3, 8});
    const dvec p2 = to_d(probe2);
    auto rep2 = reftest::check_fd(
        {xh, wh},
        [&](const std::vector<Tensor>& ps) {
            return sum_all(mul(probe2, head_rms_norm(ps[0], ps[1], 2, 1e-6f)));
        },
        [&](const std::vector<dvec>& vs) {
            dvec y = refops::rms_norm(vs[0], &vs[1], 6, 4, 1e-6);
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) acc += p2[i] * y[i];
            return acc;
        });
    CHECK(rep2.pass_fraction() >= 0.99);
}

TEST_CASE("fd: masked attention") {
    Rng rng(12);
    const int64_t S = 5, H = 2, D = 4;
    auto q = random_tensor(rng, {S, H, D}, true);
    auto k = random_tensor(rng, {S, H, D}, true);
    auto v = random_tensor(rng, {S, H, D}, true);
    BoolMatrix mask(S, S, 0);
    for (int64_t i = 0; i < S; ++i) {
        for (int64_t j = 0; j <= i; ++j) mask.set(i, j, true);
    }
    auto probe = random_tensor(rng, {S, H * D});
    const dvec pd = to_d(probe);
    auto rep = reftest::check_fd(
        {q, k, v},
        [&](const std::vector<Tensor>& ps) {
            return sum_all(mul(probe, masked_softmax_attention(ps[0], ps[1], ps[2], mask, 0.5f)));
        },
        [&](const std::vector<dvec>& vs) {
            dvec y = refops::attention_delete_masked(vs[0], vs[1], vs[2], mask.data, 1, S, S, H, D, 0.5);
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) acc += pd[i] * y[i];
            return acc;
        });
    CHECK(rep.pass_fraction() >= 0.99);
}

TEST_CASE("fd: gelu, silu, mse and shape ops") {
    Rng rng(13);
    auto x = random_tensor(rng, {4, 6}, true);
    auto target = random_tensor(rng, {2, 12});
    const dvec td = to_d(target);
    auto rep = reftest::check_fd(
        {x},
        [&](const std::vector<Tensor>& ps) {
            Tensor t1 = gelu(slice_axis(ps[0], 0, 0, 2));
            Tensor t2 = silu(slice_axis(ps[0], 0, 2, 4));
            Tensor both = reshape(concat_axis(t1, t2, 1), {2, 12});
            return mse_loss(both, target);
        },
        [&](const std::vector<dvec>& vs) {
            dvec t1(vs[0].begin(), vs[0].begin() + 12);
            dvec t2(vs[0].begin() + 12, vs[0].end());
            t1 = refops::gelu(t1);
            t2 = refops::silu(t2);
            dvec both(24);
            for (int r = 0; r < 2; ++r) {
                for (int c = 0; c < 6; ++c) {
                    both[static_cast<size_t>(r * 12 + c)] = t1[static_cast<size_t>(r * 6 + c)];
                    both[static_cast<size_t>(r * 12 + 6 + c)] = t2[static_cast<size_t>(r * 6 + c)];
                }
            }
            return refops::mse(both, td);
        });
    CHECK(rep.pass_fraction() >= 0.99);
}

TEST_CASE("fd: embedding and repeat_interleave") {
    Rng rng(14);
    auto table = random_tensor(rng, {5, 4}, true);
    const std::vector<int64_t> ids = {3, 0, 3};
    auto probe = random_tensor(rng, {6, 4});
    const dvec pd = to_d(probe);
    auto rep = reftest::check_fd(
        {table},
        [&](const std::vector<Tensor>& ps) {
            return sum_all(mul(probe, repeat_interleave(embedding_lookup(ps[0], ids), 0, 2)));
        },
        [&](const std::vector<dvec>& vs) {
            double acc = 0.0;
            for (size_t r = 0; r < 6; ++r) {
                const int64_t id = ids[r / 2];
                for (size_t c = 0; c < 4; ++c) {
                    acc += pd[r * 4 + c] * vs[0][static_cast<size_t>(id * 4) + c];
                }
            }
            return acc;
        });
    CHECK(rep.pass_fraction() >= 0.99);
}
