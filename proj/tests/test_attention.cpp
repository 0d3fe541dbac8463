#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sact/attention.hpp"
#include "sact/gradcheck.hpp"

using namespace sact;

namespace {

// Naive double-loop reference for masked scaled dot-product attention.
Tensor naive_attention(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                       const Tensor* mask = nullptr) {
    const std::size_t tq = xq.dim(0), tk = xk.dim(0), d = xq.dim(1), dv = xv.dim(1);
    std::vector<double> out(tq * dv, 0.0);
    for (std::size_t q = 0; q < tq; ++q) {
        std::vector<double> scores(tk);
        for (std::size_t k = 0; k < tk; ++k) {
            double s = 0.0;
            for (std::size_t f = 0; f < d; ++f) s += xq.at2(q, f) * xk.at2(k, f);
            s /= std::sqrt(static_cast<double>(d));
            if (mask && mask->at2(q, k) == 0.0) s += kMaskNegInf;
            scores[k] = s;
        }
        double mx = *std::max_element(scores.begin(), scores.end());
        double denom = 0.0;
        for (auto& s : scores) {
            s = std::exp(s - mx);
            denom += s;
        }
        for (std::size_t k = 0; k < tk; ++k)
            for (std::size_t f = 0; f < dv; ++f)
                out[q * dv + f] += (scores[k] / denom) * xv.at2(k, f);
    }
    return Tensor({tq, dv}, std::move(out));
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return rand_uniform(std::move(shape), rng, lo, hi);
}

void zero_params(ProjectionSet& p) {
    for (auto& h : p.heads) {
        std::fill(h.wp.values().begin(), h.wp.values().end(), 0.0);
        std::fill(h.wq.values().begin(), h.wq.values().end(), 0.0);
        std::fill(h.wr.values().begin(), h.wr.values().end(), 0.0);
    }
    std::fill(p.w_out.values().begin(), p.w_out.values().end(), 0.0);
}

}  // namespace

TEST_CASE("single key: output equals the value row regardless of scores") {
    Tensor xq = random_tensor({3, 4}, 1);
    Tensor xk = random_tensor({1, 4}, 2);
    Tensor xv = random_tensor({1, 4}, 3);
    Tensor out = scaled_dot_attention(xq, xk, xv);
    for (std::size_t q = 0; q < 3; ++q)
        for (std::size_t f = 0; f < 4; ++f)
            REQUIRE_THAT(out.at2(q, f), Catch::Matchers::WithinAbs(xv.at2(0, f), 1e-15));
}

TEST_CASE("uniform scores: output is the mean of value rows") {
    Tensor xq = Tensor::zeros({2, 4});  // all scores zero -> uniform softmax
    Tensor xk = random_tensor({5, 4}, 4);
    Tensor xv = random_tensor({5, 3}, 5);
    Tensor out = scaled_dot_attention(xq, xk, xv);
    for (std::size_t f = 0; f < 3; ++f) {
        double m = 0.0;
        for (std::size_t k = 0; k < 5; ++k) m += xv.at2(k, f);
        m /= 5.0;
        REQUIRE_THAT(out.at2(0, f), Catch::Matchers::WithinAbs(m, 1e-12));
        REQUIRE_THAT(out.at2(1, f), Catch::Matchers::WithinAbs(m, 1e-12));
    }
}

TEST_CASE("scaled dot attention matches the double-loop reference") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Tensor xq = random_tensor({4, 8}, seed);
        Tensor xk = random_tensor({4, 8}, seed + 50);
        Tensor xv = random_tensor({4, 8}, seed + 100);
        Tensor got = scaled_dot_attention(xq, xk, xv);
        Tensor want = naive_attention(xq, xk, xv);
        for (std::size_t i = 0; i < got.numel(); ++i)
            REQUIRE_THAT(got(i), Catch::Matchers::WithinAbs(want(i), 1e-12));
    }
}

TEST_CASE("attention dimension errors") {
    Tensor q = Tensor::zeros({2, 4});
    REQUIRE_THROWS_WITH(
        scaled_dot_attention(q, Tensor::zeros({3, 4}), Tensor::zeros({2, 4})),
        Catch::Matchers::ContainsSubstring("key count"));
    REQUIRE_THROWS_WITH(
        scaled_dot_attention(q, Tensor::zeros({3, 5}), Tensor::zeros({3, 5})),
        Catch::Matchers::ContainsSubstring("width mismatch"));
}

TEST_CASE("attention weights sum to one under masking") {
    // With all value rows equal to ones, each output row equals the row's
    // total attention weight.
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor xq = random_tensor({4, 6}, seed);
        Tensor xk = random_tensor({5, 6}, seed + 10);
        Tensor xv = Tensor::ones({5, 2});
        std::mt19937_64 rng(seed + 20);
        std::vector<double> mv(4 * 5, 0.0);
        for (std::size_t q = 0; q < 4; ++q) {
            bool any = false;
            for (std::size_t k = 0; k < 5; ++k) {
                mv[q * 5 + k] = rng() % 2 ? 1.0 : 0.0;
                any |= mv[q * 5 + k] == 1.0;
            }
            if (!any) mv[q * 5 + (rng() % 5)] = 1.0;
        }
        Tensor mask({4, 5}, mv);
        Tensor out = scaled_dot_attention(xq, xk, xv, &mask);
        for (std::size_t i = 0; i < out.numel(); ++i)
            REQUIRE_THAT(out(i), Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("fully masked query row is an error, never a silent NaN") {
    Tensor x = random_tensor({3, 4}, 9);
    Tensor mask = Tensor::ones({3, 3});
    for (std::size_t k = 0; k < 3; ++k) mask.at2(1, k) = 0.0;
    REQUIRE_THROWS_WITH(scaled_dot_attention(x, x, x, &mask),
                        Catch::Matchers::ContainsSubstring("every key masked"));
}

TEST_CASE("multi_head with one head reduces to attention followed by W") {
    std::mt19937_64 rng(11);
    AttentionConfig cfg{8, 1};
    ProjectionSet proj = ProjectionSet::init(cfg, rng);
    Tensor x = random_tensor({5, 8}, 12);
    Tensor got = multi_head(x, proj);
    Tensor want = matmul(scaled_dot_attention(matmul(x, proj.heads[0].wp),
                                              matmul(x, proj.heads[0].wq),
                                              matmul(x, proj.heads[0].wr)),
                         proj.w_out);
    REQUIRE(got.values() == want.values());
}

TEST_CASE("multi_head equals the per-head loop oracle on all shapes <= 8x32") {
    for (std::size_t t : {1, 2, 5, 8}) {
        for (std::size_t d : {4, 8, 32}) {
            for (std::size_t h : {1, 2, 4}) {
                std::mt19937_64 rng(t * 100 + d * 10 + h);
                AttentionConfig cfg{d, h};
                ProjectionSet proj = ProjectionSet::init(cfg, rng);
                Tensor x = random_tensor({t, d}, t + d + h);
                Tensor got = multi_head(x, proj);
                REQUIRE(got.shape() == Shape{t, d});
                // oracle: explicit per-head naive attention, concatenation, W
                std::vector<double> cat(t * d);
                const std::size_t hd = cfg.head_dim();
                for (std::size_t k = 0; k < h; ++k) {
                    Tensor head = naive_attention(matmul(x, proj.heads[k].wp),
                                                  matmul(x, proj.heads[k].wq),
                                                  matmul(x, proj.heads[k].wr));
                    for (std::size_t r = 0; r < t; ++r)
                        for (std::size_t f = 0; f < hd; ++f)
                            cat[r * d + k * hd + f] = head.at2(r, f);
                }
                Tensor want = matmul(Tensor({t, d}, cat), proj.w_out);
                for (std::size_t i = 0; i < got.numel(); ++i)
                    REQUIRE_THAT(got(i), Catch::Matchers::WithinAbs(want(i), 1e-12));
            }
        }
    }
}

TEST_CASE("zero input gives zero output: projections carry no bias") {
    std::mt19937_64 rng(13);
    ProjectionSet proj = ProjectionSet::init({16, 4}, rng);
    Tensor out = multi_head(Tensor::zeros({6, 16}), proj);
    for (double v : out.values()) REQUIRE(v == 0.0);
}

TEST_CASE("headwise_concat interleaves per-head outputs") {
    std::mt19937_64 rng(14);
    AttentionConfig cfg{8, 2};
    ProjectionSet pu = ProjectionSet::init(cfg, rng);
    ProjectionSet pv = ProjectionSet::init(cfg, rng);
    Tensor u = random_tensor({4, 8}, 30);
    Tensor v = random_tensor({4, 8}, 31);
    auto hu = multi_head_heads(u, u, pu);
    auto hv = multi_head_heads(v, v, pv);
    Tensor got = headwise_concat(hu, hv);
    REQUIRE(got.shape() == Shape{4, 16});
    // loop oracle building [(h1_1;h2_1),(h1_2;h2_2)] explicitly
    const std::size_t hd = cfg.head_dim();
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t f = 0; f < hd; ++f) {
                REQUIRE(got.at2(r, k * 2 * hd + f) == hu[k].at2(r, f));
                REQUIRE(got.at2(r, k * 2 * hd + hd + f) == hv[k].at2(r, f));
            }
}

TEST_CASE("encoder layer with zero projections and zero FFN is the identity") {
    std::mt19937_64 rng(15);
    EncoderLayer layer = EncoderLayer::init({8, 2}, rng);
    zero_params(layer.attn);
    std::fill(layer.ffn.w1.values().begin(), layer.ffn.w1.values().end(), 0.0);
    std::fill(layer.ffn.b1.values().begin(), layer.ffn.b1.values().end(), 0.0);
    std::fill(layer.ffn.w2.values().begin(), layer.ffn.w2.values().end(), 0.0);
    std::fill(layer.ffn.b2.values().begin(), layer.ffn.b2.values().end(), 0.0);
    Tensor x = random_tensor({5, 8}, 16);
    Tensor out = layer.forward(x);
    REQUIRE(out.values() == x.values());
}

TEST_CASE("encoder layer gradient matches finite differences") {
    std::mt19937_64 rng(17);
    EncoderLayer layer = EncoderLayer::init({6, 2}, rng);
    Tensor x = random_tensor({4, 6}, 18);
    NamedParams params;
    layer.collect("layer", params);
    auto report =
        check_gradients(params, [&]() { return sum(layer.forward(x)); });
    INFO(report.worst_param);
    REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("masked frame perturbation leaves other positions unchanged") {
    std::mt19937_64 rng(19);
    EncoderLayer layer = EncoderLayer::init({8, 2}, rng);
    Tensor x = random_tensor({5, 8}, 20);
    // column 2 masked: no query may read key 2
    Tensor mask = Tensor::ones({5, 5});
    for (std::size_t q = 0; q < 5; ++q) mask.at2(q, 2) = 0.0;
    Tensor base = layer.forward(x, &mask);
    Tensor xp = x.detach();
    for (std::size_t f = 0; f < 8; ++f) xp.at2(2, f) += 0.37 * (f + 1);
    Tensor pert = layer.forward(xp, &mask);
    for (std::size_t r = 0; r < 5; ++r) {
        if (r == 2) continue;
        for (std::size_t f = 0; f < 8; ++f)
            REQUIRE_THAT(pert.at2(r, f), Catch::Matchers::WithinAbs(base.at2(r, f), 1e-12));
    }
}

TEST_CASE("attention config validation") {
    REQUIRE_THROWS_WITH((AttentionConfig{10, 3}.validate()),
                        Catch::Matchers::ContainsSubstring("not divisible"));
    REQUIRE_NOTHROW((AttentionConfig{12, 3}.validate()));
}
