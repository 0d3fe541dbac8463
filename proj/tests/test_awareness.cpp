#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "sact/awareness.hpp"
#include "sact/gradcheck.hpp"

using namespace sact;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return rand_uniform(std::move(shape), rng, lo, hi);
}

AwarenessGate const_gate(std::size_t t, std::size_t d, double omega, double tau = 0.05) {
    AwarenessGate g;
    g.omega = Tensor::full({t, d}, omega);
    g.sparse_beta = Tensor::full({t, d}, omega >= tau ? omega : 0.0);
    g.tau = tau;
    return g;
}

}  // namespace

TEST_CASE("zero parameters give omega = 0.5 everywhere") {
    AwarenessParams p;
    p.z1 = Tensor::zeros({4, 2});
    p.z2 = Tensor::zeros({2, 4});
    p.z3 = Tensor::zeros({2, 4});
    AwarenessGate g = compute_gate(random_tensor({3, 4}, 1), p, 0.05);
    for (double w : g.omega.values()) REQUIRE(w == 0.5);
    for (double b : g.sparse_beta.values()) REQUIRE(b == 0.5);  // 0.5 >= tau
}

TEST_CASE("single frame sequence is well-defined") {
    std::mt19937_64 rng(2);
    AwarenessParams p = AwarenessParams::init(4, 2, rng);
    AwarenessGate g = compute_gate(random_tensor({1, 4}, 3), p, 0.05);
    REQUIRE(g.omega.shape() == Shape{1, 4});
    for (double w : g.omega.values()) {
        REQUIRE(w > 0.0);
        REQUIRE(w < 1.0);
    }
}

TEST_CASE("gate computation is permutation-equivariant over frames") {
    std::mt19937_64 rng(4);
    AwarenessParams p = AwarenessParams::init(6, 3, rng);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x = random_tensor({5, 6}, seed);
        AwarenessGate g = compute_gate(x, p, 0.05);
        std::vector<std::size_t> perm{4, 2, 0, 3, 1};
        std::vector<double> pv(x.numel());
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t f = 0; f < 6; ++f) pv[r * 6 + f] = x.at2(perm[r], f);
        AwarenessGate gp = compute_gate(Tensor({5, 6}, pv), p, 0.05);
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t f = 0; f < 6; ++f)
                REQUIRE_THAT(gp.omega.at2(r, f),
                             Catch::Matchers::WithinAbs(g.omega.at2(perm[r], f), 1e-12));
    }
}

TEST_CASE("omega stays strictly inside (0,1) and sparse_beta obeys membership") {
    std::mt19937_64 rng(5);
    AwarenessParams p = AwarenessParams::init(8, 4, rng);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x = random_tensor({6, 8}, seed, -3.0, 3.0);
        AwarenessGate g = compute_gate(x, p, 0.05);
        for (std::size_t i = 0; i < g.omega.numel(); ++i) {
            double w = g.omega(i), b = g.sparse_beta(i);
            REQUIRE(w > 0.0);
            REQUIRE(w < 1.0);
            if (w >= 0.05) {
                REQUIRE(b == w);
            } else {
                REQUIRE(b == 0.0);
            }
        }
    }
}

TEST_CASE("phi with all-ones gate is plain concatenation") {
    Tensor u = random_tensor({4, 3}, 7);
    Tensor v = random_tensor({4, 5}, 8);
    Tensor out = apply_phi_joint(u, v, const_gate(4, 3, 1.0), const_gate(4, 5, 1.0),
                                 GateMode::soft);
    Tensor want = concat({u, v}, 1);
    REQUIRE(out.values() == want.values());
}

TEST_CASE("phi with zeroed v-gate zeroes the v half") {
    Tensor u = random_tensor({4, 3}, 9);
    Tensor v = random_tensor({4, 5}, 10);
    AwarenessGate gv = const_gate(4, 5, 0.0);
    gv.omega = Tensor::zeros({4, 5});
    Tensor out = apply_phi_joint(u, v, const_gate(4, 3, 1.0), gv, GateMode::soft);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t f = 0; f < 3; ++f) REQUIRE(out.at2(r, f) == u.at2(r, f));
        for (std::size_t f = 3; f < 8; ++f) REQUIRE(out.at2(r, f) == 0.0);
    }
}

TEST_CASE("phi gradient w.r.t. awareness parameters matches finite differences") {
    std::mt19937_64 rng(11);
    AwarenessParams pu = AwarenessParams::init(4, 2, rng);
    AwarenessParams pv = AwarenessParams::init(4, 2, rng);
    Tensor u = random_tensor({3, 4}, 12);
    Tensor v = random_tensor({3, 4}, 13);
    NamedParams params;
    pu.collect("u", params);
    pv.collect("v", params);
    auto report = check_gradients(params, [&]() {
        return sum(apply_phi_joint(u, v, pu, pv, 0.05, GateMode::soft));
    });
    INFO(report.worst_param);
    REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("phi_single equals the matching half of phi_joint") {
    std::mt19937_64 rng(14);
    AwarenessParams pu = AwarenessParams::init(4, 2, rng);
    AwarenessParams pv = AwarenessParams::init(6, 3, rng);
    Tensor u = random_tensor({5, 4}, 15);
    Tensor v = random_tensor({5, 6}, 16);
    Tensor joint = apply_phi_joint(u, v, pu, pv, 0.05, GateMode::soft);
    Tensor single_u = apply_phi_single(u, pu, 0.05, GateMode::soft);
    Tensor single_v = apply_phi_single(v, pv, 0.05, GateMode::soft);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t f = 0; f < 4; ++f) REQUIRE(joint.at2(r, f) == single_u.at2(r, f));
        for (std::size_t f = 0; f < 6; ++f) REQUIRE(joint.at2(r, 4 + f) == single_v.at2(r, f));
    }
    REQUIRE(apply_phi_single(Tensor::zeros({5, 4}), pu, 0.05, GateMode::soft).values() ==
            Tensor::zeros({5, 4}).values());
}

TEST_CASE("frame_beta trivial patterns and kept counts") {
    AwarenessGate all_low = const_gate(4, 3, 0.04);  // below tau
    Tensor beta = frame_beta(all_low);
    REQUIRE(beta.shape() == Shape{4});
    for (double b : beta.values()) REQUIRE(b == 0.0);
    REQUIRE(kept_frames(beta) == 0);

    AwarenessGate onehot = const_gate(4, 3, 0.04);
    for (std::size_t f = 0; f < 3; ++f) {
        onehot.omega.at2(2, f) = 0.999;
        onehot.sparse_beta.at2(2, f) = 0.999;
    }
    Tensor beta2 = frame_beta(onehot);
    REQUIRE(kept_frames(beta2) == 1);
    REQUIRE(beta2(2) > 0.0);
    REQUIRE(beta2(0) == 0.0);
}

TEST_CASE("gate_l1_penalty analytic values and errors") {
    std::vector<AwarenessGate> gates{const_gate(3, 4, 0.5), const_gate(2, 4, 0.5)};
    REQUIRE(gate_l1_penalty(gates, 0.0).item() == 0.0);
    REQUIRE_THAT(gate_l1_penalty(gates, 1.0).item(), Catch::Matchers::WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(gate_l1_penalty(gates, 0.1).item(), Catch::Matchers::WithinAbs(0.05, 1e-12));
    REQUIRE_THROWS_WITH(gate_l1_penalty(gates, -0.1),
                        Catch::Matchers::ContainsSubstring("lambda"));
}

TEST_CASE("dropped frames carry exactly zero gradient downstream of thresholding") {
    std::mt19937_64 rng(21);
    AwarenessParams p = AwarenessParams::init(4, 2, rng);
    // drive omega low so some rows threshold to zero, then check autodiff
    for (auto& z : p.z1.values()) z = -std::abs(z) * 40.0;
    Tensor x = random_tensor({6, 4}, 22).set_requires_grad(true);
    AwarenessGate g = compute_gate(x.detach(), p, 0.05);
    std::vector<std::size_t> dropped;
    Tensor beta = frame_beta(g);
    for (std::size_t t = 0; t < 6; ++t)
        if (beta(t) == 0.0) dropped.push_back(t);
    REQUIRE_FALSE(dropped.empty());
    {
        Tape tape;
        tape.backward(sum(apply_phi_single(x, g, GateMode::thresholded)));
    }
    for (std::size_t t : dropped)
        for (std::size_t f = 0; f < 4; ++f) REQUIRE(x.grad()[t * 4 + f] == 0.0);

    // and the perturbation view: with the gate held, any change to a dropped
    // frame's features never reaches the gated output
    Tensor x2 = x.detach();
    for (std::size_t f = 0; f < 4; ++f) x2.at2(dropped[0], f) += 3.0;
    Tensor a = apply_phi_single(x.detach(), g, GateMode::thresholded);
    Tensor b = apply_phi_single(x2, g, GateMode::thresholded);
    REQUIRE(a.values() == b.values());
}
