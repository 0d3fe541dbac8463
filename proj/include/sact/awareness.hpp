#pragma once

// Self-Aware Composition Attention: per-frame awareness selectors
// omega = sigmoid(Z1 relu(Z2 x_t + Z3 xbar)) in (0,1)^d, the gating map Phi,
// sparse frame scores beta_i, and the L1 pressure that realizes the
// "few frames kept" regime. Training gates stay soft end-to-end; inference
// gates are hard-thresholded at tau and treated as constants.

#include <string>
#include <vector>

#include "sact/attention.hpp"
#include "sact/tensor.hpp"

namespace sact {

enum class GateMode { soft, thresholded };

struct AwarenessParams {
    Tensor z1;  // d x g, weight-age factor
    Tensor z2;  // g x d, per-frame feature extraction
    Tensor z3;  // g x d, sequence-context counterpart

    static AwarenessParams init(std::size_t d, std::size_t g, std::mt19937_64& rng) {
        if (d == 0 || g == 0) throw std::invalid_argument("AwarenessParams: dims must be positive");
        AwarenessParams p;
        p.z1 = glorot({d, g}, rng).set_requires_grad(true);
        p.z2 = glorot({g, d}, rng).set_requires_grad(true);
        p.z3 = glorot({g, d}, rng).set_requires_grad(true);
        return p;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".z1", z1);
        out.emplace_back(prefix + ".z2", z2);
        out.emplace_back(prefix + ".z3", z3);
    }
};

struct AwarenessGate {
    Tensor omega;        // T x d, strictly inside (0,1), on the tape
    Tensor sparse_beta;  // T x d, omega where omega >= tau else 0; constant
    double tau = 0.05;
};

// omega_t = sigmoid(Z1 relu(Z2 x_t + Z3 xbar)), xbar the temporal mean of x.
inline AwarenessGate compute_gate(const Tensor& x, const AwarenessParams& params, double tau) {
    if (x.rank() != 2) throw std::invalid_argument("compute_gate: expected [T,d] input");
    if (params.z2.dim(1) != x.dim(1))
        throw std::invalid_argument("compute_gate: params expect width " +
                                    std::to_string(params.z2.dim(1)) + ", input is " +
                                    shape_str(x.shape()));
    Tensor xbar = mean_over_axis(x, 0);  // [d]
    Tensor context = matmul(reshape(xbar, {1, x.dim(1)}), transpose(params.z3));
    Tensor hidden = relu(add(matmul(x, transpose(params.z2)), reshape(context, {context.dim(1)})));
    AwarenessGate gate;
    gate.omega = sigmoid(matmul(hidden, transpose(params.z1)));
    gate.tau = tau;
    std::vector<double> sb(gate.omega.numel());
    for (std::size_t i = 0; i < sb.size(); ++i) {
        double w = gate.omega.values()[i];
        sb[i] = w >= tau ? w : 0.0;
    }
    gate.sparse_beta = Tensor(gate.omega.shape(), std::move(sb));
    return gate;
}

inline Tensor apply_phi_single(const Tensor& x, const AwarenessGate& gate, GateMode mode) {
    if (gate.omega.shape() != x.shape())
        throw std::invalid_argument("apply_phi_single: gate shape " +
                                    shape_str(gate.omega.shape()) + " != input shape " +
                                    shape_str(x.shape()));
    return mode == GateMode::soft ? mul(x, gate.omega) : mul(x, gate.sparse_beta);
}

// Phi(u,v) = (omega_u * u ; omega_v * v)
inline Tensor apply_phi_joint(const Tensor& u, const Tensor& v, const AwarenessGate& gate_u,
                              const AwarenessGate& gate_v, GateMode mode) {
    if (u.dim(0) != v.dim(0))
        throw std::invalid_argument("apply_phi_joint: frame counts disagree: " +
                                    shape_str(u.shape()) + " vs " + shape_str(v.shape()));
    return concat({apply_phi_single(u, gate_u, mode), apply_phi_single(v, gate_v, mode)}, 1);
}

// Convenience forms computing the gates in place.
inline Tensor apply_phi_single(const Tensor& x, const AwarenessParams& params, double tau,
                               GateMode mode) {
    return apply_phi_single(x, compute_gate(x, params, tau), mode);
}

inline Tensor apply_phi_joint(const Tensor& u, const Tensor& v, const AwarenessParams& pu,
                              const AwarenessParams& pv, double tau, GateMode mode) {
    return apply_phi_joint(u, v, compute_gate(u, pu, tau), compute_gate(v, pv, tau), mode);
}

// Per-frame beta_i = mean over features of the thresholded gate row.
// Frames with beta_i = 0 are the dropped frames.
inline Tensor frame_beta(const AwarenessGate& gate) {
    return mean_over_axis(gate.sparse_beta.detach(), 1);
}

inline std::size_t kept_frames(const Tensor& beta) {
    std::size_t m = 0;
    for (double b : beta.values())
        if (b > 0.0) ++m;
    return m;
}

// lambda * mean over every pre-threshold omega entry of every gate.
inline Tensor gate_l1_penalty(const std::vector<AwarenessGate>& gates, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("gate_l1_penalty: lambda must be >= 0");
    if (gates.empty() || lambda == 0.0) return Tensor::scalar(0.0);
    std::size_t total = 0;
    Tensor acc = sum(gates[0].omega);
    total += gates[0].omega.numel();
    for (std::size_t i = 1; i < gates.size(); ++i) {
        acc = add(acc, sum(gates[i].omega));
        total += gates[i].omega.numel();
    }
    return scale(acc, lambda / static_cast<double>(total));
}

}  // namespace sact
