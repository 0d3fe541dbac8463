#pragma once

// The three encoder pipelines over the two feature streams:
//   baseline  - ungated stack on (u;v)
//   joint     - (u;v) stack, gated layers split back into stream halves and
//               pass through Phi(u,v) with the per-stream selectors
//   separated - independent per-stream gated stacks, H = (H1;H2)
// plus the proposal-masked fusion block applied before decoding.

#include <optional>
#include <string>
#include <vector>

#include "sact/attention.hpp"
#include "sact/awareness.hpp"
#include "sact/tensor.hpp"

namespace sact {

enum class Variant { baseline, joint, separated };
enum class GatePlacement { final_layer, every_layer };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::joint: return "joint";
        case Variant::separated: return "separated";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "joint") return Variant::joint;
    if (s == "separated") return Variant::separated;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

struct ComposerConfig {
    Variant variant = Variant::separated;
    std::size_t stream_u_dim = 512;
    std::size_t stream_v_dim = 512;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t gate_hidden = 0;  // 0 -> half the gated width
    GatePlacement placement = GatePlacement::final_layer;
    double tau = 0.05;
    bool override_gates_one = false;  // test harness hook: Phi == identity

    std::size_t joint_dim() const { return stream_u_dim + stream_v_dim; }
    std::size_t hidden_for(std::size_t d) const { return gate_hidden ? gate_hidden : d / 2; }

    void validate() const {
        if (stream_u_dim == 0 || stream_v_dim == 0)
            throw std::invalid_argument("ComposerConfig: stream widths must be positive");
        if (num_layers == 0) throw std::invalid_argument("ComposerConfig: need >= 1 layer");
        AttentionConfig{joint_dim(), num_heads}.validate();
        if (variant == Variant::separated) {
            AttentionConfig{stream_u_dim, num_heads}.validate();
            AttentionConfig{stream_v_dim, num_heads}.validate();
        }
    }

    bool gated_layer(std::size_t layer_index) const {
        return placement == GatePlacement::every_layer || layer_index + 1 == num_layers;
    }
};

struct ComposerParams {
    // baseline / joint
    std::vector<EncoderLayer> joint_stack;
    // separated
    std::vector<EncoderLayer> u_stack, v_stack;
    // awareness selector triples
    AwarenessParams aware_u, aware_v, aware_fuse;
    // post-proposal fusion block (T2 / T3)
    EncoderLayer fusion_layer;

    static ComposerParams init(const ComposerConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        ComposerParams p;
        const std::size_t d = cfg.joint_dim();
        if (cfg.variant == Variant::separated) {
            for (std::size_t l = 0; l < cfg.num_layers; ++l) {
                p.u_stack.push_back(EncoderLayer::init({cfg.stream_u_dim, cfg.num_heads}, rng));
                p.v_stack.push_back(EncoderLayer::init({cfg.stream_v_dim, cfg.num_heads}, rng));
            }
        } else {
            for (std::size_t l = 0; l < cfg.num_layers; ++l)
                p.joint_stack.push_back(EncoderLayer::init({d, cfg.num_heads}, rng));
        }
        if (cfg.variant != Variant::baseline) {
            p.aware_u = AwarenessParams::init(cfg.stream_u_dim, cfg.hidden_for(cfg.stream_u_dim), rng);
            p.aware_v = AwarenessParams::init(cfg.stream_v_dim, cfg.hidden_for(cfg.stream_v_dim), rng);
            p.aware_fuse = AwarenessParams::init(d, cfg.hidden_for(d), rng);
        }
        p.fusion_layer = EncoderLayer::init({d, cfg.num_heads}, rng);
        return p;
    }

    void collect(const ComposerConfig& cfg, NamedParams& out) const {
        if (cfg.variant == Variant::separated) {
            for (std::size_t l = 0; l < u_stack.size(); ++l)
                u_stack[l].collect("encoder.u.layer" + std::to_string(l), out);
            for (std::size_t l = 0; l < v_stack.size(); ++l)
                v_stack[l].collect("encoder.v.layer" + std::to_string(l), out);
        } else {
            for (std::size_t l = 0; l < joint_stack.size(); ++l)
                joint_stack[l].collect("encoder.layer" + std::to_string(l), out);
        }
        if (cfg.variant != Variant::baseline) {
            aware_u.collect("aware.u", out);
            aware_v.collect("aware.v", out);
            aware_fuse.collect("aware.fuse", out);
        }
        fusion_layer.collect("fusion.layer", out);
    }
};

struct EncodedMemory {
    Tensor H;                          // T x (d_u + d_v)
    std::optional<Tensor> H1, H2;      // per-stream encodings (separated)
    std::vector<AwarenessGate> gates;  // encoder gate sites, in layer order
};

inline EncodedMemory encode(const Tensor& u, const Tensor& v, const ComposerParams& params,
                            const ComposerConfig& cfg, GateMode mode) {
    if (u.rank() != 2 || v.rank() != 2 || u.dim(0) != v.dim(0))
        throw std::invalid_argument("encode: stream length mismatch: " + shape_str(u.shape()) +
                                    " vs " + shape_str(v.shape()));
    if (u.dim(1) != cfg.stream_u_dim || v.dim(1) != cfg.stream_v_dim)
        throw std::invalid_argument("encode: stream widths disagree with config");
    EncodedMemory mem;
    switch (cfg.variant) {
        case Variant::baseline: {
            Tensor x = concat({u, v}, 1);
            for (const auto& layer : params.joint_stack) x = layer.forward(x);
            mem.H = x;
            break;
        }
        case Variant::joint: {
            Tensor x = concat({u, v}, 1);
            for (std::size_t l = 0; l < params.joint_stack.size(); ++l) {
                if (cfg.gated_layer(l) && !cfg.override_gates_one) {
                    Tensor xu = slice(x, 1, 0, cfg.stream_u_dim);
                    Tensor xv = slice(x, 1, cfg.stream_u_dim, cfg.stream_v_dim);
                    AwarenessGate gu = compute_gate(xu, params.aware_u, cfg.tau);
                    AwarenessGate gv = compute_gate(xv, params.aware_v, cfg.tau);
                    x = apply_phi_joint(xu, xv, gu, gv, mode);
                    mem.gates.push_back(std::move(gu));
                    mem.gates.push_back(std::move(gv));
                }
                x = params.joint_stack[l].forward(x);
            }
            mem.H = x;
            break;
        }
        case Variant::separated: {
            Tensor xu = u, xv = v;
            for (std::size_t l = 0; l < params.u_stack.size(); ++l) {
                if (cfg.gated_layer(l) && !cfg.override_gates_one) {
                    AwarenessGate gu = compute_gate(xu, params.aware_u, cfg.tau);
                    AwarenessGate gv = compute_gate(xv, params.aware_v, cfg.tau);
                    xu = apply_phi_single(xu, gu, mode);
                    xv = apply_phi_single(xv, gv, mode);
                    mem.gates.push_back(std::move(gu));
                    mem.gates.push_back(std::move(gv));
                }
                xu = params.u_stack[l].forward(xu);
                xv = params.v_stack[l].forward(xv);
            }
            mem.H1 = xu;
            mem.H2 = xv;
            mem.H = concat({xu, xv}, 1);
            break;
        }
    }
    return mem;
}

// H masked per frame by R (entries in [0,1]), then one further gated
// transformer block before decoding. Gates used here are appended to
// gates_out when provided.
inline Tensor fuse_with_proposals(const Tensor& H, const Tensor& R, const ComposerParams& params,
                                  const ComposerConfig& cfg, GateMode mode,
                                  std::vector<AwarenessGate>* gates_out = nullptr) {
    if (R.rank() != 1 || R.dim(0) != H.dim(0))
        throw std::invalid_argument("fuse_with_proposals: mask length " + shape_str(R.shape()) +
                                    " does not match memory " + shape_str(H.shape()));
    for (double r : R.values())
        if (r < 0.0 || r > 1.0)
            throw std::invalid_argument("fuse_with_proposals: mask entries must lie in [0,1]");
    Tensor x = row_scale(H, R);
    if (cfg.variant != Variant::baseline && !cfg.override_gates_one) {
        AwarenessGate g = compute_gate(x, params.aware_fuse, cfg.tau);
        x = apply_phi_single(x, g, mode);
        if (gates_out) gates_out->push_back(std::move(g));
    }
    return params.fusion_layer.forward(x);
}

}  // namespace sact
