#pragma once

// Scaled dot-product attention, multi-head composition, and the pre-norm
// encoder layer. Projections carry no bias terms; masking is additive -1e30
// before softmax so masked keys get exactly zero weight at f64.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sact/tensor.hpp"

namespace sact {

inline constexpr double kMaskNegInf = -1e30;

struct AttentionConfig {
    std::size_t model_dim = 0;
    std::size_t num_heads = 1;

    std::size_t head_dim() const { return model_dim / num_heads; }

    void validate() const {
        if (model_dim == 0 || num_heads == 0)
            throw std::invalid_argument("AttentionConfig: dims must be positive");
        if (model_dim % num_heads != 0)
            throw std::invalid_argument("AttentionConfig: model_dim " +
                                        std::to_string(model_dim) + " not divisible by " +
                                        std::to_string(num_heads) + " heads");
    }
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct HeadProjections {
    Tensor wp;  // query composer,  d x head_dim
    Tensor wq;  // key selector,    d x head_dim
    Tensor wr;  // value amplifier, d x head_dim
};

struct ProjectionSet {
    std::vector<HeadProjections> heads;
    Tensor w_out;  // (h * head_dim) x d

    static ProjectionSet init(const AttentionConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        ProjectionSet p;
        const std::size_t d = cfg.model_dim, hd = cfg.head_dim();
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            p.heads.push_back({glorot({d, hd}, rng).set_requires_grad(true),
                               glorot({d, hd}, rng).set_requires_grad(true),
                               glorot({d, hd}, rng).set_requires_grad(true)});
        }
        p.w_out = glorot({cfg.num_heads * hd, d}, rng).set_requires_grad(true);
        return p;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        for (std::size_t h = 0; h < heads.size(); ++h) {
            out.emplace_back(prefix + ".head" + std::to_string(h) + ".wp", heads[h].wp);
            out.emplace_back(prefix + ".head" + std::to_string(h) + ".wq", heads[h].wq);
            out.emplace_back(prefix + ".head" + std::to_string(h) + ".wr", heads[h].wr);
        }
        out.emplace_back(prefix + ".w_out", w_out);
    }
};

namespace detail {

inline void validate_mask(const Tensor& mask, std::size_t tq, std::size_t tk) {
    if (mask.rank() != 2 || mask.dim(0) != tq || mask.dim(1) != tk)
        throw std::invalid_argument("attention: mask shape " + shape_str(mask.shape()) +
                                    " does not match scores [" + std::to_string(tq) + "," +
                                    std::to_string(tk) + "]");
    for (std::size_t q = 0; q < tq; ++q) {
        bool any = false;
        for (std::size_t k = 0; k < tk; ++k) {
            double m = mask.values()[q * tk + k];
            if (m != 0.0 && m != 1.0)
                throw std::invalid_argument("attention: mask entries must be 0 or 1");
            any |= (m == 1.0);
        }
        if (!any)
            throw std::invalid_argument("attention: query row " + std::to_string(q) +
                                        " has every key masked");
    }
}

inline Tensor mask_bias(const Tensor& mask) {
    std::vector<double> b(mask.numel());
    for (std::size_t i = 0; i < b.size(); ++i)
        b[i] = mask.values()[i] == 0.0 ? kMaskNegInf : 0.0;
    return Tensor(mask.shape(), std::move(b));
}

}  // namespace detail

// softmax((xq . xk^T)/sqrt(head_dim) + log mask) . xv
inline Tensor scaled_dot_attention(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                                   const Tensor* mask = nullptr) {
    if (xq.rank() != 2 || xk.rank() != 2 || xv.rank() != 2)
        throw std::invalid_argument("scaled_dot_attention: expected 2-d inputs");
    if (xk.dim(0) != xv.dim(0))
        throw std::invalid_argument("scaled_dot_attention: key count " +
                                    std::to_string(xk.dim(0)) + " != value count " +
                                    std::to_string(xv.dim(0)));
    if (xq.dim(1) != xk.dim(1))
        throw std::invalid_argument("scaled_dot_attention: query/key width mismatch: " +
                                    shape_str(xq.shape()) + " vs " + shape_str(xk.shape()));
    Tensor scores = scale(matmul(xq, transpose(xk)), 1.0 / std::sqrt(double(xq.dim(1))));
    if (mask) {
        detail::validate_mask(*mask, xq.dim(0), xk.dim(0));
        scores = add(scores, detail::mask_bias(*mask));
    }
    return matmul(softmax(scores, 1), xv);
}

// Per-head attention outputs for queries from xq and keys/values from xkv.
inline std::vector<Tensor> multi_head_heads(const Tensor& xq, const Tensor& xkv,
                                            const ProjectionSet& proj,
                                            const Tensor* mask = nullptr) {
    std::vector<Tensor> outs;
    outs.reserve(proj.heads.size());
    for (const auto& h : proj.heads) {
        outs.push_back(scaled_dot_attention(matmul(xq, h.wp), matmul(xkv, h.wq),
                                            matmul(xkv, h.wr), mask));
    }
    return outs;
}

inline Tensor multi_head_kv(const Tensor& xq, const Tensor& xkv, const ProjectionSet& proj,
                            const Tensor* mask = nullptr) {
    return matmul(concat(multi_head_heads(xq, xkv, proj, mask), 1), proj.w_out);
}

// Self-attention: [head_1, ..., head_h] W
inline Tensor multi_head(const Tensor& x, const ProjectionSet& proj,
                         const Tensor* mask = nullptr) {
    return multi_head_kv(x, x, proj, mask);
}

// Head-wise interleaving of two streams' per-head outputs:
// [(a_1;b_1), (a_2;b_2), ..., (a_h;b_h)] along the feature axis.
inline Tensor headwise_concat(const std::vector<Tensor>& a_heads,
                              const std::vector<Tensor>& b_heads) {
    if (a_heads.size() != b_heads.size() || a_heads.empty())
        throw std::invalid_argument("headwise_concat: head counts disagree");
    std::vector<Tensor> pairs;
    pairs.reserve(a_heads.size() * 2);
    for (std::size_t h = 0; h < a_heads.size(); ++h) {
        pairs.push_back(a_heads[h]);
        pairs.push_back(b_heads[h]);
    }
    return concat(pairs, 1);
}

struct LayerNorm {
    Tensor gain;
    Tensor bias;
    double eps = 1e-5;

    static LayerNorm init(std::size_t d) {
        LayerNorm ln;
        ln.gain = Tensor::ones({d}).set_requires_grad(true);
        ln.bias = Tensor::zeros({d}).set_requires_grad(true);
        return ln;
    }

    Tensor forward(const Tensor& x) const { return add(mul(row_norm(x, eps), gain), bias); }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Two affine maps with a rectifier between, inner width 4d.
struct FeedForward {
    Tensor w1, b1, w2, b2;

    static FeedForward init(std::size_t d, std::mt19937_64& rng) {
        FeedForward f;
        f.w1 = glorot({d, 4 * d}, rng).set_requires_grad(true);
        f.b1 = Tensor::zeros({4 * d}).set_requires_grad(true);
        f.w2 = glorot({4 * d, d}, rng).set_requires_grad(true);
        f.b2 = Tensor::zeros({d}).set_requires_grad(true);
        return f;
    }

    Tensor forward(const Tensor& x) const {
        return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
    }
};

// Pre-normalization residual layer: x + MH(LN(x)), then x + FFN(LN(x)).
struct EncoderLayer {
    ProjectionSet attn;
    LayerNorm ln1, ln2;
    FeedForward ffn;

    static EncoderLayer init(const AttentionConfig& cfg, std::mt19937_64& rng) {
        EncoderLayer l;
        l.attn = ProjectionSet::init(cfg, rng);
        l.ln1 = LayerNorm::init(cfg.model_dim);
        l.ln2 = LayerNorm::init(cfg.model_dim);
        l.ffn = FeedForward::init(cfg.model_dim, rng);
        return l;
    }

    Tensor forward(const Tensor& x, const Tensor* mask = nullptr) const {
        Tensor y = add(x, multi_head(ln1.forward(x), attn, mask));
        return add(y, ffn.forward(ln2.forward(y)));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        attn.collect(prefix + ".attn", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

}  // namespace sact
