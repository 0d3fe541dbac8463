#pragma once

// Anchor-based event detector over encoded memory: per anchor length, three
// 1-D convolutions emit score / center-offset / length-offset at every
// position. Selection is greedy NMS with deterministic tie-breaks, and the
// frame mask R is a soft Gaussian window so gradients reach the proposal
// head through the caption loss.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sact/attention.hpp"
#include "sact/tensor.hpp"

namespace sact {

struct AnchorSpec {
    std::vector<int> base_lengths{2, 4, 8, 16};

    void validate() const {
        if (base_lengths.empty()) throw std::invalid_argument("AnchorSpec: no anchors");
        for (std::size_t i = 0; i < base_lengths.size(); ++i) {
            if (base_lengths[i] <= 0)
                throw std::invalid_argument("AnchorSpec: lengths must be positive");
            if (i && base_lengths[i] <= base_lengths[i - 1])
                throw std::invalid_argument("AnchorSpec: lengths must be sorted ascending");
        }
    }
};

struct EventProposal {
    Tensor score;   // scalar in (0,1), on the tape during training
    Tensor center;  // scalar, frames
    Tensor length;  // scalar, frames, > 0
    int anchor_id = 0;
    int anchor_len = 0;
    int position = 0;

    double score_v() const { return score.item(); }
    double center_v() const { return center.item(); }
    double length_v() const { return length.item(); }

    // Realized segment clipped to [0, T].
    std::pair<double, double> segment(double t_max) const {
        double s = std::max(0.0, center_v() - length_v() / 2.0);
        double e = std::min(t_max, center_v() + length_v() / 2.0);
        return {s, e};
    }
};

struct AnchorHead {
    Tensor k_score, b_score;
    Tensor k_center, b_center;
    Tensor k_length, b_length;
};

struct ProposalParams {
    std::vector<AnchorHead> heads;  // one per anchor

    static ProposalParams init(std::size_t memory_dim, const AnchorSpec& anchors,
                               std::mt19937_64& rng) {
        anchors.validate();
        ProposalParams p;
        for (int len : anchors.base_lengths) {
            AnchorHead h;
            auto k = static_cast<std::size_t>(len);
            h.k_score = glorot({k, memory_dim}, rng).set_requires_grad(true);
            h.b_score = Tensor::zeros({1}).set_requires_grad(true);
            h.k_center = glorot({k, memory_dim}, rng).set_requires_grad(true);
            h.b_center = Tensor::zeros({1}).set_requires_grad(true);
            h.k_length = glorot({k, memory_dim}, rng).set_requires_grad(true);
            h.b_length = Tensor::zeros({1}).set_requires_grad(true);
            p.heads.push_back(std::move(h));
        }
        return p;
    }

    void collect(NamedParams& out) const {
        for (std::size_t a = 0; a < heads.size(); ++a) {
            std::string pre = "proposal.anchor" + std::to_string(a);
            out.emplace_back(pre + ".k_score", heads[a].k_score);
            out.emplace_back(pre + ".b_score", heads[a].b_score);
            out.emplace_back(pre + ".k_center", heads[a].k_center);
            out.emplace_back(pre + ".b_center", heads[a].b_center);
            out.emplace_back(pre + ".k_length", heads[a].k_length);
            out.emplace_back(pre + ".b_length", heads[a].b_length);
        }
    }
};

// For position i and anchor of base length L:
//   O = sigmoid(conv_score), center = i + L tanh(conv_center),
//   length = L exp(conv_length); offsets clamped to [-4,4] to keep
//   lengths bounded. T shorter than every anchor yields an empty list.
inline std::vector<EventProposal> propose(const Tensor& memory, const ProposalParams& params,
                                          const AnchorSpec& anchors) {
    if (memory.rank() != 2) throw std::invalid_argument("propose: memory must be [T,D]");
    const std::size_t t_len = memory.dim(0);
    std::vector<EventProposal> out;
    for (std::size_t a = 0; a < anchors.base_lengths.size(); ++a) {
        const int len = anchors.base_lengths[a];
        if (static_cast<std::size_t>(len) > t_len) continue;
        const auto& head = params.heads[a];
        Tensor score_row = sigmoid(conv1d_same(memory, head.k_score, head.b_score));
        Tensor center_off =
            tanh(clamp(conv1d_same(memory, head.k_center, head.b_center), -4.0, 4.0));
        Tensor length_off = clamp(conv1d_same(memory, head.k_length, head.b_length), -4.0, 4.0);
        for (std::size_t i = 0; i < t_len; ++i) {
            EventProposal p;
            p.anchor_id = static_cast<int>(a);
            p.anchor_len = len;
            p.position = static_cast<int>(i);
            p.score = slice(score_row, 0, i, 1);
            Tensor c = slice(center_off, 0, i, 1);
            p.center = add_scalar(scale(c, double(len)), double(i));
            p.length = scale(exp(slice(length_off, 0, i, 1)), double(len));
            out.push_back(std::move(p));
        }
    }
    return out;
}

// Temporal intersection-over-union; exact and symmetric.
inline double tiou(double s1, double e1, double s2, double e2) {
    double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
    double uni = (e1 - s1) + (e2 - s2) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Soft Gaussian frame window for one proposal: O * exp(-(t-c)^2 / (2 sigma^2))
// with sigma = length/4. Differentiable in score, center and length.
inline Tensor proposal_window(const EventProposal& p, std::size_t t_len) {
    std::vector<double> ts(t_len);
    for (std::size_t t = 0; t < t_len; ++t) ts[t] = static_cast<double>(t);
    Tensor tvec(Shape{t_len}, std::move(ts));
    Tensor diff = sub(tvec, p.center);                       // broadcast scalar
    Tensor sig = scale(p.length, 0.25);
    Tensor z = div(mul(diff, diff), mul(sig, sig));          // (t-c)^2 / sigma^2
    return mul(exp(scale(z, -0.5)), p.score);
}

struct SelectConfig {
    double score_threshold = 0.5;
    double nms_iou = 0.7;
    int top_k = 4;       // training mode keeps top-k instead of thresholding
    bool training = false;
};

namespace detail {

inline bool proposal_before(const EventProposal& a, const EventProposal& b) {
    if (a.score_v() != b.score_v()) return a.score_v() > b.score_v();
    if (a.center_v() != b.center_v()) return a.center_v() < b.center_v();
    return a.anchor_id < b.anchor_id;
}

}  // namespace detail

// Greedy NMS over score-ordered proposals, then the combined soft mask
// R_t = max over kept proposals of the proposal's Gaussian window.
inline std::pair<std::vector<EventProposal>, Tensor> select_and_mask(
    const std::vector<EventProposal>& proposals, const SelectConfig& cfg, std::size_t t_len) {
    std::vector<EventProposal> pool = proposals;
    std::stable_sort(pool.begin(), pool.end(), detail::proposal_before);
    if (!cfg.training) {
        std::vector<EventProposal> above;
        for (auto& p : pool)
            if (p.score_v() >= cfg.score_threshold) above.push_back(p);
        pool = std::move(above);
    }
    std::vector<EventProposal> kept;
    const double t_max = static_cast<double>(t_len);
    for (auto& p : pool) {
        auto seg = p.segment(t_max);
        bool suppressed = false;
        for (auto& k : kept) {
            auto kseg = k.segment(t_max);
            if (tiou(seg.first, seg.second, kseg.first, kseg.second) >= cfg.nms_iou) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(p);
        if (cfg.training && static_cast<int>(kept.size()) >= cfg.top_k) break;
    }
    if (kept.empty()) return {kept, Tensor::zeros({t_len})};
    std::vector<Tensor> rows;
    rows.reserve(kept.size());
    for (auto& p : kept) rows.push_back(reshape(proposal_window(p, t_len), {1, t_len}));
    Tensor stacked = rows.size() == 1 ? rows[0] : concat(rows, 0);
    return {kept, max_over_axis(stacked, 0)};
}

// Anchor labeling: positive iff the anchor segment reaches tIoU >= 0.5 with
// some ground-truth event, negative iff its best tIoU < 0.1, ignored
// otherwise. Loss = balanced BCE on scores (positives and negatives weighted
// equally) + smooth-L1 on realized center/length for positives.
inline Tensor proposal_loss(const std::vector<EventProposal>& proposals,
                            const std::vector<std::pair<double, double>>& gt_segments,
                            std::size_t t_len) {
    constexpr double kClamp = 1e-12;
    Tensor pos_bce = Tensor::scalar(0.0), neg_bce = Tensor::scalar(0.0);
    Tensor reg = Tensor::scalar(0.0);
    std::size_t n_pos = 0, n_neg = 0;
    const double t_max = static_cast<double>(t_len);
    for (const auto& p : proposals) {
        double a_start = std::max(0.0, p.position - p.anchor_len / 2.0);
        double a_end = std::min(t_max, p.position + p.anchor_len / 2.0);
        double best = 0.0;
        const std::pair<double, double>* best_gt = nullptr;
        for (const auto& g : gt_segments) {
            double iou = tiou(a_start, a_end, g.first, g.second);
            if (iou > best) {
                best = iou;
                best_gt = &g;
            }
        }
        if (best >= 0.5 && best_gt) {
            pos_bce = sub(pos_bce, log(clamp(p.score, kClamp, 1.0)));
            ++n_pos;
            double gt_c = 0.5 * (best_gt->first + best_gt->second);
            double gt_l = best_gt->second - best_gt->first;
            Tensor dc = scale(add_scalar(p.center, -gt_c), 1.0 / p.anchor_len);
            Tensor dl = add_scalar(log(p.length), -std::log(gt_l));
            reg = add(reg, add(huber(dc), huber(dl)));
        } else if (best < 0.1) {
            neg_bce = sub(neg_bce, log(clamp(add_scalar(scale(p.score, -1.0), 1.0), kClamp, 1.0)));
            ++n_neg;
        }
    }
    Tensor loss = Tensor::scalar(0.0);
    if (n_pos && n_neg) {
        loss = add(scale(pos_bce, 0.5 / n_pos), scale(neg_bce, 0.5 / n_neg));
    } else if (n_pos) {
        loss = scale(pos_bce, 1.0 / n_pos);
    } else if (n_neg) {
        loss = scale(neg_bce, 1.0 / n_neg);
    }
    if (n_pos) loss = add(loss, scale(reg, 1.0 / n_pos));
    return loss;
}

}  // namespace sact
