#pragma once

// Training harness: joint caption + proposal + gate-penalty objective under
// Adam, corpus BLEU with brevity penalty and add-one smoothing, evaluation
// with proposal/ground-truth matching, and the model-level gradient check.
// Training is a pure function of (config, dataset, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sact/data.hpp"
#include "sact/gradcheck.hpp"
#include "sact/model.hpp"

namespace sact {

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

// Corpus-level BLEU_n over tokenized candidate/reference pairs (one
// reference per candidate): clipped modified n-gram precisions with add-one
// smoothing on orders >= 2 when a numerator is zero, geometric mean over
// orders 1..n, brevity penalty exp(1 - r/c) when c < r. Empty candidate
// corpus scores 0.
inline double bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, int n) {
    if (n < 1 || n > 4) throw std::invalid_argument("bleu: order must be in [1,4]");
    if (candidates.empty() || candidates.size() != references.size())
        throw std::invalid_argument("bleu: corpora must be nonempty and aligned");
    std::vector<double> num(static_cast<std::size_t>(n), 0.0);
    std::vector<double> den(static_cast<std::size_t>(n), 0.0);
    std::size_t c_len = 0, r_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& cand = candidates[i];
        const auto& ref = references[i];
        c_len += cand.size();
        r_len += ref.size();
        for (int k = 1; k <= n; ++k) {
            if (cand.size() < static_cast<std::size_t>(k)) continue;
            std::map<std::vector<std::string>, std::size_t> cand_counts, ref_counts;
            for (std::size_t j = 0; j + k <= cand.size(); ++j)
                ++cand_counts[{cand.begin() + j, cand.begin() + j + k}];
            for (std::size_t j = 0; j + static_cast<std::size_t>(k) <= ref.size(); ++j)
                ++ref_counts[{ref.begin() + j, ref.begin() + j + k}];
            for (const auto& [gram, count] : cand_counts) {
                auto it = ref_counts.find(gram);
                std::size_t clipped = it == ref_counts.end() ? 0 : std::min(count, it->second);
                num[k - 1] += static_cast<double>(clipped);
                den[k - 1] += static_cast<double>(count);
            }
        }
    }
    if (c_len == 0) return 0.0;
    double log_prec = 0.0;
    for (int k = 1; k <= n; ++k) {
        double nk = num[k - 1], dk = den[k - 1];
        if (k >= 2 && nk == 0.0) {
            nk += 1.0;
            dk += 1.0;
        }
        if (nk == 0.0 || dk == 0.0) return 0.0;
        log_prec += std::log(nk / dk);
    }
    double bp = c_len >= r_len ? 1.0
                               : std::exp(1.0 - static_cast<double>(r_len) /
                                                     static_cast<double>(c_len));
    return bp * std::exp(log_prec / n);
}

// ---------------------------------------------------------------------------
// Config / metrics
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string variant = "separated";
    double learning_rate = 2e-4;
    int epochs = 30;
    double lambda_gate = 0.05;
    double tau = 0.05;
    std::uint64_t seed = 1;
    double caption_weight = 1.0;
    double proposal_weight = 1.0;
    int batch_size = 8;

    std::size_t stream_u_dim = 32, stream_v_dim = 32;
    std::size_t num_layers = 2, num_heads = 4, gate_hidden = 0;
    std::string gate_placement = "final_layer";
    std::size_t decoder_layers = 1;
    std::size_t max_caption_len = 32;
    double mask_rate = 0.15;
    std::vector<int> anchor_lengths{2, 4, 8, 16};

    double score_threshold = 0.5;
    double nms_iou = 0.7;
    int train_top_k = 4;

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (lambda_gate < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        model_config().validate();
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.composer.variant = variant_from_name(variant);
        m.composer.stream_u_dim = stream_u_dim;
        m.composer.stream_v_dim = stream_v_dim;
        m.composer.num_layers = num_layers;
        m.composer.num_heads = num_heads;
        m.composer.gate_hidden = gate_hidden;
        m.composer.placement = gate_placement == "every_layer" ? GatePlacement::every_layer
                                                               : GatePlacement::final_layer;
        m.composer.tau = tau;
        m.anchors.base_lengths = anchor_lengths;
        m.decoder_layers = decoder_layers;
        m.max_caption_len = max_caption_len;
        m.mask_rate = mask_rate;
        return m;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"variant", c.variant},
         {"learning_rate", c.learning_rate},
         {"epochs", c.epochs},
         {"lambda_gate", c.lambda_gate},
         {"tau", c.tau},
         {"seed", c.seed},
         {"caption_weight", c.caption_weight},
         {"proposal_weight", c.proposal_weight},
         {"batch_size", c.batch_size},
         {"stream_u_dim", c.stream_u_dim},
         {"stream_v_dim", c.stream_v_dim},
         {"num_layers", c.num_layers},
         {"num_heads", c.num_heads},
         {"gate_hidden", c.gate_hidden},
         {"gate_placement", c.gate_placement},
         {"decoder_layers", c.decoder_layers},
         {"max_caption_len", c.max_caption_len},
         {"mask_rate", c.mask_rate},
         {"anchor_lengths", c.anchor_lengths},
         {"score_threshold", c.score_threshold},
         {"nms_iou", c.nms_iou},
         {"train_top_k", c.train_top_k}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig defaults;
    c = defaults;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("variant", c.variant);
    get("learning_rate", c.learning_rate);
    get("epochs", c.epochs);
    get("lambda_gate", c.lambda_gate);
    get("tau", c.tau);
    get("seed", c.seed);
    get("caption_weight", c.caption_weight);
    get("proposal_weight", c.proposal_weight);
    get("batch_size", c.batch_size);
    get("stream_u_dim", c.stream_u_dim);
    get("stream_v_dim", c.stream_v_dim);
    get("num_layers", c.num_layers);
    get("num_heads", c.num_heads);
    get("gate_hidden", c.gate_hidden);
    get("gate_placement", c.gate_placement);
    get("decoder_layers", c.decoder_layers);
    get("max_caption_len", c.max_caption_len);
    get("mask_rate", c.mask_rate);
    get("anchor_lengths", c.anchor_lengths);
    get("score_threshold", c.score_threshold);
    get("nms_iou", c.nms_iou);
    get("train_top_k", c.train_top_k);
}

struct MetricsReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double token_accuracy = 0;
    double proposal_recall = 0;  // @ tIoU 0.5
    double gate_sparsity = 0;    // mean kept-frame fraction m/T
    std::vector<double> loss_curve;

    nlohmann::json to_json() const {
        return {{"bleu1", bleu1},
                {"bleu2", bleu2},
                {"bleu3", bleu3},
                {"bleu4", bleu4},
                {"token_accuracy", token_accuracy},
                {"proposal_recall_tiou50", proposal_recall},
                {"gate_sparsity", gate_sparsity},
                {"loss_curve", loss_curve}};
    }
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(double learning_rate) : lr(learning_rate) {}

    void step(NamedParams& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].second.numel(), 0.0);
                v_[i].assign(params[i].second.numel(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i].second;
            const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
            for (std::size_t k = 0; k < p.numel(); ++k) {
                double gk = g ? (*g)[k] : 0.0;
                m_[i][k] = beta1 * m_[i][k] + (1.0 - beta1) * gk;
                v_[i][k] = beta2 * v_[i][k] + (1.0 - beta2) * gk * gk;
                p.values()[k] -= lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + eps);
            }
        }
    }

private:
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Per-clip objective
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<double, double>> gt_segments(const AnnotatedClip& clip) {
    std::vector<std::pair<double, double>> out;
    for (const auto& e : clip.events) out.emplace_back(e.start, e.end);
    return out;
}

inline int best_proposal_for(const std::vector<EventProposal>& kept, double start, double end,
                             double t_max) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        auto seg = kept[i].segment(t_max);
        double iou = tiou(seg.first, seg.second, start, end);
        if (iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace detail

// caption + proposal + gate-penalty loss for a single clip (training mode:
// soft gates, top-k proposal selection, per-event fused memory from the
// best-matching kept proposal's window).
inline Tensor clip_loss(const SactModel& model, const AnnotatedClip& clip, const TrainConfig& tc,
                        std::mt19937_64& mask_rng) {
    const std::size_t t_len = clip.features.frames();
    EncodedMemory mem = encode(clip.features.u, clip.features.v, model.composer,
                               model.cfg.composer, GateMode::soft);
    auto props = propose(mem.H, model.proposal, model.cfg.anchors);
    SelectConfig sel;
    sel.score_threshold = tc.score_threshold;
    sel.nms_iou = tc.nms_iou;
    sel.top_k = tc.train_top_k;
    sel.training = true;
    auto [kept, R] = select_and_mask(props, sel, t_len);

    Tensor loss = scale(proposal_loss(props, detail::gt_segments(clip), t_len),
                        tc.proposal_weight);
    std::vector<AwarenessGate> gates = mem.gates;
    if (!kept.empty() && !clip.events.empty()) {
        Tensor cap_acc = Tensor::scalar(0.0);
        const DecoderConfig dcfg = model.cfg.decoder_config();
        for (const auto& e : clip.events) {
            int bi = detail::best_proposal_for(kept, e.start, e.end,
                                               static_cast<double>(t_len));
            Tensor window = proposal_window(kept[static_cast<std::size_t>(bi)], t_len);
            Tensor fused = fuse_with_proposals(mem.H, window, model.composer,
                                               model.cfg.composer, GateMode::soft, &gates);
            CaptionBatch batch =
                CaptionBatch::from_captions(model.vocab, {e.caption}, tc.mask_rate, mask_rng);
            cap_acc = add(cap_acc,
                          caption_loss(decode_train(batch, fused, model.decoder, dcfg), batch));
        }
        loss = add(loss, scale(cap_acc, tc.caption_weight /
                                            static_cast<double>(clip.events.size())));
    }
    return add(loss, gate_l1_penalty(gates, tc.lambda_gate));
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
    double score_threshold = 0.5;
    double nms_iou = 0.7;
};

struct ProposalRecord {
    double score, start, end;
};
struct CaptionRecord {
    double start, end;
    std::string caption;
};
struct GateRecord {
    std::size_t frame_index;
    double beta;
    bool kept;
};
struct EvalRecord {
    std::string clip_id;
    std::vector<ProposalRecord> proposals;
    std::vector<CaptionRecord> captions;
};

// Per-frame combined beta over the encoder gate sites; a frame counts as
// kept when any site keeps it.
inline std::vector<GateRecord> gate_records(const EncodedMemory& mem, std::size_t t_len) {
    std::vector<GateRecord> out(t_len);
    std::vector<double> beta(t_len, 0.0);
    if (mem.gates.empty()) {
        for (std::size_t t = 0; t < t_len; ++t) out[t] = {t, 1.0, true};
        return out;
    }
    for (const auto& g : mem.gates) {
        Tensor fb = frame_beta(g);
        for (std::size_t t = 0; t < t_len; ++t) beta[t] += fb(t);
    }
    for (std::size_t t = 0; t < t_len; ++t) {
        double b = beta[t] / static_cast<double>(mem.gates.size());
        out[t] = {t, b, b > 0.0};
    }
    return out;
}

inline MetricsReport evaluate(const SactModel& model,
                              const std::vector<const AnnotatedClip*>& clips,
                              const EvalOptions& opt = {},
                              std::vector<EvalRecord>* records = nullptr) {
    if (clips.empty()) throw std::invalid_argument("evaluate: no clips");
    MetricsReport report;
    std::vector<std::vector<std::string>> cands, refs;
    std::size_t gt_total = 0, gt_matched = 0;
    std::size_t tok_correct = 0, tok_total = 0;
    double sparsity_sum = 0.0;
    const DecoderConfig dcfg = model.cfg.decoder_config();

    for (const AnnotatedClip* clip : clips) {
        const std::size_t t_len = clip->features.frames();
        const double t_max = static_cast<double>(t_len);
        EncodedMemory mem = encode(clip->features.u, clip->features.v, model.composer,
                                   model.cfg.composer, GateMode::thresholded);
        auto props = propose(mem.H, model.proposal, model.cfg.anchors);
        SelectConfig sel;
        sel.score_threshold = opt.score_threshold;
        sel.nms_iou = opt.nms_iou;
        sel.training = false;
        auto [kept, R] = select_and_mask(props, sel, t_len);

        auto gr = gate_records(mem, t_len);
        std::size_t m = 0;
        for (const auto& g : gr) m += g.kept ? 1 : 0;
        sparsity_sum += static_cast<double>(m) / static_cast<double>(t_len);

        EvalRecord rec;
        rec.clip_id = clip->features.clip_id;
        std::vector<std::vector<std::string>> kept_tokens(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            auto seg = kept[i].segment(t_max);
            rec.proposals.push_back({kept[i].score_v(), seg.first, seg.second});
            Tensor fused = fuse_with_proposals(mem.H, proposal_window(kept[i], t_len),
                                               model.composer, model.cfg.composer,
                                               GateMode::thresholded);
            std::string caption = model.vocab.decode(
                generate(fused, model.decoder, dcfg, model.cfg.max_caption_len));
            kept_tokens[i] = Vocabulary::tokenize(caption);
            rec.captions.push_back({seg.first, seg.second, caption});
        }

        // Greedy matching in score order: each proposal claims its best
        // still-unmatched event at tIoU >= 0.5.
        std::vector<bool> event_matched(clip->events.size(), false);
        for (std::size_t i = 0; i < kept.size(); ++i) {
            auto seg = kept[i].segment(t_max);
            int best_e = -1;
            double best_iou = 0.5;
            for (std::size_t e = 0; e < clip->events.size(); ++e) {
                if (event_matched[e]) continue;
                double iou = tiou(seg.first, seg.second, clip->events[e].start,
                                  clip->events[e].end);
                if (iou >= best_iou) {
                    best_iou = iou;
                    best_e = static_cast<int>(e);
                }
            }
            if (best_e >= 0) {
                event_matched[static_cast<std::size_t>(best_e)] = true;
                cands.push_back(kept_tokens[i]);
                refs.push_back(Vocabulary::tokenize(
                    clip->events[static_cast<std::size_t>(best_e)].caption));
            }
        }
        for (std::size_t e = 0; e < clip->events.size(); ++e) {
            ++gt_total;
            if (event_matched[e]) {
                ++gt_matched;
            } else {
                cands.push_back({});
                refs.push_back(Vocabulary::tokenize(clip->events[e].caption));
            }
        }

        // Teacher-forced token accuracy per event against the best kept
        // proposal's fused memory; events with no proposal count as misses.
        for (const auto& e : clip->events) {
            CaptionBatch batch;
            std::mt19937_64 unused(0);
            batch = CaptionBatch::from_captions(model.vocab, {e.caption}, 0.0, unused);
            std::size_t live = 0;
            for (std::size_t i = 1; i < batch.rows[0].size(); ++i)
                if (batch.rows[0][i] != Vocabulary::PAD) ++live;
            tok_total += live;
            int bi = detail::best_proposal_for(kept, e.start, e.end, t_max);
            if (bi < 0) continue;
            Tensor fused = fuse_with_proposals(
                mem.H, proposal_window(kept[static_cast<std::size_t>(bi)], t_len),
                model.composer, model.cfg.composer, GateMode::thresholded);
            Tensor logits = decode_train(batch, fused, model.decoder, dcfg);
            const std::size_t s = logits.dim(1), v = logits.dim(2);
            for (std::size_t i = 0; i < s; ++i) {
                int tgt = batch.rows[0][i + 1];
                if (tgt == Vocabulary::PAD) continue;
                const double* row = logits.values().data() + i * v;
                int arg = 0;
                for (std::size_t k = 1; k < v; ++k)
                    if (row[k] > row[arg]) arg = static_cast<int>(k);
                if (arg == tgt) ++tok_correct;
            }
        }
        if (records) records->push_back(std::move(rec));
    }

    report.bleu1 = bleu(cands, refs, 1);
    report.bleu2 = bleu(cands, refs, 2);
    report.bleu3 = bleu(cands, refs, 3);
    report.bleu4 = bleu(cands, refs, 4);
    report.token_accuracy =
        tok_total ? static_cast<double>(tok_correct) / static_cast<double>(tok_total) : 0.0;
    report.proposal_recall =
        gt_total ? static_cast<double>(gt_matched) / static_cast<double>(gt_total) : 0.0;
    report.gate_sparsity = sparsity_sum / static_cast<double>(clips.size());
    return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline std::string first_non_finite(const NamedParams& params) {
    for (const auto& [name, p] : params) {
        for (double x : p.values())
            if (!std::isfinite(x)) return name;
        if (p.has_grad())
            for (double x : p.grad())
                if (!std::isfinite(x)) return name + ".grad";
    }
    return "loss";
}

}  // namespace detail

struct TrainResult {
    SactModel model;
    MetricsReport metrics;
};

inline TrainResult train(const TrainConfig& tc, const Dataset& ds,
                         const std::string& checkpoint_dir = "") {
    tc.validate();
    if (ds.train_idx.empty()) throw std::invalid_argument("train: empty training split");
    std::vector<std::string> corpus;
    for (auto i : ds.train_idx)
        for (const auto& e : ds.clips[i].events) corpus.push_back(e.caption);
    Vocabulary vocab = Vocabulary::build(corpus);

    SactModel model = SactModel::init(tc.model_config(), std::move(vocab), tc.seed);
    NamedParams params = model.named_parameters();
    Adam opt(tc.learning_rate);
    std::mt19937_64 shuffle_rng(tc.seed * 0x9e3779b97f4a7c15ull + 1);
    std::mt19937_64 mask_rng(tc.seed * 0xbf58476d1ce4e5b9ull + 2);

    MetricsReport metrics;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order = ds.train_idx;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
            std::size_t hi = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
            Tape tape;
            Tensor loss = Tensor::scalar(0.0);
            for (std::size_t i = b; i < hi; ++i)
                loss = add(loss, clip_loss(model, ds.clips[order[i]], tc, mask_rng));
            loss = scale(loss, 1.0 / static_cast<double>(hi - b));
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("train: diverged (loss not finite); first such tensor: " +
                                         detail::first_non_finite(params));
            tape.backward(loss);
            opt.step(params);
            epoch_loss += lv;
            ++steps;
        }
        metrics.loss_curve.push_back(epoch_loss / static_cast<double>(steps));
        if (!checkpoint_dir.empty()) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "epoch_%03d", epoch + 1);
            model.save(checkpoint_dir + "/" + buf);
        }
    }

    const auto& eval_idx = ds.val_idx.empty() ? ds.train_idx : ds.val_idx;
    EvalOptions opt_eval;
    opt_eval.score_threshold = tc.score_threshold;
    opt_eval.nms_iou = tc.nms_iou;
    MetricsReport eval_metrics = evaluate(model, ds.split(eval_idx), opt_eval);
    eval_metrics.loss_curve = metrics.loss_curve;
    if (!checkpoint_dir.empty()) {
        model.save(checkpoint_dir + "/final");
        std::ofstream mf(checkpoint_dir + "/metrics.json");
        mf << eval_metrics.to_json().dump(2) << '\n';
    }
    return {std::move(model), std::move(eval_metrics)};
}

// ---------------------------------------------------------------------------
// Model-level gradient check (full pipeline loss, every parameter)
// ---------------------------------------------------------------------------

inline GradCheckReport run_model_gradcheck(const std::string& variant,
                                           std::uint64_t seed = 11) {
    TrainConfig tc;
    tc.variant = variant;
    tc.stream_u_dim = 4;
    tc.stream_v_dim = 4;
    tc.num_heads = 2;
    tc.num_layers = 2;
    tc.decoder_layers = 1;
    tc.anchor_lengths = {2, 4};
    tc.mask_rate = 0.0;  // deterministic loss for finite differences
    tc.lambda_gate = 0.05;

    SyntheticTaskSpec spec;
    spec.num_clips = 1;
    spec.frames = 6;
    spec.d_u = 4;
    spec.d_v = 4;
    spec.motif_count = 3;
    spec.min_events = 1;
    spec.max_events = 1;
    spec.min_len = 2;
    spec.max_len = 3;
    spec.noise = 0.05;
    spec.seed = seed;
    SyntheticDataset data = generate_synthetic(spec);

    Vocabulary vocab = Vocabulary::build(
        {data.clips[0].events[0].caption, motif_caption(0), motif_caption(1), motif_caption(2)});
    SactModel model = SactModel::init(tc.model_config(), std::move(vocab), seed);
    NamedParams params = model.named_parameters();
    std::mt19937_64 unused(0);
    auto loss_fn = [&]() { return clip_loss(model, data.clips[0], tc, unused); };
    return check_gradients(params, loss_fn);
}

}  // namespace sact
