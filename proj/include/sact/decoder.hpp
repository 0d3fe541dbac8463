#pragma once

// Masked transformer language decoder: token embedding (shared with the
// output projection), sinusoidal positions, causal self-attention,
// cross-attention over fused memory, random MASK-token replacement during
// training, greedy generation at inference.

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sact/attention.hpp"
#include "sact/tensor.hpp"

namespace sact {

struct Vocabulary {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int MASK = 3;

    std::vector<std::string> id_to_token;  // index = id
    std::map<std::string, int> token_to_id;

    static std::vector<std::string> tokenize(const std::string& text) {
        std::vector<std::string> words;
        std::string cur;
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!cur.empty()) words.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        if (!cur.empty()) words.push_back(cur);
        return words;
    }

    static Vocabulary build(const std::vector<std::string>& captions) {
        Vocabulary v;
        v.id_to_token = {"<pad>", "<bos>", "<eos>", "<mask>"};
        std::vector<std::string> words;
        for (const auto& c : captions)
            for (auto& w : tokenize(c)) words.push_back(w);
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        for (auto& w : words) v.id_to_token.push_back(w);
        for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
            v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
        return v;
    }

    std::size_t size() const { return id_to_token.size(); }

    std::vector<int> encode(const std::string& caption) const {
        std::vector<int> ids;
        for (auto& w : tokenize(caption)) {
            auto it = token_to_id.find(w);
            if (it == token_to_id.end())
                throw std::invalid_argument("Vocabulary: unknown word '" + w + "'");
            if (it->second < 4)
                throw std::invalid_argument("Vocabulary: reserved token '" + w + "' in corpus");
            ids.push_back(it->second);
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 4) continue;
            if (!out.empty()) out.push_back(' ');
            out += id_to_token.at(static_cast<std::size_t>(id));
        }
        return out;
    }
};

// Rows are [BOS, w_1..w_k, EOS, PAD...]; mask positions index into the
// decoder INPUT row (the row minus its last token) and only ever cover
// real words.
struct CaptionBatch {
    std::vector<std::vector<int>> rows;
    std::vector<std::vector<std::size_t>> mask_positions;

    std::size_t batch() const { return rows.size(); }
    std::size_t width() const { return rows.empty() ? 0 : rows[0].size(); }

    void validate() const {
        if (mask_positions.size() != rows.size())
            throw std::invalid_argument("CaptionBatch: mask list size mismatch");
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto& row = rows[r];
            if (row.size() != width() || row.size() < 2)
                throw std::invalid_argument("CaptionBatch: ragged or too-short row");
            if (row.front() != Vocabulary::BOS)
                throw std::invalid_argument("CaptionBatch: row must start with BOS");
            bool saw_eos = false;
            for (std::size_t i = 1; i < row.size(); ++i) {
                if (row[i] == Vocabulary::EOS) {
                    if (saw_eos) throw std::invalid_argument("CaptionBatch: duplicate EOS");
                    saw_eos = true;
                } else if (row[i] == Vocabulary::PAD) {
                    if (!saw_eos)
                        throw std::invalid_argument("CaptionBatch: PAD before EOS");
                } else if (saw_eos) {
                    throw std::invalid_argument("CaptionBatch: token after EOS");
                }
            }
            if (!saw_eos) throw std::invalid_argument("CaptionBatch: row missing EOS");
            for (std::size_t m : mask_positions[r]) {
                if (m >= row.size() - 1 || rows[r][m] < 4)
                    throw std::invalid_argument(
                        "CaptionBatch: mask position must cover a real word");
            }
        }
    }

    static CaptionBatch from_captions(const Vocabulary& vocab,
                                      const std::vector<std::string>& captions,
                                      double mask_rate, std::mt19937_64& rng) {
        CaptionBatch b;
        std::size_t longest = 0;
        std::vector<std::vector<int>> encoded;
        for (const auto& c : captions) {
            auto ids = vocab.encode(c);
            longest = std::max(longest, ids.size());
            encoded.push_back(std::move(ids));
        }
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        for (auto& ids : encoded) {
            std::vector<int> row;
            row.push_back(Vocabulary::BOS);
            row.insert(row.end(), ids.begin(), ids.end());
            row.push_back(Vocabulary::EOS);
            row.resize(longest + 2, Vocabulary::PAD);
            std::vector<std::size_t> masks;
            for (std::size_t i = 1; i + 1 < row.size(); ++i)
                if (row[i] >= 4 && mask_rate > 0.0 && coin(rng) < mask_rate) masks.push_back(i);
            b.rows.push_back(std::move(row));
            b.mask_positions.push_back(std::move(masks));
        }
        b.validate();
        return b;
    }
};

struct DecoderConfig {
    std::size_t d_model = 0;
    std::size_t num_heads = 4;
    std::size_t num_layers = 1;
    std::size_t max_len = 32;
    double mask_rate = 0.15;

    void validate() const { AttentionConfig{d_model, num_heads}.validate(); }
};

inline Tensor sinusoidal_positions(std::size_t s, std::size_t d) {
    std::vector<double> v(s * d);
    for (std::size_t p = 0; p < s; ++p)
        for (std::size_t i = 0; i < d; ++i) {
            double angle = static_cast<double>(p) /
                           std::pow(10000.0, double(2 * (i / 2)) / double(d));
            v[p * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return Tensor({s, d}, std::move(v));
}

inline Tensor causal_mask(std::size_t s) {
    std::vector<double> v(s * s, 0.0);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j <= i; ++j) v[i * s + j] = 1.0;
    return Tensor({s, s}, std::move(v));
}

struct DecoderLayerParams {
    ProjectionSet self_attn, cross_attn;
    LayerNorm ln1, ln2, ln3;
    FeedForward ffn;

    static DecoderLayerParams init(const DecoderConfig& cfg, std::mt19937_64& rng) {
        DecoderLayerParams l;
        AttentionConfig ac{cfg.d_model, cfg.num_heads};
        l.self_attn = ProjectionSet::init(ac, rng);
        l.cross_attn = ProjectionSet::init(ac, rng);
        l.ln1 = LayerNorm::init(cfg.d_model);
        l.ln2 = LayerNorm::init(cfg.d_model);
        l.ln3 = LayerNorm::init(cfg.d_model);
        l.ffn = FeedForward::init(cfg.d_model, rng);
        return l;
    }

    Tensor forward(const Tensor& x, const Tensor& memory, const Tensor& self_mask) const {
        Tensor y = add(x, multi_head(ln1.forward(x), self_attn, &self_mask));
        y = add(y, multi_head_kv(ln2.forward(y), memory, cross_attn));
        return add(y, ffn.forward(ln3.forward(y)));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        self_attn.collect(prefix + ".self", out);
        cross_attn.collect(prefix + ".cross", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
        ln3.collect(prefix + ".ln3", out);
        ffn.collect(prefix + ".ffn", out);
    }
};

struct DecoderParams {
    Tensor embedding;  // |V| x d, shared input/output
    std::vector<DecoderLayerParams> layers;
    LayerNorm ln_final;

    static DecoderParams init(const DecoderConfig& cfg, std::size_t vocab_size,
                              std::mt19937_64& rng) {
        cfg.validate();
        DecoderParams p;
        p.embedding = randn({vocab_size, cfg.d_model}, rng, 0.1).set_requires_grad(true);
        for (std::size_t l = 0; l < cfg.num_layers; ++l)
            p.layers.push_back(DecoderLayerParams::init(cfg, rng));
        p.ln_final = LayerNorm::init(cfg.d_model);
        return p;
    }

    void collect(NamedParams& out) const {
        out.emplace_back("decoder.embedding", embedding);
        for (std::size_t l = 0; l < layers.size(); ++l)
            layers[l].collect("decoder.layer" + std::to_string(l), out);
        ln_final.collect("decoder.ln_final", out);
    }
};

// Per-position vocabulary logits for one input row (mask substitution
// already applied by the caller).
inline Tensor decode_logits(const std::vector<int>& input_ids, const Tensor& memory,
                            const DecoderParams& params, const DecoderConfig& cfg) {
    if (input_ids.empty()) throw std::invalid_argument("decode_logits: empty input");
    if (input_ids.size() > cfg.max_len)
        throw std::invalid_argument("decode_logits: sequence length " +
                                    std::to_string(input_ids.size()) +
                                    " exceeds positional table max_len " +
                                    std::to_string(cfg.max_len));
    if (memory.rank() != 2 || memory.dim(1) != cfg.d_model)
        throw std::invalid_argument("decode_logits: memory width must equal d_model");
    Tensor x = add(gather_rows(params.embedding, input_ids),
                   sinusoidal_positions(input_ids.size(), cfg.d_model));
    Tensor mask = causal_mask(input_ids.size());
    for (const auto& layer : params.layers) x = layer.forward(x, memory, mask);
    return matmul(params.ln_final.forward(x), transpose(params.embedding));
}

namespace detail {

inline std::vector<int> masked_input(const std::vector<int>& row,
                                     const std::vector<std::size_t>& mask_positions) {
    std::vector<int> input(row.begin(), row.end() - 1);
    for (std::size_t m : mask_positions) input.at(m) = Vocabulary::MASK;
    return input;
}

}  // namespace detail

// Teacher-forced logits for a batch: rows are decoded independently against
// the same memory; output is [B, S-1, |V|].
inline Tensor decode_train(const CaptionBatch& batch, const Tensor& memory,
                           const DecoderParams& params, const DecoderConfig& cfg) {
    batch.validate();
    std::vector<Tensor> per_row;
    for (std::size_t r = 0; r < batch.batch(); ++r) {
        Tensor logits =
            decode_logits(detail::masked_input(batch.rows[r], batch.mask_positions[r]), memory,
                          params, cfg);
        per_row.push_back(reshape(logits, {1, logits.dim(0), logits.dim(1)}));
    }
    return per_row.size() == 1 ? per_row[0] : concat(per_row, 0);
}

// Mean cross-entropy over non-PAD next-token targets. PAD targets carry
// exactly zero weight; masked positions stay in the loss.
inline Tensor caption_loss(const Tensor& logits, const CaptionBatch& batch) {
    if (logits.rank() != 3 || logits.dim(0) != batch.batch() ||
        logits.dim(1) != batch.width() - 1)
        throw std::invalid_argument("caption_loss: logits shape " + shape_str(logits.shape()) +
                                    " does not match batch");
    const std::size_t b = logits.dim(0), s = logits.dim(1), v = logits.dim(2);
    std::vector<int> targets;
    std::vector<double> weights;
    double live = 0.0;
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t i = 0; i < s; ++i) {
            int tgt = batch.rows[r][i + 1];
            targets.push_back(tgt);
            double w = tgt == Vocabulary::PAD ? 0.0 : 1.0;
            weights.push_back(w);
            live += w;
        }
    if (live == 0.0) throw std::invalid_argument("caption_loss: no live targets");
    Tensor flat = reshape(logits, {b * s, v});
    Tensor logp = pick(log_softmax(flat, 1), targets);
    Tensor weighted = mul(logp, Tensor({b * s}, std::move(weights)));
    return scale(sum(weighted), -1.0 / live);
}

// Greedy argmax decoding from BOS until EOS or max_len; ties resolve to the
// lowest token id. Returns generated ids without BOS/EOS.
inline std::vector<int> generate(const Tensor& memory, const DecoderParams& params,
                                 const DecoderConfig& cfg, std::size_t max_len) {
    std::vector<int> seq{Vocabulary::BOS};
    std::vector<int> out;
    for (std::size_t step = 0; step < max_len; ++step) {
        Tensor logits = decode_logits(seq, memory, params, cfg);
        const std::size_t v = logits.dim(1);
        const double* last = logits.values().data() + (logits.dim(0) - 1) * v;
        int best = 0;
        for (std::size_t i = 1; i < v; ++i)
            if (last[i] > last[best]) best = static_cast<int>(i);
        if (best == Vocabulary::EOS) break;
        seq.push_back(best);
        out.push_back(best);
        if (seq.size() >= cfg.max_len) break;
    }
    return out;
}

}  // namespace sact
