#pragma once

// Feature ingestion (SFT1 streams + JSON annotations) and the synthetic
// planted-event captioning task. Each synthetic clip is background noise
// with 1-3 motif segments injected into the appearance stream; the motion
// stream carries a fixed linear transform of the same motif plus its own
// noise, and the caption is a template sentence keyed to the motif id, so
// captions are exactly learnable from features.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sact/io.hpp"
#include "sact/tensor.hpp"

namespace sact {

inline constexpr std::size_t kMaxFrames = 480;

struct FeatureStreamPair {
    std::string clip_id;
    Tensor u;  // appearance, T x d_u
    Tensor v;  // motion,     T x d_v

    void validate() const {
        if (u.rank() != 2 || v.rank() != 2)
            throw std::invalid_argument("FeatureStreamPair: streams must be 2-d");
        if (u.dim(0) != v.dim(0))
            throw std::invalid_argument("FeatureStreamPair: stream length mismatch: u has " +
                                        std::to_string(u.dim(0)) + " frames, v has " +
                                        std::to_string(v.dim(0)));
        if (u.dim(0) > kMaxFrames)
            throw std::invalid_argument("FeatureStreamPair: sequence exceeds " +
                                        std::to_string(kMaxFrames) + " frames");
    }

    std::size_t frames() const { return u.dim(0); }
};

struct EventAnnotation {
    double start = 0.0;
    double end = 0.0;
    std::string caption;
    int motif_id = -1;  // known for synthetic clips only
};

struct AnnotatedClip {
    FeatureStreamPair features;
    std::vector<EventAnnotation> events;

    void validate() const {
        features.validate();
        const double t = static_cast<double>(features.frames());
        for (const auto& e : events) {
            if (!(e.start >= 0.0 && e.start < e.end && e.end <= t))
                throw std::invalid_argument("AnnotatedClip: bad event bounds in " +
                                            features.clip_id);
            if (e.caption.empty())
                throw std::invalid_argument("AnnotatedClip: empty caption in " +
                                            features.clip_id);
        }
    }
};

// ---------------------------------------------------------------------------
// Synthetic planted-event task
// ---------------------------------------------------------------------------

struct SyntheticTaskSpec {
    std::size_t num_clips = 200;
    std::size_t frames = 48;
    std::size_t d_u = 32;
    std::size_t d_v = 32;
    std::size_t motif_count = 12;
    std::size_t min_events = 1, max_events = 3;
    std::size_t min_len = 4, max_len = 8;
    double noise = 0.05;
    std::uint64_t seed = 7;

    void validate() const {
        if (num_clips == 0 || frames == 0 || d_u == 0 || d_v == 0)
            throw std::invalid_argument("SyntheticTaskSpec: sizes must be positive");
        if (motif_count == 0 || motif_count > 144)
            throw std::invalid_argument("SyntheticTaskSpec: motif_count must be in [1,144]");
        if (min_events == 0 || min_events > max_events || min_len == 0 || min_len > max_len)
            throw std::invalid_argument("SyntheticTaskSpec: bad event ranges");
        if (max_len > frames)
            throw std::invalid_argument("SyntheticTaskSpec: events longer than the clip");
        if (noise < 0.0) throw std::invalid_argument("SyntheticTaskSpec: negative noise");
    }
};

inline const std::array<const char*, 12>& motif_verbs() {
    static const std::array<const char*, 12> v = {"opens", "closes", "lifts",  "drops",
                                                  "spins", "shakes", "folds",  "cuts",
                                                  "pushes", "pulls", "taps",   "rubs"};
    return v;
}

inline const std::array<const char*, 12>& motif_nouns() {
    static const std::array<const char*, 12> n = {"box",    "cup",   "book",  "ball",
                                                  "door",   "chair", "bottle", "towel",
                                                  "plate",  "drawer", "jar",   "bag"};
    return n;
}

// Template grammar: "a person <verb> the <noun>", the pair fixed by motif id.
inline std::string motif_caption(int motif_id) {
    if (motif_id < 0 || motif_id >= 144)
        throw std::invalid_argument("motif_caption: id out of range");
    std::size_t m = static_cast<std::size_t>(motif_id);
    const char* verb = motif_verbs()[m % 12];
    const char* noun = motif_nouns()[(m / 12 + m) % 12];
    return std::string("a person ") + verb + " the " + noun;
}

struct MotifLibrary {
    std::vector<std::vector<double>> patterns;   // motif_count x d_u
    std::vector<std::vector<double>> transform;  // d_v rows of length d_u

    // Projects a motif's appearance pattern into the motion stream.
    std::vector<double> motion_pattern(std::size_t motif) const {
        std::vector<double> out(transform.size(), 0.0);
        for (std::size_t r = 0; r < transform.size(); ++r)
            for (std::size_t c = 0; c < patterns[motif].size(); ++c)
                out[r] += transform[r][c] * patterns[motif][c];
        return out;
    }
};

struct SyntheticDataset {
    SyntheticTaskSpec spec;
    MotifLibrary library;
    std::vector<AnnotatedClip> clips;
};

inline SyntheticDataset generate_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticDataset ds;
    ds.spec = spec;
    for (std::size_t m = 0; m < spec.motif_count; ++m) {
        std::vector<double> p(spec.d_u);
        for (auto& x : p) x = gauss(rng);
        ds.library.patterns.push_back(std::move(p));
    }
    const double tscale = 1.0 / std::sqrt(static_cast<double>(spec.d_u));
    for (std::size_t r = 0; r < spec.d_v; ++r) {
        std::vector<double> row(spec.d_u);
        for (auto& x : row) x = gauss(rng) * tscale;
        ds.library.transform.push_back(std::move(row));
    }

    std::uniform_int_distribution<std::size_t> event_count(spec.min_events, spec.max_events);
    std::uniform_int_distribution<std::size_t> event_len(spec.min_len, spec.max_len);
    std::uniform_int_distribution<std::size_t> motif_pick(0, spec.motif_count - 1);

    for (std::size_t c = 0; c < spec.num_clips; ++c) {
        const std::size_t n_events = event_count(rng);
        std::vector<std::pair<std::size_t, std::size_t>> segments;  // [start, end)
        for (std::size_t e = 0; e < n_events; ++e) {
            const std::size_t len = event_len(rng);
            bool placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                std::uniform_int_distribution<std::size_t> start_pick(0, spec.frames - len);
                std::size_t s = start_pick(rng);
                bool clash = false;
                for (auto& seg : segments)
                    if (s < seg.second + 1 && seg.first < s + len + 1) clash = true;
                if (!clash) {
                    segments.emplace_back(s, s + len);
                    placed = true;
                }
            }
            if (!placed)
                throw std::runtime_error(
                    "generate_synthetic: cannot place events without overlap");
        }
        std::sort(segments.begin(), segments.end());

        AnnotatedClip clip;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "clip%04zu", c);
        clip.features.clip_id = idbuf;

        std::vector<double> u(spec.frames * spec.d_u, 0.0);
        std::vector<double> v(spec.frames * spec.d_v, 0.0);
        std::vector<int> frame_motif(spec.frames, -1);
        for (auto& seg : segments) {
            int m = static_cast<int>(motif_pick(rng));
            for (std::size_t t = seg.first; t < seg.second; ++t) frame_motif[t] = m;
            EventAnnotation ev;
            ev.start = static_cast<double>(seg.first);
            ev.end = static_cast<double>(seg.second);
            ev.motif_id = m;
            ev.caption = motif_caption(m);
            clip.events.push_back(std::move(ev));
        }
        for (std::size_t t = 0; t < spec.frames; ++t) {
            if (frame_motif[t] >= 0) {
                const auto& pat = ds.library.patterns[static_cast<std::size_t>(frame_motif[t])];
                for (std::size_t f = 0; f < spec.d_u; ++f) u[t * spec.d_u + f] = pat[f];
                auto mp = ds.library.motion_pattern(static_cast<std::size_t>(frame_motif[t]));
                for (std::size_t f = 0; f < spec.d_v; ++f) v[t * spec.d_v + f] = mp[f];
            }
            for (std::size_t f = 0; f < spec.d_u; ++f)
                u[t * spec.d_u + f] += spec.noise * gauss(rng);
            for (std::size_t f = 0; f < spec.d_v; ++f)
                v[t * spec.d_v + f] += spec.noise * gauss(rng);
        }
        clip.features.u = Tensor({spec.frames, spec.d_u}, std::move(u));
        clip.features.v = Tensor({spec.frames, spec.d_v}, std::move(v));
        clip.validate();
        ds.clips.push_back(std::move(clip));
    }
    return ds;
}

// Nearest-motif match on the mean appearance feature of a segment; the
// recovery oracle for noiseless clips.
inline int nearest_motif(const Tensor& u, double start, double end, const MotifLibrary& lib) {
    const std::size_t d = u.dim(1);
    std::size_t s = static_cast<std::size_t>(std::max(0.0, start));
    std::size_t e = std::min<std::size_t>(u.dim(0), static_cast<std::size_t>(end));
    if (e <= s) e = std::min<std::size_t>(u.dim(0), s + 1);
    std::vector<double> mean(d, 0.0);
    for (std::size_t t = s; t < e; ++t)
        for (std::size_t f = 0; f < d; ++f) mean[f] += u.values()[t * d + f];
    for (auto& x : mean) x /= static_cast<double>(e - s);
    int best = 0;
    double best_dist = HUGE_VAL;
    for (std::size_t m = 0; m < lib.patterns.size(); ++m) {
        double dist = 0.0;
        for (std::size_t f = 0; f < d; ++f) {
            double diff = mean[f] - lib.patterns[m][f];
            dist += diff * diff;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(m);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout: <id>.u.sft / <id>.v.sft per clip, annotations.json
// {clip_id: [{start, end, sentence}]}, manifest.json with ids and splits.
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<AnnotatedClip> clips;
    std::vector<std::size_t> train_idx, val_idx, test_idx;

    std::vector<const AnnotatedClip*> split(const std::vector<std::size_t>& idx) const {
        std::vector<const AnnotatedClip*> out;
        for (auto i : idx) out.push_back(&clips.at(i));
        return out;
    }
};

// Deterministic in-order split with train/val/test fractions.
inline Dataset make_dataset(std::vector<AnnotatedClip> clips, double train_frac = 0.5,
                            double val_frac = 0.25) {
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
        throw std::invalid_argument("make_dataset: bad split fractions");
    Dataset ds;
    ds.clips = std::move(clips);
    const std::size_t n = ds.clips.size();
    const auto n_train = static_cast<std::size_t>(train_frac * n);
    const auto n_val = static_cast<std::size_t>(val_frac * n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            ds.train_idx.push_back(i);
        else if (i < n_train + n_val)
            ds.val_idx.push_back(i);
        else
            ds.test_idx.push_back(i);
    }
    return ds;
}

inline void save_clip(const std::string& dir, const AnnotatedClip& clip) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_sft(dir + "/" + clip.features.clip_id + ".u.sft", clip.features.u);
    save_sft(dir + "/" + clip.features.clip_id + ".v.sft", clip.features.v);
}

inline void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json ann = nlohmann::json::object();
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& clip : ds.clips) {
        save_clip(dir, clip);
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : clip.events)
            events.push_back({{"start", e.start}, {"end", e.end}, {"sentence", e.caption}});
        ann[clip.features.clip_id] = events;
        ids.push_back(clip.features.clip_id);
    }
    std::ofstream af(dir + "/annotations.json");
    af << ann.dump(2) << '\n';
    nlohmann::json manifest;
    manifest["clip_ids"] = ids;
    auto names = [&](const std::vector<std::size_t>& idx) {
        nlohmann::json a = nlohmann::json::array();
        for (auto i : idx) a.push_back(ds.clips[i].features.clip_id);
        return a;
    };
    manifest["splits"] = {{"train", names(ds.train_idx)},
                          {"val", names(ds.val_idx)},
                          {"test", names(ds.test_idx)}};
    std::ofstream mf(dir + "/manifest.json");
    mf << manifest.dump(2) << '\n';
}

inline AnnotatedClip load_clip(const std::string& dir, const std::string& clip_id,
                               const nlohmann::json& annotations) {
    AnnotatedClip clip;
    clip.features.clip_id = clip_id;
    clip.features.u = load_sft(dir + "/" + clip_id + ".u.sft");
    clip.features.v = load_sft(dir + "/" + clip_id + ".v.sft");
    if (clip.features.u.rank() != 2 || clip.features.v.rank() != 2 ||
        clip.features.u.dim(0) != clip.features.v.dim(0))
        throw std::runtime_error("load_clip: stream length mismatch for " + clip_id + ": u " +
                                 shape_str(clip.features.u.shape()) + ", v " +
                                 shape_str(clip.features.v.shape()));
    if (!annotations.contains(clip_id))
        throw std::runtime_error("load_clip: no annotations for " + clip_id);
    for (const auto& e : annotations.at(clip_id)) {
        EventAnnotation ev;
        ev.start = e.at("start").get<double>();
        ev.end = e.at("end").get<double>();
        ev.caption = e.at("sentence").get<std::string>();
        clip.events.push_back(std::move(ev));
    }
    clip.validate();
    return clip;
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, false);
    if (manifest.is_discarded())
        throw std::runtime_error("load_dataset: malformed manifest.json in " + dir);
    std::ifstream af(dir + "/annotations.json");
    if (!af) throw std::runtime_error("load_dataset: missing annotations.json in " + dir);
    nlohmann::json ann = nlohmann::json::parse(af, nullptr, false);
    if (ann.is_discarded())
        throw std::runtime_error("load_dataset: malformed annotations.json in " + dir);

    Dataset ds;
    std::map<std::string, std::size_t> index;
    for (const auto& id : manifest.at("clip_ids")) {
        std::string cid = id.get<std::string>();
        index[cid] = ds.clips.size();
        ds.clips.push_back(load_clip(dir, cid, ann));
    }
    auto fill = [&](const char* name, std::vector<std::size_t>& out) {
        for (const auto& id : manifest.at("splits").at(name))
            out.push_back(index.at(id.get<std::string>()));
    };
    fill("train", ds.train_idx);
    fill("val", ds.val_idx);
    fill("test", ds.test_idx);
    return ds;
}

}  // namespace sact
