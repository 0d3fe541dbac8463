#pragma once

// Full captioning model: composer + proposal head + decoder, with directory
// checkpoints (one SFT1 file per parameter plus a JSON manifest carrying the
// configuration and vocabulary).

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sact/composer.hpp"
#include "sact/decoder.hpp"
#include "sact/io.hpp"
#include "sact/proposal.hpp"

namespace sact {

struct ModelConfig {
    ComposerConfig composer;
    AnchorSpec anchors;
    std::size_t decoder_layers = 1;
    std::size_t max_caption_len = 32;
    double mask_rate = 0.15;

    DecoderConfig decoder_config() const {
        DecoderConfig d;
        d.d_model = composer.joint_dim();
        d.num_heads = composer.num_heads;
        d.num_layers = decoder_layers;
        d.max_len = max_caption_len;
        d.mask_rate = mask_rate;
        return d;
    }

    void validate() const {
        composer.validate();
        anchors.validate();
        decoder_config().validate();
    }
};

struct SactModel {
    ModelConfig cfg;
    Vocabulary vocab;
    ComposerParams composer;
    ProposalParams proposal;
    DecoderParams decoder;

    static SactModel init(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
        cfg.validate();
        SactModel m;
        m.cfg = cfg;
        m.vocab = std::move(vocab);
        std::mt19937_64 rng(seed);
        m.composer = ComposerParams::init(cfg.composer, rng);
        m.proposal = ProposalParams::init(cfg.composer.joint_dim(), cfg.anchors, rng);
        m.decoder = DecoderParams::init(cfg.decoder_config(), m.vocab.size(), rng);
        return m;
    }

    NamedParams named_parameters() const {
        NamedParams out;
        composer.collect(cfg.composer, out);
        proposal.collect(out);
        decoder.collect(out);
        return out;
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::json manifest;
        manifest["variant"] = variant_name(cfg.composer.variant);
        manifest["stream_u_dim"] = cfg.composer.stream_u_dim;
        manifest["stream_v_dim"] = cfg.composer.stream_v_dim;
        manifest["num_layers"] = cfg.composer.num_layers;
        manifest["num_heads"] = cfg.composer.num_heads;
        manifest["gate_hidden"] = cfg.composer.gate_hidden;
        manifest["gate_placement"] =
            cfg.composer.placement == GatePlacement::every_layer ? "every_layer" : "final_layer";
        manifest["tau"] = cfg.composer.tau;
        manifest["anchor_lengths"] = cfg.anchors.base_lengths;
        manifest["decoder_layers"] = cfg.decoder_layers;
        manifest["max_caption_len"] = cfg.max_caption_len;
        manifest["mask_rate"] = cfg.mask_rate;
        manifest["vocab"] = vocab.id_to_token;
        std::ofstream mf(dir + "/manifest.json");
        mf << manifest.dump(2) << '\n';
        for (const auto& [name, tensor] : named_parameters())
            save_sft(dir + "/" + name + ".sft", tensor);
    }

    static SactModel load(const std::string& dir) {
        std::ifstream mf(dir + "/manifest.json");
        if (!mf) throw std::runtime_error("SactModel::load: missing manifest in " + dir);
        nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, false);
        if (manifest.is_discarded())
            throw std::runtime_error("SactModel::load: malformed manifest in " + dir);
        ModelConfig cfg;
        cfg.composer.variant = variant_from_name(manifest.at("variant").get<std::string>());
        cfg.composer.stream_u_dim = manifest.at("stream_u_dim").get<std::size_t>();
        cfg.composer.stream_v_dim = manifest.at("stream_v_dim").get<std::size_t>();
        cfg.composer.num_layers = manifest.at("num_layers").get<std::size_t>();
        cfg.composer.num_heads = manifest.at("num_heads").get<std::size_t>();
        cfg.composer.gate_hidden = manifest.at("gate_hidden").get<std::size_t>();
        cfg.composer.placement =
            manifest.at("gate_placement").get<std::string>() == "every_layer"
                ? GatePlacement::every_layer
                : GatePlacement::final_layer;
        cfg.composer.tau = manifest.at("tau").get<double>();
        cfg.anchors.base_lengths = manifest.at("anchor_lengths").get<std::vector<int>>();
        cfg.decoder_layers = manifest.at("decoder_layers").get<std::size_t>();
        cfg.max_caption_len = manifest.at("max_caption_len").get<std::size_t>();
        cfg.mask_rate = manifest.at("mask_rate").get<double>();
        Vocabulary vocab;
        vocab.id_to_token = manifest.at("vocab").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
            vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);

        SactModel m = init(cfg, std::move(vocab), 0);
        for (auto& [name, tensor] : m.named_parameters()) {
            Tensor loaded = load_sft(dir + "/" + name + ".sft");
            if (loaded.shape() != tensor.shape())
                throw std::runtime_error("SactModel::load: shape mismatch for " + name +
                                         ": checkpoint " + shape_str(loaded.shape()) +
                                         " vs model " + shape_str(tensor.shape()));
            Tensor dst = tensor;
            dst.values() = loaded.values();
        }
        return m;
    }
};

}  // namespace sact
