// Command-line workbench: synthetic data generation, training, evaluation,
// caption generation, whole-model gradient checking and gate analysis.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sact/sact.hpp"

namespace {

using nlohmann::json;

std::vector<const sact::AnnotatedClip*> pick_split(const sact::Dataset& ds,
                                                   const std::string& split) {
    if (split == "train") return ds.split(ds.train_idx);
    if (split == "val") return ds.split(ds.val_idx.empty() ? ds.train_idx : ds.val_idx);
    if (split == "test") return ds.split(ds.test_idx);
    if (split == "all") {
        std::vector<const sact::AnnotatedClip*> out;
        for (const auto& c : ds.clips) out.push_back(&c);
        return out;
    }
    throw std::invalid_argument("unknown split '" + split + "'");
}

int cmd_generate_data(const std::string& out_dir, const sact::SyntheticTaskSpec& spec,
                      double train_frac, double val_frac) {
    auto data = sact::generate_synthetic(spec);
    sact::Dataset ds = sact::make_dataset(std::move(data.clips), train_frac, val_frac);
    sact::save_dataset(out_dir, ds);
    std::cout << json{{"clips", ds.clips.size()},
                      {"train", ds.train_idx.size()},
                      {"val", ds.val_idx.size()},
                      {"test", ds.test_idx.size()},
                      {"dir", out_dir}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_train(const sact::TrainConfig& tc, const std::string& data_dir,
              const std::string& out_dir) {
    sact::Dataset ds = sact::load_dataset(data_dir);
    sact::TrainResult result = sact::train(tc, ds, out_dir);
    std::cout << result.metrics.to_json().dump() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& split) {
    sact::SactModel model = sact::SactModel::load(checkpoint);
    sact::Dataset ds = sact::load_dataset(data_dir);
    std::vector<sact::EvalRecord> records;
    sact::MetricsReport report = sact::evaluate(model, pick_split(ds, split), {}, &records);
    for (const auto& rec : records) {
        for (const auto& p : rec.proposals)
            std::cout << json{{"clip_id", rec.clip_id},
                              {"score", p.score},
                              {"start", p.start},
                              {"end", p.end}}
                             .dump()
                      << "\n";
        for (const auto& c : rec.captions)
            std::cout << json{{"clip_id", rec.clip_id},
                              {"segment", {c.start, c.end}},
                              {"caption", c.caption}}
                             .dump()
                      << "\n";
    }
    std::cout << report.to_json().dump() << "\n";
    return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& data_dir,
                 const std::string& split) {
    sact::SactModel model = sact::SactModel::load(checkpoint);
    sact::Dataset ds = sact::load_dataset(data_dir);
    std::vector<sact::EvalRecord> records;
    sact::evaluate(model, pick_split(ds, split), {}, &records);
    for (const auto& rec : records)
        for (const auto& c : rec.captions)
            std::cout << json{{"clip_id", rec.clip_id},
                              {"segment", {c.start, c.end}},
                              {"caption", c.caption}}
                             .dump()
                      << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& variant, std::uint64_t seed) {
    sact::GradCheckReport report = sact::run_model_gradcheck(variant, seed);
    std::cout << "max relative error: " << report.max_rel_error << " ("
              << report.worst_param << "[" << report.worst_index << "], "
              << report.coords_checked << " coordinates)\n";
    return report.pass(1e-4) ? 0 : 1;
}

int cmd_analyze_gates(const std::string& checkpoint, const std::string& data_dir,
                      const std::string& split) {
    sact::SactModel model = sact::SactModel::load(checkpoint);
    sact::Dataset ds = sact::load_dataset(data_dir);
    for (const sact::AnnotatedClip* clip : pick_split(ds, split)) {
        sact::EncodedMemory mem =
            sact::encode(clip->features.u, clip->features.v, model.composer,
                         model.cfg.composer, sact::GateMode::thresholded);
        for (const auto& g : sact::gate_records(mem, clip->features.frames()))
            std::cout << json{{"clip_id", clip->features.clip_id},
                              {"frame_index", g.frame_index},
                              {"beta", g.beta},
                              {"kept", g.kept}}
                             .dump()
                      << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sact: self-aware composition transformer workbench"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Generate a synthetic planted-event dataset");
    std::string gen_out;
    sact::SyntheticTaskSpec spec;
    double train_frac = 0.5, val_frac = 0.25;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--clips", spec.num_clips, "Number of clips");
    gen->add_option("--frames", spec.frames, "Frames per clip");
    gen->add_option("--du", spec.d_u, "Appearance feature width");
    gen->add_option("--dv", spec.d_v, "Motion feature width");
    gen->add_option("--motifs", spec.motif_count, "Motif library size");
    gen->add_option("--noise", spec.noise, "Noise level");
    gen->add_option("--seed", spec.seed, "Random seed");
    gen->add_option("--min-events", spec.min_events, "Min events per clip");
    gen->add_option("--max-events", spec.max_events, "Max events per clip");
    gen->add_option("--min-len", spec.min_len, "Min event length");
    gen->add_option("--max-len", spec.max_len, "Max event length");
    gen->add_option("--train-frac", train_frac, "Training split fraction");
    gen->add_option("--val-frac", val_frac, "Validation split fraction");

    // train
    auto* tr = app.add_subcommand("train", "Train a model on a dataset directory");
    std::string tr_data, tr_out, tr_config;
    std::string tr_variant;
    double tr_lr = 0, tr_lambda = -1, tr_tau = -1;
    std::uint64_t tr_seed = 0;
    int tr_epochs = 0, tr_batch = 0;
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--out", tr_out, "Checkpoint output directory");
    tr->add_option("--config", tr_config, "TrainConfig JSON file");
    tr->add_option("--variant", tr_variant, "baseline | joint | separated");
    tr->add_option("--seed", tr_seed, "Random seed");
    tr->add_option("--epochs", tr_epochs, "Training epochs");
    tr->add_option("--lr", tr_lr, "Learning rate");
    tr->add_option("--lambda", tr_lambda, "Gate L1 penalty weight");
    tr->add_option("--tau", tr_tau, "Gate threshold");
    tr->add_option("--batch-size", tr_batch, "Minibatch size");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; emits proposal and caption "
                                          "JSON lines then a metrics JSON line");
    std::string ev_ckpt, ev_data, ev_split = "val";
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--split", ev_split, "train | val | test | all");

    // generate
    auto* ge = app.add_subcommand("generate", "Generate captions as JSON lines");
    std::string ge_ckpt, ge_data, ge_split = "val";
    ge->add_option("--checkpoint", ge_ckpt, "Checkpoint directory")->required();
    ge->add_option("--data", ge_data, "Dataset directory")->required();
    ge->add_option("--split", ge_split, "train | val | test | all");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck",
                                  "Check autodiff against central finite differences");
    std::string gc_variant = "separated";
    std::uint64_t gc_seed = 11;
    gc->add_option("--variant", gc_variant, "baseline | joint | separated");
    gc->add_option("--seed", gc_seed, "Random seed");

    // analyze-gates
    auto* ag = app.add_subcommand("analyze-gates",
                                  "Per-frame gate betas as JSON lines");
    std::string ag_ckpt, ag_data, ag_split = "val";
    ag->add_option("--checkpoint", ag_ckpt, "Checkpoint directory")->required();
    ag->add_option("--data", ag_data, "Dataset directory")->required();
    ag->add_option("--split", ag_split, "train | val | test | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_generate_data(gen_out, spec, train_frac, val_frac);
        if (tr->parsed()) {
            sact::TrainConfig tc;
            if (!tr_config.empty()) {
                std::ifstream cf(tr_config);
                if (!cf) {
                    std::cerr << "error: cannot open config file " << tr_config << "\n";
                    return 2;
                }
                json j = json::parse(cf, nullptr, false);
                if (j.is_discarded()) {
                    std::cerr << "error: malformed config JSON in " << tr_config << "\n";
                    return 2;
                }
                tc = j.get<sact::TrainConfig>();
            }
            if (tr->count("--variant")) tc.variant = tr_variant;
            if (tr->count("--seed")) tc.seed = tr_seed;
            if (tr->count("--epochs")) tc.epochs = tr_epochs;
            if (tr->count("--lr")) tc.learning_rate = tr_lr;
            if (tr->count("--lambda")) tc.lambda_gate = tr_lambda;
            if (tr->count("--tau")) tc.tau = tr_tau;
            if (tr->count("--batch-size")) tc.batch_size = tr_batch;
            return cmd_train(tc, tr_data, tr_out);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split);
        if (ge->parsed()) return cmd_generate(ge_ckpt, ge_data, ge_split);
        if (gc->parsed()) return cmd_gradcheck(gc_variant, gc_seed);
        if (ag->parsed()) return cmd_analyze_gates(ag_ckpt, ag_data, ag_split);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
