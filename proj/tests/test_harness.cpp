#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "sact/harness.hpp"

using namespace sact;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> toks(const std::string& s) { return Vocabulary::tokenize(s); }

// Small task + config so a training run stays in the hundreds of ms.
SyntheticTaskSpec tiny_task(std::uint64_t seed = 31) {
    SyntheticTaskSpec spec;
    spec.num_clips = 8;
    spec.frames = 16;
    spec.d_u = 4;
    spec.d_v = 4;
    spec.motif_count = 3;
    spec.min_events = 1;
    spec.max_events = 1;
    spec.min_len = 3;
    spec.max_len = 5;
    spec.noise = 0.05;
    spec.seed = seed;
    return spec;
}

TrainConfig tiny_config(const std::string& variant = "separated") {
    TrainConfig tc;
    tc.variant = variant;
    tc.stream_u_dim = 4;
    tc.stream_v_dim = 4;
    tc.num_heads = 2;
    tc.num_layers = 1;
    tc.decoder_layers = 1;
    tc.anchor_lengths = {2, 4};
    tc.epochs = 2;
    tc.batch_size = 4;
    return tc;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("sact_harness_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("bleu trivial and hand-computed values") {
    auto ref = toks("a person opens the box");
    REQUIRE(bleu({ref}, {ref}, 4) == 1.0);
    REQUIRE(bleu({ref}, {ref}, 1) == 1.0);

    // clipping: "the the the the" vs "the cat sat down" -> p1 = 1/4
    REQUIRE_THAT(bleu({toks("the the the the")}, {toks("the cat sat down")}, 1),
                 Catch::Matchers::WithinAbs(0.25, 1e-12));

    REQUIRE(bleu({{}}, {ref}, 4) == 0.0);  // empty candidate

    REQUIRE_THROWS_WITH(bleu({ref}, {ref}, 0), Catch::Matchers::ContainsSubstring("order"));
    REQUIRE_THROWS_WITH(bleu({ref}, {ref}, 5), Catch::Matchers::ContainsSubstring("order"));
    REQUIRE_THROWS(bleu({}, {}, 2));
}

TEST_CASE("bleu brevity penalty and smoothing behave as pinned") {
    // candidate shorter than reference: BP = exp(1 - r/c)
    double b = bleu({toks("a person opens")}, {toks("a person opens the box")}, 1);
    REQUIRE_THAT(b, Catch::Matchers::WithinAbs(std::exp(1.0 - 5.0 / 3.0), 1e-12));

    // zero higher-order matches smooth instead of zeroing out
    double b2 = bleu({toks("box the opens person a")}, {toks("a person opens the box")}, 2);
    REQUIRE(b2 > 0.0);
    REQUIRE(b2 < 1.0);
}

TEST_CASE("bleu is invariant under corpus reordering") {
    std::vector<std::vector<std::string>> cands{toks("a person opens the box"),
                                                toks("a person lifts the book"),
                                                toks("a person taps the jar")};
    std::vector<std::vector<std::string>> refs{toks("a person opens the box"),
                                               toks("a person folds the towel"),
                                               toks("a person taps the jar")};
    double fwd = bleu(cands, refs, 4);
    std::vector<std::vector<std::string>> cands_r{cands[2], cands[0], cands[1]};
    std::vector<std::vector<std::string>> refs_r{refs[2], refs[0], refs[1]};
    REQUIRE(bleu(cands_r, refs_r, 4) == fwd);
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor x = Tensor::full({3}, 5.0).set_requires_grad(true);
    NamedParams params{{"x", x}};
    Adam opt(0.1);
    for (int i = 0; i < 500; ++i) {
        Tape tape;
        tape.backward(sum(mul(x, x)));
        opt.step(params);
    }
    for (double v : x.values()) REQUIRE(std::abs(v) < 1e-2);
}

TEST_CASE("training is a pure function of config, dataset and seed") {
    Dataset ds = make_dataset(generate_synthetic(tiny_task()).clips, 0.75, 0.25);
    TrainConfig tc = tiny_config();
    tc.seed = 9;
    TrainResult a = train(tc, ds);
    TrainResult b = train(tc, ds);
    NamedParams pa = a.model.named_parameters();
    NamedParams pb = b.model.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        REQUIRE(pa[i].second.values() == pb[i].second.values());
    REQUIRE(a.metrics.to_json().dump() == b.metrics.to_json().dump());

    TrainConfig tc2 = tc;
    tc2.seed = 10;
    TrainResult c = train(tc2, ds);
    bool any_diff = false;
    NamedParams pc = c.model.named_parameters();
    for (std::size_t i = 0; i < pa.size() && !any_diff; ++i)
        any_diff = pa[i].second.values() != pc[i].second.values();
    REQUIRE(any_diff);
}

TEST_CASE("training loss decreases on the tiny task") {
    Dataset ds = make_dataset(generate_synthetic(tiny_task(33)).clips, 1.0, 0.0);
    TrainConfig tc = tiny_config();
    tc.epochs = 8;
    tc.learning_rate = 3e-3;
    TrainResult r = train(tc, ds);
    REQUIRE(r.metrics.loss_curve.size() == 8);
    REQUIRE(r.metrics.loss_curve.back() < r.metrics.loss_curve.front());
}

TEST_CASE("divergence aborts with a diagnostic naming the first bad tensor") {
    SyntheticDataset sd = generate_synthetic(tiny_task(35));
    sd.clips[0].features.u.values()[3] = std::nan("");
    Dataset ds = make_dataset(std::move(sd.clips), 1.0, 0.0);
    TrainConfig tc = tiny_config();
    REQUIRE_THROWS_WITH(train(tc, ds), Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("evaluate is side-effect free") {
    Dataset ds = make_dataset(generate_synthetic(tiny_task(36)).clips, 0.75, 0.25);
    TrainConfig tc = tiny_config();
    TrainResult r = train(tc, ds);
    auto val = ds.split(ds.val_idx);
    MetricsReport m1 = evaluate(r.model, val);
    MetricsReport m2 = evaluate(r.model, val);
    REQUIRE(m1.to_json().dump() == m2.to_json().dump());
}

TEST_CASE("checkpoints round-trip through disk") {
    TempDir dir;
    Dataset ds = make_dataset(generate_synthetic(tiny_task(37)).clips, 1.0, 0.0);
    TrainConfig tc = tiny_config("joint");
    TrainResult r = train(tc, ds, dir.str());
    REQUIRE(fs::exists(dir.path / "epoch_001"));
    REQUIRE(fs::exists(dir.path / "final" / "manifest.json"));
    REQUIRE(fs::exists(dir.path / "metrics.json"));

    SactModel loaded = SactModel::load(dir.str() + "/final");
    NamedParams pa = r.model.named_parameters();
    NamedParams pb = loaded.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second.values() == pb[i].second.values());
    }
    // the loaded model evaluates identically
    auto clips = ds.split(ds.train_idx);
    REQUIRE(evaluate(loaded, clips).to_json().dump() ==
            evaluate(r.model, clips).to_json().dump());
}

TEST_CASE("train config json round-trip with snake_case keys") {
    TrainConfig tc;
    tc.variant = "joint";
    tc.learning_rate = 1e-3;
    tc.lambda_gate = 0.11;
    tc.anchor_lengths = {2, 8};
    nlohmann::json j = tc;
    REQUIRE(j.contains("learning_rate"));
    REQUIRE(j.contains("lambda_gate"));
    REQUIRE(j.contains("gate_placement"));
    TrainConfig back = j.get<TrainConfig>();
    REQUIRE(back.variant == "joint");
    REQUIRE(back.learning_rate == 1e-3);
    REQUIRE(back.lambda_gate == 0.11);
    REQUIRE(back.anchor_lengths == std::vector<int>{2, 8});
    // partial configs keep defaults elsewhere
    TrainConfig partial = nlohmann::json{{"variant", "baseline"}}.get<TrainConfig>();
    REQUIRE(partial.variant == "baseline");
    REQUIRE(partial.epochs == 30);
    REQUIRE(partial.learning_rate == 2e-4);
}

TEST_CASE("invalid configs are rejected") {
    TrainConfig tc = tiny_config();
    tc.learning_rate = 0.0;
    REQUIRE_THROWS(tc.validate());
    tc = tiny_config();
    tc.epochs = 0;
    REQUIRE_THROWS(tc.validate());
    tc = tiny_config();
    tc.lambda_gate = -1;
    REQUIRE_THROWS(tc.validate());
    tc = tiny_config();
    tc.variant = "mystery";
    REQUIRE_THROWS(tc.validate());
}

TEST_CASE("baseline-variant model gradient check passes") {
    GradCheckReport report = run_model_gradcheck("baseline", 11);
    INFO(report.worst_param << " err " << report.max_rel_error);
    REQUIRE(report.coords_checked > 1000);
    REQUIRE(report.pass(1e-4));
}

TEST_CASE("gate sparsity metric reflects the gates") {
    Dataset ds = make_dataset(generate_synthetic(tiny_task(38)).clips, 0.75, 0.25);
    TrainConfig tc = tiny_config("baseline");
    TrainResult r = train(tc, ds);
    MetricsReport m = evaluate(r.model, ds.split(ds.val_idx));
    REQUIRE(m.gate_sparsity == 1.0);  // ungated baseline keeps every frame
}
