#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "sact/composer.hpp"
#include "sact/gradcheck.hpp"
#include "sact/proposal.hpp"

using namespace sact;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return rand_uniform(std::move(shape), rng, lo, hi);
}

void zero_all(ProposalParams& p) {
    for (auto& h : p.heads)
        for (Tensor* t : {&h.k_score, &h.b_score, &h.k_center, &h.b_center, &h.k_length,
                          &h.b_length})
            std::fill(t->values().begin(), t->values().end(), 0.0);
}

EventProposal make_proposal(double score, double center, double length, int anchor_id = 0,
                            int anchor_len = 4, int position = 0) {
    EventProposal p;
    p.score = Tensor({1}, {score});
    p.center = Tensor({1}, {center});
    p.length = Tensor({1}, {length});
    p.anchor_id = anchor_id;
    p.anchor_len = anchor_len;
    p.position = position;
    return p;
}

}  // namespace

TEST_CASE("zero conv weights give score 0.5, center i, length L") {
    AnchorSpec anchors;
    anchors.base_lengths = {2, 4};
    std::mt19937_64 rng(1);
    ProposalParams params = ProposalParams::init(8, anchors, rng);
    zero_all(params);
    Tensor memory = random_tensor({16, 8}, 2);
    auto props = propose(memory, params, anchors);
    REQUIRE(props.size() == 16 * 2);
    for (const auto& p : props) {
        REQUIRE(p.score_v() == 0.5);
        REQUIRE_THAT(p.center_v(), Catch::Matchers::WithinAbs(double(p.position), 1e-12));
        REQUIRE_THAT(p.length_v(), Catch::Matchers::WithinAbs(double(p.anchor_len), 1e-12));
    }
}

TEST_CASE("clips shorter than every anchor yield an empty list, not an error") {
    AnchorSpec anchors;
    anchors.base_lengths = {4, 8};
    std::mt19937_64 rng(3);
    ProposalParams params = ProposalParams::init(8, anchors, rng);
    auto props = propose(random_tensor({2, 8}, 4), params, anchors);
    REQUIRE(props.empty());
}

TEST_CASE("proposal score gradient w.r.t. memory matches finite differences") {
    AnchorSpec anchors;
    anchors.base_lengths = {2, 4};
    std::mt19937_64 rng(5);
    ProposalParams params = ProposalParams::init(6, anchors, rng);
    Tensor memory = random_tensor({8, 6}, 6).set_requires_grad(true);

    auto loss_fn = [&](const Tensor& mem) {
        auto props = propose(mem, params, anchors);
        Tensor acc = Tensor::scalar(0.0);
        for (auto& p : props) acc = add(acc, add(reshape(p.score, {}), reshape(p.length, {})));
        return acc;
    };
    std::vector<double> ad;
    {
        Tape tape;
        tape.backward(loss_fn(memory));
        ad = memory.grad();
    }
    Tensor fd = finite_diff_grad(
        [&](const Tensor& probe) { return loss_fn(probe).item(); }, memory.detach());
    for (std::size_t i = 0; i < ad.size(); ++i)
        REQUIRE(grad_rel_error(ad[i], fd(i)) < 1e-4);
}

TEST_CASE("tiou is symmetric and exact") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(0.0, 20.0);
    for (int i = 0; i < 200; ++i) {
        double s1 = d(rng), e1 = s1 + d(rng) + 0.1;
        double s2 = d(rng), e2 = s2 + d(rng) + 0.1;
        REQUIRE(tiou(s1, e1, s2, e2) == tiou(s2, e2, s1, e1));
    }
    REQUIRE(tiou(0, 4, 0, 4) == 1.0);
    REQUIRE(tiou(0, 4, 4, 8) == 0.0);
    REQUIRE(tiou(0, 4, 2, 6) == Catch::Approx(2.0 / 6.0).margin(0));
}

TEST_CASE("gaussian window peaks at the proposal score and covers its support") {
    EventProposal p = make_proposal(1.0, 8.0, 16.0);
    Tensor r = proposal_window(p, 16);
    double mx = *std::max_element(r.values().begin(), r.values().end());
    REQUIRE_THAT(mx, Catch::Matchers::WithinAbs(1.0, 1e-9));
    for (std::size_t t = 4; t < 13; ++t) REQUIRE(r(t) > 0.1);
    for (double v : r.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("NMS keeps exactly one of two identical proposals") {
    std::vector<EventProposal> props{make_proposal(0.9, 8, 4), make_proposal(0.9, 8, 4)};
    SelectConfig cfg;
    auto [kept, r] = select_and_mask(props, cfg, 16);
    REQUIRE(kept.size() == 1);
}

TEST_CASE("selection is independent of input ordering") {
    std::vector<EventProposal> props;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (int i = 0; i < 30; ++i)
        props.push_back(
            make_proposal(d(rng), 2.0 + 12.0 * d(rng), 2.0 + 4.0 * d(rng), i % 2, 4, i % 16));
    SelectConfig cfg;
    cfg.score_threshold = 0.2;
    auto [kept_a, ra] = select_and_mask(props, cfg, 16);
    std::shuffle(props.begin(), props.end(), rng);
    auto [kept_b, rb] = select_and_mask(props, cfg, 16);
    REQUIRE(kept_a.size() == kept_b.size());
    for (std::size_t i = 0; i < kept_a.size(); ++i) {
        REQUIRE(kept_a[i].score_v() == kept_b[i].score_v());
        REQUIRE(kept_a[i].center_v() == kept_b[i].center_v());
    }
    REQUIRE(ra.values() == rb.values());
}

TEST_CASE("training mode keeps top-k instead of thresholding") {
    std::vector<EventProposal> props;
    for (int i = 0; i < 12; ++i)
        props.push_back(make_proposal(0.05 + 0.02 * i, 1.5 * i + 1, 2.0, 0, 2, i));
    SelectConfig cfg;
    cfg.training = true;
    cfg.top_k = 4;
    auto [kept, r] = select_and_mask(props, cfg, 20);
    REQUIRE(kept.size() == 4);
    // eval mode with the same low scores keeps nothing
    cfg.training = false;
    auto [kept_eval, r_eval] = select_and_mask(props, cfg, 20);
    REQUIRE(kept_eval.empty());
    for (double v : r_eval.values()) REQUIRE(v == 0.0);
}

TEST_CASE("combined mask is the max over kept windows and lies in [0,1]") {
    std::vector<EventProposal> props{make_proposal(0.9, 4, 4), make_proposal(0.8, 12, 4)};
    SelectConfig cfg;
    auto [kept, r] = select_and_mask(props, cfg, 16);
    REQUIRE(kept.size() == 2);
    Tensor w0 = proposal_window(kept[0], 16);
    Tensor w1 = proposal_window(kept[1], 16);
    for (std::size_t t = 0; t < 16; ++t) {
        REQUIRE_THAT(r(t), Catch::Matchers::WithinAbs(std::max(w0(t), w1(t)), 1e-15));
        REQUIRE(r(t) >= 0.0);
        REQUIRE(r(t) <= 1.0);
    }
}

TEST_CASE("perfect predictions give near-zero loss") {
    // anchors at positions with exact ground truth and saturated scores
    std::vector<std::pair<double, double>> gt{{4.0, 8.0}};
    std::vector<EventProposal> props;
    props.push_back(make_proposal(1.0, 6.0, 4.0, 0, 4, 6));   // positive: anchor [4,8]
    props.push_back(make_proposal(0.0, 14.0, 4.0, 0, 4, 14)); // negative: anchor [12,16]
    Tensor loss = proposal_loss(props, gt, 16);
    REQUIRE(loss.item() >= 0.0);
    REQUIRE(loss.item() <= 1e-6);
}

TEST_CASE("uniform 0.5 scores with exact offsets give BCE of ln 2") {
    std::vector<std::pair<double, double>> gt{{4.0, 8.0}};
    std::vector<EventProposal> props;
    props.push_back(make_proposal(0.5, 6.0, 4.0, 0, 4, 6));
    props.push_back(make_proposal(0.5, 14.0, 4.0, 0, 4, 14));
    Tensor loss = proposal_loss(props, gt, 16);
    REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("anchors between the tIoU bands are ignored by the loss") {
    std::vector<std::pair<double, double>> gt{{4.0, 8.0}};
    std::vector<EventProposal> props;
    // anchor [4,8]: tIoU 1.0 -> positive; anchor [6,10]: tIoU 2/6 -> ignored
    props.push_back(make_proposal(0.5, 6.0, 4.0, 0, 4, 6));
    props.push_back(make_proposal(0.123, 8.0, 4.0, 0, 4, 8));
    Tensor loss = proposal_loss(props, gt, 16);
    REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("caption-side gradients flow through R into the proposal head") {
    // finite-difference sensitivity of a fused-memory loss to conv weights
    AnchorSpec anchors;
    anchors.base_lengths = {2, 4};
    ComposerConfig ccfg;
    ccfg.variant = Variant::baseline;
    ccfg.stream_u_dim = 4;
    ccfg.stream_v_dim = 4;
    ccfg.num_layers = 1;
    ccfg.num_heads = 2;
    std::mt19937_64 rng(9);
    ComposerParams cparams = ComposerParams::init(ccfg, rng);
    ProposalParams pparams = ProposalParams::init(8, anchors, rng);
    Tensor memory = random_tensor({8, 8}, 10);

    auto loss_fn = [&]() {
        auto props = propose(memory, pparams, anchors);
        SelectConfig sel;
        sel.training = true;
        sel.top_k = 2;
        auto [kept, r] = select_and_mask(props, sel, 8);
        return sum(fuse_with_proposals(memory, r, cparams, ccfg, GateMode::soft));
    };
    NamedParams named;
    pparams.collect(named);
    auto report = check_gradients(named, loss_fn);
    INFO(report.worst_param);
    REQUIRE(report.max_rel_error < 1e-4);

    // the sensitivity itself is nonzero
    double base = loss_fn().item();
    Tensor k = pparams.heads[0].k_score;
    k.values()[0] += 1e-3;
    REQUIRE(std::abs(loss_fn().item() - base) > 1e-12);
    k.values()[0] -= 1e-3;
}

TEST_CASE("anchor spec validation") {
    AnchorSpec bad;
    bad.base_lengths = {4, 2};
    REQUIRE_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("sorted"));
    AnchorSpec neg;
    neg.base_lengths = {-1};
    REQUIRE_THROWS(neg.validate());
    AnchorSpec empty;
    empty.base_lengths = {};
    REQUIRE_THROWS(empty.validate());
}
