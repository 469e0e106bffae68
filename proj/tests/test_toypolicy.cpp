#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>

#include "refa/error.hpp"
#include "refa/gradlab.hpp"
#include "refa/toypolicy.hpp"

using namespace refa;

namespace {

PreferenceGroup random_group(Rng& rng, int vocab, std::size_t k) {
    PreferenceGroup g{"g", {}, {}};
    for (std::size_t i = 0; i < k; ++i) {
        ScoredResponse r;
        const std::size_t body = rng.index(6);
        for (std::size_t t = 0; t < body; ++t) r.tokens.push_back(2 + rng.index(vocab - 2));
        if (i + 1 < k || rng.uniform() < 0.5) r.tokens.push_back(1);  // the last may be cut off
        if (r.tokens.empty()) r.tokens.push_back(1);
        g.responses.push_back(r);
        g.rewards.push_back(rng.uniform(0, 10));
    }
    return g;
}

using LossOf = std::function<LossBreakdown(const PreferenceGroup&, const ScoreVector&)>;

// Full pipeline loss as a function of the flattened logits (+ position bias).
double pipeline_loss(const PolicyParams& base, const PreferenceGroup& group, double beta,
                     const LossOf& loss, const std::vector<double>& x) {
    PolicyParams p = base;
    std::copy(x.begin(), x.begin() + p.logits.size(), p.logits.begin());
    std::copy(x.begin() + p.logits.size(), x.end(), p.eos_position_bias.begin());
    PreferenceGroup g = group;
    rescore(p, g);
    return loss(g, base_scores(g, beta)).loss;
}

double row_sum(const PolicyParams& p, TokenId row) {
    const auto probs = next_token_probs(p, row, 1);
    return std::accumulate(probs.begin(), probs.end(), 0.0);
}

}  // namespace

TEST_CASE("init_policy") {
    auto flat = init_policy(7, 3, 0.0);
    for (TokenId r = 0; r < 7; ++r)
        for (double p : next_token_probs(flat, r, 1)) CHECK(p == doctest::Approx(1.0 / 7));
    CHECK(init_policy(6, 11, 0.5).logits == init_policy(6, 11, 0.5).logits);
    CHECK(init_policy(6, 11, 0.5).logits != init_policy(6, 12, 0.5).logits);
    CHECK_THROWS_AS(init_policy(2, 1, 0.1), Error);
    CHECK_THROWS_AS(init_policy(5, 1, 0.1, 2, 2), Error);
}

TEST_CASE("token_logprobs") {
    auto flat = init_policy(6, 1, 0.0);
    auto r = token_logprobs(flat, {3, 4, 1});
    for (double lp : r.token_logprobs) CHECK(lp == doctest::Approx(std::log(1.0 / 6)));
    for (double e : r.eos_probs) CHECK(e == doctest::Approx(1.0 / 6));

    PolicyParams hand = init_policy(3, 0, 0.0);
    for (TokenId row = 0; row < 3; ++row) {
        hand.at(row, 0) = 0.0;
        hand.at(row, 1) = std::log(2.0);
        hand.at(row, 2) = std::log(3.0);
    }
    auto h = token_logprobs(hand, {2, 2, 1});
    CHECK(std::exp(h.token_logprobs[0]) == doctest::Approx(3.0 / 6));
    CHECK(std::exp(h.token_logprobs[2]) == doctest::Approx(2.0 / 6));
    CHECK(h.eos_probs[1] == doctest::Approx(2.0 / 6));

    PolicyParams sat = init_policy(4, 0, 0.0);
    sat.at(0, 1) = 60.0;
    CHECK(token_logprobs(sat, {1}).eos_probs[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(token_logprobs(sat, {9}), Error);
}

TEST_CASE("sample") {
    PolicyParams stop = init_policy(5, 0, 0.0);
    stop.at(stop.bos, stop.eos) = 1e6;
    CHECK(sample(stop, 20, 1) == std::vector<TokenId>{stop.eos});

    PolicyParams never = init_policy(5, 0, 0.0);
    for (TokenId r = 0; r < 5; ++r) never.at(r, never.eos) = -1e6;
    CHECK(sample(never, 17, 4).size() == 17);

    auto p = init_policy(8, 5, 1.0);
    CHECK(sample(p, 40, 99) == sample(p, 40, 99));
}

TEST_CASE("policy_grad: zero in, zero out; unvisited rows untouched") {
    Rng rng(1);
    auto p = init_policy(6, 2, 0.5);
    auto g = random_group(rng, 6, 3);
    rescore(p, g);
    LossBreakdown zero;
    zero.score_grads.assign(3, 0.0);
    for (double x : policy_grad(p, g, zero, 2.5).logits) CHECK(x == 0.0);

    PreferenceGroup narrow{"n", {}, {1.0, 0.0}};
    narrow.responses.push_back({{2, 1}, {}, {}});
    narrow.responses.push_back({{3, 1}, {}, {}});
    rescore(p, narrow);
    auto b = refa_dynamic_loss(base_scores(narrow, 2.5), partition(narrow), 2.0);
    auto pg = policy_grad(p, narrow, b, 2.5);
    for (TokenId row : {1, 4, 5})
        for (int c = 0; c < 6; ++c) CHECK(pg.logits[row * 6 + c] == 0.0);
}

TEST_CASE("policy_grad matches FD over logits for every loss and regularizer") {
    const double beta = 1.5;
    Hyperparams h;
    h.beta = beta;
    h.gamma = 2.0;
    h.lambda = 0.3;
    h.budget = 3;

    std::vector<std::pair<std::string, LossOf>> losses = {
        {"refa_dynamic",
         [&](const PreferenceGroup& g, const ScoreVector& s) {
             return refa_dynamic_loss(s, partition(g), h.gamma);
         }},
        {"w_refa", [&](const PreferenceGroup& g, const ScoreVector& s) { return w_refa_loss(g, h, s); }},
        {"refa_1vsall",
         [&](const PreferenceGroup& g, const ScoreVector& s) {
             return refa_1vsall_loss(s, g.rewards, h);
         }},
        {"infonca",
         [&](const PreferenceGroup& g, const ScoreVector& s) { return infonca_loss(s, g.rewards, 1.0); }},
        {"simpo",
         [&](const PreferenceGroup& g, const ScoreVector& s) {
             auto lo = std::min_element(g.rewards.begin(), g.rewards.end()) - g.rewards.begin();
             return simpo_loss(s, argmax_reward(g.rewards), static_cast<std::size_t>(lo), 0.1);
         }},
    };
    for (RegKind reg : {RegKind::targeted, RegKind::budget_independent, RegKind::budgeted}) {
        losses.push_back({std::string("composite_") + to_string(reg),
                          [&h, reg](const PreferenceGroup& g, const ScoreVector& s) {
                              return composite_refa_loss(g, h, s, reg);
                          }});
    }

    Rng rng(77);
    for (const auto& [name, loss] : losses) {
        for (int trial = 0; trial < 5; ++trial) {
            auto p = init_policy(5, 100 + trial, 0.8);
            p.eos_position_bias.assign(8, 0.0);
            for (auto& b : p.eos_position_bias) b = rng.uniform(-0.5, 0.5);
            PreferenceGroup g = random_group(rng, 5, 4);
            if (partition(g).degenerate()) continue;
            rescore(p, g);
            auto breakdown = loss(g, base_scores(g, beta));
            auto pg = policy_grad(p, g, breakdown, beta);

            std::vector<double> x = p.logits, analytic = pg.logits;
            x.insert(x.end(), p.eos_position_bias.begin(), p.eos_position_bias.end());
            analytic.insert(analytic.end(), pg.eos_position_bias.begin(),
                            pg.eos_position_bias.end());
            auto rep = grad_check(
                [&](const std::vector<double>& xs) { return pipeline_loss(p, g, beta, loss, xs); },
                analytic, x, 1e-5, 1e-5, 1e-8);
            INFO(name << " trial " << trial << " max_rel_err " << rep.max_rel_err);
            CHECK(rep.passed);
        }
    }
}

TEST_CASE("train_step contracts") {
    SyntheticSpec spec;
    spec.groups = 6;
    auto data = synthetic_dataset(spec);
    TrainConfig cfg;
    cfg.loss_kind = LossKind::composite;
    cfg.reg_kind = RegKind::targeted;

    SUBCASE("zero learning rate leaves params unchanged") {
        auto p = init_policy(12, 1, 0.3);
        const auto before = p.logits;
        cfg.learning_rate = 0.0;
        auto m = train_step(p, data, cfg);
        CHECK(p.logits == before);
        CHECK(m.mean_loss > 0.0);
    }
    SUBCASE("lambda 0 composite equals refa_dynamic") {
        cfg.hyper.lambda = 0.0;
        cfg.hyper.alpha_dev = 0.0;
        auto p1 = init_policy(12, 1, 0.3), p2 = p1;
        auto d1 = data, d2 = data;
        auto m1 = train_step(p1, d1, cfg);
        TrainConfig dyn = cfg;
        dyn.loss_kind = LossKind::refa_dynamic;
        auto m2 = train_step(p2, d2, dyn);
        CHECK(m1.mean_loss == m2.mean_loss);
        CHECK(p1.logits == p2.logits);
    }
    SUBCASE("symmetric pair starts at ln 2") {
        PreferenceGroup g{"s", {}, {1.0, 0.0}};
        g.responses.push_back({{2, 1}, {}, {}});
        g.responses.push_back({{3, 1}, {}, {}});
        std::vector<PreferenceGroup> batch{g};
        auto p = init_policy(12, 1, 0.0);
        TrainConfig c;
        c.hyper.gamma = 1.0;
        auto m = train_step(p, batch, c);
        CHECK(std::abs(m.mean_loss - std::log(2.0)) < 1e-12);
    }
    SUBCASE("degenerate groups") {
        PreferenceGroup flat{"f", {}, {1.0, 1.0}};
        flat.responses.push_back({{2, 1}, {}, {}});
        flat.responses.push_back({{3, 1}, {}, {}});
        auto p = init_policy(12, 1, 0.3);
        std::vector<PreferenceGroup> mixed{flat, data[0]};
        auto m = train_step(p, mixed, cfg);
        CHECK(m.groups_skipped == 1);
        CHECK(m.groups_used == 1);
        std::vector<PreferenceGroup> only{flat};
        CHECK_THROWS_AS(train_step(p, only, cfg), Error);
        cfg.skip_degenerate = false;
        CHECK_THROWS_AS(train_step(p, mixed, cfg), Error);
    }
}

TEST_CASE("train: history, determinism and descent") {
    SyntheticSpec spec;
    spec.groups = 8;
    auto data = synthetic_dataset(spec);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.eval_samples = 20;
    auto p = init_policy(12, 1, 0.2);
    CHECK(train(p, data, cfg).records.size() == 1);

    cfg.epochs = 30;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 3;
    auto a = init_policy(12, 1, 0.2), b = a;
    auto ha = train(a, data, cfg), hb = train(b, data, cfg);
    CHECK(history_csv(ha) == history_csv(hb));
    CHECK(a.logits == b.logits);
    CHECK(ha.records.back().mean_loss < ha.records.front().mean_loss);

    for (TokenId r = 0; r < 12; ++r) CHECK(row_sum(a, r) == doctest::Approx(1.0).epsilon(1e-10));

    auto header = history_csv(ha).substr(0, history_csv(ha).find('\n'));
    CHECK(header ==
          "epoch,mean_loss,mean_reg,mean_len_pos,mean_len_neg,mean_eos_final_pos,mean_eos_final_neg");
    CHECK_THROWS_AS(train(p, {}, cfg), Error);
}

TEST_CASE("synthetic dataset shape") {
    SyntheticSpec spec;
    auto data = synthetic_dataset(spec);
    REQUIRE(data.size() == 200);
    double pos_len = 0, neg_len = 0;
    int n_pos = 0, n_neg = 0;
    for (const auto& g : data) {
        validate(g);
        CHECK(g.size() == 4);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(g.responses[i].tokens.back() == spec.eos);
            (g.rewards[i] == 1.0 ? pos_len : neg_len) += g.responses[i].length();
            (g.rewards[i] == 1.0 ? n_pos : n_neg) += 1;
        }
    }
    CHECK(pos_len / n_pos == doctest::Approx(6.0).epsilon(0.15));
    CHECK(neg_len / n_neg == doctest::Approx(18.0).epsilon(0.15));
}

TEST_CASE("shortcut dynamics on the long-negative dataset") {
    auto data = synthetic_dataset({});
    auto p = init_policy(12, 99, 0.1);
    TrainConfig cfg;
    cfg.loss_kind = LossKind::composite;
    cfg.epochs = 60;
    auto h = train(p, data, cfg);
    CHECK(h.records.back().mean_len_sampled < h.initial_mean_len);
    CHECK(h.records.back().mean_eos_final_neg >= h.records.front().mean_eos_final_neg);
}

TEST_CASE("confidence ramp policy") {
    auto p = confidence_ramp_policy(12);
    // chain 2, 3, ..., 11 then EOS
    std::vector<TokenId> path;
    for (TokenId t = 2; t < 12; ++t) path.push_back(t);
    path.push_back(p.eos);
    auto r = token_logprobs(p, path);
    for (std::size_t t = 2; t + 1 < r.length(); ++t)
        CHECK(r.token_logprobs[t] > r.token_logprobs[t - 1]);
    for (std::size_t t = 2; t + 1 < r.length(); ++t)
        CHECK(r.eos_probs[t] < r.eos_probs[t - 1]);
}

TEST_CASE("checkpoint round trip") {
    auto path = (std::filesystem::temp_directory_path() / "refa_policy_test.bin").string();
    auto p = init_policy(9, 4, 0.7, 2, 5);
    save_policy(p, path);
    auto q = load_policy(path);
    CHECK(q.vocab_size == 9);
    CHECK(q.bos == 2);
    CHECK(q.eos == 5);
    CHECK(q.logits == p.logits);
    p.eos_position_bias = {0.1, -0.2, 0.3};
    save_policy(p, path);
    CHECK(load_policy(path).eos_position_bias == p.eos_position_bias);

    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("NOTAPOLICY", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_policy(path), Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_policy(path), Error);
}

TEST_CASE("on-policy groups") {
    auto p = init_policy(12, 3, 0.2);
    OnPolicySpec spec;
    spec.groups = 5;
    auto a = on_policy_groups(p, spec, 9), b = on_policy_groups(p, spec, 9);
    REQUIRE(a.size() == 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].size() == 4);
        CHECK(a[i].rewards == b[i].rewards);
    }
}
