#include <doctest.h>

#include <cmath>

#include "refa/error.hpp"
#include "refa/regkit.hpp"
#include "refa/rng.hpp"

using namespace refa;

namespace {

ScoredResponse with_eos(std::vector<double> eos) {
    ScoredResponse r;
    r.tokens.assign(eos.size(), 2);
    r.eos_probs = std::move(eos);
    return r;
}

ScoredResponse final_eos(int len, double p_final) {
    std::vector<double> eos(len, 0.05);
    eos.back() = p_final;
    return with_eos(eos);
}

std::vector<ScoredResponse> random_responses(Rng& rng) {
    std::vector<ScoredResponse> out(2 + rng.index(6));
    for (auto& r : out) {
        std::vector<double> eos(1 + rng.index(30));
        for (auto& p : eos) p = rng.uniform(0.01, 0.99);
        r = with_eos(eos);
    }
    return out;
}

}  // namespace

TEST_CASE("targeted_reg") {
    CHECK(targeted_reg({final_eos(5, 0.4), final_eos(5, 0.9)}, 1.0, 5).value == 0.0);
    CHECK(targeted_reg({final_eos(3, 0.4), final_eos(7, 0.9)}, 0.0).value == 0.0);
    auto r = targeted_reg({final_eos(80, 0.5)}, 0.01, 100);
    CHECK(r.value == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(r.eos_grads[0].back() == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(r.eos_grads[0][0] == 0.0);

    // dynamic target: the longest response costs nothing
    auto d = targeted_reg({final_eos(3, 0.4), final_eos(9, 0.9), final_eos(6, 0.2)}, 1.0);
    CHECK(d.target_length == 9);
    CHECK(d.per_response[1] == 0.0);
    CHECK(d.per_response[0] == doctest::Approx(0.4 * 6));
    CHECK(d.per_response[2] == doctest::Approx(0.2 * 3));
}

TEST_CASE("budget_indep_reg") {
    CHECK(budget_indep_reg({final_eos(4, 1.0), final_eos(2, 1.0)}, 3.0).value == 0.0);
    CHECK(budget_indep_reg({final_eos(4, std::exp(-2.0))}, 1.0).value ==
          doctest::Approx(2.0).epsilon(1e-14));
    CHECK(budget_indep_reg({final_eos(4, 0.3)}, 0.0).value == 0.0);
    try {
        budget_indep_reg({final_eos(4, 0.0)}, 1.0);
        FAIL("expected infinite penalty");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::infinite_penalty);
    }
}

TEST_CASE("budgeted_reg") {
    CHECK(budgeted_reg(with_eos(std::vector<double>(8, 0.0)), 1.0, 4) == 0.0);
    CHECK(std::abs(budgeted_reg(with_eos(std::vector<double>(8, 0.1)), 1.0, 4) - (-0.025)) <
          1e-12);
    // |y| = b: only the pre-budget penalty over b - 1 positions remains
    CHECK(budgeted_reg(with_eos({0.2, 0.4, 0.6, 0.8}), 1.0, 4) ==
          doctest::Approx((0.2 + 0.4 + 0.6) / 4).epsilon(1e-14));
    // b > |y|: every position sits before the budget
    CHECK(budgeted_reg(with_eos({0.0, 0.0, 0.7}), 2.0, 5) == doctest::Approx(0.7 * 2.0 / 5));
    CHECK(budgeted_reg(with_eos({0.0, 0.0, 0.0}), 2.0, 5) == 0.0);

    auto g = budgeted_reg_grad(with_eos(std::vector<double>(8, 0.1)), 1.0, 4);
    CHECK(g == std::vector<double>{0.25, 0.25, 0.25, 0.0, -0.25, -0.25, -0.25, -0.25});
}

TEST_CASE("generic_eos_reg") {
    CHECK(generic_eos_reg({final_eos(3, 0.2), final_eos(5, 0.3)}, 0.0).value == 0.0);
    CHECK(generic_eos_reg({final_eos(3, 0.2), final_eos(5, 0.3)}, 1.0).value ==
          doctest::Approx(0.5).epsilon(1e-15));
    // matches targeted_reg when every gap is exactly one token
    std::vector<ScoredResponse> rs{final_eos(4, 0.2), final_eos(4, 0.7), final_eos(4, 0.3)};
    CHECK(generic_eos_reg(rs, 0.37).value == doctest::Approx(targeted_reg(rs, 0.37, 5).value));
}

TEST_CASE("regularizers are linear in lambda and have the stated signs") {
    Rng rng(3);
    for (int i = 0; i < 300; ++i) {
        auto rs = random_responses(rng);
        const double lambda = rng.uniform(0.01, 3.0);
        const int budget = 1 + static_cast<int>(rng.index(20));

        auto t1 = targeted_reg(rs, lambda), t2 = targeted_reg(rs, 2 * lambda);
        auto b1 = budget_indep_reg(rs, lambda), b2 = budget_indep_reg(rs, 2 * lambda);
        auto g1 = generic_eos_reg(rs, lambda), g2 = generic_eos_reg(rs, 2 * lambda);
        auto u1 = budgeted_reg(rs, lambda, budget), u2 = budgeted_reg(rs, 2 * lambda, budget);
        CHECK(t2.value == 2 * t1.value);
        CHECK(b2.value == 2 * b1.value);
        CHECK(g2.value == 2 * g1.value);
        CHECK(u2.value == 2 * u1.value);
        CHECK(t1.value >= 0.0);
        CHECK(b1.value >= 0.0);

        double sum = 0.0;
        for (double v : t1.per_response) sum += v;
        CHECK(sum == doctest::Approx(t1.value).epsilon(1e-14));
    }
}

TEST_CASE("split_by_partition separates positive and negative contributions") {
    auto rep = targeted_reg({final_eos(2, 0.5), final_eos(6, 0.5), final_eos(3, 0.5)}, 1.0);
    Partition part;
    part.positive = {0};
    part.negative = {1, 2};
    auto [pos, neg] = split_by_partition(rep, part);
    CHECK(pos == doctest::Approx(2.0));
    CHECK(neg == doctest::Approx(1.5));
    CHECK(pos + neg == doctest::Approx(rep.value));
}

TEST_CASE("regularize dispatches on kind") {
    Hyperparams h;
    h.lambda = 0.5;
    h.budget = 3;
    std::vector<ScoredResponse> rs{final_eos(4, 0.2), final_eos(2, 0.6)};
    CHECK(regularize(RegKind::none, rs, h).value == 0.0);
    CHECK(regularize(RegKind::targeted, rs, h).value == targeted_reg(rs, 0.5).value);
    CHECK(regularize(RegKind::budgeted, rs, h).value == budgeted_reg(rs, 0.5, 3).value);
    CHECK(regularize(RegKind::generic, rs, h).kind == RegKind::generic);
}
