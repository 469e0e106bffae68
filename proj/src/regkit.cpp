// SPDX-License-Identifier: Apache-2.0
#include "refa/regkit.hpp"

#include <algorithm>
#include <cmath>

#include "refa/error.hpp"

namespace refa {

namespace {

void check_inputs(const std::vector<ScoredResponse>& responses, double lambda) {
    require(lambda >= 0.0, "lambda must be >= 0");
    for (std::size_t i = 0; i < responses.size(); ++i) {
        require(!responses[i].tokens.empty(), "empty response " + std::to_string(i));
        require(responses[i].has_eos_probs(),
                "response " + std::to_string(i) + " has no eos_probs");
    }
}

RegReport make_report(RegKind kind, const std::vector<ScoredResponse>& responses,
                      double lambda) {
    RegReport rep;
    rep.kind = kind;
    rep.lambda = lambda;
    rep.per_response.assign(responses.size(), 0.0);
    for (const auto& r : responses) rep.eos_grads.emplace_back(r.eos_probs.size(), 0.0);
    return rep;
}

void finish(RegReport& rep) {
    rep.value = 0.0;
    for (double v : rep.per_response) rep.value += v;
}

}  // namespace

RegReport targeted_reg(const std::vector<ScoredResponse>& responses, double lambda,
                       int target_length) {
    check_inputs(responses, lambda);
    int target = target_length;
    if (target <= 0)
        for (const auto& r : responses) target = std::max(target, static_cast<int>(r.length()));

    RegReport rep = make_report(RegKind::targeted, responses, lambda);
    rep.target_length = target;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const double gap =
            std::max(0, target - static_cast<int>(responses[i].length()));
        rep.per_response[i] = lambda * responses[i].eos_prob_at_final() * gap;
        rep.eos_grads[i].back() = lambda * gap;
    }
    finish(rep);
    return rep;
}

RegReport budget_indep_reg(const std::vector<ScoredResponse>& responses, double lambda) {
    check_inputs(responses, lambda);
    RegReport rep = make_report(RegKind::budget_independent, responses, lambda);
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const double p = responses[i].eos_prob_at_final();
        if (!(p > 0.0))
            fail(ErrorKind::infinite_penalty,
                 "final EOS probability is 0 for response " + std::to_string(i));
        rep.per_response[i] = lambda == 0.0 ? 0.0 : -lambda * std::log(p);
        rep.eos_grads[i].back() = -lambda / p;
    }
    finish(rep);
    return rep;
}

double budgeted_reg(const ScoredResponse& response, double lambda, int budget) {
    require(lambda >= 0.0, "lambda must be >= 0");
    require(budget >= 1, "budget must be >= 1");
    require(response.has_eos_probs(), "response has no eos_probs");
    const int n = static_cast<int>(response.length());
    const int pre_end = std::min(budget - 1, n);
    double pre = 0.0;
    for (int t = 1; t <= pre_end; ++t) pre += response.eos_probs[t - 1];
    double post = 0.0;
    if (n > budget) {
        for (int t = budget + 1; t <= n; ++t) post += response.eos_probs[t - 1];
        post /= static_cast<double>(n - budget);
    }
    return lambda * (pre / static_cast<double>(budget) - post);
}

std::vector<double> budgeted_reg_grad(const ScoredResponse& response, double lambda,
                                      int budget) {
    require(budget >= 1, "budget must be >= 1");
    const int n = static_cast<int>(response.length());
    std::vector<double> g(response.eos_probs.size(), 0.0);
    const int pre_end = std::min(budget - 1, n);
    for (int t = 1; t <= pre_end; ++t) g[t - 1] = lambda / static_cast<double>(budget);
    if (n > budget)
        for (int t = budget + 1; t <= n; ++t)
            g[t - 1] = -lambda / static_cast<double>(n - budget);
    return g;
}

RegReport budgeted_reg(const std::vector<ScoredResponse>& responses, double lambda,
                       int budget) {
    check_inputs(responses, lambda);
    RegReport rep = make_report(RegKind::budgeted, responses, lambda);
    rep.budget = budget;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        rep.per_response[i] = budgeted_reg(responses[i], lambda, budget);
        rep.eos_grads[i] = budgeted_reg_grad(responses[i], lambda, budget);
    }
    finish(rep);
    return rep;
}

RegReport generic_eos_reg(const std::vector<ScoredResponse>& responses, double lambda) {
    check_inputs(responses, lambda);
    RegReport rep = make_report(RegKind::generic, responses, lambda);
    for (std::size_t i = 0; i < responses.size(); ++i) {
        rep.per_response[i] = lambda * responses[i].eos_prob_at_final();
        rep.eos_grads[i].back() = lambda;
    }
    finish(rep);
    return rep;
}

RegReport regularize(RegKind kind, const std::vector<ScoredResponse>& responses,
                     const Hyperparams& hyper) {
    switch (kind) {
        case RegKind::none: {
            RegReport rep;
            rep.per_response.assign(responses.size(), 0.0);
            for (const auto& r : responses) rep.eos_grads.emplace_back(r.eos_probs.size(), 0.0);
            return rep;
        }
        case RegKind::targeted: return targeted_reg(responses, hyper.lambda, hyper.target_length);
        case RegKind::budget_independent: return budget_indep_reg(responses, hyper.lambda);
        case RegKind::budgeted: return budgeted_reg(responses, hyper.lambda, hyper.budget);
        case RegKind::generic: return generic_eos_reg(responses, hyper.lambda);
    }
    return {};
}

std::pair<double, double> split_by_partition(const RegReport& report,
                                             const Partition& part) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t i : part.positive) pos += report.per_response.at(i);
    for (std::size_t i : part.negative) neg += report.per_response.at(i);
    return {pos, neg};
}

}  // namespace refa
