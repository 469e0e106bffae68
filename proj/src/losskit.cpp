// SPDX-License-Identifier: Apache-2.0
#include "refa/losskit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "refa/error.hpp"
#include "refa/regkit.hpp"

namespace refa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

double subset_lse(const std::vector<double>& values, const std::vector<std::size_t>& idx) {
    std::vector<double> xs;
    xs.reserve(idx.size());
    for (std::size_t i : idx) xs.push_back(values[i]);
    return log_sum_exp(xs);
}

void check_partition(const ScoreVector& scores, const Partition& part) {
    require(part.positive.size() + part.negative.size() == scores.size(),
            "partition does not cover the score vector");
    for (auto* set : {&part.positive, &part.negative})
        for (std::size_t i : *set) require(i < scores.size(), "partition index out of range");
}

}  // namespace

const char* to_string(RegKind kind) {
    switch (kind) {
        case RegKind::none: return "none";
        case RegKind::targeted: return "targeted";
        case RegKind::budget_independent: return "budget_independent";
        case RegKind::budgeted: return "budgeted";
        case RegKind::generic: return "generic";
    }
    return "none";
}

RegKind parse_reg_kind(const std::string& text) {
    for (RegKind k : {RegKind::none, RegKind::targeted, RegKind::budget_independent,
                      RegKind::budgeted, RegKind::generic})
        if (text == to_string(k)) return k;
    fail(ErrorKind::validation, "unknown regularizer kind '" + text + "'");
}

void Hyperparams::validate() const {
    require(alpha_target > 0.0, "alpha_target must be > 0");
    require(alpha_dev >= 0.0, "alpha_dev must be >= 0");
    require(p >= 0 && p <= 2, "p must be 0, 1 or 2");
    require(beta > 0.0, "beta must be > 0");
    require(gamma > 0.0, "gamma must be > 0");
    require(gamma_margin >= 0.0, "gamma_margin must be >= 0");
    require(lambda >= 0.0, "lambda must be >= 0");
    require(budget >= 1, "budget must be >= 1");
    require(target_length >= 0, "target_length must be >= 0");
}

double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return kNegInf;
    const double m = *std::max_element(xs.begin(), xs.end());
    if (m == kNegInf || std::isinf(m)) return m;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::vector<double> softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out;
    out.reserve(logits.size());
    for (double z : logits) out.push_back(std::exp(z - lse));
    return out;
}

std::vector<double> target_distribution(const std::vector<double>& rewards,
                                        double alpha_target) {
    require(alpha_target > 0.0, "alpha_target must be > 0");
    require(!rewards.empty(), "target distribution needs at least one reward");
    std::vector<double> z;
    z.reserve(rewards.size());
    for (double r : rewards) {
        require(std::isfinite(r), "rewards must be finite");
        z.push_back(alpha_target * r);
    }
    return softmax(z);
}

double simpo_loss(double s_w, double s_l, double gamma_margin) {
    return softplus(-(s_w - s_l - gamma_margin));
}

LossBreakdown simpo_loss(const ScoreVector& scores, std::size_t winner,
                         std::size_t loser, double gamma_margin) {
    require(winner < scores.size() && loser < scores.size() && winner != loser,
            "SimPO needs two distinct response indices");
    const double z = scores[winner] - scores[loser] - gamma_margin;
    const double sig_neg = 1.0 / (1.0 + std::exp(z));  // sigmoid(-z)
    LossBreakdown out;
    out.loss = softplus(-z);
    out.score_grads.assign(scores.size(), 0.0);
    out.score_grads[winner] = -sig_neg;
    out.score_grads[loser] = sig_neg;
    out.components["contrastive"] = out.loss;
    return out;
}

LossBreakdown infonca_loss(const ScoreVector& scores, const std::vector<double>& rewards,
                           double alpha_target, const std::optional<ScoreVector>& ref_scores) {
    require(scores.size() == rewards.size(), "InfoNCA: scores/rewards length mismatch");
    if (ref_scores)
        require(ref_scores->size() == scores.size(),
                "InfoNCA: reference length mismatch");
    const auto target = target_distribution(rewards, alpha_target);
    std::vector<double> z = scores.values;
    if (ref_scores)
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= (*ref_scores)[i];
    const double lse = log_sum_exp(z);

    LossBreakdown out;
    out.score_grads.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double log_pm = z[i] - lse;
        if (target[i] > 0.0) out.loss -= target[i] * log_pm;
        out.score_grads[i] = std::exp(log_pm) - target[i];
    }
    out.components["contrastive"] = out.loss;
    return out;
}

LossBreakdown refa_dynamic_loss(const ScoreVector& scores, const Partition& part,
                                double gamma) {
    require(gamma > 0.0, "gamma must be > 0");
    check_partition(scores, part);
    if (part.degenerate())
        fail(ErrorKind::degenerate_group, "degenerate group: Y+ is empty");

    const double log_gamma = std::log(gamma);
    const double lse_pos = subset_lse(scores.values, part.positive);
    const double lse_neg = subset_lse(scores.values, part.negative);
    const double log_gneg = log_gamma + lse_neg;
    const double log_denom = log_add_exp(lse_pos, log_gneg);
    // 1 - P+/(P+ + gamma P-), kept accurate when the ratio is near 1.
    const double one_minus_ratio = -std::expm1(lse_pos - log_denom);

    LossBreakdown out;
    out.loss = log_gneg == kNegInf ? 0.0 : softplus(log_gneg - lse_pos);
    out.score_grads.assign(scores.size(), 0.0);
    for (std::size_t i : part.positive)
        out.score_grads[i] = -std::exp(scores[i] - lse_pos) * one_minus_ratio;
    for (std::size_t i : part.negative)
        out.score_grads[i] = std::exp(log_gamma + scores[i] - log_denom);
    out.components["contrastive"] = out.loss;
    return out;
}

std::size_t argmax_reward(const std::vector<double>& rewards) {
    require(!rewards.empty(), "argmax of empty rewards");
    return static_cast<std::size_t>(
        std::max_element(rewards.begin(), rewards.end()) - rewards.begin());
}

LossBreakdown refa_1vsall_loss(const ScoreVector& scores, const std::vector<double>& rewards,
                               const Hyperparams& hyper) {
    require(rewards.size() >= 2, "1-vs-all needs K >= 2");
    require(scores.size() == rewards.size(), "1-vs-all: scores/rewards length mismatch");
    hyper.validate();
    const std::size_t best = argmax_reward(rewards);
    Partition part;
    part.mean_reward = partition(rewards).mean_reward;
    part.positive.push_back(best);
    for (std::size_t i = 0; i < rewards.size(); ++i)
        if (i != best) part.negative.push_back(i);
    const auto dev = deviations(rewards, hyper.p, hyper.signed_power);
    const auto weighted = add_deviation(scores, dev, hyper.beta, hyper.alpha_dev,
                                        hyper.beta_scales_deviation);
    return refa_dynamic_loss(weighted, part, hyper.gamma);
}

LossBreakdown w_refa_loss(const PreferenceGroup& group, const Hyperparams& hyper,
                          const ScoreVector& policy_scores) {
    hyper.validate();
    require(policy_scores.size() == group.rewards.size(),
            "W-REFA: scores/rewards length mismatch");
    const auto part = partition(group);
    const auto dev = deviations(group, hyper.p, hyper.signed_power);
    const auto weighted = add_deviation(policy_scores, dev, hyper.beta, hyper.alpha_dev,
                                        hyper.beta_scales_deviation);
    return refa_dynamic_loss(weighted, part, hyper.gamma);
}

LossBreakdown mpo_loss(const PreferenceGroup& group, const Hyperparams& hyper,
                       const ScoreVector& policy_scores,
                       const std::optional<ScoreVector>& ref_scores) {
    if (!ref_scores) fail(ErrorKind::validation, "MPO requires reference scores");
    hyper.validate();
    const std::size_t k = group.rewards.size();
    require(policy_scores.size() == k && ref_scores->size() == k,
            "MPO: score/reward length mismatch");
    const auto part = partition(group);
    if (part.degenerate()) fail(ErrorKind::degenerate_group, "degenerate group: Y+ is empty");

    std::vector<double> logits(k);
    for (std::size_t i = 0; i < k; ++i)
        logits[i] = policy_scores[i] - (*ref_scores)[i] +
                    hyper.alpha_dev * (group.rewards[i] - part.mean_reward);
    const double lse_all = log_sum_exp(logits);
    const double lse_pos = subset_lse(logits, part.positive);

    LossBreakdown out;
    out.loss = lse_all - lse_pos;
    out.score_grads.resize(k);
    for (std::size_t i = 0; i < k; ++i) out.score_grads[i] = std::exp(logits[i] - lse_all);
    for (std::size_t i : part.positive) out.score_grads[i] -= std::exp(logits[i] - lse_pos);
    out.components["contrastive"] = out.loss;
    return out;
}

LossBreakdown composite_refa_loss(const PreferenceGroup& group, const Hyperparams& hyper,
                                  const ScoreVector& policy_scores, RegKind reg_kind) {
    hyper.validate();
    if (reg_kind != RegKind::none)
        for (std::size_t i = 0; i < group.responses.size(); ++i)
            require(group.responses[i].has_eos_probs(),
                    "regularizer '" + std::string(to_string(reg_kind)) +
                        "' needs eos_probs on response " + std::to_string(i));

    LossBreakdown out = hyper.alpha_dev > 0.0
                            ? w_refa_loss(group, hyper, policy_scores)
                            : refa_dynamic_loss(policy_scores, partition(group), hyper.gamma);
    const double contrastive = out.loss;
    if (reg_kind != RegKind::none) {
        RegReport reg = regularize(reg_kind, group.responses, hyper);
        out.reg_value = reg.value;
        out.eos_grads = std::move(reg.eos_grads);
    }
    out.components["contrastive"] = contrastive;
    out.components["regularizer"] = out.reg_value;
    out.loss = contrastive + out.reg_value;
    return out;
}

}  // namespace refa
