// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refa/prefdata.hpp"
#include "refa/scorekit.hpp"

namespace refa {

enum class RegKind { none, targeted, budget_independent, budgeted, generic };

const char* to_string(RegKind kind);
RegKind parse_reg_kind(const std::string& text);

struct Hyperparams {
    double alpha_target = 1.0;  // target-distribution temperature
    double alpha_dev = 1.0;     // reward-deviation weight
    int p = 1;                  // deviation power
    double beta = 2.5;
    double gamma = 2.0;         // negative-set penalty
    double gamma_margin = 0.0;  // SimPO margin
    double lambda = 0.0;
    int budget = 16;
    int target_length = 0;      // 0: per-group maximum |y|
    bool beta_scales_deviation = true;
    bool signed_power = false;

    void validate() const;
};

struct LossBreakdown {
    double loss = 0.0;
    std::vector<double> score_grads;
    // dL/d eos_probs[t] per response; empty when no regularizer is active.
    std::vector<std::vector<double>> eos_grads;
    double reg_value = 0.0;
    std::map<std::string, double> components{{"contrastive", 0.0},
                                             {"regularizer", 0.0}};
};

double log_sum_exp(std::span<const double> xs);
double softplus(double x);
std::vector<double> softmax(std::span<const double> logits);

std::vector<double> target_distribution(const std::vector<double>& rewards,
                                        double alpha_target);

// -log sigmoid(s_w - s_l - margin) on beta-scaled scores.
double simpo_loss(double s_w, double s_l, double gamma_margin);
LossBreakdown simpo_loss(const ScoreVector& scores, std::size_t winner,
                         std::size_t loser, double gamma_margin);

// Cross-entropy between softmax(alpha_target * r) and softmax(scores - ref).
LossBreakdown infonca_loss(const ScoreVector& scores,
                           const std::vector<double>& rewards,
                           double alpha_target,
                           const std::optional<ScoreVector>& ref_scores = {});

// -log(P+ / (P+ + gamma P-)) with P± = sum over Y± of e^{s_i}.
LossBreakdown refa_dynamic_loss(const ScoreVector& scores,
                                const Partition& partition, double gamma);

// Lowest index among the maximal rewards.
std::size_t argmax_reward(const std::vector<double>& rewards);

LossBreakdown refa_1vsall_loss(const ScoreVector& scores,
                               const std::vector<double>& rewards,
                               const Hyperparams& hyper);

// policy_scores are base scores (beta * normalized log-prob); the deviation
// term is added here before the contrast.
LossBreakdown w_refa_loss(const PreferenceGroup& group, const Hyperparams& hyper,
                          const ScoreVector& policy_scores);

// Reference-based multi-preference baseline. Scores are beta-scaled, so the
// contrast logits are (policy - ref) + alpha_dev * (r - r_bar).
LossBreakdown mpo_loss(const PreferenceGroup& group, const Hyperparams& hyper,
                       const ScoreVector& policy_scores,
                       const std::optional<ScoreVector>& ref_scores);

// refa_dynamic (alpha_dev == 0) or w_refa, plus the selected EOS regularizer.
LossBreakdown composite_refa_loss(const PreferenceGroup& group,
                                  const Hyperparams& hyper,
                                  const ScoreVector& policy_scores,
                                  RegKind reg_kind);

}  // namespace refa
