// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "refa/losskit.hpp"
#include "refa/prefdata.hpp"

namespace refa {

struct RegReport {
    double value = 0.0;
    std::vector<double> per_response;
    // d value / d eos_probs[t], same shape as the responses' eos_probs.
    std::vector<std::vector<double>> eos_grads;
    RegKind kind = RegKind::none;
    double lambda = 0.0;
    int target_length = 0;
    int budget = 0;
};

// target_length <= 0 selects the group maximum |y|.
RegReport targeted_reg(const std::vector<ScoredResponse>& responses,
                       double lambda, int target_length = 0);

RegReport budget_indep_reg(const std::vector<ScoredResponse>& responses,
                           double lambda);

double budgeted_reg(const ScoredResponse& response, double lambda, int budget);
std::vector<double> budgeted_reg_grad(const ScoredResponse& response,
                                      double lambda, int budget);
RegReport budgeted_reg(const std::vector<ScoredResponse>& responses,
                       double lambda, int budget);

RegReport generic_eos_reg(const std::vector<ScoredResponse>& responses,
                          double lambda);

RegReport regularize(RegKind kind, const std::vector<ScoredResponse>& responses,
                     const Hyperparams& hyper);

// (sum over Y+, sum over Y-) of the per-response contributions.
std::pair<double, double> split_by_partition(const RegReport& report,
                                             const Partition& partition);

}  // namespace refa
