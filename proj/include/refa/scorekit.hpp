// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "refa/prefdata.hpp"

namespace refa {

enum class ScoreBasis { raw_sum, length_normalized };

const char* to_string(ScoreBasis basis);
ScoreBasis parse_basis(const std::string& text);

struct ScoreVector {
    std::vector<double> values;
    ScoreBasis basis = ScoreBasis::length_normalized;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

double seq_logprob(const ScoredResponse& r);
double norm_logprob(const ScoredResponse& r);
double avg_nll(const ScoredResponse& r);

ScoreVector base_scores(const PreferenceGroup& group, double beta,
                        ScoreBasis basis = ScoreBasis::length_normalized);

// Adds the reward-deviation term to already beta-scaled scores:
//   s + beta * alpha_dev * dS   (beta_scales_deviation, the default)
//   s + alpha_dev * dS          (otherwise)
ScoreVector add_deviation(const ScoreVector& scores, const DeviationVector& dev,
                          double beta, double alpha_dev,
                          bool beta_scales_deviation = true);

ScoreVector weighted_scores(const PreferenceGroup& group, double beta,
                            double alpha_dev, int p,
                            bool beta_scales_deviation = true,
                            ScoreBasis basis = ScoreBasis::length_normalized,
                            bool signed_power = false);

// Raw probabilities e^{-len*c} of two sequences with identical per-token
// log-probability -c. The shorter one always wins.
std::pair<double, double> length_inflation_demo(double c, int len_short,
                                                int len_long);

// Back-propagates dL/ds_i to dL/d token_logprobs[t] for every response.
std::vector<std::vector<double>> score_grads_to_token_grads(
    const PreferenceGroup& group, const std::vector<double>& score_grads,
    double beta, ScoreBasis basis);

}  // namespace refa
