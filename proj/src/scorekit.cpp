// SPDX-License-Identifier: Apache-2.0
#include "refa/scorekit.hpp"

#include <cmath>
#include <numeric>

#include "refa/error.hpp"

namespace refa {

const char* to_string(ScoreBasis basis) {
    return basis == ScoreBasis::raw_sum ? "raw_sum" : "length_normalized";
}

ScoreBasis parse_basis(const std::string& text) {
    if (text == "raw_sum") return ScoreBasis::raw_sum;
    if (text == "length_normalized") return ScoreBasis::length_normalized;
    fail(ErrorKind::validation, "unknown score basis '" + text + "'");
}

double seq_logprob(const ScoredResponse& r) {
    require(r.has_logprobs(), "response has no token_logprobs");
    return std::accumulate(r.token_logprobs.begin(), r.token_logprobs.end(), 0.0);
}

double norm_logprob(const ScoredResponse& r) {
    return seq_logprob(r) / static_cast<double>(r.token_logprobs.size());
}

double avg_nll(const ScoredResponse& r) { return -norm_logprob(r); }

ScoreVector base_scores(const PreferenceGroup& group, double beta, ScoreBasis basis) {
    require(beta > 0.0, "beta must be > 0");
    ScoreVector out;
    out.basis = basis;
    out.values.reserve(group.responses.size());
    for (const auto& r : group.responses) {
        const double lp =
            basis == ScoreBasis::length_normalized ? norm_logprob(r) : seq_logprob(r);
        out.values.push_back(beta * lp);
    }
    return out;
}

ScoreVector add_deviation(const ScoreVector& scores, const DeviationVector& dev,
                          double beta, double alpha_dev, bool beta_scales_deviation) {
    require(scores.size() == dev.values.size(), "score/deviation length mismatch");
    const double scale = beta_scales_deviation ? beta * alpha_dev : alpha_dev;
    ScoreVector out = scores;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] += scale * dev.values[i];
    return out;
}

ScoreVector weighted_scores(const PreferenceGroup& group, double beta,
                            double alpha_dev, int p, bool beta_scales_deviation,
                            ScoreBasis basis, bool signed_power) {
    auto dev = deviations(group, p, signed_power);
    return add_deviation(base_scores(group, beta, basis), dev, beta, alpha_dev,
                         beta_scales_deviation);
}

std::pair<double, double> length_inflation_demo(double c, int len_short, int len_long) {
    require(c > 0.0, "per-token cost c must be > 0");
    require(len_short > 0 && len_long > 0, "lengths must be positive");
    require(len_short < len_long, "len_short must be < len_long");
    return {std::exp(-len_short * c), std::exp(-len_long * c)};
}

std::vector<std::vector<double>> score_grads_to_token_grads(
    const PreferenceGroup& group, const std::vector<double>& score_grads,
    double beta, ScoreBasis basis) {
    require(score_grads.size() == group.responses.size(), "score grad length mismatch");
    std::vector<std::vector<double>> out;
    out.reserve(group.responses.size());
    for (std::size_t i = 0; i < group.responses.size(); ++i) {
        const std::size_t n = group.responses[i].tokens.size();
        const double per_token = basis == ScoreBasis::length_normalized
                                     ? beta * score_grads[i] / static_cast<double>(n)
                                     : beta * score_grads[i];
        out.emplace_back(n, per_token);
    }
    return out;
}

}  // namespace refa
