// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace refa {

using TokenId = std::int32_t;

// One candidate response. token_logprobs / eos_probs are empty when the
// record carried no scores (policy mode fills them in later).
//
// eos_probs[t] is the probability that the token at 1-indexed position t+1
// is EOS given the realized prefix y_<t, so eos_probs.back() is the
// probability of terminating at position |y|.
struct ScoredResponse {
    std::vector<TokenId> tokens;
    std::vector<double> token_logprobs;
    std::vector<double> eos_probs;

    std::size_t length() const { return tokens.size(); }
    bool has_logprobs() const { return !token_logprobs.empty(); }
    bool has_eos_probs() const { return !eos_probs.empty(); }
    double eos_prob_at_final() const { return eos_probs.back(); }
};

struct PreferenceGroup {
    std::string query_id;
    std::vector<ScoredResponse> responses;
    std::vector<double> rewards;

    std::size_t size() const { return responses.size(); }
};

struct Partition {
    std::vector<std::size_t> positive;
    std::vector<std::size_t> negative;
    double mean_reward = 0.0;

    bool degenerate() const { return positive.empty(); }
    // Per-index membership flag, true for Y+.
    std::vector<bool> positive_mask(std::size_t k) const;
};

struct DeviationVector {
    std::vector<double> values;
    int power = 1;
};

// Throws refa::Error(validation) when the group breaks the K >= 2,
// matched-length or non-empty-token invariants.
void validate(const PreferenceGroup& group);

// Score-carrying fields must be absent or match |tokens|, with
// logprobs <= 0 and eos probabilities in [0, 1].
void validate_scores(const ScoredResponse& response);

// Parses one record line; line_no is only used in messages.
PreferenceGroup parse_group(const std::string& line, std::size_t line_no);

std::vector<PreferenceGroup> load_groups(std::istream& source);
std::vector<PreferenceGroup> load_groups_file(const std::string& path);

struct LineError {
    std::size_t line_no = 0;
    std::string message;
};

// Keeps going past bad lines; returns groups in file order plus per-line errors.
struct LenientLoad {
    std::vector<PreferenceGroup> groups;
    std::vector<std::size_t> group_lines;
    std::vector<LineError> errors;
};
LenientLoad load_groups_lenient(std::istream& source);

std::string to_json_line(const PreferenceGroup& group);

Partition partition(const PreferenceGroup& group);
Partition partition(const std::vector<double>& rewards);

// (r_i - r_bar)^p for p in {0, 1, 2}; with signed_power the sign of the
// deviation is kept: sign(d) * |d|^p.
DeviationVector deviations(const std::vector<double>& rewards, int p,
                           bool signed_power = false);
DeviationVector deviations(const PreferenceGroup& group, int p,
                           bool signed_power = false);

}  // namespace refa
