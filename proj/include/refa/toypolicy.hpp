// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refa/losskit.hpp"
#include "refa/prefdata.hpp"
#include "refa/rng.hpp"
#include "refa/scorekit.hpp"

namespace refa {

// Tabular bigram policy. Row = previous token (BOS for position 1), column =
// next token. eos_position_bias, when non-empty, adds bias[t-1] to the EOS
// logit at 1-indexed position t; it stays empty for a pure bigram.
struct PolicyParams {
    int vocab_size = 0;
    TokenId bos = 0;
    TokenId eos = 1;
    std::vector<double> logits;  // row-major V x V
    std::vector<double> eos_position_bias;

    double& at(TokenId row, TokenId col) { return logits[row * vocab_size + col]; }
    double at(TokenId row, TokenId col) const {
        return logits[row * vocab_size + col];
    }
};

PolicyParams init_policy(int vocab_size, std::uint64_t seed, double scale,
                         TokenId bos = 0, TokenId eos = 1);

// Next-token distribution after prev at 1-indexed position.
std::vector<double> next_token_probs(const PolicyParams& params, TokenId prev,
                                     std::size_t position);

ScoredResponse token_logprobs(const PolicyParams& params,
                              const std::vector<TokenId>& tokens);
void rescore(const PolicyParams& params, PreferenceGroup& group);

// Ancestral sampling from the BOS row until EOS (included) or max_len.
std::vector<TokenId> sample(const PolicyParams& params, int max_len,
                            std::uint64_t seed);
std::vector<TokenId> sample(const PolicyParams& params, int max_len, Rng& rng,
                            const std::vector<TokenId>& prefix = {});

struct PolicyGrad {
    std::vector<double> logits;
    std::vector<double> eos_position_bias;
};

// Chain rule from a LossBreakdown over this policy's scores to the logits.
PolicyGrad policy_grad(const PolicyParams& params, const PreferenceGroup& group,
                       const LossBreakdown& breakdown, double beta,
                       ScoreBasis basis = ScoreBasis::length_normalized);

enum class LossKind { refa_dynamic, w_refa, composite };
const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

enum class DataMode { offline, on_policy };

struct OnPolicySpec {
    int groups = 64;
    int k = 4;
    int max_len = 48;
    std::uint64_t reward_seed = 7;
};

struct TrainConfig {
    Hyperparams hyper;
    double learning_rate = 1.0;
    int epochs = 1;
    int batch_size = 0;  // 0: full batch
    std::uint64_t seed = 1234;
    LossKind loss_kind = LossKind::refa_dynamic;
    RegKind reg_kind = RegKind::none;
    bool skip_degenerate = true;
    ScoreBasis basis = ScoreBasis::length_normalized;
    bool train_position_bias = false;
    DataMode data_mode = DataMode::offline;
    OnPolicySpec on_policy;
    int eval_samples = 200;
    int max_len = 64;

    void validate() const;
};

struct StepMetrics {
    double mean_loss = 0.0;
    double mean_reg = 0.0;
    int groups_used = 0;
    int groups_skipped = 0;
    double eos_final_pos = 0.0;
    double eos_final_neg = 0.0;
    int count_pos = 0;
    int count_neg = 0;
};

// One full-gradient update over the batch, averaged over usable groups.
// Groups are rescored with the current params before the loss.
StepMetrics train_step(PolicyParams& params, std::vector<PreferenceGroup>& batch,
                       const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_reg = 0.0;
    double mean_len_pos = 0.0;
    double mean_len_neg = 0.0;
    double mean_eos_final_pos = 0.0;
    double mean_eos_final_neg = 0.0;
    double mean_len_sampled = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    double initial_mean_len = 0.0;
};

TrainHistory train(PolicyParams& params, std::vector<PreferenceGroup> dataset,
                   const TrainConfig& config);

std::string history_csv(const TrainHistory& history);

struct LengthStats {
    double mean = 0.0;
    std::vector<int> lengths;
};

LengthStats sampled_lengths(const PolicyParams& params, int samples, int max_len,
                            std::uint64_t seed,
                            const std::vector<TokenId>& prefix = {});

struct SyntheticSpec {
    int groups = 200;
    int k = 4;
    int positives = 2;
    double pos_mean_len = 6.0;
    double neg_mean_len = 18.0;
    int vocab_size = 12;
    TokenId bos = 0;
    TokenId eos = 1;
    int max_len = 64;
    std::uint64_t seed = 1234;
};

// Short high-reward positives and long zero-reward negatives over one shared
// content vocabulary; only the length distribution separates the classes.
std::vector<PreferenceGroup> synthetic_dataset(const SyntheticSpec& spec);

// Groups sampled from the policy itself, rewarded by a fixed per-token
// quality table (mean over content tokens, so reward is length-neutral).
std::vector<PreferenceGroup> on_policy_groups(const PolicyParams& params,
                                              const OnPolicySpec& spec,
                                              std::uint64_t seed);

// Positive control for the uncertainty-vs-length probe: a chain policy whose
// per-step confidence rises along the chain.
PolicyParams confidence_ramp_policy(int vocab_size, TokenId bos = 0,
                                    TokenId eos = 1);

void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace refa
