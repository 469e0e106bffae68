// SPDX-License-Identifier: Apache-2.0
#include "refa/refa.h"

#include <exception>
#include <new>
#include <string>

#include "refa/error.hpp"
#include "refa/lab.hpp"
#include "refa/losskit.hpp"
#include "refa/regkit.hpp"
#include "refa/toypolicy.hpp"

struct refa_config {
    refa::LabConfig config;
};

struct refa_policy {
    refa::PolicyParams params;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_summary;

refa_status status_of(refa::ErrorKind kind) {
    switch (kind) {
        case refa::ErrorKind::validation: return REFA_ERR_VALIDATION;
        case refa::ErrorKind::parse: return REFA_ERR_PARSE;
        case refa::ErrorKind::degenerate_group: return REFA_ERR_DEGENERATE_GROUP;
        case refa::ErrorKind::infinite_penalty: return REFA_ERR_INFINITE_PENALTY;
        case refa::ErrorKind::oracle: return REFA_ERR_ORACLE;
        case refa::ErrorKind::io: return REFA_ERR_IO;
        case refa::ErrorKind::config: return REFA_ERR_CONFIG;
    }
    return REFA_ERR_INTERNAL;
}

template <class F>
refa_status guarded(F&& body) {
    g_last_error.clear();
    try {
        body();
        return REFA_OK;
    } catch (const refa::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown exception";
    }
    return REFA_ERR_INTERNAL;
}

refa_status null_arg(const char* what) {
    g_last_error = std::string(what) + " is NULL";
    return REFA_ERR_NULL_ARGUMENT;
}

}  // namespace

extern "C" {

const char* refa_version(void) { return "0.1.0"; }

const char* refa_status_string(refa_status status) {
    switch (status) {
        case REFA_OK: return "ok";
        case REFA_ERR_VALIDATION: return "validation error";
        case REFA_ERR_PARSE: return "parse error";
        case REFA_ERR_DEGENERATE_GROUP: return "degenerate group";
        case REFA_ERR_INFINITE_PENALTY: return "infinite penalty";
        case REFA_ERR_ORACLE: return "oracle error";
        case REFA_ERR_IO: return "i/o error";
        case REFA_ERR_CONFIG: return "config error";
        case REFA_ERR_NULL_ARGUMENT: return "null argument";
        case REFA_ERR_BUFFER_TOO_SMALL: return "buffer too small";
        case REFA_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* refa_last_error(void) { return g_last_error.c_str(); }

refa_status refa_config_create(refa_config** out) {
    if (!out) return null_arg("out");
    return guarded([&] { *out = new refa_config{}; });
}

void refa_config_destroy(refa_config* config) { delete config; }

refa_status refa_config_set(refa_config* config, const char* key, const char* value) {
    if (!config) return null_arg("config");
    if (!key) return null_arg("key");
    if (!value) return null_arg("value");
    return guarded([&] { config->config.set(key, value); });
}

refa_status refa_config_load_file(refa_config* config, const char* path) {
    if (!config) return null_arg("config");
    if (!path) return null_arg("path");
    return guarded([&] { config->config.load_file(path); });
}

refa_status refa_config_get(const refa_config* config, const char* key,
                            const char** value) {
    if (!config) return null_arg("config");
    if (!key) return null_arg("key");
    if (!value) return null_arg("value");
    return guarded([&] { *value = config->config.get(key).c_str(); });
}

size_t refa_config_key_count(void) { return refa::config_keys().size(); }

refa_status refa_config_key_info(size_t index, const char** name,
                                 const char** default_value, const char** help) {
    const auto& keys = refa::config_keys();
    if (index >= keys.size()) {
        g_last_error = "key index out of range";
        return REFA_ERR_VALIDATION;
    }
    g_last_error.clear();
    if (name) *name = keys[index].name.c_str();
    if (default_value) *default_value = keys[index].default_value.c_str();
    if (help) *help = keys[index].help.c_str();
    return REFA_OK;
}

size_t refa_command_count(void) { return refa::command_names().size(); }

const char* refa_command_name(size_t index) {
    const auto& names = refa::command_names();
    return index < names.size() ? names[index].c_str() : nullptr;
}

refa_status refa_run_command(const char* name, const refa_config* config,
                             int* exit_code, const char** summary) {
    if (!name) return null_arg("name");
    if (!config) return null_arg("config");
    if (!exit_code) return null_arg("exit_code");
    return guarded([&] {
        auto res = refa::run_command(name, config->config);
        *exit_code = res.exit_code;
        g_summary = res.summary;
        if (summary) *summary = g_summary.c_str();
    });
}

refa_status refa_simpo_loss(double s_w, double s_l, double gamma_margin, double* loss) {
    if (!loss) return null_arg("loss");
    return guarded([&] { *loss = refa::simpo_loss(s_w, s_l, gamma_margin); });
}

refa_status refa_dynamic_loss(const double* scores, const int* positive_mask, size_t k,
                              double gamma, double* loss, double* grads) {
    if (!scores) return null_arg("scores");
    if (!positive_mask) return null_arg("positive_mask");
    if (!loss) return null_arg("loss");
    return guarded([&] {
        refa::ScoreVector sv{std::vector<double>(scores, scores + k),
                             refa::ScoreBasis::length_normalized};
        refa::Partition part;
        for (size_t i = 0; i < k; ++i)
            (positive_mask[i] ? part.positive : part.negative).push_back(i);
        auto b = refa::refa_dynamic_loss(sv, part, gamma);
        *loss = b.loss;
        if (grads)
            for (size_t i = 0; i < k; ++i) grads[i] = b.score_grads[i];
    });
}

refa_status refa_infonca_loss(const double* scores, const double* rewards, size_t k,
                              double alpha_target, const double* ref_scores,
                              double* loss, double* grads) {
    if (!scores) return null_arg("scores");
    if (!rewards) return null_arg("rewards");
    if (!loss) return null_arg("loss");
    return guarded([&] {
        refa::ScoreVector sv{std::vector<double>(scores, scores + k),
                             refa::ScoreBasis::length_normalized};
        std::optional<refa::ScoreVector> ref;
        if (ref_scores)
            ref = refa::ScoreVector{std::vector<double>(ref_scores, ref_scores + k),
                                    refa::ScoreBasis::length_normalized};
        auto b = refa::infonca_loss(sv, std::vector<double>(rewards, rewards + k),
                                    alpha_target, ref);
        *loss = b.loss;
        if (grads)
            for (size_t i = 0; i < k; ++i) grads[i] = b.score_grads[i];
    });
}

refa_status refa_budgeted_reg(const double* eos_probs, size_t length, double lambda,
                              int budget, double* value) {
    if (!eos_probs) return null_arg("eos_probs");
    if (!value) return null_arg("value");
    return guarded([&] {
        refa::ScoredResponse r;
        r.tokens.assign(length, 0);
        r.eos_probs.assign(eos_probs, eos_probs + length);
        *value = refa::budgeted_reg(r, lambda, budget);
    });
}

refa_status refa_policy_create(int vocab_size, uint64_t seed, double scale,
                               refa_policy** out) {
    if (!out) return null_arg("out");
    return guarded([&] {
        *out = new refa_policy{refa::init_policy(vocab_size, seed, scale)};
    });
}

refa_status refa_policy_load(const char* path, refa_policy** out) {
    if (!path) return null_arg("path");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new refa_policy{refa::load_policy(path)}; });
}

refa_status refa_policy_save(const refa_policy* policy, const char* path) {
    if (!policy) return null_arg("policy");
    if (!path) return null_arg("path");
    return guarded([&] { refa::save_policy(policy->params, path); });
}

void refa_policy_destroy(refa_policy* policy) { delete policy; }

int refa_policy_vocab_size(const refa_policy* policy) {
    return policy ? policy->params.vocab_size : 0;
}

refa_status refa_policy_sample(const refa_policy* policy, int max_len, uint64_t seed,
                               int32_t* tokens, size_t capacity, size_t* length) {
    if (!policy) return null_arg("policy");
    if (!length) return null_arg("length");
    if (!tokens && capacity > 0) return null_arg("tokens");
    refa_status st = guarded([&] {
        auto seq = refa::sample(policy->params, max_len, seed);
        *length = seq.size();
        if (seq.size() > capacity) return;
        for (size_t i = 0; i < seq.size(); ++i) tokens[i] = seq[i];
    });
    if (st == REFA_OK && *length > capacity) {
        g_last_error = "need " + std::to_string(*length) + " tokens of capacity";
        return REFA_ERR_BUFFER_TOO_SMALL;
    }
    return st;
}

refa_status refa_policy_score(const refa_policy* policy, const int32_t* tokens,
                              size_t length, double* seq_logprob) {
    if (!policy) return null_arg("policy");
    if (!tokens && length > 0) return null_arg("tokens");
    if (!seq_logprob) return null_arg("seq_logprob");
    return guarded([&] {
        auto r = refa::token_logprobs(policy->params,
                                      std::vector<refa::TokenId>(tokens, tokens + length));
        *seq_logprob = refa::seq_logprob(r);
    });
}

}  // extern "C"
