// SPDX-License-Identifier: Apache-2.0
#include "refa/toypolicy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "refa/error.hpp"
#include "refa/regkit.hpp"

namespace refa {

PolicyParams init_policy(int vocab_size, std::uint64_t seed, double scale, TokenId bos,
                         TokenId eos) {
    require(vocab_size >= 3, "vocab_size must be >= 3");
    require(scale >= 0.0, "init scale must be >= 0");
    require(bos >= 0 && bos < vocab_size && eos >= 0 && eos < vocab_size && bos != eos,
            "bos/eos ids must be distinct and inside the vocabulary");
    PolicyParams p;
    p.vocab_size = vocab_size;
    p.bos = bos;
    p.eos = eos;
    p.logits.assign(static_cast<std::size_t>(vocab_size) * vocab_size, 0.0);
    if (scale > 0.0) {
        Rng rng(seed);
        for (double& v : p.logits) v = scale * rng.normal();
    }
    return p;
}

namespace {

void row_logits(const PolicyParams& params, TokenId prev, std::size_t position,
                std::vector<double>& out) {
    const auto v = static_cast<std::size_t>(params.vocab_size);
    out.assign(params.logits.begin() + prev * v, params.logits.begin() + (prev + 1) * v);
    if (position >= 1 && position - 1 < params.eos_position_bias.size())
        out[params.eos] += params.eos_position_bias[position - 1];
}

void check_token(const PolicyParams& params, TokenId t) {
    if (t < 0 || t >= params.vocab_size)
        fail(ErrorKind::validation, "token id " + std::to_string(t) +
                                        " outside vocabulary of size " +
                                        std::to_string(params.vocab_size));
}

}  // namespace

std::vector<double> next_token_probs(const PolicyParams& params, TokenId prev,
                                     std::size_t position) {
    check_token(params, prev);
    std::vector<double> z;
    row_logits(params, prev, position, z);
    return softmax(z);
}

ScoredResponse token_logprobs(const PolicyParams& params, const std::vector<TokenId>& tokens) {
    ScoredResponse r;
    r.tokens = tokens;
    r.token_logprobs.reserve(tokens.size());
    r.eos_probs.reserve(tokens.size());
    std::vector<double> z;
    TokenId prev = params.bos;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        check_token(params, tokens[t]);
        row_logits(params, prev, t + 1, z);
        const double lse = log_sum_exp(z);
        r.token_logprobs.push_back(std::min(0.0, z[tokens[t]] - lse));
        r.eos_probs.push_back(std::exp(z[params.eos] - lse));
        prev = tokens[t];
    }
    return r;
}

void rescore(const PolicyParams& params, PreferenceGroup& group) {
    for (auto& r : group.responses) r = token_logprobs(params, r.tokens);
}

std::vector<TokenId> sample(const PolicyParams& params, int max_len, Rng& rng,
                            const std::vector<TokenId>& prefix) {
    require(max_len >= 1, "max_len must be >= 1");
    std::vector<TokenId> seq = prefix;
    if (!seq.empty() && seq.back() == params.eos) return seq;
    TokenId prev = seq.empty() ? params.bos : seq.back();
    std::vector<double> z;
    while (static_cast<int>(seq.size()) < max_len) {
        row_logits(params, prev, seq.size() + 1, z);
        const auto probs = softmax(z);
        double u = rng.uniform();
        TokenId next = static_cast<TokenId>(probs.size() - 1);
        for (std::size_t c = 0; c < probs.size(); ++c) {
            if (u < probs[c]) {
                next = static_cast<TokenId>(c);
                break;
            }
            u -= probs[c];
        }
        seq.push_back(next);
        if (next == params.eos) break;
        prev = next;
    }
    return seq;
}

std::vector<TokenId> sample(const PolicyParams& params, int max_len, std::uint64_t seed) {
    Rng rng(seed);
    return sample(params, max_len, rng);
}

PolicyGrad policy_grad(const PolicyParams& params, const PreferenceGroup& group,
                       const LossBreakdown& breakdown, double beta, ScoreBasis basis) {
    require(breakdown.score_grads.size() == group.responses.size(),
            "breakdown does not match the group");
    const auto v = static_cast<std::size_t>(params.vocab_size);
    PolicyGrad grad;
    grad.logits.assign(params.logits.size(), 0.0);
    grad.eos_position_bias.assign(params.eos_position_bias.size(), 0.0);

    const auto token_grads =
        score_grads_to_token_grads(group, breakdown.score_grads, beta, basis);
    std::vector<double> z;
    for (std::size_t i = 0; i < group.responses.size(); ++i) {
        const auto& tokens = group.responses[i].tokens;
        const bool has_eos_grad = i < breakdown.eos_grads.size() &&
                                  breakdown.eos_grads[i].size() == tokens.size();
        TokenId prev = params.bos;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            const double g_tok = token_grads[i][t];
            const double g_eos = has_eos_grad ? breakdown.eos_grads[i][t] : 0.0;
            if (g_tok != 0.0 || g_eos != 0.0) {
                row_logits(params, prev, t + 1, z);
                const auto probs = softmax(z);
                const double p_eos = probs[params.eos];
                double* row = grad.logits.data() + prev * v;
                // d log p_y / dz_c = 1[c=y] - p_c ; d p_eos / dz_c = p_eos (1[c=eos] - p_c)
                for (std::size_t c = 0; c < v; ++c)
                    row[c] -= (g_tok + g_eos * p_eos) * probs[c];
                row[tokens[t]] += g_tok;
                row[params.eos] += g_eos * p_eos;
                if (t < grad.eos_position_bias.size()) {
                    grad.eos_position_bias[t] +=
                        g_tok * ((tokens[t] == params.eos ? 1.0 : 0.0) - p_eos) +
                        g_eos * p_eos * (1.0 - p_eos);
                }
            }
            prev = tokens[t];
        }
    }
    return grad;
}

const char* to_string(LossKind kind) {
    switch (kind) {
        case LossKind::refa_dynamic: return "refa_dynamic";
        case LossKind::w_refa: return "w_refa";
        case LossKind::composite: return "composite";
    }
    return "refa_dynamic";
}

LossKind parse_loss_kind(const std::string& text) {
    for (LossKind k : {LossKind::refa_dynamic, LossKind::w_refa, LossKind::composite})
        if (text == to_string(k)) return k;
    fail(ErrorKind::validation, "unknown loss kind '" + text + "'");
}

void TrainConfig::validate() const {
    hyper.validate();
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 0, "batch_size must be >= 0");
    require(eval_samples >= 0, "eval_samples must be >= 0");
    require(max_len >= 1, "max_len must be >= 1");
    if (data_mode == DataMode::on_policy)
        require(on_policy.groups >= 1 && on_policy.k >= 2 && on_policy.max_len >= 1,
                "invalid on-policy generation settings");
}

StepMetrics train_step(PolicyParams& params, std::vector<PreferenceGroup>& batch,
                       const TrainConfig& config) {
    require(!batch.empty(), "train_step needs a non-empty batch");
    const Hyperparams& h = config.hyper;
    std::vector<double> g_logits(params.logits.size(), 0.0);
    std::vector<double> g_bias(params.eos_position_bias.size(), 0.0);
    StepMetrics m;
    double loss_sum = 0.0, reg_sum = 0.0, eos_pos = 0.0, eos_neg = 0.0;

    for (auto& group : batch) {
        rescore(params, group);
        const auto part = partition(group);
        if (part.degenerate()) {
            if (!config.skip_degenerate)
                fail(ErrorKind::degenerate_group,
                     "degenerate group '" + group.query_id + "': Y+ is empty");
            ++m.groups_skipped;
            continue;
        }
        const ScoreVector scores = base_scores(group, h.beta, config.basis);
        LossBreakdown b;
        switch (config.loss_kind) {
            case LossKind::refa_dynamic: b = refa_dynamic_loss(scores, part, h.gamma); break;
            case LossKind::w_refa: b = w_refa_loss(group, h, scores); break;
            case LossKind::composite:
                b = composite_refa_loss(group, h, scores, config.reg_kind);
                break;
        }
        const PolicyGrad pg = policy_grad(params, group, b, h.beta, config.basis);
        for (std::size_t j = 0; j < g_logits.size(); ++j) g_logits[j] += pg.logits[j];
        for (std::size_t j = 0; j < g_bias.size(); ++j) g_bias[j] += pg.eos_position_bias[j];
        loss_sum += b.loss;
        reg_sum += b.reg_value;
        for (std::size_t i : part.positive) eos_pos += group.responses[i].eos_prob_at_final();
        for (std::size_t i : part.negative) eos_neg += group.responses[i].eos_prob_at_final();
        m.count_pos += static_cast<int>(part.positive.size());
        m.count_neg += static_cast<int>(part.negative.size());
        ++m.groups_used;
    }
    if (m.groups_used == 0)
        fail(ErrorKind::degenerate_group, "empty batch: every group is degenerate");

    const double scale = config.learning_rate / m.groups_used;
    for (std::size_t j = 0; j < g_logits.size(); ++j) params.logits[j] -= scale * g_logits[j];
    if (config.train_position_bias)
        for (std::size_t j = 0; j < g_bias.size(); ++j)
            params.eos_position_bias[j] -= scale * g_bias[j];

    m.mean_loss = loss_sum / m.groups_used;
    m.mean_reg = reg_sum / m.groups_used;
    m.eos_final_pos = m.count_pos ? eos_pos / m.count_pos : 0.0;
    m.eos_final_neg = m.count_neg ? eos_neg / m.count_neg : 0.0;
    return m;
}

LengthStats sampled_lengths(const PolicyParams& params, int samples, int max_len,
                            std::uint64_t seed, const std::vector<TokenId>& prefix) {
    LengthStats out;
    Rng rng(seed);
    double total = 0.0;
    for (int s = 0; s < samples; ++s) {
        const int len = static_cast<int>(sample(params, max_len, rng, prefix).size());
        out.lengths.push_back(len);
        total += len;
    }
    out.mean = samples > 0 ? total / samples : 0.0;
    return out;
}

namespace {

// Mean length of continuations that start from each class's first tokens.
double class_length(const PolicyParams& params, const std::vector<TokenId>& firsts,
                    int samples, int max_len, std::uint64_t seed) {
    if (firsts.empty() || samples == 0) return 0.0;
    Rng rng(seed);
    double total = 0.0;
    for (int s = 0; s < samples; ++s) {
        const TokenId first = firsts[static_cast<std::size_t>(s) % firsts.size()];
        total += static_cast<double>(sample(params, max_len, rng, {first}).size());
    }
    return total / samples;
}

}  // namespace

TrainHistory train(PolicyParams& params, std::vector<PreferenceGroup> dataset,
                   const TrainConfig& config) {
    config.validate();
    const bool on_policy = config.data_mode == DataMode::on_policy;
    if (!on_policy) require(!dataset.empty(), "training dataset is empty");
    if (config.train_position_bias && params.eos_position_bias.empty())
        params.eos_position_bias.assign(static_cast<std::size_t>(config.max_len), 0.0);

    const std::uint64_t eval_seed = derive_seed(config.seed, 0xE7A1);
    TrainHistory history;
    history.initial_mean_len =
        sampled_lengths(params, config.eval_samples, config.max_len, eval_seed).mean;
    Rng shuffle_rng(derive_seed(config.seed, 1));

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (on_policy)
            dataset = on_policy_groups(params, config.on_policy,
                                       derive_seed(config.seed, 1000 + epoch));
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        const std::size_t bs = config.batch_size > 0
                                   ? static_cast<std::size_t>(config.batch_size)
                                   : order.size();
        double loss = 0.0, reg = 0.0, eos_pos = 0.0, eos_neg = 0.0;
        int used = 0, n_pos = 0, n_neg = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::vector<PreferenceGroup> batch;
            for (std::size_t j = start; j < std::min(order.size(), start + bs); ++j)
                batch.push_back(std::move(dataset[order[j]]));
            StepMetrics m;
            try {
                m = train_step(params, batch, config);
            } catch (const Error& e) {
                // Fully degenerate on-policy batches are skipped, never fatal.
                if (!(on_policy && config.skip_degenerate &&
                      e.kind() == ErrorKind::degenerate_group))
                    throw;
            }
            for (std::size_t j = start, b = 0; j < std::min(order.size(), start + bs); ++j, ++b)
                dataset[order[j]] = std::move(batch[b]);
            loss += m.mean_loss * m.groups_used;
            reg += m.mean_reg * m.groups_used;
            eos_pos += m.eos_final_pos * m.count_pos;
            eos_neg += m.eos_final_neg * m.count_neg;
            used += m.groups_used;
            n_pos += m.count_pos;
            n_neg += m.count_neg;
        }

        std::vector<TokenId> pos_first, neg_first;
        for (const auto& g : dataset) {
            const auto part = partition(g);
            for (std::size_t i : part.positive) pos_first.push_back(g.responses[i].tokens.front());
            for (std::size_t i : part.negative) neg_first.push_back(g.responses[i].tokens.front());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = used ? loss / used : 0.0;
        rec.mean_reg = used ? reg / used : 0.0;
        rec.mean_eos_final_pos = n_pos ? eos_pos / n_pos : 0.0;
        rec.mean_eos_final_neg = n_neg ? eos_neg / n_neg : 0.0;
        rec.mean_len_pos = class_length(params, pos_first, config.eval_samples, config.max_len,
                                        derive_seed(eval_seed, 1));
        rec.mean_len_neg = class_length(params, neg_first, config.eval_samples, config.max_len,
                                        derive_seed(eval_seed, 2));
        rec.mean_len_sampled =
            sampled_lengths(params, config.eval_samples, config.max_len, eval_seed).mean;
        history.records.push_back(rec);
    }
    return history;
}

std::string history_csv(const TrainHistory& history) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,mean_loss,mean_reg,mean_len_pos,mean_len_neg,mean_eos_final_pos,"
          "mean_eos_final_neg\n";
    for (const auto& r : history.records)
        os << r.epoch << ',' << r.mean_loss << ',' << r.mean_reg << ',' << r.mean_len_pos << ','
           << r.mean_len_neg << ',' << r.mean_eos_final_pos << ',' << r.mean_eos_final_neg
           << '\n';
    return os.str();
}

std::vector<PreferenceGroup> synthetic_dataset(const SyntheticSpec& spec) {
    require(spec.vocab_size >= 4, "synthetic vocabulary needs >= 4 tokens");
    require(spec.k >= 2 && spec.positives >= 1 && spec.positives < spec.k,
            "synthetic groups need 1 <= positives < k");
    require(spec.pos_mean_len > 1.0 && spec.neg_mean_len > 1.0, "mean lengths must be > 1");
    require(spec.max_len >= 2, "max_len must be >= 2");

    std::vector<TokenId> content;
    for (TokenId t = 0; t < spec.vocab_size; ++t)
        if (t != spec.bos && t != spec.eos) content.push_back(t);

    Rng rng(spec.seed);
    auto draw = [&](double mean_len) {
        // content count ~ Geometric(q) on {1, 2, ...} with mean (mean_len - 1)
        const double q = 1.0 / (mean_len - 1.0);
        int count = 1;
        if (q < 1.0) {
            const double u = 1.0 - rng.uniform();
            count = 1 + static_cast<int>(std::floor(std::log(u) / std::log(1.0 - q)));
        }
        count = std::min(count, spec.max_len - 1);
        ScoredResponse r;
        for (int t = 0; t < count; ++t) r.tokens.push_back(content[rng.index(content.size())]);
        r.tokens.push_back(spec.eos);
        return r;
    };

    std::vector<PreferenceGroup> out;
    for (int g = 0; g < spec.groups; ++g) {
        PreferenceGroup group;
        group.query_id = "synthetic-" + std::to_string(g);
        for (int i = 0; i < spec.k; ++i) {
            const bool positive = i < spec.positives;
            group.responses.push_back(draw(positive ? spec.pos_mean_len : spec.neg_mean_len));
            group.rewards.push_back(positive ? 1.0 : 0.0);
        }
        out.push_back(std::move(group));
    }
    return out;
}

std::vector<PreferenceGroup> on_policy_groups(const PolicyParams& params,
                                              const OnPolicySpec& spec, std::uint64_t seed) {
    Rng quality_rng(spec.reward_seed);
    std::vector<double> quality(static_cast<std::size_t>(params.vocab_size));
    for (double& q : quality) q = quality_rng.uniform();

    Rng rng(seed);
    std::vector<PreferenceGroup> out;
    for (int g = 0; g < spec.groups; ++g) {
        PreferenceGroup group;
        group.query_id = "on-policy-" + std::to_string(g);
        for (int i = 0; i < spec.k; ++i) {
            ScoredResponse r;
            r.tokens = sample(params, spec.max_len, rng);
            double total = 0.0;
            int n = 0;
            for (TokenId t : r.tokens)
                if (t != params.eos) {
                    total += quality[t];
                    ++n;
                }
            group.rewards.push_back(n ? total / n : 0.0);
            group.responses.push_back(std::move(r));
        }
        out.push_back(std::move(group));
    }
    return out;
}

PolicyParams confidence_ramp_policy(int vocab_size, TokenId bos, TokenId eos) {
    PolicyParams p = init_policy(vocab_size, 0, 0.0, bos, eos);
    std::vector<TokenId> chain;
    for (TokenId t = 0; t < vocab_size; ++t)
        if (t != bos && t != eos) chain.push_back(t);
    p.at(bos, chain.front()) = 6.0;
    for (std::size_t j = 0; j < chain.size(); ++j) {
        const TokenId next = j + 1 < chain.size() ? chain[j + 1] : chain[j];
        // Continuation logit grows along the chain; EOS stays fixed.
        p.at(chain[j], next) = 2.0 + 0.8 * static_cast<double>(j);
        p.at(chain[j], eos) = 1.5;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoints: "REFAPOL1" magic, u32 version, u32 V, then (v2 only) u32 bos,
// u32 eos, u32 bias count; then V*V logits (+ biases) as little-endian f64.

namespace {

constexpr char kMagic[8] = {'R', 'E', 'F', 'A', 'P', 'O', 'L', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::ostream& os, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::istream& is, int bytes, const std::string& path) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = is.get();
        if (c == EOF) fail(ErrorKind::parse, "truncated policy checkpoint '" + path + "'");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

void save_policy(const PolicyParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write '" + path + "'");
    const bool v1 = params.eos_position_bias.empty() && params.bos == 0 && params.eos == 1;
    os.write(kMagic, sizeof kMagic);
    put_u32(os, v1 ? 1 : 2);
    put_u32(os, static_cast<std::uint32_t>(params.vocab_size));
    if (!v1) {
        put_u32(os, static_cast<std::uint32_t>(params.bos));
        put_u32(os, static_cast<std::uint32_t>(params.eos));
        put_u32(os, static_cast<std::uint32_t>(params.eos_position_bias.size()));
    }
    for (double d : params.logits) put_f64(os, d);
    for (double d : params.eos_position_bias) put_f64(os, d);
    if (!os) fail(ErrorKind::io, "write failed for '" + path + "'");
}

PolicyParams load_policy(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::io, "cannot open '" + path + "'");
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        fail(ErrorKind::parse, "'" + path + "' is not a policy checkpoint");
    const auto version = get_le(is, 4, path);
    if (version != 1 && version != 2)
        fail(ErrorKind::parse, "unsupported checkpoint version " + std::to_string(version));
    PolicyParams p;
    p.vocab_size = static_cast<int>(get_le(is, 4, path));
    require(p.vocab_size >= 3 && p.vocab_size <= 1 << 16, "checkpoint vocabulary out of range");
    std::size_t bias_count = 0;
    if (version == 2) {
        p.bos = static_cast<TokenId>(get_le(is, 4, path));
        p.eos = static_cast<TokenId>(get_le(is, 4, path));
        bias_count = get_le(is, 4, path);
        require(p.bos < p.vocab_size && p.eos < p.vocab_size && bias_count <= 1 << 20,
                "checkpoint header out of range");
    }
    p.logits.resize(static_cast<std::size_t>(p.vocab_size) * p.vocab_size);
    for (double& d : p.logits) d = std::bit_cast<double>(get_le(is, 8, path));
    p.eos_position_bias.resize(bias_count);
    for (double& d : p.eos_position_bias) d = std::bit_cast<double>(get_le(is, 8, path));
    return p;
}

}  // namespace refa
