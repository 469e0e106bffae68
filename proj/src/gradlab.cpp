// SPDX-License-Identifier: Apache-2.0
#include "refa/gradlab.hpp"

#include <algorithm>
#include <cmath>

#include "refa/error.hpp"
#include "refa/regkit.hpp"
#include "refa/rng.hpp"

namespace refa {

std::vector<double> fd_gradient(const ScalarFn& loss_fn, const std::vector<double>& point,
                                double eps) {
    require(eps > 0.0, "finite-difference step must be > 0");
    std::vector<double> grad(point.size());
    std::vector<double> x = point;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + eps;
        const double fp = loss_fn(x);
        x[i] = xi - eps;
        const double fm = loss_fn(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            fail(ErrorKind::oracle,
                 "non-finite loss evaluation at coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

GradCheckReport compare_gradients(const std::vector<double>& analytic,
                                  const std::vector<double>& numeric, double rel_tol,
                                  double abs_floor, double step) {
    require(analytic.size() == numeric.size(), "gradient length mismatch");
    GradCheckReport rep;
    rep.step = step;
    rep.tolerance = rel_tol;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double diff = std::abs(a - n);
        rep.per_coordinate.emplace_back(a, n);
        rep.max_abs_err = std::max(rep.max_abs_err, diff);
        if (diff > abs_floor)
            rep.max_rel_err =
                std::max(rep.max_rel_err, diff / std::max(std::abs(a), std::abs(n)));
        if (!std::isfinite(diff)) rep.max_rel_err = INFINITY;
    }
    rep.passed = rep.max_rel_err <= rel_tol;
    return rep;
}

GradCheckReport grad_check(const ScalarFn& loss_fn, const std::vector<double>& analytic,
                           const std::vector<double>& point, double eps, double rel_tol,
                           double abs_floor) {
    return compare_gradients(analytic, fd_gradient(loss_fn, point, eps), rel_tol,
                             abs_floor, eps);
}

std::vector<double> infonca_grad(const std::vector<double>& p_model,
                                 const std::vector<double>& p_target) {
    require(p_model.size() == p_target.size(), "distribution length mismatch");
    std::vector<double> g(p_model.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = p_model[i] - p_target[i];
    return g;
}

namespace {

double checked_sum(const std::vector<double>& pi) {
    double s = 0.0;
    for (double v : pi) {
        require(v > 0.0, "single-term gradient needs every pi_j > 0");
        s += v;
    }
    return s;
}

}  // namespace

std::vector<double> single_term_grads(const std::vector<double>& pi, std::size_t i,
                                      double p_target_i) {
    require(i < pi.size(), "single-term index out of range");
    const double total = checked_sum(pi);
    std::vector<double> g(pi.size(), p_target_i / total);
    g[i] = -p_target_i * (1.0 / pi[i] - 1.0 / total);
    return g;
}

double single_term_loss(const std::vector<double>& pi, std::size_t i, double p_target_i) {
    require(i < pi.size(), "single-term index out of range");
    const double total = checked_sum(pi);
    return -p_target_i * std::log(pi[i] / total);
}

std::vector<double> refa_dynamic_grad(const ScoreVector& scores, const Partition& part,
                                      double gamma) {
    require(gamma > 0.0, "gamma must be > 0");
    require(part.positive.size() + part.negative.size() == scores.size(),
            "partition does not cover the score vector");
    if (part.degenerate()) fail(ErrorKind::degenerate_group, "degenerate group: Y+ is empty");

    // p_model_i = w_i e^{s_i} / (P+ + gamma P-), w = 1 on Y+, gamma on Y-;
    // p_pos_i = e^{s_i} / P+.
    std::vector<double> pos, weighted;
    for (std::size_t i : part.positive) {
        pos.push_back(scores[i]);
        weighted.push_back(scores[i]);
    }
    for (std::size_t i : part.negative) weighted.push_back(std::log(gamma) + scores[i]);
    const double log_p_pos = log_sum_exp(pos);
    const double log_denom = log_sum_exp(weighted);

    std::vector<double> g(scores.size(), 0.0);
    for (std::size_t i : part.positive)
        g[i] = std::exp(scores[i] - log_denom) - std::exp(scores[i] - log_p_pos);
    for (std::size_t i : part.negative)
        g[i] = std::exp(std::log(gamma) + scores[i] - log_denom);
    return g;
}

StationaryReport stationary_solve(const std::vector<double>& rewards, double alpha_target,
                                  const std::optional<std::vector<double>>& reference,
                                  double step, int max_iters, double tol) {
    require(step > 0.0, "step must be > 0");
    require(tol > 0.0, "tol must be > 0");
    require(max_iters >= 0, "max_iters must be >= 0");
    StationaryReport rep;
    rep.target = target_distribution(rewards, alpha_target);
    rep.reference = reference;
    const std::size_t k = rewards.size();

    std::vector<double> log_mu(k, 0.0);
    if (reference) {
        require(reference->size() == k, "reference length mismatch");
        for (std::size_t i = 0; i < k; ++i) {
            require((*reference)[i] > 0.0, "reference probabilities must be > 0");
            log_mu[i] = std::log((*reference)[i]);
        }
    }

    std::vector<double> z(k, 0.0), logits(k);
    for (int it = 0;; ++it) {
        for (std::size_t i = 0; i < k; ++i) logits[i] = z[i] - log_mu[i];
        const auto p_model = softmax(logits);
        double residual = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            residual = std::max(residual, std::abs(p_model[i] - rep.target[i]));
        rep.residual_trace.push_back(residual);
        rep.residual = residual;
        rep.iterations = it;
        if (residual <= tol) {
            rep.converged = true;
            break;
        }
        if (it >= max_iters) break;
        for (std::size_t i = 0; i < k; ++i) z[i] -= step * (p_model[i] - rep.target[i]);
    }
    rep.final_distribution = softmax(z);
    return rep;
}

// ---------------------------------------------------------------------------
// Randomized suite

namespace {

struct Instance {
    PreferenceGroup group;
    Hyperparams hyper;
    ScoreVector ref;
};

Instance random_instance(Rng& rng, const GradSuiteConfig& cfg) {
    static constexpr double kGammas[] = {0.5, 1.0, 2.0, 4.0};
    Instance inst;
    const int k = cfg.min_k + static_cast<int>(rng.index(cfg.max_k - cfg.min_k + 1));
    auto& h = inst.hyper;
    h.gamma = kGammas[rng.index(4)];
    h.beta = rng.uniform(0.5, 3.0);
    h.alpha_target = rng.uniform(0.5, 2.0);
    h.alpha_dev = rng.uniform() < 0.25 ? 0.0 : rng.uniform(0.1, 1.5);
    h.p = static_cast<int>(rng.index(3));
    h.gamma_margin = rng.uniform(0.0, 1.0);
    h.lambda = rng.uniform(0.01, 1.0);
    h.budget = 1 + static_cast<int>(rng.index(8));

    auto& g = inst.group;
    g.query_id = "fd";
    do {
        g.responses.clear();
        g.rewards.clear();
        for (int i = 0; i < k; ++i) {
            ScoredResponse r;
            const int len = 1 + static_cast<int>(rng.index(10));
            for (int t = 0; t < len; ++t) {
                r.tokens.push_back(static_cast<TokenId>(rng.index(12)));
                r.token_logprobs.push_back(rng.uniform(-4.0, -0.05));
                r.eos_probs.push_back(rng.uniform(0.05, 0.95));
            }
            g.responses.push_back(std::move(r));
            g.rewards.push_back(rng.uniform(0.0, 10.0));
        }
    } while (partition(g).degenerate());
    for (int i = 0; i < k; ++i) inst.ref.values.push_back(h.beta * rng.uniform(-3.0, 0.0));
    return inst;
}

std::vector<double> flatten(const PreferenceGroup& g, bool with_eos) {
    std::vector<double> x;
    for (const auto& r : g.responses)
        x.insert(x.end(), r.token_logprobs.begin(), r.token_logprobs.end());
    if (with_eos)
        for (const auto& r : g.responses)
            x.insert(x.end(), r.eos_probs.begin(), r.eos_probs.end());
    return x;
}

void unflatten(PreferenceGroup& g, const std::vector<double>& x, bool with_eos) {
    std::size_t at = 0;
    for (auto& r : g.responses)
        for (double& v : r.token_logprobs) v = x[at++];
    if (with_eos)
        for (auto& r : g.responses)
            for (double& v : r.eos_probs) v = x[at++];
}

// Loss and gradient over the flattened (token_logprobs[, eos_probs]) vector.
struct Evaluated {
    double loss = 0.0;
    std::vector<double> grad;
};

Evaluated evaluate(const std::string& kind, const PreferenceGroup& g, const Hyperparams& h,
                   const ScoreVector& ref) {
    ScoreBasis basis = kind == "infonca_ref_free_raw" ? ScoreBasis::raw_sum
                                                      : ScoreBasis::length_normalized;
    const ScoreVector scores = base_scores(g, h.beta, basis);
    LossBreakdown b;
    bool with_eos = false;
    if (kind == "simpo") {
        const auto lo = std::min_element(g.rewards.begin(), g.rewards.end()) - g.rewards.begin();
        b = simpo_loss(scores, argmax_reward(g.rewards), static_cast<std::size_t>(lo),
                       h.gamma_margin);
    } else if (kind == "infonca_ref_free_norm" || kind == "infonca_ref_free_raw") {
        b = infonca_loss(scores, g.rewards, h.alpha_target);
    } else if (kind == "infonca_ref") {
        b = infonca_loss(scores, g.rewards, h.alpha_target, ref);
    } else if (kind == "mpo") {
        b = mpo_loss(g, h, scores, ref);
    } else if (kind == "refa_1vsall") {
        b = refa_1vsall_loss(scores, g.rewards, h);
    } else if (kind == "refa_dynamic") {
        b = refa_dynamic_loss(scores, partition(g), h.gamma);
    } else if (kind == "w_refa") {
        b = w_refa_loss(g, h, scores);
    } else {
        const std::string prefix = "composite_";
        require(kind.rfind(prefix, 0) == 0, "unknown loss kind '" + kind + "'");
        b = composite_refa_loss(g, h, scores, parse_reg_kind(kind.substr(prefix.size())));
        with_eos = true;
    }
    Evaluated out;
    out.loss = b.loss;
    for (const auto& row : score_grads_to_token_grads(g, b.score_grads, h.beta, basis))
        out.grad.insert(out.grad.end(), row.begin(), row.end());
    if (with_eos)
        for (const auto& row : b.eos_grads) out.grad.insert(out.grad.end(), row.begin(), row.end());
    return out;
}

bool uses_eos(const std::string& kind) { return kind.rfind("composite_", 0) == 0; }

}  // namespace

const std::vector<std::string>& grad_suite_loss_kinds() {
    static const std::vector<std::string> kinds = {
        "simpo",        "infonca_ref_free_norm", "infonca_ref_free_raw",
        "infonca_ref",  "mpo",                   "refa_1vsall",
        "refa_dynamic", "w_refa",                "composite_targeted",
        "composite_budget_independent",          "composite_budgeted"};
    return kinds;
}

std::vector<GradSuiteRow> run_grad_suite(const GradSuiteConfig& cfg) {
    require(cfg.instances >= 0, "instances must be >= 0");
    require(cfg.min_k >= 2 && cfg.max_k >= cfg.min_k, "invalid K range");
    std::vector<GradSuiteRow> rows;
    const auto& kinds = grad_suite_loss_kinds();
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const std::string& kind = kinds[ki];
        for (int n = 0; n < cfg.instances; ++n) {
            Rng rng(derive_seed(cfg.seed, ki * 1000003ull + static_cast<std::uint64_t>(n)));
            Instance inst = random_instance(rng, cfg);
            const bool with_eos = uses_eos(kind);
            auto analytic = evaluate(kind, inst.group, inst.hyper, inst.ref).grad;
            if (cfg.inject_sign_error && !analytic.empty()) {
                auto it = std::max_element(analytic.begin(), analytic.end(),
                                           [](double a, double b) { return std::abs(a) < std::abs(b); });
                *it = -*it;
            }
            PreferenceGroup scratch = inst.group;
            ScalarFn fn = [&](const std::vector<double>& x) {
                unflatten(scratch, x, with_eos);
                return evaluate(kind, scratch, inst.hyper, inst.ref).loss;
            };
            const auto rep = grad_check(fn, analytic, flatten(inst.group, with_eos), cfg.eps,
                                        cfg.rel_tol, cfg.abs_floor);
            rows.push_back({kind, static_cast<int>(inst.group.size()), inst.hyper.gamma,
                            rep.max_rel_err, rep.passed});
        }
    }
    return rows;
}

}  // namespace refa
