// SPDX-License-Identifier: Apache-2.0
#include "refa/lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "refa/error.hpp"
#include "refa/regkit.hpp"

namespace refa {

namespace {

const std::vector<ConfigKey> kKeys = {
    {"seed", "1234", "master seed for data, shuffling and sampling"},
    {"init_seed", "99", "seed of the initial toy policy"},
    {"init_scale", "0.1", "stddev of initial policy logits (0 = uniform)"},
    {"dataset", "", "JSONL preference groups; empty uses the synthetic generator"},
    {"synth_groups", "200", "synthetic: number of groups"},
    {"synth_k", "4", "synthetic: responses per group"},
    {"synth_positives", "2", "synthetic: high-reward responses per group"},
    {"synth_pos_mean_len", "6", "synthetic: mean positive length incl. EOS"},
    {"synth_neg_mean_len", "18", "synthetic: mean negative length incl. EOS"},
    {"vocab_size", "12", "toy vocabulary size"},
    {"bos_id", "0", "BOS token id"},
    {"eos_id", "1", "EOS token id"},
    {"max_len", "64", "sampling length cap"},
    {"beta", "2.5", "score scale"},
    {"gamma", "2", "negative-set penalty"},
    {"alpha_target", "1", "InfoNCA target temperature"},
    {"alpha_dev", "1", "reward-deviation weight"},
    {"p", "1", "deviation power"},
    {"gamma_margin", "0", "SimPO margin"},
    {"lambda", "0", "regularizer weight"},
    {"budget", "16", "token budget for the budgeted regularizer"},
    {"target_length", "0", "targeted regularizer length (0 = group max)"},
    {"signed_power", "false", "keep the sign of (r - r_bar) for even p"},
    {"beta_scales_deviation", "true", "multiply the deviation term by beta"},
    {"basis", "length_normalized", "score basis: length_normalized or raw_sum"},
    {"learning_rate", "1", "SGD step size"},
    {"epochs", "200", "training epochs"},
    {"batch_size", "0", "groups per step (0 = full batch)"},
    {"loss", "composite", "training loss: refa_dynamic, w_refa or composite"},
    {"reg", "none", "regularizer: none, targeted, budget_independent, budgeted, generic"},
    {"skip_degenerate", "true", "skip groups with an empty positive set"},
    {"data_mode", "offline", "offline or on_policy"},
    {"on_policy_groups", "64", "on-policy: groups per epoch"},
    {"on_policy_k", "4", "on-policy: responses per group"},
    {"train_position_bias", "false", "also train a per-position EOS bias"},
    {"eval_samples", "200", "samples per epoch for length metrics"},
    {"out_dir", "out", "output directory"},
    {"policy_in", "", "policy checkpoint to start from"},
    {"policy_out", "", "write the trained policy here"},
    {"lambda_sweep", "0.005,0.0075,0.01,0.0125,0.015,0.02",
     "shortcut-demo: targeted lambdas to try"},
    {"budgets", "8,16,24", "budget-sweep: budgets b"},
    {"budget_lambdas", "0.5,1,2,4", "budget-sweep: lambda grid (0 is prepended)"},
    {"sweep_samples", "1000", "budget-sweep: samples per cell histogram"},
    {"instances", "100", "grad-check: instances per loss kind"},
    {"fd_eps", "1e-5", "grad-check: central-difference step"},
    {"rel_tol", "1e-6", "grad-check: relative tolerance"},
    {"abs_tol", "1e-8", "grad-check: absolute floor"},
    {"min_k", "2", "grad-check: smallest group size"},
    {"max_k", "8", "grad-check: largest group size"},
    {"inject_sign_error", "false", "grad-check: flip one analytic coordinate"},
    {"rewards", "1.0986122886681098,0", "stationary: rewards"},
    {"reference", "", "stationary: reference distribution (empty = none)"},
    {"step", "1", "stationary: gradient step"},
    {"max_iters", "10000", "stationary: iteration cap"},
    {"tol", "1e-6", "stationary: residual tolerance"},
    {"bucket_width", "4", "ursla-probe: length bucket width"},
    {"probe_policy", "random", "ursla-probe: random, ramp or file (policy_in)"},
    {"probe_samples", "2000", "ursla-probe: sampled corpus size"},
    {"input", "", "loss-eval / ursla-probe: JSONL input"},
};

const std::vector<std::string> kCommands = {
    "grad-check", "stationary", "ursla-probe", "shortcut-demo",
    "budget-sweep", "loss-eval", "train"};

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::config, key + ": not a number: '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long n = std::stoll(v, &used);
        if (used == v.size()) return n;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::config, key + ": not an integer: '" + v + "'");
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

std::filesystem::path out_path(const LabConfig& cfg, const std::string& name) {
    std::filesystem::path dir = cfg.get("out_dir");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, dir.string() + ": " + ec.message());
    return dir / name;
}

void write_file(const std::filesystem::path& path, const std::string& text,
                CommandResult& res) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, path.string() + ": cannot open for writing");
    out << text;
    out.close();
    if (!out) fail(ErrorKind::io, path.string() + ": write failed");
    res.outputs.push_back(path.string());
}

PolicyParams initial_policy(const LabConfig& cfg) {
    if (!cfg.get("policy_in").empty()) return load_policy(cfg.get("policy_in"));
    return init_policy(static_cast<int>(cfg.get_int("vocab_size")),
                       static_cast<std::uint64_t>(cfg.get_int("init_seed")),
                       cfg.get_double("init_scale"),
                       static_cast<TokenId>(cfg.get_int("bos_id")),
                       static_cast<TokenId>(cfg.get_int("eos_id")));
}

std::vector<PreferenceGroup> training_data(const LabConfig& cfg) {
    if (!cfg.get("dataset").empty()) return load_groups_file(cfg.get("dataset"));
    return synthetic_dataset(cfg.synthetic_spec());
}

double grad_norm(const LossBreakdown& b) {
    double s = 0.0;
    for (double x : b.score_grads) s += x * x;
    for (const auto& row : b.eos_grads)
        for (double x : row) s += x * x;
    return std::sqrt(s);
}

CommandResult cmd_grad_check(const LabConfig& cfg) {
    CommandResult res;
    GradSuiteConfig gc;
    gc.instances = static_cast<int>(cfg.get_int("instances"));
    gc.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    gc.eps = cfg.get_double("fd_eps");
    gc.rel_tol = cfg.get_double("rel_tol");
    gc.abs_floor = cfg.get_double("abs_tol");
    gc.min_k = static_cast<int>(cfg.get_int("min_k"));
    gc.max_k = static_cast<int>(cfg.get_int("max_k"));
    gc.inject_sign_error = cfg.get_bool("inject_sign_error");
    require(gc.instances >= 0, "instances must be >= 0");

    auto rows = run_grad_suite(gc);
    std::string csv = "loss_kind,K,gamma,max_rel_err,passed\n";
    int failures = 0;
    for (const auto& r : rows) {
        csv += r.loss_kind + "," + std::to_string(r.k) + "," + fmt(r.gamma) + "," +
               fmt(r.max_rel_err) + "," + (r.passed ? "1" : "0") + "\n";
        if (!r.passed) ++failures;
    }
    write_file(out_path(cfg, "grad_check.csv"), csv, res);
    if (rows.empty()) {
        res.summary = "warning: no instances requested; nothing checked";
        return res;
    }
    res.summary = std::to_string(rows.size() - failures) + "/" +
                  std::to_string(rows.size()) + " instances within tolerance";
    res.exit_code = failures ? 1 : 0;
    return res;
}

CommandResult cmd_stationary(const LabConfig& cfg) {
    CommandResult res;
    auto rewards = cfg.get_doubles("rewards");
    std::optional<std::vector<double>> ref;
    if (!cfg.get("reference").empty()) ref = cfg.get_doubles("reference");
    auto rep = stationary_solve(rewards, cfg.get_double("alpha_target"), ref,
                                cfg.get_double("step"),
                                static_cast<int>(cfg.get_int("max_iters")),
                                cfg.get_double("tol"));

    std::string csv = "index,reward,target,reference,final_distribution\n";
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        csv += std::to_string(i) + "," + fmt(rewards[i]) + "," + fmt(rep.target[i]) + "," +
               (ref ? fmt((*ref)[i]) : std::string()) + "," +
               fmt(rep.final_distribution[i]) + "\n";
    }
    write_file(out_path(cfg, "stationary.csv"), csv, res);

    std::string trace = "iteration,residual\n";
    for (std::size_t i = 0; i < rep.residual_trace.size(); ++i)
        trace += std::to_string(i) + "," + fmt(rep.residual_trace[i]) + "\n";
    write_file(out_path(cfg, "stationary_trace.csv"), trace, res);

    res.summary = std::string(rep.converged ? "converged" : "did not converge") +
                  " after " + std::to_string(rep.iterations) +
                  " iterations, residual " + fmt(rep.residual);
    res.exit_code = rep.converged ? 0 : 1;
    return res;
}

CommandResult cmd_ursla_probe(const LabConfig& cfg) {
    CommandResult res;
    const std::string which = cfg.get("probe_policy");
    PolicyParams policy;
    if (which == "ramp") {
        policy = confidence_ramp_policy(static_cast<int>(cfg.get_int("vocab_size")),
                                        static_cast<TokenId>(cfg.get_int("bos_id")),
                                        static_cast<TokenId>(cfg.get_int("eos_id")));
    } else if (which == "random") {
        policy = init_policy(static_cast<int>(cfg.get_int("vocab_size")),
                             static_cast<std::uint64_t>(cfg.get_int("init_seed")),
                             cfg.get_double("init_scale"),
                             static_cast<TokenId>(cfg.get_int("bos_id")),
                             static_cast<TokenId>(cfg.get_int("eos_id")));
    } else if (which == "file") {
        if (cfg.get("policy_in").empty())
            fail(ErrorKind::config, "probe_policy = file needs policy_in");
        policy = load_policy(cfg.get("policy_in"));
    } else {
        fail(ErrorKind::config, "probe_policy: expected random, ramp or file, got '" +
                                    which + "'");
    }

    std::vector<ScoredResponse> corpus;
    if (!cfg.get("input").empty()) {
        for (auto& g : load_groups_file(cfg.get("input")))
            for (auto& r : g.responses)
                corpus.push_back(r.has_logprobs() ? r : token_logprobs(policy, r.tokens));
    } else {
        Rng rng(static_cast<std::uint64_t>(cfg.get_int("seed")));
        const int n = static_cast<int>(cfg.get_int("probe_samples"));
        const int max_len = static_cast<int>(cfg.get_int("max_len"));
        for (int i = 0; i < n; ++i)
            corpus.push_back(token_logprobs(policy, sample(policy, max_len, rng)));
    }
    if (corpus.empty()) fail(ErrorKind::validation, "empty evaluation corpus");

    const int width = static_cast<int>(cfg.get_int("bucket_width"));
    auto probe = ursla_probe(corpus, width);
    std::string csv = "length_lower,length_upper,mean_avg_nll,count\n";
    for (const auto& b : probe.buckets)
        csv += std::to_string(b.lower) + "," + std::to_string(b.lower + width - 1) + "," +
               fmt(b.mean_avg_nll) + "," + std::to_string(b.count) + "\n";
    csv += "rank_correlation,," +
           (probe.rank_correlation ? fmt(*probe.rank_correlation) : std::string()) + ",\n";
    write_file(out_path(cfg, "ursla_probe.csv"), csv, res);
    res.summary = std::to_string(probe.buckets.size()) + " buckets, rank correlation " +
                  (probe.rank_correlation ? fmt(*probe.rank_correlation) : "absent");
    return res;
}

CommandResult cmd_shortcut_demo(const LabConfig& cfg) {
    CommandResult res;
    auto demo = run_shortcut_demo(cfg);
    write_file(out_path(cfg, "shortcut_history_lambda0.csv"),
               history_csv(demo.baseline.history), res);
    std::string summary =
        "arm,lambda,initial_len,final_len,ratio,first_eos_final_neg,last_eos_final_neg\n";
    auto row = [&](const std::string& name, const ShortcutArm& arm) {
        const auto& recs = arm.history.records;
        summary += name + "," + fmt(arm.lambda) + "," + fmt(arm.initial_len) + "," +
                   fmt(arm.final_len) + "," + fmt(arm.final_len / arm.initial_len) + "," +
                   (recs.empty() ? "" : fmt(recs.front().mean_eos_final_neg)) + "," +
                   (recs.empty() ? "" : fmt(recs.back().mean_eos_final_neg)) + "\n";
    };
    row("baseline", demo.baseline);
    for (std::size_t i = 0; i < demo.regularized.size(); ++i) {
        row("targeted_" + std::to_string(i), demo.regularized[i]);
        if (i == demo.best)
            write_file(out_path(cfg, "shortcut_history_regularized.csv"),
                       history_csv(demo.regularized[i].history), res);
    }
    write_file(out_path(cfg, "shortcut_summary.csv"), summary, res);

    std::ostringstream msg;
    msg << "lambda=0: " << fmt(demo.baseline.initial_len) << " -> "
        << fmt(demo.baseline.final_len)
        << (demo.shortcut_observed ? " (shortcut observed)" : " (no shortcut)");
    if (!demo.regularized.empty()) {
        const auto& b = demo.regularized[demo.best];
        msg << "; best lambda=" << fmt(b.lambda) << ": " << fmt(b.final_len)
            << (demo.counteracted ? " (within 10%)" : " (outside 10%)");
    }
    res.summary = msg.str();
    res.exit_code = demo.shortcut_observed && demo.counteracted ? 0 : 1;
    return res;
}

CommandResult cmd_budget_sweep(const LabConfig& cfg) {
    CommandResult res;
    auto sweep = run_budget_sweep(cfg);
    std::string cells = "lambda,budget,mean_len,abs_gap,mass_near_budget\n";
    std::string hist = "lambda,budget,length,count\n";
    for (const auto& c : sweep.cells) {
        cells += fmt(c.lambda) + "," + std::to_string(c.budget) + "," + fmt(c.mean_len) +
                 "," + fmt(std::abs(c.mean_len - c.budget)) + "," +
                 fmt(c.mass_near_budget) + "\n";
        for (std::size_t len = 0; len < c.histogram.size(); ++len)
            if (c.histogram[len] > 0)
                hist += fmt(c.lambda) + "," + std::to_string(c.budget) + "," +
                        std::to_string(len) + "," + std::to_string(c.histogram[len]) + "\n";
    }
    write_file(out_path(cfg, "budget_sweep.csv"), cells, res);
    write_file(out_path(cfg, "budget_histogram.csv"), hist, res);

    const int steps = static_cast<int>(sweep.lambdas.size()) - 1;
    std::string checks = "budget,non_increasing_steps,steps,mass_increased\n";
    for (std::size_t i = 0; i < sweep.budgets.size(); ++i)
        checks += std::to_string(sweep.budgets[i]) + "," +
                  std::to_string(sweep.non_increasing_steps[i]) + "," +
                  std::to_string(steps) + "," + (sweep.mass_increased[i] ? "1" : "0") + "\n";
    write_file(out_path(cfg, "budget_checks.csv"), checks, res);
    res.summary = sweep.passed ? "all budgets move toward b" : "budget trend check failed";
    res.exit_code = sweep.passed ? 0 : 1;
    return res;
}

CommandResult cmd_loss_eval(const LabConfig& cfg) {
    CommandResult res;
    const std::string input = cfg.get("input");
    if (input.empty()) fail(ErrorKind::config, "loss-eval needs input");
    std::ifstream in(input);
    if (!in) fail(ErrorKind::io, input + ": cannot open");
    auto load = load_groups_lenient(in);

    const Hyperparams hyper = cfg.hyperparams();
    const ScoreBasis basis = parse_basis(cfg.get("basis"));
    const RegKind reg = parse_reg_kind(cfg.get("reg"));

    static const char* kinds[] = {"simpo", "infonca", "refa_1vsall", "refa_dynamic",
                                  "w_refa", "composite"};
    const TokenId eos = static_cast<TokenId>(cfg.get_int("eos_id"));
    std::string csv = "line,query_id,K,degenerate,truncated";
    for (const char* k : kinds) csv += std::string(",") + k + "," + k + "_grad_norm";
    csv += ",reg_value\n";

    auto errors = load.errors;
    for (std::size_t gi = 0; gi < load.groups.size(); ++gi) {
        const auto& g = load.groups[gi];
        const std::size_t line = load.group_lines[gi];
        bool ok = true;
        for (const auto& r : g.responses) {
            if (!r.has_logprobs()) {
                errors.push_back({line, "response without token_logprobs"});
                ok = false;
                break;
            }
            if (reg != RegKind::none && !r.has_eos_probs()) {
                errors.push_back({line, "regularizer requested but eos_probs missing"});
                ok = false;
                break;
            }
        }
        if (!ok) continue;

        const ScoreVector scores = base_scores(g, hyper.beta, basis);
        const Partition part = partition(g);
        // Responses cut off without EOS; their final eos_prob is not a stop event.
        int truncated = 0;
        for (const auto& r : g.responses)
            if (r.tokens.back() != eos) ++truncated;
        std::string row = std::to_string(line) + "," + csv_field(g.query_id) + "," +
                          std::to_string(g.size()) + "," + (part.degenerate() ? "1" : "0") +
                          "," + std::to_string(truncated);
        auto put = [&row](const std::optional<LossBreakdown>& b) {
            row += b ? "," + fmt(b->loss) + "," + fmt(grad_norm(*b)) : std::string(",,");
        };
        std::optional<LossBreakdown> composite;
        if (part.degenerate()) {
            put(std::nullopt);
        } else {
            auto lo = std::min_element(g.rewards.begin(), g.rewards.end()) - g.rewards.begin();
            put(simpo_loss(scores, argmax_reward(g.rewards), static_cast<std::size_t>(lo),
                           hyper.gamma_margin));
        }
        put(infonca_loss(scores, g.rewards, hyper.alpha_target));
        put(refa_1vsall_loss(scores, g.rewards, hyper));
        if (part.degenerate()) {
            put(std::nullopt);
            put(std::nullopt);
            put(std::nullopt);
        } else {
            put(refa_dynamic_loss(scores, part, hyper.gamma));
            put(w_refa_loss(g, hyper, scores));
            composite = composite_refa_loss(g, hyper, scores, reg);
            put(composite);
        }
        row += "," + (composite ? fmt(composite->reg_value) : std::string());
        csv += row + "\n";
    }
    write_file(out_path(cfg, "loss_eval.csv"), csv, res);

    if (!errors.empty()) {
        std::sort(errors.begin(), errors.end(),
                  [](const LineError& a, const LineError& b) { return a.line_no < b.line_no; });
        std::string err = "line,message\n";
        std::string msg;
        for (const auto& e : errors) {
            err += std::to_string(e.line_no) + "," + csv_field(e.message) + "\n";
            msg += "line " + std::to_string(e.line_no) + ": " + e.message + "\n";
        }
        write_file(out_path(cfg, "loss_eval_errors.csv"), err, res);
        res.summary = msg + std::to_string(errors.size()) + " line(s) rejected";
        res.exit_code = 1;
        return res;
    }
    res.summary = std::to_string(load.groups.size()) + " groups evaluated";
    return res;
}

CommandResult cmd_train(const LabConfig& cfg) {
    CommandResult res;
    PolicyParams policy = initial_policy(cfg);
    TrainConfig tc = cfg.train_config();
    std::vector<PreferenceGroup> data;
    if (tc.data_mode == DataMode::offline) data = training_data(cfg);
    auto history = train(policy, std::move(data), tc);
    write_file(out_path(cfg, "train_history.csv"), history_csv(history), res);
    if (!cfg.get("policy_out").empty()) {
        save_policy(policy, cfg.get("policy_out"));
        res.outputs.push_back(cfg.get("policy_out"));
    }
    std::ostringstream msg;
    msg << history.records.size() << " epochs";
    if (!history.records.empty())
        msg << ", final loss " << fmt(history.records.back().mean_loss)
            << ", mean sampled length " << fmt(history.initial_mean_len) << " -> "
            << fmt(history.records.back().mean_len_sampled);
    res.summary = msg.str();
    return res;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() { return kKeys; }

const std::vector<std::string>& command_names() { return kCommands; }

LabConfig::LabConfig() {
    for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

void LabConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::config, "unknown config key '" + key + "'");
    it->second = trim(value);
}

void LabConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorKind::config,
                 origin + ":" + std::to_string(n) + ": expected 'key = value'");
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const Error& e) {
            fail(ErrorKind::config, origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

void LabConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, path + ": cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    load_text(buf.str(), path);
}

const std::string& LabConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::config, "unknown config key '" + key + "'");
    return it->second;
}

double LabConfig::get_double(const std::string& key) const {
    return to_double(key, get(key));
}

long long LabConfig::get_int(const std::string& key) const { return to_int(key, get(key)); }

bool LabConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::config, key + ": not a boolean: '" + v + "'");
}

std::vector<double> LabConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(get(key))) out.push_back(to_double(key, s));
    return out;
}

std::vector<long long> LabConfig::get_ints(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& s : split_list(get(key))) out.push_back(to_int(key, s));
    return out;
}

Hyperparams LabConfig::hyperparams() const {
    Hyperparams h;
    h.alpha_target = get_double("alpha_target");
    h.alpha_dev = get_double("alpha_dev");
    h.p = static_cast<int>(get_int("p"));
    h.beta = get_double("beta");
    h.gamma = get_double("gamma");
    h.gamma_margin = get_double("gamma_margin");
    h.lambda = get_double("lambda");
    h.budget = static_cast<int>(get_int("budget"));
    h.target_length = static_cast<int>(get_int("target_length"));
    h.beta_scales_deviation = get_bool("beta_scales_deviation");
    h.signed_power = get_bool("signed_power");
    h.validate();
    return h;
}

TrainConfig LabConfig::train_config() const {
    TrainConfig c;
    c.hyper = hyperparams();
    c.learning_rate = get_double("learning_rate");
    c.epochs = static_cast<int>(get_int("epochs"));
    c.batch_size = static_cast<int>(get_int("batch_size"));
    c.seed = static_cast<std::uint64_t>(get_int("seed"));
    c.loss_kind = parse_loss_kind(get("loss"));
    c.reg_kind = parse_reg_kind(get("reg"));
    c.skip_degenerate = get_bool("skip_degenerate");
    c.basis = parse_basis(get("basis"));
    c.train_position_bias = get_bool("train_position_bias");
    const std::string mode = get("data_mode");
    if (mode == "offline") {
        c.data_mode = DataMode::offline;
    } else if (mode == "on_policy") {
        c.data_mode = DataMode::on_policy;
    } else {
        fail(ErrorKind::config, "data_mode: expected offline or on_policy, got '" + mode + "'");
    }
    c.on_policy.groups = static_cast<int>(get_int("on_policy_groups"));
    c.on_policy.k = static_cast<int>(get_int("on_policy_k"));
    c.on_policy.max_len = static_cast<int>(get_int("max_len"));
    c.eval_samples = static_cast<int>(get_int("eval_samples"));
    c.max_len = static_cast<int>(get_int("max_len"));
    c.validate();
    return c;
}

SyntheticSpec LabConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.groups = static_cast<int>(get_int("synth_groups"));
    s.k = static_cast<int>(get_int("synth_k"));
    s.positives = static_cast<int>(get_int("synth_positives"));
    s.pos_mean_len = get_double("synth_pos_mean_len");
    s.neg_mean_len = get_double("synth_neg_mean_len");
    s.vocab_size = static_cast<int>(get_int("vocab_size"));
    s.bos = static_cast<TokenId>(get_int("bos_id"));
    s.eos = static_cast<TokenId>(get_int("eos_id"));
    s.max_len = static_cast<int>(get_int("max_len"));
    s.seed = static_cast<std::uint64_t>(get_int("seed"));
    return s;
}

CommandResult run_command(const std::string& name, const LabConfig& config) {
    try {
        if (name == "grad-check") return cmd_grad_check(config);
        if (name == "stationary") return cmd_stationary(config);
        if (name == "ursla-probe") return cmd_ursla_probe(config);
        if (name == "shortcut-demo") return cmd_shortcut_demo(config);
        if (name == "budget-sweep") return cmd_budget_sweep(config);
        if (name == "loss-eval") return cmd_loss_eval(config);
        if (name == "train") return cmd_train(config);
        return {2, "unknown command '" + name + "'", {}};
    } catch (const Error& e) {
        return {e.kind() == ErrorKind::oracle ? 1 : 2,
                std::string(to_string(e.kind())) + " error: " + e.what(), {}};
    }
}

ShortcutResult run_shortcut_demo(const LabConfig& config) {
    const auto data = training_data(config);
    const PolicyParams start = initial_policy(config);
    TrainConfig base = config.train_config();
    base.loss_kind = LossKind::composite;
    base.data_mode = DataMode::offline;

    auto run_arm = [&](double lambda, RegKind reg) {
        TrainConfig tc = base;
        tc.hyper.lambda = lambda;
        tc.reg_kind = reg;
        PolicyParams policy = start;
        ShortcutArm arm;
        arm.lambda = lambda;
        arm.history = train(policy, data, tc);
        arm.initial_len = arm.history.initial_mean_len;
        arm.final_len = arm.history.records.empty()
                            ? arm.initial_len
                            : arm.history.records.back().mean_len_sampled;
        return arm;
    };

    ShortcutResult out;
    out.baseline = run_arm(0.0, RegKind::none);
    out.shortcut_observed = out.baseline.final_len < 0.8 * out.baseline.initial_len;
    double best_gap = 0.0;
    for (double lambda : config.get_doubles("lambda_sweep")) {
        out.regularized.push_back(run_arm(lambda, RegKind::targeted));
        const auto& arm = out.regularized.back();
        const double gap = std::abs(arm.final_len / arm.initial_len - 1.0);
        if (out.regularized.size() == 1 || gap < best_gap) {
            best_gap = gap;
            out.best = out.regularized.size() - 1;
        }
    }
    out.counteracted = !out.regularized.empty() && best_gap <= 0.10;
    return out;
}

BudgetSweepResult run_budget_sweep(const LabConfig& config) {
    BudgetSweepResult out;
    for (long long b : config.get_ints("budgets")) {
        require(b > 0, "budgets must be positive");
        out.budgets.push_back(static_cast<int>(b));
    }
    out.lambdas.push_back(0.0);
    for (double l : config.get_doubles("budget_lambdas")) {
        require(l > 0.0, "budget_lambdas must be positive");
        out.lambdas.push_back(l);
    }
    require(!out.budgets.empty(), "budgets is empty");

    const PolicyParams start = initial_policy(config);
    TrainConfig base = config.train_config();
    base.loss_kind = LossKind::composite;
    base.reg_kind = RegKind::budgeted;
    base.data_mode = DataMode::on_policy;
    base.train_position_bias = true;
    base.eval_samples = 0;
    const int samples = static_cast<int>(config.get_int("sweep_samples"));
    require(samples > 0, "sweep_samples must be > 0");
    const std::uint64_t eval_seed = derive_seed(base.seed, 0xB0D6);

    out.passed = true;
    for (int b : out.budgets) {
        std::vector<double> gaps, mass;
        for (double lambda : out.lambdas) {
            TrainConfig tc = base;
            tc.hyper.budget = b;
            tc.hyper.lambda = lambda;
            PolicyParams policy = start;
            train(policy, {}, tc);
            auto stats = sampled_lengths(policy, samples, base.max_len, eval_seed);

            BudgetCell cell;
            cell.lambda = lambda;
            cell.budget = b;
            cell.mean_len = stats.mean;
            cell.histogram.assign(base.max_len + 1, 0);
            int near = 0;
            for (int len : stats.lengths) {
                ++cell.histogram[std::min(len, base.max_len)];
                if (std::abs(len - b) <= 0.25 * b) ++near;
            }
            cell.mass_near_budget = static_cast<double>(near) / samples;
            gaps.push_back(std::abs(cell.mean_len - b));
            mass.push_back(cell.mass_near_budget);
            out.cells.push_back(std::move(cell));
        }
        int ok = 0;
        for (std::size_t i = 1; i < gaps.size(); ++i)
            if (gaps[i] <= gaps[i - 1]) ++ok;
        const bool increased = mass.back() > mass.front();
        const int steps = static_cast<int>(gaps.size()) - 1;
        out.non_increasing_steps.push_back(ok);
        out.mass_increased.push_back(increased);
        // One step may go the other way.
        if (ok < steps - 1 || !increased) out.passed = false;
    }
    return out;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "spearman: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

UrslaProbeResult ursla_probe(const std::vector<ScoredResponse>& corpus, int bucket_width) {
    require(bucket_width > 0, "bucket_width must be > 0");
    if (corpus.empty()) fail(ErrorKind::validation, "empty evaluation corpus");
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : corpus) {
        require(r.has_logprobs(), "probe corpus response without token_logprobs");
        const int len = static_cast<int>(r.length());
        const int lower = ((len - 1) / bucket_width) * bucket_width + 1;
        auto& [sum, count] = acc[lower];
        sum += avg_nll(r);
        ++count;
    }
    UrslaProbeResult out;
    std::vector<double> xs, ys;
    for (const auto& [lower, sc] : acc) {
        out.buckets.push_back({lower, sc.first / sc.second, sc.second});
        xs.push_back(lower);
        // Rounded so that summation noise on a flat curve does not produce ranks.
        ys.push_back(std::round(sc.first / sc.second * 1e9) / 1e9);
    }
    if (out.buckets.size() >= 2) {
        out.rank_correlation = spearman(xs, ys);
        if (!out.rank_correlation) out.rank_correlation = 0.0;  // flat curve
    }
    return out;
}

}  // namespace refa
