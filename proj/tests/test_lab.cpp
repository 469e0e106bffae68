#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "refa/error.hpp"
#include "refa/lab.hpp"

using namespace refa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("refa_lab_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

ScoredResponse constant_response(int len, double lp) {
    ScoredResponse r;
    r.tokens.assign(len, 2);
    r.token_logprobs.assign(len, lp);
    return r;
}

}  // namespace

TEST_CASE("LabConfig: defaults, parsing and precedence") {
    LabConfig cfg;
    CHECK(cfg.get_double("beta") == 2.5);
    CHECK(cfg.get_double("gamma") == 2.0);
    CHECK(cfg.get_double("alpha_dev") == 1.0);
    CHECK(cfg.get_int("p") == 1);
    CHECK(cfg.get_ints("budgets") == std::vector<long long>{8, 16, 24});
    CHECK_THROWS_AS(cfg.set("no_such_key", "1"), Error);
    CHECK_THROWS_AS(cfg.load_text("seed = 1\nbogus = 2\n"), Error);

    cfg.load_text("# comment\nbeta = 1.5  # trailing\n\nlambda_sweep = 0.1, 0.2\n");
    CHECK(cfg.get_double("beta") == 1.5);
    CHECK(cfg.get_doubles("lambda_sweep") == std::vector<double>{0.1, 0.2});
    cfg.set("beta", "3");  // a flag applied after the file wins
    CHECK(cfg.hyperparams().beta == 3.0);

    cfg.set("gamma", "abc");
    CHECK_THROWS_AS(cfg.get_double("gamma"), Error);
    cfg.set("skip_degenerate", "maybe");
    CHECK_THROWS_AS(cfg.get_bool("skip_degenerate"), Error);
    CHECK_THROWS_AS(cfg.load_text("just words\n"), Error);
    CHECK_THROWS_AS(cfg.load_file("/nonexistent/refa.conf"), Error);

    for (const auto& k : config_keys()) CHECK_FALSE(k.help.empty());
    CHECK(command_names().size() == 7);
}

TEST_CASE("run_command: unknown command and bad config give exit 2") {
    LabConfig cfg;
    CHECK(run_command("frobnicate", cfg).exit_code == 2);
    cfg.set("out_dir", scratch("bad").string());
    cfg.set("loss", "hinge");
    CHECK(run_command("train", cfg).exit_code == 2);
}

TEST_CASE("spearman") {
    CHECK(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(*spearman({1, 2, 3}, {1, 1, 2}) == doctest::Approx(std::sqrt(3.0) / 2));
    CHECK_FALSE(spearman({1}, {2}).has_value());
    CHECK_FALSE(spearman({1, 2, 3}, {5, 5, 5}).has_value());
}

TEST_CASE("ursla_probe") {
    SUBCASE("constant per-token probability gives a flat curve") {
        std::vector<ScoredResponse> corpus;
        for (int len = 1; len <= 30; ++len) corpus.push_back(constant_response(len, -0.7));
        auto res = ursla_probe(corpus, 4);
        CHECK(res.buckets.size() == 8);
        for (const auto& b : res.buckets) CHECK(b.mean_avg_nll == doctest::Approx(0.7));
        REQUIRE(res.rank_correlation.has_value());
        CHECK(std::abs(*res.rank_correlation) < 1e-12);
    }
    SUBCASE("single bucket leaves the correlation absent") {
        auto res = ursla_probe({constant_response(2, -1), constant_response(3, -2)}, 10);
        CHECK(res.buckets.size() == 1);
        CHECK(res.buckets[0].count == 2);
        CHECK_FALSE(res.rank_correlation.has_value());
    }
    SUBCASE("confidence ramp gives a negative correlation") {
        auto p = confidence_ramp_policy(12);
        Rng rng(3);
        std::vector<ScoredResponse> corpus;
        for (int i = 0; i < 2000; ++i) corpus.push_back(token_logprobs(p, sample(p, 64, rng)));
        auto res = ursla_probe(corpus, 4);
        REQUIRE(res.rank_correlation.has_value());
        CHECK(*res.rank_correlation < -0.5);
    }
    CHECK_THROWS_AS(ursla_probe({}, 4), Error);
}

TEST_CASE("loss-eval CSV contract") {
    auto dir = scratch("loss_eval");
    LabConfig cfg;
    cfg.set("out_dir", dir.string());
    cfg.set("gamma", "1");

    SUBCASE("symmetric pair gives ln 2 for refa_dynamic") {
        std::ofstream(dir / "in.jsonl")
            << R"({"query_id":"sym","responses":[)"
               R"({"tokens":[2,1],"reward":1,"token_logprobs":[-1,-1]},)"
               R"({"tokens":[3,1],"reward":0,"token_logprobs":[-1,-1]}]})"
            << "\n";
        cfg.set("input", (dir / "in.jsonl").string());
        auto res = run_command("loss-eval", cfg);
        CHECK(res.exit_code == 0);
        auto rows = lines(slurp(dir / "loss_eval.csv"));
        REQUIRE(rows.size() == 2);
        std::vector<std::string> head, vals;
        std::stringstream hs(rows[0]), vs(rows[1]);
        for (std::string c; std::getline(hs, c, ',');) head.push_back(c);
        for (std::string c; std::getline(vs, c, ',');) vals.push_back(c);
        auto col = std::find(head.begin(), head.end(), "refa_dynamic") - head.begin();
        REQUIRE(static_cast<std::size_t>(col) < vals.size());
        CHECK(std::abs(std::stod(vals[col]) - std::log(2.0)) < 1e-12);
    }
    SUBCASE("one malformed line is reported, the rest processed") {
        std::ofstream(dir / "in.jsonl")
            << R"({"query_id":"a","responses":[{"tokens":[2,1],"reward":1,"token_logprobs":[-1,-2]},{"tokens":[3,1],"reward":0,"token_logprobs":[-1,-1]}]})"
            << "\n{broken\n"
            << R"({"query_id":"c","responses":[{"tokens":[2,1],"reward":1,"token_logprobs":[-1,-2]},{"tokens":[3,1],"reward":0}]})"
            << "\n"
            << R"({"query_id":"d","responses":[{"tokens":[2,1],"reward":0,"token_logprobs":[-1,-2]},{"tokens":[3,1],"reward":1,"token_logprobs":[-3,-1]}]})"
            << "\n";
        cfg.set("input", (dir / "in.jsonl").string());
        auto res = run_command("loss-eval", cfg);
        CHECK(res.exit_code == 1);
        CHECK(res.summary.find("line 2") != std::string::npos);
        CHECK(res.summary.find("line 3") != std::string::npos);
        CHECK(lines(slurp(dir / "loss_eval.csv")).size() == 3);
        CHECK(lines(slurp(dir / "loss_eval_errors.csv")).size() == 3);
    }
    SUBCASE("empty file gives a header-only CSV") {
        std::ofstream(dir / "in.jsonl") << "";
        cfg.set("input", (dir / "in.jsonl").string());
        auto res = run_command("loss-eval", cfg);
        CHECK(res.exit_code == 0);
        CHECK(lines(slurp(dir / "loss_eval.csv")).size() == 1);
    }
    SUBCASE("missing input file is an i/o error") {
        cfg.set("input", (dir / "missing.jsonl").string());
        CHECK(run_command("loss-eval", cfg).exit_code == 2);
    }
}

TEST_CASE("grad-check command exit codes") {
    auto dir = scratch("grad_check");
    LabConfig cfg;
    cfg.set("out_dir", dir.string());
    cfg.set("instances", "3");
    CHECK(run_command("grad-check", cfg).exit_code == 0);
    CHECK(lines(slurp(dir / "grad_check.csv")).size() == 1 + 3 * grad_suite_loss_kinds().size());
    cfg.set("inject_sign_error", "true");
    CHECK(run_command("grad-check", cfg).exit_code == 1);
    cfg.set("instances", "0");
    auto res = run_command("grad-check", cfg);
    CHECK(res.exit_code == 0);
    CHECK(res.summary.find("warning") != std::string::npos);
    CHECK(slurp(dir / "grad_check.csv") == "loss_kind,K,gamma,max_rel_err,passed\n");
}

TEST_CASE("shortcut demo: identical lambda gives identical histories") {
    LabConfig cfg;
    cfg.set("epochs", "5");
    cfg.set("synth_groups", "20");
    cfg.set("eval_samples", "50");
    cfg.set("lambda_sweep", "0");
    auto res = run_shortcut_demo(cfg);
    REQUIRE(res.regularized.size() == 1);
    CHECK(history_csv(res.baseline.history) == history_csv(res.regularized[0].history));
}

TEST_CASE("budget sweep: lambda 0 column is the unregularized length for every b") {
    LabConfig cfg;
    cfg.set("epochs", "5");
    cfg.set("budgets", "4,9");
    cfg.set("budget_lambdas", "0.5");
    cfg.set("sweep_samples", "200");
    cfg.set("on_policy_groups", "8");
    auto res = run_budget_sweep(cfg);
    REQUIRE(res.cells.size() == 4);
    CHECK(res.lambdas == std::vector<double>{0.0, 0.5});
    CHECK(res.cells[0].lambda == 0.0);
    CHECK(res.cells[2].lambda == 0.0);
    CHECK(res.cells[0].mean_len == res.cells[2].mean_len);
    CHECK(res.cells[0].histogram == res.cells[2].histogram);
}

TEST_CASE("stationary command") {
    auto dir = scratch("stationary");
    LabConfig cfg;
    cfg.set("out_dir", dir.string());
    cfg.set("reference", "0.2,0.8");
    CHECK(run_command("stationary", cfg).exit_code == 0);
    cfg.set("max_iters", "1");
    cfg.set("step", "0.001");
    CHECK(run_command("stationary", cfg).exit_code == 1);
}
