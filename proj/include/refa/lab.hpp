// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "refa/gradlab.hpp"
#include "refa/toypolicy.hpp"

namespace refa {

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

const std::vector<ConfigKey>& config_keys();

// Flat key = value configuration. Unknown keys are rejected on set.
class LabConfig {
public:
    LabConfig();

    void set(const std::string& key, const std::string& value);
    // '#' starts a comment; blank lines ignored.
    void load_text(const std::string& text, const std::string& origin = "<text>");
    void load_file(const std::string& path);

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<long long> get_ints(const std::string& key) const;

    Hyperparams hyperparams() const;
    TrainConfig train_config() const;
    SyntheticSpec synthetic_spec() const;

private:
    std::map<std::string, std::string> values_;
};

struct CommandResult {
    int exit_code = 0;  // 0 pass, 1 check failure, 2 usage/config/io error
    std::string summary;
    std::vector<std::string> outputs;  // files written
};

const std::vector<std::string>& command_names();

// Runs a subcommand, writing CSVs under out_dir.
CommandResult run_command(const std::string& name, const LabConfig& config);

struct ShortcutArm {
    double lambda = 0.0;
    TrainHistory history;
    double initial_len = 0.0;
    double final_len = 0.0;
};

struct ShortcutResult {
    ShortcutArm baseline;
    std::vector<ShortcutArm> regularized;  // one per swept lambda
    std::size_t best = 0;                  // arm closest to initial length
    bool shortcut_observed = false;        // final < 80% of initial at lambda 0
    bool counteracted = false;             // best arm within 10% of initial
};

ShortcutResult run_shortcut_demo(const LabConfig& config);

struct BudgetCell {
    double lambda = 0.0;
    int budget = 0;
    double mean_len = 0.0;
    double mass_near_budget = 0.0;  // fraction of samples within +/-25% of b
    std::vector<int> histogram;     // counts per length 0..max_len
};

struct BudgetSweepResult {
    std::vector<BudgetCell> cells;  // ordered by budget, then lambda
    std::vector<int> budgets;
    std::vector<double> lambdas;    // includes the leading 0
    std::vector<int> non_increasing_steps;  // per budget
    std::vector<bool> mass_increased;       // per budget
    bool passed = false;
};

BudgetSweepResult run_budget_sweep(const LabConfig& config);

struct UrslaBucket {
    int lower = 0;  // inclusive length range [lower, lower + width)
    double mean_avg_nll = 0.0;
    int count = 0;
};

// Buckets are [lower, lower + width) with lower = 1, 1 + width, ...; the
// correlation is Spearman between bucket lower bound and mean avg_nll, 0 for a
// flat curve and absent with fewer than two buckets.
struct UrslaProbeResult {
    std::vector<UrslaBucket> buckets;
    std::optional<double> rank_correlation;
};

UrslaProbeResult ursla_probe(const std::vector<ScoredResponse>& corpus,
                             int bucket_width);

// Spearman rank correlation with average ranks for ties; empty when fewer
// than two points or either side is constant.
std::optional<double> spearman(const std::vector<double>& x,
                               const std::vector<double>& y);

}  // namespace refa
