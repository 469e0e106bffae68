// SPDX-License-Identifier: Apache-2.0
// refa_lab: experiment driver over the refa C API.
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refa/refa.h"

namespace {

struct KeyInfo {
    std::string name, default_value, help;
};

const std::map<std::string, std::string> kDescriptions = {
    {"grad-check", "Compare analytic gradients with central finite differences"},
    {"stationary", "Solve for the InfoNCA stationary distribution"},
    {"ursla-probe", "Bucket average per-token NLL by response length"},
    {"shortcut-demo", "Train with and without the targeted EOS regularizer"},
    {"budget-sweep", "Sweep the budgeted regularizer over budgets and lambdas"},
    {"loss-eval", "Evaluate every loss on a scored JSONL corpus"},
    {"train", "Train the toy bigram policy"},
};

std::vector<KeyInfo> known_keys() {
    std::vector<KeyInfo> out;
    for (size_t i = 0; i < refa_config_key_count(); ++i) {
        const char *name = nullptr, *def = nullptr, *help = nullptr;
        if (refa_config_key_info(i, &name, &def, &help) == REFA_OK)
            out.push_back({name, def, help});
    }
    return out;
}

struct Invocation {
    std::string config_file;
    std::map<std::string, std::string> overrides;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"REFA preference-optimization lab: gradient oracles, toy-policy "
                 "training and length-control experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(refa_version()));

    const auto keys = known_keys();
    std::map<std::string, Invocation> calls;
    std::vector<std::pair<CLI::App*, std::string>> subs;

    for (size_t c = 0; c < refa_command_count(); ++c) {
        const std::string name = refa_command_name(c);
        auto* sub = app.add_subcommand(
            name, kDescriptions.count(name) ? kDescriptions.at(name) : "run " + name);
        auto& call = calls[name];
        sub->add_option("--config", call.config_file, "flat key = value config file")
            ->check(CLI::ExistingFile);
        for (const auto& k : keys) {
            std::string help = k.help + " [default: " +
                               (k.default_value.empty() ? "\"\"" : k.default_value) + "]";
            sub->add_option("--" + k.name, call.overrides[k.name], help)
                ->type_name("VALUE");
        }
        subs.emplace_back(sub, name);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    for (const auto& [sub, name] : subs) {
        if (!sub->parsed()) continue;
        const auto& call = calls[name];

        refa_config* raw = nullptr;
        if (refa_config_create(&raw) != REFA_OK) {
            std::fprintf(stderr, "error: %s\n", refa_last_error());
            return 2;
        }
        std::unique_ptr<refa_config, decltype(&refa_config_destroy)> cfg(
            raw, refa_config_destroy);

        if (!call.config_file.empty() &&
            refa_config_load_file(cfg.get(), call.config_file.c_str()) != REFA_OK) {
            std::fprintf(stderr, "error: %s\n", refa_last_error());
            return 2;
        }
        // Flags win over file values.
        for (const auto& k : keys) {
            if (sub->count("--" + k.name) == 0) continue;
            const auto& v = call.overrides.at(k.name);
            if (refa_config_set(cfg.get(), k.name.c_str(), v.c_str()) != REFA_OK) {
                std::fprintf(stderr, "error: %s\n", refa_last_error());
                return 2;
            }
        }

        int exit_code = 2;
        const char* summary = "";
        if (refa_run_command(name.c_str(), cfg.get(), &exit_code, &summary) != REFA_OK) {
            std::fprintf(stderr, "error: %s\n", refa_last_error());
            return 2;
        }
        std::fprintf(exit_code == 0 ? stdout : stderr, "%s: %s\n", name.c_str(), summary);
        return exit_code;
    }
    return 2;
}
