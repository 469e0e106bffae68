// SPDX-License-Identifier: Apache-2.0
#include "refa/prefdata.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "refa/error.hpp"

namespace refa {

using json = nlohmann::json;

std::vector<bool> Partition::positive_mask(std::size_t k) const {
    std::vector<bool> mask(k, false);
    for (std::size_t i : positive) mask[i] = true;
    return mask;
}

void validate_scores(const ScoredResponse& r) {
    const std::size_t n = r.tokens.size();
    if (r.has_logprobs()) {
        require(r.token_logprobs.size() == n,
                "token_logprobs length " + std::to_string(r.token_logprobs.size()) +
                    " != token count " + std::to_string(n));
        for (double lp : r.token_logprobs)
            require(std::isfinite(lp) && lp <= 0.0,
                    "token_logprobs must be finite and <= 0");
    }
    if (r.has_eos_probs()) {
        require(r.eos_probs.size() == n,
                "eos_probs length " + std::to_string(r.eos_probs.size()) +
                    " != token count " + std::to_string(n));
        for (double p : r.eos_probs)
            require(p >= 0.0 && p <= 1.0, "eos_probs must lie in [0, 1]");
    }
}

void validate(const PreferenceGroup& group) {
    require(group.responses.size() >= 2,
            "group '" + group.query_id + "' needs K >= 2 responses, got " +
                std::to_string(group.responses.size()));
    require(group.responses.size() == group.rewards.size(),
            "group '" + group.query_id + "': rewards length " +
                std::to_string(group.rewards.size()) + " != responses length " +
                std::to_string(group.responses.size()));
    for (double r : group.rewards)
        require(std::isfinite(r), "group '" + group.query_id + "': non-finite reward");
    for (const auto& resp : group.responses) {
        require(!resp.tokens.empty(),
                "group '" + group.query_id + "': empty token sequence");
        for (TokenId t : resp.tokens)
            require(t >= 0, "group '" + group.query_id + "': negative token id");
        validate_scores(resp);
    }
}

namespace {

std::string at_line(std::size_t line_no) {
    return "line " + std::to_string(line_no) + ": ";
}

PreferenceGroup from_json(const json& j) {
    PreferenceGroup g;
    if (!j.is_object()) fail(ErrorKind::parse, "record is not a JSON object");
    if (!j.contains("query_id") || !j["query_id"].is_string())
        fail(ErrorKind::parse, "missing string field 'query_id'");
    if (!j.contains("responses") || !j["responses"].is_array())
        fail(ErrorKind::parse, "missing array field 'responses'");
    g.query_id = j["query_id"].get<std::string>();
    for (const auto& rj : j["responses"]) {
        if (!rj.is_object()) fail(ErrorKind::parse, "response is not an object");
        ScoredResponse r;
        if (!rj.contains("tokens") || !rj["tokens"].is_array())
            fail(ErrorKind::parse, "response missing 'tokens'");
        for (const auto& t : rj["tokens"]) {
            if (!t.is_number_integer()) fail(ErrorKind::parse, "token id is not an integer");
            r.tokens.push_back(t.get<TokenId>());
        }
        if (rj.contains("reward")) {
            if (!rj["reward"].is_number()) fail(ErrorKind::parse, "'reward' is not a number");
            g.rewards.push_back(rj["reward"].get<double>());
        }
        for (const char* field : {"token_logprobs", "eos_probs"}) {
            if (!rj.contains(field)) continue;
            if (!rj[field].is_array())
                fail(ErrorKind::parse, std::string("'") + field + "' is not an array");
            auto& dst = std::string(field) == "token_logprobs" ? r.token_logprobs
                                                               : r.eos_probs;
            for (const auto& v : rj[field]) {
                if (!v.is_number()) fail(ErrorKind::parse, std::string(field) + " holds a non-number");
                dst.push_back(v.get<double>());
            }
        }
        g.responses.push_back(std::move(r));
    }
    return g;
}

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

PreferenceGroup parse_group(const std::string& line, std::size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, at_line(line_no) + "malformed JSON: " + e.what());
    }
    PreferenceGroup g;
    try {
        g = from_json(j);
        validate(g);
    } catch (const Error& e) {
        throw Error(e.kind(), at_line(line_no) + e.what());
    }
    return g;
}

std::vector<PreferenceGroup> load_groups(std::istream& source) {
    std::vector<PreferenceGroup> groups;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(source, line)) {
        ++line_no;
        if (blank(line)) continue;
        groups.push_back(parse_group(line, line_no));
    }
    return groups;
}

std::vector<PreferenceGroup> load_groups_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
    return load_groups(in);
}

LenientLoad load_groups_lenient(std::istream& source) {
    LenientLoad out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(source, line)) {
        ++line_no;
        if (blank(line)) continue;
        try {
            out.groups.push_back(parse_group(line, line_no));
            out.group_lines.push_back(line_no);
        } catch (const Error& e) {
            out.errors.push_back({line_no, e.what()});
        }
    }
    return out;
}

std::string to_json_line(const PreferenceGroup& group) {
    json j;
    j["query_id"] = group.query_id;
    j["responses"] = json::array();
    for (std::size_t i = 0; i < group.responses.size(); ++i) {
        const auto& r = group.responses[i];
        json rj;
        rj["tokens"] = r.tokens;
        rj["reward"] = group.rewards.at(i);
        if (r.has_logprobs()) rj["token_logprobs"] = r.token_logprobs;
        if (r.has_eos_probs()) rj["eos_probs"] = r.eos_probs;
        j["responses"].push_back(std::move(rj));
    }
    return j.dump();
}

Partition partition(const std::vector<double>& rewards) {
    require(rewards.size() >= 2, "partition needs K >= 2");
    Partition part;
    part.mean_reward =
        std::accumulate(rewards.begin(), rewards.end(), 0.0) /
        static_cast<double>(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (rewards[i] > part.mean_reward)
            part.positive.push_back(i);
        else
            part.negative.push_back(i);
    }
    return part;
}

Partition partition(const PreferenceGroup& group) { return partition(group.rewards); }

DeviationVector deviations(const std::vector<double>& rewards, int p,
                           bool signed_power) {
    if (p < 0 || p > 2) fail(ErrorKind::validation, "deviation power p must be 0, 1 or 2");
    const double mean = partition(rewards).mean_reward;
    DeviationVector dev;
    dev.power = p;
    dev.values.reserve(rewards.size());
    for (double r : rewards) {
        const double d = r - mean;
        double v = 1.0;
        if (p == 1) v = d;
        if (p == 2) v = signed_power ? d * std::abs(d) : d * d;
        dev.values.push_back(v);
    }
    return dev;
}

DeviationVector deviations(const PreferenceGroup& group, int p, bool signed_power) {
    return deviations(group.rewards, p, signed_power);
}

}  // namespace refa
