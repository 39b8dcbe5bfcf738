#include "lf/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

#include "lf/errors.hpp"

namespace lf {

namespace {

// Full-string numeric parse after stripping '%' and thousands separators.
std::optional<double> parse_numeric(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char ch : text) {
        if (ch == '%' || ch == ',') {
            continue;
        }
        cleaned += ch;
    }
    if (cleaned.empty()) {
        return std::nullopt;
    }
    char* end = nullptr;
    const double value = std::strtod(cleaned.c_str(), &end);
    if (end != cleaned.c_str() + cleaned.size()) {
        return std::nullopt;
    }
    return value;
}

bool all_equal(const std::vector<double>& values) {
    return std::all_of(values.begin(), values.end(),
                       [&](double v) { return v == values.front(); });
}

}  // namespace

AnswerMode answer_mode_from_string(std::string_view name) {
    if (name == "exact_normalized" || name == "exact") {
        return AnswerMode::exact_normalized;
    }
    if (name == "judge") {
        return AnswerMode::judge;
    }
    throw ConfigError("unknown answer mode: " + std::string(name));
}

const char* to_string(AnswerMode mode) {
    return mode == AnswerMode::judge ? "judge" : "exact_normalized";
}

const char* to_string(Violation violation) {
    switch (violation) {
        case Violation::missing_block:
            return "missing_block";
        case Violation::duplicate_block:
            return "duplicate_block";
        case Violation::block_order:
            return "block_order";
        case Violation::tool_outside_description:
            return "tool_outside_description";
        case Violation::unknown_tool:
            return "unknown_tool";
        case Violation::empty_tool_chain:
            return "empty_tool_chain";
        case Violation::extras_outside_tags:
            return "extras_outside_tags";
    }
    return "unknown";
}

std::string normalize_answer(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    while (!out.empty() &&
           (out.back() == '.' || out.back() == ',' || out.back() == '!' || out.back() == '?')) {
        out.pop_back();
        while (!out.empty() && out.back() == ' ') {
            out.pop_back();
        }
    }
    return out;
}

int answer_reward(const std::string& prediction, const std::string& gold, AnswerMode mode,
                  const VerdictProvider& judge) {
    if (mode == AnswerMode::judge) {
        if (!judge) {
            throw JudgeUnavailable("answer_reward: judge mode with no verdict provider");
        }
        return judge(prediction, gold) ? 1 : 0;
    }
    const std::string lhs = normalize_answer(prediction);
    const std::string rhs = normalize_answer(gold);
    if (lhs == rhs) {
        return 1;
    }
    const auto lhs_num = parse_numeric(lhs);
    const auto rhs_num = parse_numeric(rhs);
    if (lhs_num && rhs_num) {
        return *lhs_num == *rhs_num ? 1 : 0;
    }
    return 0;
}

ToolRewardResult tool_reward(const ParsedTrace& trace, const Toolbox& toolbox,
                             const RewardConfig& config) {
    std::vector<Violation> reasons;

    if (trace.think_blocks == 0 || trace.description_blocks == 0 || trace.answer_blocks == 0) {
        reasons.push_back(Violation::missing_block);
    }
    if (trace.think_blocks > 1 || trace.description_blocks > 1 || trace.answer_blocks > 1) {
        reasons.push_back(Violation::duplicate_block);
    }
    if (trace.think_blocks == 1 && trace.description_blocks == 1 && trace.answer_blocks == 1 &&
        !trace.blocks_in_order) {
        reasons.push_back(Violation::block_order);
    }
    if (trace.tools_outside_description > 0) {
        reasons.push_back(Violation::tool_outside_description);
    }
    for (const ToolInvocation& step : trace.exec_steps) {
        const auto name = normalize_tool_name(step.name);
        if (!name || !toolbox.contains(*name)) {
            reasons.push_back(Violation::unknown_tool);
            break;
        }
    }
    if (config.require_tool_invocation && trace.exec_steps.empty()) {
        reasons.push_back(Violation::empty_tool_chain);
    }
    if (config.strict_extras && !trace.extras_outside_tags.empty()) {
        reasons.push_back(Violation::extras_outside_tags);
    }

    return {reasons.empty() ? 1 : 0, std::move(reasons)};
}

ToolRewardResult tool_reward(const TraceResult& trace, const Toolbox& toolbox,
                             const RewardConfig& config) {
    if (const ParsedTrace* parsed = get_trace(trace)) {
        return tool_reward(*parsed, toolbox, config);
    }
    // Unparseable output: a block is missing or never closed.
    return {0, {Violation::missing_block}};
}

double combined_reward(int r_ans, int r_tool, const RewardConfig& config) {
    return config.alpha * r_ans + config.beta * r_tool;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon) {
    if (rewards.size() < 2) {
        throw LengthMismatch("group_advantages: need at least 2 rewards");
    }
    // All-equal groups are exactly zero; the mean of n identical values is
    // not, in floating point.
    if (all_equal(rewards)) {
        return std::vector<double>(rewards.size(), 0.0);
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= n;

    double variance = 0.0;
    for (double r : rewards) {
        variance += (r - mean) * (r - mean);
    }
    variance /= n;
    const double stddev = std::sqrt(variance);

    std::vector<double> advantages(rewards.size(), 0.0);
    if (stddev == 0.0) {
        return advantages;
    }
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        advantages[i] = (rewards[i] - mean) / (stddev + epsilon);
    }
    return advantages;
}

SamplingPartition dynamic_sampling_filter(std::vector<GroupRollout> groups) {
    SamplingPartition partition;
    for (GroupRollout& group : groups) {
        group.dropped = !group.rewards.empty() && all_equal(group.rewards);
        if (group.dropped) {
            partition.dropped.push_back(std::move(group));
        } else {
            partition.kept.push_back(std::move(group));
        }
    }
    return partition;
}

DifficultyFilterResult difficulty_filter(const std::map<std::string, std::vector<int>>& records,
                                         int group_size) {
    if (group_size < 1) {
        throw Error("difficulty_filter: group size must be >= 1");
    }
    DifficultyFilterResult result;
    result.report.pass_rate_histogram.assign(static_cast<std::size_t>(group_size) + 1, 0);
    for (const auto& [query_id, correctness] : records) {
        if (static_cast<int>(correctness.size()) != group_size) {
            throw LengthMismatch("difficulty_filter: query '" + query_id + "' has " +
                                 std::to_string(correctness.size()) + " rollouts, expected " +
                                 std::to_string(group_size));
        }
        int correct = 0;
        for (int v : correctness) {
            if (v != 0 && v != 1) {
                throw SchemaError("difficulty_filter: correctness entries must be 0 or 1");
            }
            correct += v;
        }
        ++result.report.pass_rate_histogram[static_cast<std::size_t>(correct)];
        ++result.report.total;
        if (correct == group_size) {
            ++result.report.removed_all_correct;
        } else {
            result.retained_ids.push_back(query_id);
        }
    }
    result.report.retained = result.report.total - result.report.removed_all_correct;
    return result;
}

}  // namespace lf
