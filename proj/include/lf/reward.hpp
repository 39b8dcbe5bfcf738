#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lf/curation.hpp"
#include "lf/trace.hpp"

namespace lf {

enum class AnswerMode {
    exact_normalized,
    judge,
};

AnswerMode answer_mode_from_string(std::string_view name);
const char* to_string(AnswerMode mode);

struct RewardConfig {
    double alpha = 0.8;
    double beta = 0.2;
    AnswerMode answer_mode = AnswerMode::exact_normalized;
    int group_size = 8;
    double advantage_epsilon = 1e-6;
    // Structural-validity knobs: an empty tool chain fails by default, text
    // outside the three blocks is tolerated by default.
    bool require_tool_invocation = true;
    bool strict_extras = false;
    // Carried for export to external trainers; not applied here.
    double clip_epsilon = 0.2;
    double clip_epsilon_high = 0.28;
};

enum class Violation {
    missing_block,
    duplicate_block,
    block_order,
    tool_outside_description,
    unknown_tool,
    empty_tool_chain,
    extras_outside_tags,
};

const char* to_string(Violation violation);

struct RewardRecord {
    std::string query_id;
    int r_ans = 0;
    int r_tool = 0;
    double combined = 0.0;
    std::vector<Violation> validity_reasons;
};

struct GroupRollout {
    std::string query_id;
    std::vector<double> rewards;
    std::optional<std::vector<double>> advantages;
    bool dropped = false;
};

struct FilterReport {
    std::size_t total = 0;
    std::size_t removed_all_correct = 0;
    std::size_t retained = 0;
    std::vector<std::size_t> pass_rate_histogram;  // G+1 buckets, 0..G correct
};

// Comparison normalization: trim, lowercase, collapse whitespace, strip
// terminal punctuation (. , ! ?).
std::string normalize_answer(std::string_view text);

using VerdictProvider = std::function<bool(const std::string& prediction, const std::string& gold)>;

// Binary answer reward. Exact mode compares normalized strings, falling
// back to numeric equality when both sides parse as numbers after '%' and
// thousands separators are stripped. Judge mode defers to the provider.
int answer_reward(const std::string& prediction, const std::string& gold, AnswerMode mode,
                  const VerdictProvider& judge = {});

using ToolRewardResult = std::pair<int, std::vector<Violation>>;

// Structural validity of the toolchain against a frozen toolbox: correct
// tag order, tools confined to the description block, every invocation
// named in the toolbox, and at least one invocation. Returns 1 or 0 plus
// one reason per violated clause.
ToolRewardResult tool_reward(const ParsedTrace& trace, const Toolbox& toolbox,
                             const RewardConfig& config = {});
ToolRewardResult tool_reward(const TraceResult& trace, const Toolbox& toolbox,
                             const RewardConfig& config = {});

double combined_reward(int r_ans, int r_tool, const RewardConfig& config);

// Group-relative advantages: (r - mean) / (population std + epsilon).
// All-equal groups produce all-zero advantages.
std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon);

struct SamplingPartition {
    std::vector<GroupRollout> kept;
    std::vector<GroupRollout> dropped;
};

// Marks zero-variance groups (no learning signal) as dropped and splits
// the input into kept/dropped.
SamplingPartition dynamic_sampling_filter(std::vector<GroupRollout> groups);

struct DifficultyFilterResult {
    FilterReport report;
    std::vector<std::string> retained_ids;
};

// Removes exactly the queries whose rollouts are all correct; everything
// else, including all-wrong queries, is retained.
DifficultyFilterResult difficulty_filter(const std::map<std::string, std::vector<int>>& records,
                                         int group_size);

}  // namespace lf
