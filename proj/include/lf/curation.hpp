#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lf/trace.hpp"

namespace lf {

// The standardized triplet a tool is stored as. Stub definitions are
// auto-generated placeholders for names that were counted without ever
// being defined; they keep frequency statistics complete but are never
// rendered into prompts.
struct ToolDefinition {
    std::string name;
    std::string description;
    std::string param_spec;
    bool is_stub = false;
};

// The growing pool: definitions plus per-trajectory presence counts.
struct ToolPool {
    std::map<std::string, ToolDefinition> definitions;
    std::map<std::string, std::uint64_t> presence_count;
    std::map<std::string, std::uint64_t> first_seen;
    std::uint64_t trajectories_processed = 0;
    std::vector<std::string> definition_conflicts;  // redefinition attempts, logged
    std::uint64_t undefined_names = 0;              // names counted under stubs
};

// The frozen Top-K subset used for prompting and validity checks.
struct Toolbox {
    std::vector<ToolDefinition> tools;   // sorted (count desc, first_seen asc, name asc)
    std::vector<std::uint64_t> counts;   // aligned with tools
    int k = 0;
    double coverage = 0.0;
    std::vector<std::pair<std::string, std::uint64_t>> source_pool_stats;

    bool contains(std::string_view name) const;
};

// Parsed curator-model output: DEFINE_TOOL triplets plus tool applications,
// truncated at the first END_OF_TOOLS sentinel.
struct CurationOutput {
    std::vector<ToolDefinition> new_definitions;
    std::vector<ToolInvocation> applications;
    bool terminated = false;
    std::size_t skipped_define_lines = 0;
    std::size_t malformed_tool_tags = 0;
};

// Lowercases, maps spaces/hyphens to underscores, strips everything
// outside [a-z0-9_], collapses underscore runs and trims the ends.
// Returns nullopt when nothing remains.
std::optional<std::string> normalize_tool_name(std::string_view raw);

CurationOutput parse_curation_output(std::string_view text);

// The deduplicated set of canonical tool names used in one trajectory.
// When a curation pass ran, its applications take precedence over the
// trace's own invocations. normalize=false keeps raw names.
std::set<std::string> trajectory_tool_set(const ParsedTrace& trace,
                                          const CurationOutput* curation = nullptr,
                                          bool normalize = true);

// Applies one trajectory: union the tool set into the pool, bump presence
// counts, record first_seen for new names. Existing definitions are never
// overwritten; names without any definition are counted under stubs.
void update_pool(ToolPool& pool, const std::set<std::string>& tool_set,
                 const std::vector<ToolDefinition>& defs);

// The k highest-presence tools with deterministic tie-break and coverage
// over presence-count mass. Throws EmptyPool when nothing was counted.
Toolbox select_topk(const ToolPool& pool, int k);

// System-prompt text for tool-grounded inference: format instructions plus
// one tool line per non-stub toolbox entry. Byte-stable.
std::string render_toolbox_prompt(const Toolbox& toolbox, int num_images);

// Pool rendering for the curation prompt's CURRENT TOOL POOL section; one
// DEFINE_TOOL line per non-stub definition, empty string for an empty pool.
std::string render_tool_pool_text(const ToolPool& pool);

// The seven-tool toolbox shipped in the inference prompt, with its curated
// usage counts.
Toolbox deployed_toolbox();

void save_toolbox(const Toolbox& toolbox, const std::string& path);
Toolbox load_toolbox(const std::string& path);
void save_pool_snapshot(const ToolPool& pool, const Toolbox& toolbox, const std::string& path);

}  // namespace lf
