#include "lf/curation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "lf/errors.hpp"

#include <json.hpp>

namespace lf {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string trim_copy(std::string_view text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) {
        ++begin;
    }
    while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) {
        --end;
    }
    return std::string(text.substr(begin, end - begin));
}

// Splits on "||" into at most `limit` parts; the last part keeps any
// remaining separators.
std::vector<std::string> split_parts(std::string_view text, std::size_t limit) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (parts.size() + 1 < limit) {
        const std::size_t sep = text.find("||", pos);
        if (sep == std::string_view::npos) {
            break;
        }
        parts.push_back(trim_copy(text.substr(pos, sep - pos)));
        pos = sep + 2;
    }
    parts.push_back(trim_copy(text.substr(pos)));
    return parts;
}

struct RankedTool {
    std::string name;
    std::uint64_t count = 0;
    std::uint64_t first_seen = 0;
};

std::vector<RankedTool> ranked_tools(const ToolPool& pool) {
    std::vector<RankedTool> ranked;
    for (const auto& [name, count] : pool.presence_count) {
        if (count == 0) {
            continue;
        }
        RankedTool tool;
        tool.name = name;
        tool.count = count;
        const auto seen = pool.first_seen.find(name);
        tool.first_seen = seen == pool.first_seen.end() ? 0 : seen->second;
        ranked.push_back(std::move(tool));
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedTool& a, const RankedTool& b) {
        if (a.count != b.count) {
            return a.count > b.count;
        }
        if (a.first_seen != b.first_seen) {
            return a.first_seen < b.first_seen;
        }
        return a.name < b.name;
    });
    return ranked;
}

ordered_json toolbox_to_json(const Toolbox& toolbox) {
    ordered_json doc;
    doc["k"] = toolbox.k;
    doc["coverage"] = toolbox.coverage;
    ordered_json tools = ordered_json::array();
    for (std::size_t i = 0; i < toolbox.tools.size(); ++i) {
        const ToolDefinition& tool = toolbox.tools[i];
        ordered_json entry;
        entry["name"] = tool.name;
        entry["params"] = tool.param_spec;
        entry["description"] = tool.description;
        entry["count"] = toolbox.counts.size() > i ? toolbox.counts[i] : 0;
        if (tool.is_stub) {
            entry["stub"] = true;
        }
        tools.push_back(std::move(entry));
    }
    doc["tools"] = std::move(tools);
    return doc;
}

}  // namespace

bool Toolbox::contains(std::string_view name) const {
    return std::any_of(tools.begin(), tools.end(),
                       [&](const ToolDefinition& tool) { return tool.name == name; });
}

std::optional<std::string> normalize_tool_name(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char ch : raw) {
        const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (lower == ' ' || lower == '\t' || lower == '-') {
            out += '_';
        } else if ((lower >= 'a' && lower <= 'z') || (lower >= '0' && lower <= '9') ||
                   lower == '_') {
            out += lower;
        }
    }
    // Collapse underscore runs, trim the ends.
    std::string collapsed;
    collapsed.reserve(out.size());
    for (char ch : out) {
        if (ch == '_' && (collapsed.empty() || collapsed.back() == '_')) {
            continue;
        }
        collapsed += ch;
    }
    while (!collapsed.empty() && collapsed.back() == '_') {
        collapsed.pop_back();
    }
    if (collapsed.empty()) {
        return std::nullopt;
    }
    return collapsed;
}

CurationOutput parse_curation_output(std::string_view text) {
    static constexpr std::string_view kSentinel = "END_OF_TOOLS";
    CurationOutput out;

    std::string_view scanned = text;
    const std::size_t sentinel = text.find(kSentinel);
    if (sentinel != std::string_view::npos) {
        scanned = text.substr(0, sentinel);
        out.terminated = true;
    }

    std::istringstream lines{std::string(scanned)};
    std::string line;
    std::set<std::string> defined;
    while (std::getline(lines, line)) {
        const std::string trimmed = trim_copy(line);
        static constexpr std::string_view kDefine = "DEFINE_TOOL:";
        if (trimmed.rfind(kDefine, 0) != 0) {
            continue;
        }
        const auto parts = split_parts(std::string_view(trimmed).substr(kDefine.size()), 3);
        if (parts.size() < 3 || parts[0].empty() || parts[1].empty() || parts[2].empty()) {
            ++out.skipped_define_lines;
            continue;
        }
        const auto name = normalize_tool_name(parts[0]);
        if (!name || !defined.insert(*name).second) {
            ++out.skipped_define_lines;
            continue;
        }
        ToolDefinition def;
        def.name = *name;
        def.param_spec = parts[1];
        def.description = parts[2];
        out.new_definitions.push_back(std::move(def));
    }

    out.applications = extract_tool_invocations(scanned, &out.malformed_tool_tags);
    return out;
}

std::set<std::string> trajectory_tool_set(const ParsedTrace& trace,
                                          const CurationOutput* curation, bool normalize) {
    std::set<std::string> names;
    auto insert = [&](const std::string& raw) {
        if (!normalize) {
            if (!raw.empty()) {
                names.insert(raw);
            }
        } else if (auto name = normalize_tool_name(raw)) {
            names.insert(*name);
        }
    };
    if (curation != nullptr) {
        for (const ToolInvocation& app : curation->applications) {
            insert(app.name);
        }
        return names;
    }
    for (const ToolInvocation& step : trace.exec_steps) {
        insert(step.name);
    }
    return names;
}

void update_pool(ToolPool& pool, const std::set<std::string>& tool_set,
                 const std::vector<ToolDefinition>& defs) {
    const std::uint64_t index = pool.trajectories_processed;

    for (const ToolDefinition& def : defs) {
        auto [it, inserted] = pool.definitions.emplace(def.name, def);
        if (inserted) {
            pool.first_seen.emplace(def.name, index);
        } else if (it->second.is_stub) {
            // A real triplet arrived for a previously stubbed name; first_seen stays.
            it->second = def;
        } else if (it->second.description != def.description ||
                   it->second.param_spec != def.param_spec) {
            pool.definition_conflicts.push_back(def.name);
        }
    }

    for (const std::string& name : tool_set) {
        if (pool.definitions.find(name) == pool.definitions.end()) {
            ToolDefinition stub;
            stub.name = name;
            stub.description = "(undefined tool observed in trajectories)";
            stub.param_spec = "";
            stub.is_stub = true;
            pool.definitions.emplace(name, std::move(stub));
            ++pool.undefined_names;
        }
        pool.first_seen.emplace(name, index);
        ++pool.presence_count[name];
    }
    ++pool.trajectories_processed;
}

Toolbox select_topk(const ToolPool& pool, int k) {
    if (k < 1) {
        throw Error("select_topk: k must be >= 1");
    }
    const auto ranked = ranked_tools(pool);
    if (ranked.empty()) {
        throw EmptyPool("select_topk: no counted tools in pool");
    }

    std::uint64_t total = 0;
    for (const RankedTool& tool : ranked) {
        total += tool.count;
    }

    Toolbox box;
    box.k = k;
    std::uint64_t selected_mass = 0;
    for (const RankedTool& tool : ranked) {
        box.source_pool_stats.emplace_back(tool.name, tool.count);
        if (static_cast<int>(box.tools.size()) < k) {
            box.tools.push_back(pool.definitions.at(tool.name));
            box.counts.push_back(tool.count);
            selected_mass += tool.count;
        }
    }
    box.coverage = static_cast<double>(selected_mass) / static_cast<double>(total);
    return box;
}

std::string render_toolbox_prompt(const Toolbox& toolbox, int num_images) {
    std::string prompt =
        "You are a specialized AI assistant for visual question answering.\n"
        "Your task is to answer the user's question by carefully analyzing all the provided "
        "images.\n"
        "\n"
        "Your response must strictly follow this XML format:\n"
        "<think>...</think>\n"
        "<description>...</description>\n"
        "<answer>...</answer>\n"
        "\n"
        "Guidance:\n"
        "1. In <think>, analyze all {" +
        std::to_string(num_images) +
        "} images and state which one(s) contain relevant evidence.\n"
        "2. In <description>, focus only on the selected images and describe your reasoning "
        "process using the tools below.\n"
        "3. In <answer>, provide only the final, concise answer grounded in visual evidence.\n"
        "\n"
        "Available Tools for <description>:\n";
    for (const ToolDefinition& tool : toolbox.tools) {
        if (tool.is_stub) {
            continue;
        }
        prompt += "-- <tool name=\"" + tool.name + "\" args=\"" + tool.param_spec + "\"> " +
                  tool.description + " </tool>\n";
    }
    return prompt;
}

std::string render_tool_pool_text(const ToolPool& pool) {
    std::string out;
    for (const RankedTool& tool : ranked_tools(pool)) {
        const ToolDefinition& def = pool.definitions.at(tool.name);
        if (def.is_stub) {
            continue;
        }
        out += "DEFINE_TOOL: " + def.name + " || " + def.param_spec + " || " + def.description +
               "\n";
    }
    return out;
}

Toolbox deployed_toolbox() {
    struct Entry {
        const char* name;
        const char* params;
        const char* description;
        std::uint64_t count;
    };
    // The curated top-7 with their usage counts over 1,500 trajectories.
    static const Entry kEntries[] = {
        {"read_text_element", "Image k: locator/region",
         "Read and transcribe visible text from the located region.", 964},
        {"read_numeric_value", "Image k: data point",
         "Extract specific numeric values or counts from visual elements.", 626},
        {"identify_entity_attribute", "Image k: entity",
         "Identify specific attributes associated with entities.", 259},
        {"compare_values", "Image k: value A vs value B",
         "Compare quantitative values to determine ordering or equality.", 259},
        {"locate_visual_element", "Image k: structural hint",
         "Locate specific visual elements or regions based on structural hints.", 245},
        {"compute_percentage", "part_value, total_value",
         "Compute the percentage based on given values.", 189},
        {"infer_missing_information", "Image k: data",
         "Infer missing information based on given data.", 41},
    };
    // Long-tail counts excluded from the box but part of the coverage mass.
    static const std::uint64_t kTailMass = 20 + 5 + 3;

    Toolbox box;
    box.k = 7;
    std::uint64_t selected = 0;
    for (const Entry& entry : kEntries) {
        ToolDefinition def;
        def.name = entry.name;
        def.param_spec = entry.params;
        def.description = entry.description;
        box.tools.push_back(std::move(def));
        box.counts.push_back(entry.count);
        box.source_pool_stats.emplace_back(entry.name, entry.count);
        selected += entry.count;
    }
    box.coverage = static_cast<double>(selected) / static_cast<double>(selected + kTailMass);
    return box;
}

void save_toolbox(const Toolbox& toolbox, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write toolbox file: " + path);
    }
    out << toolbox_to_json(toolbox).dump(2) << '\n';
}

Toolbox load_toolbox(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open toolbox file: " + path);
    }
    ordered_json doc = ordered_json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("tools") ||
        !doc["tools"].is_array()) {
        throw SchemaError("toolbox file: expected object with a 'tools' array: " + path);
    }
    Toolbox box;
    box.k = doc.value("k", 0);
    box.coverage = doc.value("coverage", 0.0);
    for (const auto& entry : doc["tools"]) {
        if (!entry.contains("name") || !entry["name"].is_string()) {
            throw SchemaError("toolbox file: tool entry without name: " + path);
        }
        ToolDefinition def;
        def.name = entry["name"].get<std::string>();
        def.param_spec = entry.value("params", "");
        def.description = entry.value("description", "");
        def.is_stub = entry.value("stub", false);
        box.counts.push_back(entry.value("count", std::uint64_t{0}));
        box.tools.push_back(std::move(def));
    }
    if (box.k == 0) {
        box.k = static_cast<int>(box.tools.size());
    }
    return box;
}

void save_pool_snapshot(const ToolPool& pool, const Toolbox& toolbox, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write pool snapshot: " + path);
    }
    ordered_json doc = toolbox_to_json(toolbox);
    doc["trajectories_processed"] = pool.trajectories_processed;
    ordered_json counts = ordered_json::object();
    for (const RankedTool& tool : ranked_tools(pool)) {
        counts[tool.name] = tool.count;
    }
    doc["counts"] = std::move(counts);
    doc["undefined_names"] = pool.undefined_names;
    doc["definition_conflicts"] = pool.definition_conflicts;
    out << doc.dump(2) << '\n';
}

}  // namespace lf
