#include <doctest.h>

#include <algorithm>
#include <random>

#include "lf/curation.hpp"
#include "lf/errors.hpp"

using namespace lf;

namespace {

// The appendix usage table: name, per-trajectory presence count.
struct TableRow {
    const char* name;
    std::uint64_t count;
};
constexpr TableRow kUsageTable[] = {
    {"read_text_element", 964},       {"read_numeric_value", 626},
    {"identify_entity_attribute", 259}, {"compare_values", 259},
    {"locate_visual_element", 245},   {"compute_percentage", 189},
    {"infer_missing_information", 41}, {"subtract_values", 20},
    {"add_values", 5},                {"count_matching_values", 3},
};
constexpr std::size_t kTableSize = sizeof(kUsageTable) / sizeof(kUsageTable[0]);
constexpr std::size_t kTrajectories = 1500;

// Trajectory i uses tool j iff j <= i < j + count_j; staggered starts give
// every tool a distinct first_seen in table order.
std::vector<std::set<std::string>> staggered_tool_sets() {
    std::vector<std::set<std::string>> sets(kTrajectories);
    for (std::size_t j = 0; j < kTableSize; ++j) {
        for (std::size_t i = j; i < j + kUsageTable[j].count; ++i) {
            sets[i].insert(kUsageTable[j].name);
        }
    }
    return sets;
}

ToolDefinition def_for(const std::string& name) {
    ToolDefinition def;
    def.name = name;
    def.param_spec = "val";
    def.description = "Synthetic tool " + name + ".";
    return def;
}

ToolPool pool_from_sets(const std::vector<std::set<std::string>>& sets) {
    ToolPool pool;
    for (const auto& set : sets) {
        std::vector<ToolDefinition> defs;
        for (const auto& name : set) {
            defs.push_back(def_for(name));
        }
        update_pool(pool, set, defs);
    }
    return pool;
}

}  // namespace

TEST_CASE("normalize_tool_name") {
    CHECK(normalize_tool_name("Read Text-Element") == "read_text_element");
    CHECK(normalize_tool_name("compare_values") == "compare_values");
    CHECK(normalize_tool_name("  COMPUTE %%percentage ") == "compute_percentage");
    CHECK(normalize_tool_name("a__b---c") == "a_b_c");
    CHECK_FALSE(normalize_tool_name("%%%").has_value());
    CHECK_FALSE(normalize_tool_name("  ").has_value());
}

TEST_CASE("parse_curation_output") {
    SUBCASE("definition plus application plus sentinel") {
        const CurationOutput out = parse_curation_output(
            "DEFINE_TOOL: subtract_values || val1, val2 || Calculate difference.\n"
            "<tool name=\"subtract_values\" args=\"150, 100\">50</tool>\n"
            "END_OF_TOOLS");
        REQUIRE(out.new_definitions.size() == 1);
        CHECK(out.new_definitions[0].name == "subtract_values");
        CHECK(out.new_definitions[0].param_spec == "val1, val2");
        CHECK(out.new_definitions[0].description == "Calculate difference.");
        REQUIRE(out.applications.size() == 1);
        CHECK(out.applications[0].name == "subtract_values");
        CHECK(out.terminated);
    }
    SUBCASE("sentinel alone") {
        const CurationOutput out = parse_curation_output("END_OF_TOOLS");
        CHECK(out.new_definitions.empty());
        CHECK(out.applications.empty());
        CHECK(out.terminated);
    }
    SUBCASE("content after the sentinel is ignored") {
        const std::string text =
            "<tool name=\"keep\" args=\"\">1</tool>\n"
            "END_OF_TOOLS\n"
            "<tool name=\"drop\" args=\"\">2</tool>\n"
            "DEFINE_TOOL: drop || x || y\n";
        const CurationOutput out = parse_curation_output(text);
        // Two-pass oracle: truncate at the sentinel, then extract.
        const std::string truncated = text.substr(0, text.find("END_OF_TOOLS"));
        CHECK(out.applications == extract_tool_invocations(truncated));
        CHECK(out.new_definitions.empty());
        CHECK(out.terminated);
    }
    SUBCASE("missing sentinel leaves terminated false") {
        CHECK_FALSE(parse_curation_output("DEFINE_TOOL: a || b || c").terminated);
    }
    SUBCASE("short DEFINE_TOOL lines are skipped and counted") {
        const CurationOutput out = parse_curation_output(
            "DEFINE_TOOL: only_name\n"
            "DEFINE_TOOL: two || parts\n"
            "DEFINE_TOOL: ok || args || desc\n");
        CHECK(out.skipped_define_lines == 2);
        REQUIRE(out.new_definitions.size() == 1);
        CHECK(out.new_definitions[0].name == "ok");
    }
    SUBCASE("description may contain the separator") {
        const CurationOutput out =
            parse_curation_output("DEFINE_TOOL: t || a, b || Does x || even y.\n");
        REQUIRE(out.new_definitions.size() == 1);
        CHECK(out.new_definitions[0].description == "Does x || even y.");
    }
}

TEST_CASE("trajectory_tool_set deduplicates by presence") {
    ParsedTrace trace;
    trace.exec_steps = {{"read_text_element", "", ""},
                        {"read_text_element", "", ""},
                        {"Compare Values", "", ""}};
    const auto set = trajectory_tool_set(trace);
    CHECK(set == std::set<std::string>{"read_text_element", "compare_values"});

    SUBCASE("empty steps give the empty set") {
        ParsedTrace empty;
        CHECK(trajectory_tool_set(empty).empty());
    }
    SUBCASE("curation applications take precedence") {
        CurationOutput curation;
        curation.applications = {{"locate_visual_element", "", ""}};
        CHECK(trajectory_tool_set(trace, &curation) ==
              std::set<std::string>{"locate_visual_element"});
    }
}

TEST_CASE("update_pool counts presence and records first_seen") {
    ToolPool pool;
    update_pool(pool, {"a"}, {def_for("a")});
    CHECK(pool.presence_count.at("a") == 1);
    CHECK(pool.trajectories_processed == 1);
    CHECK(pool.first_seen.at("a") == 0);

    update_pool(pool, {"a", "b"}, {def_for("b")});
    CHECK(pool.presence_count.at("a") == 2);
    CHECK(pool.presence_count.at("b") == 1);
    CHECK(pool.first_seen.at("b") == 1);
    CHECK(pool.trajectories_processed == 2);

    SUBCASE("undefined names get stub definitions") {
        update_pool(pool, {"ghost"}, {});
        CHECK(pool.definitions.at("ghost").is_stub);
        CHECK(pool.undefined_names == 1);
        CHECK(pool.presence_count.at("ghost") == 1);
    }
    SUBCASE("definitions are first-writer-wins") {
        ToolDefinition redefined = def_for("a");
        redefined.description = "Different.";
        update_pool(pool, {"a"}, {redefined});
        CHECK(pool.definitions.at("a").description == "Synthetic tool a.");
        REQUIRE(pool.definition_conflicts.size() == 1);
        CHECK(pool.definition_conflicts[0] == "a");
    }
}

TEST_CASE("update_pool replay matches a brute-force tally") {
    std::mt19937 rng(17);
    const std::vector<std::string> names = {"a", "b", "c", "d"};
    std::vector<std::set<std::string>> sets;
    for (int i = 0; i < 10; ++i) {
        std::set<std::string> set;
        for (const auto& name : names) {
            if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
                set.insert(name);
            }
        }
        sets.push_back(std::move(set));
    }
    const ToolPool pool = pool_from_sets(sets);
    for (const auto& name : names) {
        std::uint64_t tally = 0;
        for (const auto& set : sets) {
            tally += set.count(name);
        }
        const auto it = pool.presence_count.find(name);
        CHECK((it == pool.presence_count.end() ? 0 : it->second) == tally);
    }
    CHECK(pool.trajectories_processed == 10);
}

TEST_CASE("monotonic counts over a trajectory stream") {
    std::mt19937 rng(23);
    ToolPool pool;
    std::map<std::string, std::uint64_t> previous;
    for (int i = 0; i < 100; ++i) {
        std::set<std::string> set;
        for (const char* name : {"x", "y", "z"}) {
            if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
                set.insert(name);
            }
        }
        std::vector<ToolDefinition> defs;
        for (const auto& name : set) {
            defs.push_back(def_for(name));
        }
        update_pool(pool, set, defs);
        for (const auto& [name, count] : pool.presence_count) {
            CHECK(count >= previous[name]);
            CHECK(count <= pool.trajectories_processed);
            previous[name] = count;
        }
    }
}

TEST_CASE("select_topk reproduces the usage-table toolbox") {
    const ToolPool pool = pool_from_sets(staggered_tool_sets());
    for (std::size_t j = 0; j < kTableSize; ++j) {
        CHECK(pool.presence_count.at(kUsageTable[j].name) == kUsageTable[j].count);
        CHECK(pool.first_seen.at(kUsageTable[j].name) == j);
    }

    const Toolbox box = select_topk(pool, 7);
    REQUIRE(box.tools.size() == 7);
    for (std::size_t j = 0; j < 7; ++j) {
        CHECK(box.tools[j].name == kUsageTable[j].name);
        CHECK(box.counts[j] == kUsageTable[j].count);
    }
    CHECK(box.coverage == doctest::Approx(2583.0 / 2611.0).epsilon(1e-12));
    CHECK(box.coverage >= 0.989);

    SUBCASE("k larger than the pool selects everything at coverage 1") {
        const Toolbox all = select_topk(pool, 99);
        CHECK(all.tools.size() == kTableSize);
        CHECK(all.coverage == 1.0);
    }
    SUBCASE("top-k is a prefix of top-(k+1)") {
        for (int k = 1; k < static_cast<int>(kTableSize); ++k) {
            const Toolbox smaller = select_topk(pool, k);
            const Toolbox larger = select_topk(pool, k + 1);
            REQUIRE(larger.tools.size() == smaller.tools.size() + 1);
            for (std::size_t i = 0; i < smaller.tools.size(); ++i) {
                CHECK(smaller.tools[i].name == larger.tools[i].name);
            }
            CHECK(smaller.coverage <= larger.coverage);
        }
    }
    SUBCASE("empty pool throws") {
        ToolPool empty;
        CHECK_THROWS_AS(select_topk(empty, 3), EmptyPool);
    }
}

TEST_CASE("processing order changes tie order only through first_seen") {
    std::vector<std::set<std::string>> sets = staggered_tool_sets();
    // Shuffle trajectories; counts must be identical, and with first_seen
    // taken from the shuffled order the tie pair may legitimately swap.
    std::mt19937 rng(29);
    std::shuffle(sets.begin(), sets.end(), rng);
    const ToolPool shuffled = pool_from_sets(sets);
    const ToolPool original = pool_from_sets(staggered_tool_sets());
    CHECK(shuffled.presence_count == original.presence_count);

    const Toolbox a = select_topk(original, 7);
    const Toolbox b = select_topk(shuffled, 7);
    std::set<std::string> names_a;
    std::set<std::string> names_b;
    for (std::size_t i = 0; i < 7; ++i) {
        names_a.insert(a.tools[i].name);
        names_b.insert(b.tools[i].name);
    }
    CHECK(names_a == names_b);
}

TEST_CASE("render_toolbox_prompt") {
    const Toolbox box = deployed_toolbox();
    const std::string prompt = render_toolbox_prompt(box, 3);
    SUBCASE("contains the brace substitution and all seven tool lines") {
        CHECK(prompt.find("analyze all {3} images") != std::string::npos);
        std::size_t lines = 0;
        for (std::size_t pos = prompt.find("-- <tool name=\""); pos != std::string::npos;
             pos = prompt.find("-- <tool name=\"", pos + 1)) {
            ++lines;
        }
        CHECK(lines == 7);
        CHECK(prompt.find("-- <tool name=\"read_text_element\" args=\"Image k: locator/region\"> "
                          "Read and transcribe visible text from the located region. </tool>") !=
              std::string::npos);
    }
    SUBCASE("single-tool toolbox renders exactly one line") {
        Toolbox one;
        one.k = 1;
        one.tools.push_back(box.tools[0]);
        one.counts.push_back(box.counts[0]);
        const std::string rendered = render_toolbox_prompt(one, 2);
        std::size_t lines = 0;
        for (std::size_t pos = rendered.find("-- <tool name=\""); pos != std::string::npos;
             pos = rendered.find("-- <tool name=\"", pos + 1)) {
            ++lines;
        }
        CHECK(lines == 1);
    }
    SUBCASE("rendering is byte-stable") {
        CHECK(render_toolbox_prompt(box, 3) == prompt);
    }
    SUBCASE("stub tools are excluded from rendering") {
        Toolbox with_stub = box;
        ToolDefinition stub;
        stub.name = "ghost";
        stub.is_stub = true;
        with_stub.tools.push_back(stub);
        with_stub.counts.push_back(1);
        CHECK(render_toolbox_prompt(with_stub, 3).find("ghost") == std::string::npos);
    }
}

TEST_CASE("deployed toolbox matches the curated fixture selection") {
    const ToolPool pool = pool_from_sets(staggered_tool_sets());
    const Toolbox curated = select_topk(pool, 7);
    const Toolbox deployed = deployed_toolbox();
    REQUIRE(curated.tools.size() == deployed.tools.size());
    for (std::size_t i = 0; i < curated.tools.size(); ++i) {
        CHECK(curated.tools[i].name == deployed.tools[i].name);
        CHECK(curated.counts[i] == deployed.counts[i]);
    }
    CHECK(curated.coverage == doctest::Approx(deployed.coverage).epsilon(1e-12));
}
