#include <doctest.h>

#include <random>

#include "lf/errors.hpp"
#include "lf/trace.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {

// Independent scanner used as an oracle for extract_tool_invocations: walks
// "</tool>" boundaries and re-derives each invocation with plain finds.
std::vector<ToolInvocation> oracle_scan(const std::string& text) {
    std::vector<ToolInvocation> out;
    std::size_t cursor = 0;
    while (true) {
        const std::size_t close = text.find("</tool>", cursor);
        if (close == std::string::npos) {
            break;
        }
        const std::size_t open = text.rfind("<tool ", close);
        if (open == std::string::npos || open < cursor) {
            cursor = close + 7;
            continue;
        }
        const std::size_t gt = text.find('>', open);
        if (gt == std::string::npos || gt > close) {
            cursor = close + 7;
            continue;
        }
        const std::string attrs = text.substr(open, gt - open);
        auto attr = [&](const std::string& key) -> std::string {
            const std::size_t at = attrs.find(key + "=\"");
            if (at == std::string::npos) {
                return "";
            }
            const std::size_t begin = at + key.size() + 2;
            const std::size_t end = attrs.find('"', begin);
            return attrs.substr(begin, end - begin);
        };
        ToolInvocation inv;
        inv.name = attr("name");
        inv.args = attr("args");
        inv.body = text.substr(gt + 1, close - gt - 1);
        if (!inv.name.empty()) {
            out.push_back(inv);
        }
        cursor = close + 7;
    }
    return out;
}

std::string random_text(std::mt19937& rng, std::size_t max_len) {
    static constexpr char kAlphabet[] =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .:%-";
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, sizeof(kAlphabet) - 2);
    std::string out;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        out += kAlphabet[pick(rng)];
    }
    return out;
}

std::string random_name(std::mt19937& rng) {
    static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz_";
    std::uniform_int_distribution<std::size_t> len(1, 12);
    std::uniform_int_distribution<std::size_t> pick(0, sizeof(kAlphabet) - 2);
    std::string out = "t";
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        out += kAlphabet[pick(rng)];
    }
    return out;
}

ParsedTrace random_trace(std::mt19937& rng) {
    ParsedTrace trace;
    trace.think = random_text(rng, 40);
    trace.answer = random_text(rng, 20);
    std::uniform_int_distribution<int> steps(0, 5);
    const int n = steps(rng);
    for (int i = 0; i < n; ++i) {
        ToolInvocation inv;
        inv.name = random_name(rng);
        inv.args = random_text(rng, 20);
        inv.body = random_text(rng, 30);
        trace.exec_steps.push_back(std::move(inv));
    }
    return trace;
}

}  // namespace

TEST_CASE("parse_trace extracts three blocks and tool invocations") {
    const std::string raw =
        "<think>page 1 relevant</think>"
        "<description><tool name=\"read_text_element\" args=\"Image 1: title\">ACME Report"
        "</tool></description><answer>ACME</answer>";
    const TraceResult result = parse_trace(raw);
    REQUIRE(parse_ok(result));
    const ParsedTrace& trace = *get_trace(result);
    CHECK(trace.tag_order_ok);
    CHECK(trace.think == "page 1 relevant");
    REQUIRE(trace.exec_steps.size() == 1);
    CHECK(trace.exec_steps[0].name == "read_text_element");
    CHECK(trace.exec_steps[0].args == "Image 1: title");
    CHECK(trace.exec_steps[0].body == "ACME Report");
    CHECK(trace.answer == "ACME");
    CHECK(trace.extras_outside_tags.empty());
}

TEST_CASE("parse_trace flags a missing description block") {
    const TraceResult result = parse_trace("<think>x</think><answer>y</answer>");
    REQUIRE(parse_ok(result));
    const ParsedTrace& trace = *get_trace(result);
    CHECK_FALSE(trace.tag_order_ok);
    CHECK(trace.description_blocks == 0);
    CHECK(trace.exec_steps.empty());
    CHECK(trace.answer == "y");
}

TEST_CASE("parse_trace tolerates out-of-order blocks") {
    const TraceResult result =
        parse_trace("<answer>z</answer><think>t</think><description></description>");
    REQUIRE(parse_ok(result));
    const ParsedTrace& trace = *get_trace(result);
    CHECK_FALSE(trace.tag_order_ok);
    CHECK(trace.answer == "z");
    CHECK(trace.think == "t");
}

TEST_CASE("parse_trace error paths") {
    SUBCASE("missing answer") {
        const TraceResult result = parse_trace("<think>x</think><description></description>");
        REQUIRE_FALSE(parse_ok(result));
        CHECK(get_error(result)->code == ParseErrorCode::missing_answer);
    }
    SUBCASE("unclosed think") {
        const TraceResult result = parse_trace("<think>x<answer>y</answer>");
        REQUIRE_FALSE(parse_ok(result));
        CHECK(get_error(result)->code == ParseErrorCode::unclosed_tag);
    }
    SUBCASE("malformed tool tags are counted, never fatal") {
        const TraceResult result = parse_trace(
            "<think>a</think><description><tool name=>broken</description>"
            "<answer>b</answer>");
        REQUIRE(parse_ok(result));
        CHECK(get_trace(result)->malformed_tool_tags == 1);
        CHECK(get_trace(result)->exec_steps.empty());
    }
}

TEST_CASE("parse_trace records extras outside the blocks") {
    const TraceResult result = parse_trace(
        "preamble <think>a</think><description></description><answer>b</answer> trailing");
    REQUIRE(parse_ok(result));
    const ParsedTrace& trace = *get_trace(result);
    CHECK(trace.tag_order_ok);
    CHECK(trace.extras_outside_tags == "preamble\ntrailing");
}

TEST_CASE("parse_trace pulls routed pages from Image-k mentions") {
    const TraceResult result = parse_trace(
        "<think>Image 2 has the chart, image 1 is a cover, Image 2 again</think>"
        "<description></description><answer>x</answer>");
    REQUIRE(parse_ok(result));
    CHECK(get_trace(result)->routed_pages == std::vector<int>{2, 1});
}

TEST_CASE("extract_tool_invocations handles attribute order and malformed tags") {
    SUBCASE("single canonical tag") {
        const auto got = extract_tool_invocations(
            "<tool name=\"compare_values\" args=\"Image 2: A vs B\">A larger</tool>");
        REQUIRE(got.size() == 1);
        CHECK(got[0] == ToolInvocation{"compare_values", "Image 2: A vs B", "A larger"});
    }
    SUBCASE("empty input") {
        CHECK(extract_tool_invocations("").empty());
    }
    SUBCASE("args before name is accepted") {
        const auto got =
            extract_tool_invocations("<tool args=\"x\" name=\"read_text\">body</tool>");
        REQUIRE(got.size() == 1);
        CHECK(got[0].name == "read_text");
        CHECK(got[0].args == "x");
    }
    SUBCASE("missing args defaults to empty") {
        const auto got = extract_tool_invocations("<tool name=\"a\">b</tool>");
        REQUIRE(got.size() == 1);
        CHECK(got[0].args.empty());
    }
    SUBCASE("unclosed tool is malformed and skipped") {
        std::size_t malformed = 0;
        const auto got = extract_tool_invocations(
            "<tool name=\"a\" args=\"x\">no close <tool name=\"b\" args=\"y\">2</tool>",
            &malformed);
        // First opening never finds its own close beyond b's, so the scanner
        // takes the earliest close for it.
        CHECK(got.size() == 1);
        CHECK(got[0].name == "a");
        CHECK(malformed == 0);
    }
    SUBCASE("nested opening is swallowed by the first close") {
        const auto got = extract_tool_invocations(
            "<tool name=\"outer\" args=\"\">pre <tool name=\"inner\" args=\"\">x</tool>");
        REQUIRE(got.size() == 1);
        CHECK(got[0].name == "outer");
        CHECK(got[0].body == "pre <tool name=\"inner\" args=\"\">x");
    }
}

TEST_CASE("extract_tool_invocations agrees with an independent scanner oracle") {
    const std::string text =
        "<tool name=\"a\" args=\"x\">1</tool>text<tool name=\"b\" args=\"y\">2</tool>";
    const auto got = extract_tool_invocations(text);
    const auto expected = oracle_scan(text);
    REQUIRE(got.size() == 2);
    CHECK(got == expected);
    CHECK(got[0].name == "a");
    CHECK(got[1].name == "b");

    std::mt19937 rng(7);
    for (int i = 0; i < 50; ++i) {
        std::string sample;
        std::uniform_int_distribution<int> count(0, 4);
        const int n = count(rng);
        for (int j = 0; j < n; ++j) {
            sample += random_text(rng, 10);
            sample += "<tool name=\"" + random_name(rng) + "\" args=\"" + random_text(rng, 8) +
                      "\">" + random_text(rng, 12) + "</tool>";
        }
        sample += random_text(rng, 10);
        CHECK(extract_tool_invocations(sample) == oracle_scan(sample));
    }
}

TEST_CASE("order preservation over arbitrary inputs") {
    std::mt19937 rng(11);
    for (int i = 0; i < 30; ++i) {
        std::vector<std::string> names;
        std::string description;
        std::uniform_int_distribution<int> count(1, 6);
        const int n = count(rng);
        for (int j = 0; j < n; ++j) {
            const std::string name = random_name(rng) + std::to_string(j);
            names.push_back(name);
            description += "<tool name=\"" + name + "\" args=\"\">b</tool> filler ";
        }
        const auto got = extract_tool_invocations(description);
        REQUIRE(got.size() == names.size());
        for (std::size_t j = 0; j < names.size(); ++j) {
            CHECK(got[j].name == names[j]);
        }
    }
}

TEST_CASE("check_tag_order") {
    CHECK(check_tag_order(
        "<think>a</think><description><tool name=\"t\" args=\"\">o</tool></description>"
        "<answer>b</answer>"));
    SUBCASE("tool inside think fails") {
        CHECK_FALSE(check_tag_order(
            "<think><tool name=\"t\" args=\"\">o</tool></think><description></description>"
            "<answer>b</answer>"));
    }
    SUBCASE("duplicate answer fails") {
        CHECK_FALSE(check_tag_order(
            "<think>a</think><description></description><answer>b</answer><answer>c</answer>"));
    }
    SUBCASE("wrong order fails") {
        CHECK_FALSE(check_tag_order(
            "<description></description><think>a</think><answer>b</answer>"));
    }
    SUBCASE("missing block fails") {
        CHECK_FALSE(check_tag_order("<think>a</think><answer>b</answer>"));
    }
}

TEST_CASE("serialize_trace round-trips canonical traces") {
    SUBCASE("one step") {
        ParsedTrace trace;
        trace.think = "Image 1 shows the total";
        trace.exec_steps.push_back({"read_numeric_value", "Image 1: total", "42"});
        trace.answer = "42";
        const std::string text = serialize_trace(trace);
        const TraceResult result = parse_trace(text);
        REQUIRE(parse_ok(result));
        CHECK(get_trace(result)->think == trace.think);
        CHECK(get_trace(result)->exec_steps == trace.exec_steps);
        CHECK(get_trace(result)->answer == trace.answer);
        CHECK(get_trace(result)->tag_order_ok);
    }
    SUBCASE("empty steps emit an empty description block") {
        ParsedTrace trace;
        trace.answer = "x";
        const std::string text = serialize_trace(trace);
        CHECK(text.find("<description></description>") != std::string::npos);
    }
    SUBCASE("100 random traces round-trip and stay well-formed") {
        std::mt19937 rng(13);
        for (int i = 0; i < 100; ++i) {
            const ParsedTrace trace = random_trace(rng);
            const std::string text = serialize_trace(trace);
            CHECK(check_tag_order(text));
            const TraceResult result = parse_trace(text);
            REQUIRE(parse_ok(result));
            const ParsedTrace& reparsed = *get_trace(result);
            CHECK(reparsed.think == trace.think);
            CHECK(reparsed.exec_steps == trace.exec_steps);
            CHECK(reparsed.answer == trace.answer);
        }
    }
}

TEST_CASE("parse_trace confines exec_steps to the description block") {
    const TraceResult result = parse_trace(
        "<think><tool name=\"in_think\" args=\"\">x</tool></think>"
        "<description><tool name=\"in_desc\" args=\"\">y</tool></description>"
        "<answer>a</answer>");
    REQUIRE(parse_ok(result));
    const ParsedTrace& trace = *get_trace(result);
    REQUIRE(trace.exec_steps.size() == 1);
    CHECK(trace.exec_steps[0].name == "in_desc");
    CHECK(trace.tools_outside_description == 1);
}

TEST_CASE("load_trace_corpus") {
    test::TempDir dir;
    const std::string valid_line =
        R"({"id":"q%d","question":"Q?","pages":["p1","p2"],"golden_answer":"A",)"
        R"("trace":"<think>Image 1</think><description></description><answer>A</answer>"})";
    auto line_for = [&](int i) {
        char buffer[512];
        std::snprintf(buffer, sizeof(buffer), valid_line.c_str(), i);
        return std::string(buffer);
    };

    SUBCASE("three valid lines") {
        const std::string path = dir.file("ok.jsonl");
        test::write_file(path, line_for(1) + "\n" + line_for(2) + "\n" + line_for(3) + "\n");
        const TraceCorpus corpus = load_trace_corpus(path);
        CHECK(corpus.successes == 3);
        CHECK(corpus.failures == 0);
        CHECK(corpus.records.size() == 3);
    }
    SUBCASE("one malformed line among five") {
        const std::string path = dir.file("mixed.jsonl");
        test::write_file(path, line_for(1) + "\n" + line_for(2) + "\nnot json\n" + line_for(3) +
                                   "\n" + line_for(4) + "\n");
        const TraceCorpus corpus = load_trace_corpus(path);
        CHECK(corpus.successes == 4);
        CHECK(corpus.failures == 1);
        CHECK(corpus.records[2].failure == "invalid_json");
    }
    SUBCASE("twenty-record fixture matches a manual tally") {
        const std::string path = dir.file("twenty.jsonl");
        std::string content;
        int expected_failures = 0;
        for (int i = 0; i < 20; ++i) {
            if (i % 5 == 4) {
                content += R"({"id":"bad","question":"Q"})";
                content += '\n';
                ++expected_failures;
            } else {
                content += line_for(i);
                content += '\n';
            }
        }
        test::write_file(path, content);
        const TraceCorpus corpus = load_trace_corpus(path);
        CHECK(corpus.records.size() == 20);
        CHECK(corpus.failures == static_cast<std::size_t>(expected_failures));
        CHECK(corpus.successes == 20 - static_cast<std::size_t>(expected_failures));
    }
    SUBCASE("schema and parse failures carry reasons") {
        const std::string path = dir.file("reasons.jsonl");
        test::write_file(
            path,
            R"({"id":"a","question":"Q","pages":["p","p"],"golden_answer":"A","trace":"t"})"
            "\n"
            R"({"id":"b","question":"Q","pages":["p"],"golden_answer":"A","trace":"<think>x</think>"})"
            "\n");
        const TraceCorpus corpus = load_trace_corpus(path);
        CHECK(corpus.records[0].failure == "schema: duplicate page id");
        CHECK(corpus.records[1].failure == "parse: missing_answer");
    }
    SUBCASE("unreadable file throws IoError") {
        CHECK_THROWS_AS(load_trace_corpus(dir.file("absent.jsonl")), IoError);
    }
    SUBCASE("golden_region and golden_pages are validated") {
        const std::string path = dir.file("golden.jsonl");
        test::write_file(
            path,
            R"({"id":"a","question":"Q","pages":["p"],"golden_answer":"A","trace":"<answer>A</answer>","golden_region":[0,0,10,5],"golden_pages":["p"]})"
            "\n"
            R"({"id":"b","question":"Q","pages":["p"],"golden_answer":"A","trace":"<answer>A</answer>","golden_pages":["zz"]})"
            "\n");
        const TraceCorpus corpus = load_trace_corpus(path);
        REQUIRE(corpus.records[0].query.golden_region.has_value());
        CHECK(corpus.records[0].query.golden_region->x2 == 10);
        CHECK(corpus.records[1].failure == "schema: golden_pages not a subset of pages");
    }
}
