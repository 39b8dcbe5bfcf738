#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace lf {

// Axis-aligned rectangle in page-pixel coordinates.
struct Rect {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool positive_area() const { return width() > 0 && height() > 0; }
};

struct WeightedRect {
    Rect rect;
    std::optional<double> weight;
};

// One benchmark query: the question, the retrieved page set and the gold data.
struct QueryInstance {
    std::string id;
    std::string question;
    std::vector<std::string> page_ids;
    std::string golden_answer;
    std::optional<std::vector<std::string>> golden_pages;
    std::optional<Rect> golden_region;
};

// A single tool call found in a trace: <tool name="..." args="...">body</tool>.
struct ToolInvocation {
    std::string name;
    std::string args;
    std::string body;

    bool operator==(const ToolInvocation&) const = default;
};

// Structured view of one model output. The three segments are the inner
// texts of the first well-formed <think>/<description>/<answer> blocks;
// the block counters and order flag describe the raw structure so reward
// checks never have to rescan the text.
struct ParsedTrace {
    std::string think;
    std::string description;
    std::vector<int> routed_pages;  // "Image k" ordinals mentioned in think
    std::vector<ToolInvocation> exec_steps;
    std::string answer;  // verbatim inner text of the answer block
    std::string raw;
    bool tag_order_ok = false;
    std::string extras_outside_tags;

    // Structural detail behind tag_order_ok.
    int think_blocks = 0;
    int description_blocks = 0;
    int answer_blocks = 0;
    bool blocks_in_order = false;
    std::size_t tools_outside_description = 0;
    std::size_t malformed_tool_tags = 0;
};

enum class ParseErrorCode {
    missing_answer,
    unclosed_tag,
};

const char* to_string(ParseErrorCode code);

struct ParseError {
    ParseErrorCode code = ParseErrorCode::missing_answer;
    std::string detail;
};

using TraceResult = std::variant<ParsedTrace, ParseError>;

bool parse_ok(const TraceResult& result);
const ParsedTrace* get_trace(const TraceResult& result);
const ParseError* get_error(const TraceResult& result);

// Parses raw model output into a ParsedTrace. Tags are matched literally
// and case-sensitively; no entity decoding. Fails only when the answer
// block is absent or a block tag is left unclosed; every other defect is
// recorded on the returned trace.
TraceResult parse_trace(const std::string& raw);

// Scans description text for <tool name="..." args="...">body</tool>
// occurrences in document order. Attribute order name/args is canonical
// but either order is accepted; values run to the next double quote.
// Malformed fragments are skipped; their count lands in *malformed.
std::vector<ToolInvocation> extract_tool_invocations(std::string_view description,
                                                     std::size_t* malformed = nullptr);

// True iff the text holds exactly one think, one description and one
// answer block in that order, and every tool tag sits inside the
// description block.
bool check_tag_order(std::string_view raw);

// Canonical three-block form. parse_trace(serialize_trace(t)) reproduces
// think, exec_steps and answer byte for byte as long as the segments do
// not themselves contain tag literals (no escaping is applied).
std::string serialize_trace(const ParsedTrace& trace);

// Answer text trimmed at both ends, as used for comparisons.
std::string trimmed_answer(const ParsedTrace& trace);

// One line of a trace corpus file. `failure` is empty on success and
// carries a reason code otherwise.
struct TraceRecord {
    std::size_t line_number = 0;
    QueryInstance query;
    std::optional<ParsedTrace> trace;
    std::string failure;
    std::string raw_trace;
    std::string curation_text;  // optional per-trajectory curator output
    std::vector<WeightedRect> attended_regions;
    std::string attention_page_id;
    std::string benchmark;
    std::string hop;
};

struct TraceCorpus {
    std::vector<TraceRecord> records;
    std::string source_path;
    std::size_t successes = 0;
    std::size_t failures = 0;
};

struct CorpusLoadOptions {
    // Evaluation datasets omit the trace field; everything else requires it.
    bool require_trace = true;
};

// Loads a line-delimited corpus (see README for the schema). Line-level
// defects (bad JSON, missing keys, invariant violations, trace parse
// failures) are preserved as per-record failures; only an unreadable file
// throws.
TraceCorpus load_trace_corpus(const std::string& path, const CorpusLoadOptions& options = {});

}  // namespace lf
