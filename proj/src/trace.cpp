#include "lf/trace.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "lf/errors.hpp"

#include <json.hpp>

namespace lf {

namespace {

using json = nlohmann::json;

struct BlockSpan {
    std::size_t open_begin = 0;   // position of '<'
    std::size_t inner_begin = 0;  // just past '>'
    std::size_t inner_end = 0;    // position of "</"
    std::size_t close_end = 0;    // just past the closing '>'
};

// All complete blocks for one tag, matched left to right: each opening
// consumes the next unused closing tag after it.
struct TagScan {
    int opens = 0;
    int closes = 0;
    std::vector<BlockSpan> blocks;
    bool unclosed = false;
};

std::vector<std::size_t> find_all(std::string_view text, std::string_view needle) {
    std::vector<std::size_t> out;
    for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + 1)) {
        out.push_back(pos);
    }
    return out;
}

TagScan scan_tag(std::string_view text, std::string_view tag) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    const auto open_positions = find_all(text, open);
    const auto close_positions = find_all(text, close);

    TagScan scan;
    scan.opens = static_cast<int>(open_positions.size());
    scan.closes = static_cast<int>(close_positions.size());

    std::size_t next_close = 0;
    for (std::size_t open_pos : open_positions) {
        while (next_close < close_positions.size() &&
               close_positions[next_close] < open_pos + open.size()) {
            ++next_close;
        }
        if (next_close == close_positions.size()) {
            scan.unclosed = true;
            break;
        }
        BlockSpan span;
        span.open_begin = open_pos;
        span.inner_begin = open_pos + open.size();
        span.inner_end = close_positions[next_close];
        span.close_end = close_positions[next_close] + close.size();
        scan.blocks.push_back(span);
        ++next_close;
    }
    return scan;
}

bool is_tool_open_at(std::string_view text, std::size_t pos) {
    static constexpr std::string_view kOpen = "<tool";
    if (text.compare(pos, kOpen.size(), kOpen) != 0) {
        return false;
    }
    if (pos + kOpen.size() >= text.size()) {
        return false;
    }
    const char next = text[pos + kOpen.size()];
    return next == ' ' || next == '\t' || next == '\n' || next == '\r' || next == '>';
}

std::vector<std::size_t> tool_open_positions(std::string_view text) {
    std::vector<std::size_t> out;
    for (std::size_t pos = text.find("<tool"); pos != std::string_view::npos;
         pos = text.find("<tool", pos + 1)) {
        if (is_tool_open_at(text, pos)) {
            out.push_back(pos);
        }
    }
    return out;
}

void skip_ws(std::string_view text, std::size_t& pos) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) {
        ++pos;
    }
}

// Parses one tool tag starting at `pos` (which points at "<tool"). On
// success returns the invocation and advances pos past "</tool>"; on a
// malformed fragment returns nullopt and leaves pos untouched.
std::optional<ToolInvocation> parse_tool_at(std::string_view text, std::size_t& pos) {
    static constexpr std::string_view kClose = "</tool>";
    std::size_t cur = pos + 5;  // past "<tool"

    std::optional<std::string> name;
    std::optional<std::string> args;
    while (true) {
        skip_ws(text, cur);
        if (cur >= text.size()) {
            return std::nullopt;
        }
        if (text[cur] == '>') {
            ++cur;
            break;
        }
        std::size_t key_begin = cur;
        while (cur < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[cur])) || text[cur] == '_')) {
            ++cur;
        }
        if (cur == key_begin) {
            return std::nullopt;
        }
        const std::string_view key = text.substr(key_begin, cur - key_begin);
        skip_ws(text, cur);
        if (cur >= text.size() || text[cur] != '=') {
            return std::nullopt;
        }
        ++cur;
        skip_ws(text, cur);
        if (cur >= text.size() || text[cur] != '"') {
            return std::nullopt;
        }
        ++cur;
        const std::size_t value_begin = cur;
        const std::size_t value_end = text.find('"', cur);
        if (value_end == std::string_view::npos) {
            return std::nullopt;
        }
        const std::string value(text.substr(value_begin, value_end - value_begin));
        cur = value_end + 1;
        if (key == "name") {
            name = value;
        } else if (key == "args") {
            args = value;
        } else {
            return std::nullopt;
        }
    }

    if (!name || name->empty()) {
        return std::nullopt;
    }
    const std::size_t body_begin = cur;
    const std::size_t close_pos = text.find(kClose, cur);
    if (close_pos == std::string_view::npos) {
        return std::nullopt;
    }
    ToolInvocation inv;
    inv.name = *name;
    inv.args = args.value_or("");
    inv.body = std::string(text.substr(body_begin, close_pos - body_begin));
    pos = close_pos + kClose.size();
    return inv;
}

std::vector<int> extract_routed_pages(std::string_view think) {
    std::vector<int> pages;
    std::set<int> seen;
    static constexpr std::string_view kWord = "image";
    for (std::size_t i = 0; i + kWord.size() < think.size() + 1; ++i) {
        bool match = true;
        for (std::size_t j = 0; j < kWord.size(); ++j) {
            if (std::tolower(static_cast<unsigned char>(think[i + j])) != kWord[j]) {
                match = false;
                break;
            }
        }
        if (!match) {
            continue;
        }
        // Word boundary on the left.
        if (i > 0 && std::isalnum(static_cast<unsigned char>(think[i - 1]))) {
            continue;
        }
        std::size_t cur = i + kWord.size();
        std::size_t ws = cur;
        skip_ws(think, cur);
        if (cur == ws || cur >= think.size() ||
            !std::isdigit(static_cast<unsigned char>(think[cur]))) {
            continue;
        }
        int value = 0;
        int digits = 0;
        while (cur < think.size() && std::isdigit(static_cast<unsigned char>(think[cur])) &&
               digits < 9) {
            value = value * 10 + (think[cur] - '0');
            ++cur;
            ++digits;
        }
        if (seen.insert(value).second) {
            pages.push_back(value);
        }
        i = cur - 1;
    }
    return pages;
}

std::string trim(std::string_view text) {
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

std::string collect_extras(std::string_view raw, const std::vector<BlockSpan>& spans) {
    std::vector<std::pair<std::size_t, std::size_t>> covered;
    covered.reserve(spans.size());
    for (const auto& span : spans) {
        covered.emplace_back(span.open_begin, span.close_end);
    }
    std::sort(covered.begin(), covered.end());

    std::string extras;
    std::size_t cursor = 0;
    auto append_segment = [&](std::size_t begin, std::size_t end) {
        const std::string piece = trim(raw.substr(begin, end - begin));
        if (piece.empty()) {
            return;
        }
        if (!extras.empty()) {
            extras += '\n';
        }
        extras += piece;
    };
    for (const auto& [begin, end] : covered) {
        if (begin > cursor) {
            append_segment(cursor, begin);
        }
        cursor = std::max(cursor, end);
    }
    if (cursor < raw.size()) {
        append_segment(cursor, raw.size());
    }
    return extras;
}

std::optional<Rect> rect_from_json(const json& value) {
    if (!value.is_array() || value.size() != 4) {
        return std::nullopt;
    }
    for (const auto& v : value) {
        if (!v.is_number()) {
            return std::nullopt;
        }
    }
    Rect rect{value[0].get<double>(), value[1].get<double>(), value[2].get<double>(),
              value[3].get<double>()};
    return rect;
}

}  // namespace

const char* to_string(ParseErrorCode code) {
    switch (code) {
        case ParseErrorCode::missing_answer:
            return "missing_answer";
        case ParseErrorCode::unclosed_tag:
            return "unclosed_tag";
    }
    return "unknown";
}

bool parse_ok(const TraceResult& result) {
    return std::holds_alternative<ParsedTrace>(result);
}

const ParsedTrace* get_trace(const TraceResult& result) {
    return std::get_if<ParsedTrace>(&result);
}

const ParseError* get_error(const TraceResult& result) {
    return std::get_if<ParseError>(&result);
}

std::vector<ToolInvocation> extract_tool_invocations(std::string_view description,
                                                     std::size_t* malformed) {
    std::vector<ToolInvocation> out;
    std::size_t malformed_count = 0;
    std::size_t pos = 0;
    while (pos < description.size()) {
        const std::size_t open = description.find("<tool", pos);
        if (open == std::string_view::npos) {
            break;
        }
        if (!is_tool_open_at(description, open)) {
            pos = open + 1;
            continue;
        }
        std::size_t cursor = open;
        if (auto inv = parse_tool_at(description, cursor)) {
            out.push_back(std::move(*inv));
            pos = cursor;
        } else {
            ++malformed_count;
            pos = open + 5;
        }
    }
    if (malformed != nullptr) {
        *malformed = malformed_count;
    }
    return out;
}

TraceResult parse_trace(const std::string& raw) {
    const std::string_view text(raw);
    const TagScan think = scan_tag(text, "think");
    const TagScan description = scan_tag(text, "description");
    const TagScan answer = scan_tag(text, "answer");

    const std::pair<const TagScan*, const char*> scans[] = {
        {&think, "think"}, {&description, "description"}, {&answer, "answer"}};
    for (const auto& [scan, tag] : scans) {
        if (scan->unclosed) {
            return ParseError{ParseErrorCode::unclosed_tag, tag};
        }
    }
    if (answer.blocks.empty()) {
        return ParseError{ParseErrorCode::missing_answer, "no answer block"};
    }

    ParsedTrace trace;
    trace.raw = raw;
    trace.think_blocks = static_cast<int>(think.blocks.size());
    trace.description_blocks = static_cast<int>(description.blocks.size());
    trace.answer_blocks = static_cast<int>(answer.blocks.size());

    std::vector<BlockSpan> all_spans;
    if (!think.blocks.empty()) {
        const BlockSpan& span = think.blocks.front();
        trace.think = raw.substr(span.inner_begin, span.inner_end - span.inner_begin);
    }
    if (!description.blocks.empty()) {
        const BlockSpan& span = description.blocks.front();
        trace.description = raw.substr(span.inner_begin, span.inner_end - span.inner_begin);
    }
    {
        const BlockSpan& span = answer.blocks.front();
        trace.answer = raw.substr(span.inner_begin, span.inner_end - span.inner_begin);
    }

    trace.blocks_in_order =
        !think.blocks.empty() && !description.blocks.empty() &&
        think.blocks.front().close_end <= description.blocks.front().open_begin &&
        description.blocks.front().close_end <= answer.blocks.front().open_begin;
    trace.tag_order_ok = trace.think_blocks == 1 && trace.description_blocks == 1 &&
                         trace.answer_blocks == 1 && trace.blocks_in_order;

    trace.routed_pages = extract_routed_pages(trace.think);
    trace.exec_steps = extract_tool_invocations(trace.description, &trace.malformed_tool_tags);

    // Tool openings anywhere outside the first description block's inner span.
    const auto tool_opens = tool_open_positions(text);
    if (description.blocks.empty()) {
        trace.tools_outside_description = tool_opens.size();
    } else {
        const BlockSpan& span = description.blocks.front();
        for (std::size_t pos : tool_opens) {
            if (pos < span.inner_begin || pos >= span.inner_end) {
                ++trace.tools_outside_description;
            }
        }
    }

    for (const TagScan* scan : {&think, &description, &answer}) {
        all_spans.insert(all_spans.end(), scan->blocks.begin(), scan->blocks.end());
    }
    trace.extras_outside_tags = collect_extras(text, all_spans);
    return trace;
}

bool check_tag_order(std::string_view raw) {
    const TagScan think = scan_tag(raw, "think");
    const TagScan description = scan_tag(raw, "description");
    const TagScan answer = scan_tag(raw, "answer");
    if (think.unclosed || description.unclosed || answer.unclosed) {
        return false;
    }
    if (think.opens != 1 || think.closes != 1 || description.opens != 1 ||
        description.closes != 1 || answer.opens != 1 || answer.closes != 1) {
        return false;
    }
    const BlockSpan& t = think.blocks.front();
    const BlockSpan& d = description.blocks.front();
    const BlockSpan& a = answer.blocks.front();
    if (!(t.close_end <= d.open_begin && d.close_end <= a.open_begin)) {
        return false;
    }
    for (std::size_t pos : tool_open_positions(raw)) {
        if (pos < d.inner_begin || pos >= d.inner_end) {
            return false;
        }
    }
    for (std::size_t pos : find_all(raw, "</tool>")) {
        if (pos < d.inner_begin || pos + 7 > d.inner_end) {
            return false;
        }
    }
    return true;
}

std::string serialize_trace(const ParsedTrace& trace) {
    std::string out;
    out += "<think>";
    out += trace.think;
    out += "</think>\n<description>";
    if (!trace.exec_steps.empty()) {
        out += '\n';
        for (const ToolInvocation& step : trace.exec_steps) {
            out += "<tool name=\"";
            out += step.name;
            out += "\" args=\"";
            out += step.args;
            out += "\">";
            out += step.body;
            out += "</tool>\n";
        }
    }
    out += "</description>\n<answer>";
    out += trace.answer;
    out += "</answer>";
    return out;
}

std::string trimmed_answer(const ParsedTrace& trace) {
    return trim(trace.answer);
}

TraceCorpus load_trace_corpus(const std::string& path, const CorpusLoadOptions& options) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open corpus file: " + path);
    }

    TraceCorpus corpus;
    corpus.source_path = path;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) {
            continue;
        }
        TraceRecord record;
        record.line_number = line_number;

        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            record.failure = "invalid_json";
            corpus.records.push_back(std::move(record));
            ++corpus.failures;
            continue;
        }

        auto missing = [&](const char* key) {
            record.failure = std::string("schema: missing key '") + key + "'";
        };
        bool schema_ok = true;
        for (const char* key : {"id", "question", "golden_answer"}) {
            if (!doc.contains(key) || !doc[key].is_string()) {
                missing(key);
                schema_ok = false;
                break;
            }
        }
        if (schema_ok && (!doc.contains("pages") || !doc["pages"].is_array())) {
            missing("pages");
            schema_ok = false;
        }
        if (schema_ok && options.require_trace &&
            (!doc.contains("trace") || !doc["trace"].is_string())) {
            missing("trace");
            schema_ok = false;
        }
        if (!schema_ok) {
            if (doc.contains("id") && doc["id"].is_string()) {
                record.query.id = doc["id"].get<std::string>();
            }
            corpus.records.push_back(std::move(record));
            ++corpus.failures;
            continue;
        }

        record.query.id = doc["id"].get<std::string>();
        record.query.question = doc["question"].get<std::string>();
        record.query.golden_answer = doc["golden_answer"].get<std::string>();
        std::set<std::string> page_set;
        for (const auto& page : doc["pages"]) {
            if (!page.is_string()) {
                record.failure = "schema: pages entries must be strings";
                break;
            }
            const auto id = page.get<std::string>();
            if (!page_set.insert(id).second) {
                record.failure = "schema: duplicate page id";
                break;
            }
            record.query.page_ids.push_back(id);
        }
        if (record.failure.empty() && record.query.page_ids.empty()) {
            record.failure = "schema: pages empty";
        }
        if (record.failure.empty() && doc.contains("golden_pages")) {
            std::vector<std::string> golden;
            for (const auto& page : doc["golden_pages"]) {
                const auto id = page.is_string() ? page.get<std::string>() : std::string();
                if (page_set.count(id) == 0) {
                    record.failure = "schema: golden_pages not a subset of pages";
                    break;
                }
                golden.push_back(id);
            }
            if (record.failure.empty()) {
                record.query.golden_pages = std::move(golden);
            }
        }
        if (record.failure.empty() && doc.contains("golden_region")) {
            auto rect = rect_from_json(doc["golden_region"]);
            if (!rect || !rect->positive_area()) {
                record.failure = "schema: golden_region must be [x1,y1,x2,y2] with positive area";
            } else {
                record.query.golden_region = rect;
            }
        }
        if (record.failure.empty() && doc.contains("attended_regions") &&
            doc["attended_regions"].is_array()) {
            for (const auto& entry : doc["attended_regions"]) {
                if (entry.is_array() && (entry.size() == 4 || entry.size() == 5)) {
                    auto rect = rect_from_json(
                        json{entry[0], entry[1], entry[2], entry[3]});
                    if (rect) {
                        WeightedRect wr;
                        wr.rect = *rect;
                        if (entry.size() == 5 && entry[4].is_number()) {
                            wr.weight = entry[4].get<double>();
                        }
                        record.attended_regions.push_back(wr);
                    }
                }
            }
        }
        if (doc.contains("page_id") && doc["page_id"].is_string()) {
            record.attention_page_id = doc["page_id"].get<std::string>();
        }
        if (doc.contains("curation") && doc["curation"].is_string()) {
            record.curation_text = doc["curation"].get<std::string>();
        }
        if (doc.contains("benchmark") && doc["benchmark"].is_string()) {
            record.benchmark = doc["benchmark"].get<std::string>();
        }
        if (doc.contains("hop") && doc["hop"].is_string()) {
            record.hop = doc["hop"].get<std::string>();
        }

        if (record.failure.empty() && doc.contains("trace") && doc["trace"].is_string()) {
            record.raw_trace = doc["trace"].get<std::string>();
            TraceResult result = parse_trace(record.raw_trace);
            if (const ParsedTrace* trace = get_trace(result)) {
                record.trace = *trace;
            } else {
                record.failure = std::string("parse: ") + to_string(get_error(result)->code);
            }
        }

        if (record.failure.empty()) {
            ++corpus.successes;
        } else {
            ++corpus.failures;
        }
        corpus.records.push_back(std::move(record));
    }
    return corpus;
}

}  // namespace lf
