#include "lf/prompts.hpp"

#include "lf/errors.hpp"

namespace lf {

namespace {

int require_num_images(const PromptParams& params) {
    if (!params.num_images || *params.num_images < 1) {
        throw MissingParam("prompt requires num_images >= 1");
    }
    return *params.num_images;
}

std::string require_string(const std::optional<std::string>& value, const char* name) {
    if (!value) {
        throw MissingParam(std::string("prompt requires ") + name);
    }
    return *value;
}

std::string join_images(const std::vector<std::string>& images) {
    std::string out;
    for (const std::string& image : images) {
        if (!out.empty()) {
            out += ", ";
        }
        out += image;
    }
    return out;
}

std::string braced(int value) {
    return "{" + std::to_string(value) + "}";
}

std::string query_user_prompt(const PromptParams& params) {
    return "Query: " + require_string(params.query, "query") + "\nImages: " +
           join_images(params.images) + "\n";
}

RenderedPrompt render_vanilla(const PromptParams& params) {
    RenderedPrompt out;
    out.system =
        "Answer the given question based on the " + braced(require_num_images(params)) +
        " image(s) provided.\n"
        "You must conduct reasoning inside <think> and </think> first.\n"
        "After reasoning, you should directly provide the answer inside <answer> and </answer>, "
        "without detailed illustrations.\n";
    out.user = query_user_prompt(params);
    return out;
}

RenderedPrompt render_action_rl(const PromptParams& params) {
    RenderedPrompt out;
    out.system =
        "You are a specialized AI assistant for visual question answering based on multiple "
        "provided document images.\n"
        "Your task is to answer the user's question by carefully analyzing all images.\n"
        "\n"
        "Your response must strictly follow this format:\n"
        "<think>...</think>\n"
        "<description>...</description>\n"
        "<answer>...</answer>\n"
        "\n"
        "Guidance:\n"
        "- You have exactly " +
        braced(require_num_images(params)) +
        " image(s). Analyze each briefly in <think>, then conclude which one(s) you used.\n"
        "- In <description>, describe only the visual evidence you actually used, and clearly "
        "indicate where it appears in the image.\n"
        "- In <answer>, output only the final concise answer.\n";
    out.user = query_user_prompt(params);
    return out;
}

RenderedPrompt render_curation(const PromptParams& params) {
    RenderedPrompt out;
    out.system =
        "You are the Lead Architect of a Document Visual Reasoning System. Deconstruct questions "
        "into atomic, structure-aware cognitive operations.\n"
        "\n"
        "### CORE PHILOSOPHY\n"
        "1) Structure Awareness: Tools must reflect layout (rows, columns, axes).\n"
        "2) Atomic Data Extraction: Locate region first, then extract data.\n"
        "3) Analytical Calculation: Define precise math tools (subtract, rank_values).\n"
        "\n"
        "### CURRENT TOOL POOL\n" +
        params.tool_pool_text.value_or("") +
        "\n"
        "### GUIDELINES: DESIGNING DOCUMENT TOOLS\n"
        "- Tables/Grids: Navigate rows/columns (e.g., locate_table_row, read_cell_value).\n"
        "- Charts/Graphs: Map visuals to values (e.g., map_bar_to_axis).\n"
        "- Reasoning: Define specific logic tools for calculation/comparison.\n"
        "\n"
        "### COGNITIVE CAPABILITY SPECTRUM\n"
        "* Layout: (locate_row/col, find_title, find_legend, intersect_regions)\n"
        "* Data: (read_text, read_numeric, extract_key_value_pair)\n"
        "* Chart: (trace_line_trend, get_bar_height, map_color_to_category)\n"
        "* Math & Logic: (compute_pct, subtract_values, find_max, count_rows)\n"
        "* Verify: (verify_signature_presence, check_checkbox_status)\n"
        "\n"
        "### OUTPUT FORMAT (MANDATORY)\n"
        "1. New Definitions: DEFINE_TOOL: name || args || desc\n"
        "2. Applications: <tool name=\"...\" args=\"...\">reasoning</tool>\n"
        "3. End: END_OF_TOOLS\n"
        "\n"
        "### EXAMPLE (Structure & Math)\n"
        "DESC: Found 'Q3 Revenue', read value, compared to 'Q2', calculated growth.\n"
        "OUTPUT:\n"
        "DEFINE_TOOL: subtract_values || val1, val2 || Calculate difference.\n"
        "<tool name=\"locate_table_row\" args=\"row 'Q3 Revenue'\">Row 4</tool>\n"
        "<tool name=\"read_cell_value\" args=\"Row 4, col 'Amount'\">$150M</tool>\n"
        "<tool name=\"subtract_values\" args=\"150, 100\">50</tool>\n"
        "END_OF_TOOLS\n";
    out.user = "Analyze the reasoning steps.\nDESCRIPTION: " +
               require_string(params.description, "description") + "\nOUTPUT:\n";
    return out;
}

RenderedPrompt render_toolbox(const PromptParams& params) {
    if (params.toolbox == nullptr || params.toolbox->tools.empty()) {
        throw MissingParam("toolbox prompt requires a non-empty toolbox");
    }
    RenderedPrompt out;
    out.system = render_toolbox_prompt(*params.toolbox, require_num_images(params));
    out.user = query_user_prompt(params);
    return out;
}

RenderedPrompt render_judge(const PromptParams& params) {
    RenderedPrompt out;
    out.system =
        "You are an expert evaluation system for a question answering chatbot.\n"
        "You will be given one evaluation item. You will see a query, a reference answer, and a "
        "generated answer.\n"
        "Your task is to evaluate the correctness of the generated answer.\n"
        "Your response MUST be exactly one line, formatted as <judge>True</judge> if the "
        "generated answer is correct, or <judge>False</judge> otherwise.\n"
        "Do not add any other text or explanations.\n";
    out.user = "Query: " + require_string(params.query, "query") +
               "\nReference Answer: " + require_string(params.gold, "gold") +
               "\nGenerated Answer: " + require_string(params.prediction, "prediction") + "\n";
    return out;
}

}  // namespace

PromptKind prompt_kind_from_string(const std::string& name) {
    if (name == "vanilla") {
        return PromptKind::vanilla;
    }
    if (name == "action_rl") {
        return PromptKind::action_rl;
    }
    if (name == "curation") {
        return PromptKind::curation;
    }
    if (name == "toolbox") {
        return PromptKind::toolbox;
    }
    if (name == "judge") {
        return PromptKind::judge;
    }
    throw ConfigError("unknown prompt kind: " + name);
}

const char* to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::vanilla:
            return "vanilla";
        case PromptKind::action_rl:
            return "action_rl";
        case PromptKind::curation:
            return "curation";
        case PromptKind::toolbox:
            return "toolbox";
        case PromptKind::judge:
            return "judge";
    }
    return "unknown";
}

std::string RenderedPrompt::joined() const {
    return system + "\n" + user;
}

RenderedPrompt render_prompt_parts(PromptKind kind, const PromptParams& params) {
    switch (kind) {
        case PromptKind::vanilla:
            return render_vanilla(params);
        case PromptKind::action_rl:
            return render_action_rl(params);
        case PromptKind::curation:
            return render_curation(params);
        case PromptKind::toolbox:
            return render_toolbox(params);
        case PromptKind::judge:
            return render_judge(params);
    }
    throw ConfigError("unknown prompt kind");
}

std::string render_prompt(PromptKind kind, const PromptParams& params) {
    return render_prompt_parts(kind, params).joined();
}

}  // namespace lf
