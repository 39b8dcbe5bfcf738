#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lf/curation.hpp"

namespace lf {

enum class PromptKind {
    vanilla,
    action_rl,
    curation,
    toolbox,
    judge,
};

PromptKind prompt_kind_from_string(const std::string& name);
const char* to_string(PromptKind kind);

struct PromptParams {
    std::optional<int> num_images;
    std::optional<std::string> query;
    std::optional<std::string> gold;
    std::optional<std::string> prediction;
    std::optional<std::string> description;
    std::optional<std::string> tool_pool_text;
    const Toolbox* toolbox = nullptr;
    std::vector<std::string> images;
};

struct RenderedPrompt {
    std::string system;
    std::string user;

    std::string joined() const;  // system + blank line + user
};

// Renders one of the five prompt templates with its substitutions. Output
// is byte-stable for identical inputs; missing required params throw
// MissingParam.
RenderedPrompt render_prompt_parts(PromptKind kind, const PromptParams& params);
std::string render_prompt(PromptKind kind, const PromptParams& params);

}  // namespace lf
