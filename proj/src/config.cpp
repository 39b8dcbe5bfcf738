#include "lf/config.hpp"

#include <fstream>

#include "lf/errors.hpp"

namespace lf {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

template <typename T>
void read_field(const json& doc, const char* key, T& target) {
    if (!doc.contains(key)) {
        return;
    }
    try {
        target = doc[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

void check_keys(const json& doc, std::initializer_list<const char*> allowed,
                const std::string& section) {
    for (const auto& [key, value] : doc.items()) {
        bool known = false;
        for (const char* candidate : allowed) {
            if (key == candidate) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("config: unknown key '" + key + "' in " + section);
        }
    }
}

ClientConfig client_from_json(const json& doc, const std::string& section, double temperature) {
    ClientConfig client;
    client.temperature = temperature;
    if (doc.is_null()) {
        return client;
    }
    check_keys(doc,
               {"endpoint", "model", "stub_file", "timeout_seconds", "max_retries", "backoff_ms",
                "temperature"},
               section);
    read_field(doc, "endpoint", client.endpoint);
    read_field(doc, "model", client.model);
    read_field(doc, "stub_file", client.stub_file);
    read_field(doc, "timeout_seconds", client.timeout_seconds);
    read_field(doc, "max_retries", client.max_retries);
    read_field(doc, "backoff_ms", client.backoff_ms);
    read_field(doc, "temperature", client.temperature);
    if (client.timeout_seconds <= 0) {
        throw ConfigError("config: " + section + ".timeout_seconds must be > 0");
    }
    return client;
}

}  // namespace

PipelineConfig config_from_json(const json& doc) {
    PipelineConfig config;
    if (doc.is_null()) {
        return config;
    }
    if (!doc.is_object()) {
        throw ConfigError("config: top-level document must be an object");
    }
    check_keys(doc, {"reward", "curation", "retrieval", "clients", "paths", "evaluation", "seed"},
               "config");

    if (doc.contains("reward")) {
        const json& reward = doc["reward"];
        check_keys(reward,
                   {"alpha", "beta", "answer_mode", "group_size", "advantage_epsilon",
                    "require_tool_invocation", "strict_extras", "clip_epsilon",
                    "clip_epsilon_high"},
                   "reward");
        read_field(reward, "alpha", config.reward.alpha);
        read_field(reward, "beta", config.reward.beta);
        if (reward.contains("answer_mode")) {
            config.reward.answer_mode =
                answer_mode_from_string(reward["answer_mode"].get<std::string>());
        }
        read_field(reward, "group_size", config.reward.group_size);
        read_field(reward, "advantage_epsilon", config.reward.advantage_epsilon);
        read_field(reward, "require_tool_invocation", config.reward.require_tool_invocation);
        read_field(reward, "strict_extras", config.reward.strict_extras);
        read_field(reward, "clip_epsilon", config.reward.clip_epsilon);
        read_field(reward, "clip_epsilon_high", config.reward.clip_epsilon_high);
        if (config.reward.alpha + config.reward.beta <= 0) {
            throw ConfigError("config: reward.alpha + reward.beta must be > 0");
        }
        if (config.reward.group_size < 2) {
            throw ConfigError("config: reward.group_size must be >= 2");
        }
    }
    if (doc.contains("curation")) {
        const json& curation = doc["curation"];
        check_keys(curation, {"k", "normalize"}, "curation");
        read_field(curation, "k", config.curation.k);
        read_field(curation, "normalize", config.curation.normalize);
        if (config.curation.k < 1) {
            throw ConfigError("config: curation.k must be >= 1");
        }
    }
    if (doc.contains("retrieval")) {
        const json& retrieval = doc["retrieval"];
        check_keys(retrieval, {"k", "similarity"}, "retrieval");
        read_field(retrieval, "k", config.retrieval.k);
        if (retrieval.contains("similarity")) {
            config.retrieval.similarity =
                similarity_from_string(retrieval["similarity"].get<std::string>());
        }
        if (config.retrieval.k < 1) {
            throw ConfigError("config: retrieval.k must be >= 1");
        }
    }
    if (doc.contains("clients")) {
        const json& clients = doc["clients"];
        check_keys(clients, {"generation", "judge", "max_in_flight", "inline_base64_images"},
                   "clients");
        if (clients.contains("generation")) {
            config.clients.generation =
                client_from_json(clients["generation"], "clients.generation", 1.0);
        }
        if (clients.contains("judge")) {
            config.clients.judge = client_from_json(clients["judge"], "clients.judge", 0.0);
        }
        read_field(clients, "max_in_flight", config.clients.max_in_flight);
        read_field(clients, "inline_base64_images", config.clients.inline_base64_images);
        if (config.clients.max_in_flight < 1) {
            throw ConfigError("config: clients.max_in_flight must be >= 1");
        }
    }
    if (doc.contains("paths")) {
        const json& paths = doc["paths"];
        check_keys(paths, {"input", "output", "report", "toolbox", "pool", "index"}, "paths");
        read_field(paths, "input", config.paths.input);
        read_field(paths, "output", config.paths.output);
        read_field(paths, "report", config.paths.report);
        read_field(paths, "toolbox", config.paths.toolbox);
        read_field(paths, "pool", config.paths.pool);
        read_field(paths, "index", config.paths.index);
    }
    if (doc.contains("evaluation")) {
        const json& evaluation = doc["evaluation"];
        check_keys(evaluation, {"hit_policy", "iou_threshold", "judge_retries"}, "evaluation");
        if (evaluation.contains("hit_policy")) {
            config.evaluation.hit_policy.kind =
                hit_policy_from_string(evaluation["hit_policy"].get<std::string>());
        }
        read_field(evaluation, "iou_threshold", config.evaluation.hit_policy.iou_threshold);
        read_field(evaluation, "judge_retries", config.evaluation.judge_retries);
    }
    read_field(doc, "seed", config.seed);
    return config;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
        throw ConfigError("config file is not valid JSON: " + path);
    }
    return config_from_json(doc);
}

ordered_json config_to_json(const PipelineConfig& config) {
    ordered_json doc;
    doc["reward"] = {{"alpha", config.reward.alpha},
                     {"beta", config.reward.beta},
                     {"answer_mode", to_string(config.reward.answer_mode)},
                     {"group_size", config.reward.group_size},
                     {"advantage_epsilon", config.reward.advantage_epsilon},
                     {"require_tool_invocation", config.reward.require_tool_invocation},
                     {"strict_extras", config.reward.strict_extras},
                     {"clip_epsilon", config.reward.clip_epsilon},
                     {"clip_epsilon_high", config.reward.clip_epsilon_high}};
    doc["curation"] = {{"k", config.curation.k}, {"normalize", config.curation.normalize}};
    doc["retrieval"] = {{"k", config.retrieval.k},
                        {"similarity", to_string(config.retrieval.similarity)}};
    auto client_json = [](const ClientConfig& client) {
        return ordered_json{{"endpoint", client.endpoint},
                            {"model", client.model},
                            {"stub_file", client.stub_file},
                            {"timeout_seconds", client.timeout_seconds},
                            {"max_retries", client.max_retries},
                            {"backoff_ms", client.backoff_ms},
                            {"temperature", client.temperature}};
    };
    doc["clients"] = {{"generation", client_json(config.clients.generation)},
                      {"judge", client_json(config.clients.judge)},
                      {"max_in_flight", config.clients.max_in_flight},
                      {"inline_base64_images", config.clients.inline_base64_images}};
    doc["paths"] = {{"input", config.paths.input},     {"output", config.paths.output},
                    {"report", config.paths.report},   {"toolbox", config.paths.toolbox},
                    {"pool", config.paths.pool},       {"index", config.paths.index}};
    doc["evaluation"] = {{"hit_policy", to_string(config.evaluation.hit_policy.kind)},
                         {"iou_threshold", config.evaluation.hit_policy.iou_threshold},
                         {"judge_retries", config.evaluation.judge_retries}};
    doc["seed"] = config.seed;
    return doc;
}

void apply_override(PipelineConfig& config, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must be key.path=value: " + assignment);
    }
    std::string pointer = "/" + assignment.substr(0, eq);
    for (char& ch : pointer) {
        if (ch == '.') {
            ch = '/';
        }
    }
    const std::string raw_value = assignment.substr(eq + 1);

    json doc = config_to_json(config);
    json value = json::parse(raw_value, nullptr, false);
    if (value.is_discarded()) {
        value = raw_value;  // treat as plain string
    }
    try {
        doc.at(json::json_pointer(pointer)) = value;
    } catch (const json::exception&) {
        throw ConfigError("override targets unknown config key: " + assignment);
    }
    config = config_from_json(doc);
}

}  // namespace lf
