#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "lf/evaluation.hpp"
#include "lf/retrieval.hpp"
#include "lf/reward.hpp"

namespace lf {

struct ClientConfig {
    std::string endpoint;
    std::string model;
    std::string stub_file;  // fixture replies; takes precedence over endpoint
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int backoff_ms = 500;
    double temperature = 1.0;
};

struct PipelineConfig {
    RewardConfig reward;

    struct Curation {
        int k = 7;
        bool normalize = true;
    } curation;

    struct Retrieval {
        int k = 3;
        Similarity similarity = Similarity::dot;
    } retrieval;

    struct Clients {
        ClientConfig generation;
        ClientConfig judge;
        int max_in_flight = 4;
        bool inline_base64_images = false;
    } clients;

    struct Paths {
        std::string input;
        std::string output;
        std::string report;
        std::string toolbox;
        std::string pool;
        std::string index;
    } paths;

    struct Evaluation {
        HitPolicy hit_policy;
        int judge_retries = 2;
    } evaluation;

    std::uint64_t seed = 0;
};

// Defaults overlaid with the JSON document; unknown keys are rejected so
// typos surface as ConfigError.
PipelineConfig config_from_json(const nlohmann::json& doc);
PipelineConfig load_config(const std::string& path);
nlohmann::ordered_json config_to_json(const PipelineConfig& config);

// Applies one dotted-path override, e.g. "reward.alpha=0.5" or
// "clients.generation.endpoint=http://localhost:8080/v1".
void apply_override(PipelineConfig& config, const std::string& assignment);

}  // namespace lf
