#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lf/client.hpp"
#include "lf/config.hpp"
#include "lf/curation.hpp"
#include "lf/evaluation.hpp"
#include "lf/retrieval.hpp"
#include "lf/reward.hpp"
#include "lf/trace.hpp"

namespace lf {

struct CurationRunResult {
    Toolbox toolbox;
    ToolPool pool;
};

// Sequential pool update over the corpus in file order, then Top-K
// selection. Writes toolbox/pool files when their paths are configured.
CurationRunResult run_curation(const PipelineConfig& config, const TraceCorpus& corpus);

struct RewardRunResult {
    std::vector<RewardRecord> records;
    std::vector<GroupRollout> groups;  // populated in grouped mode
    std::optional<DifficultyFilterResult> filter;
};

// Judge hook for reward scoring; sees the full query so the judge prompt
// can carry the question.
using QueryVerdictProvider =
    std::function<bool(const QueryInstance& query, const std::string& prediction)>;

// Scores every trace; when the corpus carries group_size rollouts per
// query, also computes group advantages, dynamic-sampling drops and the
// difficulty-filter report.
RewardRunResult run_reward(const PipelineConfig& config, const TraceCorpus& corpus,
                           const Toolbox& toolbox, const QueryVerdictProvider& judge = {});

struct EvaluateRunResult {
    std::vector<EvalRecord> records;
    Report report;
};

// Optional page re-selection inputs for run_evaluate: queries with an
// embedding get their page list replaced by the index's top-k.
struct RetrievalInputs {
    PageIndex index;
    std::map<std::string, EmbeddingMatrix> query_embeddings;
};

// Full evaluation loop: render prompt -> generate -> parse -> score ->
// aggregate. Per-query work runs under a bounded pool; records append to
// records_path in dataset order so an interrupted run resumes at the first
// unprocessed query. Per-record failures are recorded, never fatal.
EvaluateRunResult run_evaluate(const PipelineConfig& config, const TraceCorpus& dataset,
                               ChatClient& generation, ChatClient* judge, const Toolbox& toolbox,
                               const std::string& records_path = "",
                               const RetrievalInputs* retrieval = nullptr);

// Builds the effective client for a config section: stub file when set,
// HTTP otherwise. api_key_env names the environment variable holding the
// bearer token.
std::unique_ptr<ChatClient> make_client(const ClientConfig& client_config,
                                        bool inline_base64_images, const char* api_key_env);

// JSONL / report writers. write_report_json replaces the file atomically.
void write_reward_report(const std::vector<RewardRecord>& records, const std::string& path);
void write_advantage_export(const std::vector<GroupRollout>& groups, const std::string& path);
void write_filter_report(const DifficultyFilterResult& result, const std::string& path);
void write_report_json(const Report& report, const PipelineConfig& config,
                       const std::string& path);

// Loads an eval-record file. Lines carrying attended_regions plus a
// golden_region get their hit recomputed under the policy; lines without a
// correct flag fall back to exact-match of prediction against gold.
std::vector<EvalRecord> load_eval_records(const std::string& path, const HitPolicy& policy = {});

nlohmann::ordered_json eval_record_to_json(const EvalRecord& record);
nlohmann::ordered_json report_to_json(const Report& report);

}  // namespace lf
