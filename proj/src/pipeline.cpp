#include "lf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>

#include "lf/errors.hpp"
#include "lf/prompts.hpp"
#include "lf/retrieval.hpp"

#include <json.hpp>

namespace lf {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write file: " + tmp);
        }
        out << content;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot rename " + tmp + " -> " + path + ": " + ec.message());
    }
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
    return Rect{value[0].get<double>(), value[1].get<double>(), value[2].get<double>(),
                value[3].get<double>()};
}

std::vector<WeightedRect> regions_from_json(const json& value) {
    std::vector<WeightedRect> regions;
    if (!value.is_array()) {
        return regions;
    }
    for (const auto& entry : value) {
        if (!entry.is_array() || (entry.size() != 4 && entry.size() != 5)) {
            continue;
        }
        const auto rect = rect_from_json(json{entry[0], entry[1], entry[2], entry[3]});
        if (!rect) {
            continue;
        }
        WeightedRect wr;
        wr.rect = *rect;
        if (entry.size() == 5 && entry[4].is_number()) {
            wr.weight = entry[4].get<double>();
        }
        regions.push_back(wr);
    }
    return regions;
}

// Rewards for one record; parse failures score zero on both components.
RewardRecord score_record(const TraceRecord& record, const Toolbox& toolbox,
                          const RewardConfig& reward_config, const QueryVerdictProvider& judge) {
    RewardRecord out;
    out.query_id = record.query.id;
    if (record.trace) {
        VerdictProvider provider;
        if (judge) {
            provider = [&](const std::string& prediction, const std::string&) {
                return judge(record.query, prediction);
            };
        }
        out.r_ans = answer_reward(trimmed_answer(*record.trace), record.query.golden_answer,
                                  reward_config.answer_mode, provider);
        auto [value, reasons] = tool_reward(*record.trace, toolbox, reward_config);
        out.r_tool = value;
        out.validity_reasons = std::move(reasons);
    } else {
        out.r_ans = 0;
        out.r_tool = 0;
        out.validity_reasons = {Violation::missing_block};
    }
    out.combined = combined_reward(out.r_ans, out.r_tool, reward_config);
    return out;
}

struct EvalTask {
    std::size_t index = 0;
    const TraceRecord* record = nullptr;
};

EvalRecord evaluate_one(const PipelineConfig& config, const TraceRecord& record,
                        ChatClient& generation, ChatClient* judge, const Toolbox& toolbox,
                        const RetrievalInputs* retrieval) {
    const QueryInstance& query = record.query;
    EvalRecord out;
    out.query_id = query.id;
    out.gold = query.golden_answer;
    out.benchmark = record.benchmark.empty() ? "default" : record.benchmark;
    out.hop = hop_from_string(record.hop);

    const auto start = std::chrono::steady_clock::now();

    std::vector<std::string> pages = query.page_ids;
    if (retrieval != nullptr) {
        const auto it = retrieval->query_embeddings.find(query.id);
        if (it != retrieval->query_embeddings.end()) {
            const RetrievalResult ranked =
                retrieve_topk(retrieval->index, it->second, config.retrieval.k,
                              config.retrieval.similarity, query.id);
            pages.clear();
            for (const ScoredPage& page : ranked.ranked) {
                pages.push_back(page.page_id);
            }
        }
    }

    PromptParams params;
    params.num_images = static_cast<int>(pages.size());
    params.query = query.question;
    params.images = pages;
    params.toolbox = &toolbox;
    const RenderedPrompt prompt = render_prompt_parts(PromptKind::toolbox, params);

    ChatRequest request;
    request.model = config.clients.generation.model;
    request.temperature = config.clients.generation.temperature;
    request.tag = query.id;
    request.messages = {{"system", prompt.system, {}}, {"user", prompt.user, pages}};

    const ChatReply reply = generation.send(request);
    const TraceResult parsed = parse_trace(reply.content);
    if (const ParsedTrace* trace = get_trace(parsed)) {
        out.prediction = trimmed_answer(*trace);
    }
    auto [tool_value, tool_reasons] = tool_reward(parsed, toolbox, config.reward);
    (void)tool_reasons;
    out.tool_valid = tool_value;

    if (config.reward.answer_mode == AnswerMode::judge) {
        if (judge == nullptr) {
            throw JudgeUnavailable("evaluate: judge mode configured but no judge client");
        }
        JudgeOptions judge_options;
        judge_options.model = config.clients.judge.model;
        judge_options.parse_retries = config.evaluation.judge_retries;
        judge_options.temperature = config.clients.judge.temperature;
        try {
            out.correct =
                judge_verdict(query.question, query.golden_answer, out.prediction, *judge,
                              judge_options, query.id);
        } catch (const JudgeParseError&) {
            out.judge_failed = true;
        } catch (const JudgeTransportError&) {
            out.judge_failed = true;
        }
    } else {
        out.correct = answer_reward(out.prediction, query.golden_answer,
                                    AnswerMode::exact_normalized) == 1;
    }

    if (query.golden_region && !record.attended_regions.empty()) {
        AttentionRecord attention;
        attention.query_id = query.id;
        attention.attended_regions = record.attended_regions;
        attention.page_id = record.attention_page_id;
        out.hit = perception_hit(attention, *query.golden_region, config.evaluation.hit_policy);
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // Stub clients report fixture latencies so runs stay byte-reproducible.
    out.latency_seconds = generation.deterministic() ? reply.latency_seconds : wall;
    return out;
}

// Records survive per-record failures; only setup problems abort the run.
EvalRecord evaluate_one_guarded(const PipelineConfig& config, const TraceRecord& record,
                                ChatClient& generation, ChatClient* judge,
                                const Toolbox& toolbox, const RetrievalInputs* retrieval) {
    try {
        return evaluate_one(config, record, generation, judge, toolbox, retrieval);
    } catch (const JudgeUnavailable&) {
        throw;  // configuration problem, not a data problem
    } catch (const Error& err) {
        EvalRecord out;
        out.query_id = record.query.id;
        out.gold = record.query.golden_answer;
        out.benchmark = record.benchmark.empty() ? "default" : record.benchmark;
        out.hop = hop_from_string(record.hop);
        out.failure = err.what();
        return out;
    }
}

}  // namespace

CurationRunResult run_curation(const PipelineConfig& config, const TraceCorpus& corpus) {
    CurationRunResult result;
    for (const TraceRecord& record : corpus.records) {
        if (!record.trace) {
            continue;
        }
        std::optional<CurationOutput> curation;
        if (!record.curation_text.empty()) {
            curation = parse_curation_output(record.curation_text);
        }
        const std::set<std::string> tool_set = trajectory_tool_set(
            *record.trace, curation ? &*curation : nullptr, config.curation.normalize);
        update_pool(result.pool, tool_set,
                    curation ? curation->new_definitions : std::vector<ToolDefinition>{});
    }
    result.toolbox = select_topk(result.pool, config.curation.k);

    if (!config.paths.toolbox.empty()) {
        save_toolbox(result.toolbox, config.paths.toolbox);
    }
    if (!config.paths.pool.empty()) {
        save_pool_snapshot(result.pool, result.toolbox, config.paths.pool);
    }
    return result;
}

RewardRunResult run_reward(const PipelineConfig& config, const TraceCorpus& corpus,
                           const Toolbox& toolbox, const QueryVerdictProvider& judge) {
    RewardRunResult result;

    // Group rollouts by query id in order of first appearance.
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<double>> group_rewards;
    std::map<std::string, std::vector<int>> group_correct;

    for (const TraceRecord& record : corpus.records) {
        // Lines that never yielded a query (bad JSON, schema violations)
        // cannot be scored; trace parse failures can and score zero.
        if (!record.failure.empty() && record.failure.rfind("parse:", 0) != 0) {
            continue;
        }
        RewardRecord reward = score_record(record, toolbox, config.reward, judge);
        if (group_rewards.find(reward.query_id) == group_rewards.end()) {
            group_order.push_back(reward.query_id);
        }
        group_rewards[reward.query_id].push_back(reward.combined);
        group_correct[reward.query_id].push_back(reward.r_ans);
        result.records.push_back(std::move(reward));
    }

    const bool grouped = !group_rewards.empty() &&
                         std::all_of(group_rewards.begin(), group_rewards.end(),
                                     [&](const auto& entry) {
                                         return static_cast<int>(entry.second.size()) ==
                                                config.reward.group_size;
                                     });
    if (grouped) {
        for (const std::string& query_id : group_order) {
            GroupRollout group;
            group.query_id = query_id;
            group.rewards = group_rewards[query_id];
            group.advantages = group_advantages(group.rewards, config.reward.advantage_epsilon);
            result.groups.push_back(std::move(group));
        }
        SamplingPartition partition = dynamic_sampling_filter(std::move(result.groups));
        result.groups.clear();
        for (auto& group : partition.kept) {
            result.groups.push_back(std::move(group));
        }
        for (auto& group : partition.dropped) {
            result.groups.push_back(std::move(group));
        }
        // Restore first-appearance order after the partition.
        std::map<std::string, std::size_t> order_index;
        for (std::size_t i = 0; i < group_order.size(); ++i) {
            order_index[group_order[i]] = i;
        }
        std::sort(result.groups.begin(), result.groups.end(),
                  [&](const GroupRollout& a, const GroupRollout& b) {
                      return order_index[a.query_id] < order_index[b.query_id];
                  });

        result.filter = difficulty_filter(group_correct, config.reward.group_size);
    }
    return result;
}

EvaluateRunResult run_evaluate(const PipelineConfig& config, const TraceCorpus& dataset,
                               ChatClient& generation, ChatClient* judge, const Toolbox& toolbox,
                               const std::string& records_path,
                               const RetrievalInputs* retrieval) {
    EvaluateRunResult result;

    // Resume: an existing records file must be a prefix of the dataset.
    std::size_t resume_count = 0;
    if (!records_path.empty() && std::filesystem::exists(records_path)) {
        const std::vector<EvalRecord> existing =
            load_eval_records(records_path, config.evaluation.hit_policy);
        if (existing.size() > dataset.records.size()) {
            throw SchemaError("records file has more entries than the dataset: " + records_path);
        }
        for (std::size_t i = 0; i < existing.size(); ++i) {
            if (existing[i].query_id != dataset.records[i].query.id) {
                throw SchemaError("records file does not match the dataset at line " +
                                  std::to_string(i + 1) + ": " + records_path);
            }
        }
        result.records = existing;
        resume_count = existing.size();
    }

    std::ofstream records_out;
    if (!records_path.empty()) {
        records_out.open(records_path, std::ios::app);
        if (!records_out) {
            throw IoError("cannot open records file for append: " + records_path);
        }
    }

    const std::size_t total = dataset.records.size();
    const std::size_t max_in_flight =
        static_cast<std::size_t>(std::max(1, config.clients.max_in_flight));
    std::size_t next = resume_count;
    while (next < total) {
        const std::size_t batch_end = std::min(total, next + max_in_flight);
        std::vector<std::future<EvalRecord>> batch;
        for (std::size_t i = next; i < batch_end; ++i) {
            batch.push_back(std::async(std::launch::async, [&, i]() {
                return evaluate_one_guarded(config, dataset.records[i], generation, judge,
                                            toolbox, retrieval);
            }));
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            EvalRecord record = batch[i].get();
            if (records_out.is_open()) {
                records_out << eval_record_to_json(record).dump() << '\n';
                records_out.flush();
            }
            result.records.push_back(std::move(record));
        }
        next = batch_end;
    }

    result.report = aggregate_report(result.records);
    if (!config.paths.report.empty()) {
        write_report_json(result.report, config, config.paths.report);
    }
    return result;
}

std::unique_ptr<ChatClient> make_client(const ClientConfig& client_config,
                                        bool inline_base64_images, const char* api_key_env) {
    if (!client_config.stub_file.empty()) {
        return std::make_unique<StubChatClient>(StubChatClient::from_file(client_config.stub_file));
    }
    if (client_config.endpoint.empty()) {
        throw ConfigError("client has neither stub_file nor endpoint configured");
    }
    HttpClientOptions options;
    options.endpoint = client_config.endpoint;
    options.timeout_seconds = client_config.timeout_seconds;
    options.max_retries = client_config.max_retries;
    options.backoff_ms = client_config.backoff_ms;
    options.inline_base64_images = inline_base64_images;
    if (api_key_env != nullptr) {
        if (const char* key = std::getenv(api_key_env)) {
            options.api_key = key;
        }
    }
    return std::make_unique<HttpChatClient>(std::move(options));
}

void write_reward_report(const std::vector<RewardRecord>& records, const std::string& path) {
    std::string content;
    for (const RewardRecord& record : records) {
        ordered_json doc;
        doc["query_id"] = record.query_id;
        doc["r_ans"] = record.r_ans;
        doc["r_tool"] = record.r_tool;
        doc["combined"] = record.combined;
        ordered_json reasons = ordered_json::array();
        for (Violation violation : record.validity_reasons) {
            reasons.push_back(to_string(violation));
        }
        doc["reasons"] = std::move(reasons);
        content += doc.dump();
        content += '\n';
    }
    atomic_write(path, content);
}

void write_advantage_export(const std::vector<GroupRollout>& groups, const std::string& path) {
    std::string content;
    for (const GroupRollout& group : groups) {
        ordered_json doc;
        doc["query_id"] = group.query_id;
        doc["rewards"] = group.rewards;
        doc["advantages"] = group.advantages ? ordered_json(*group.advantages)
                                             : ordered_json(nullptr);
        doc["dropped"] = group.dropped;
        content += doc.dump();
        content += '\n';
    }
    atomic_write(path, content);
}

void write_filter_report(const DifficultyFilterResult& result, const std::string& path) {
    ordered_json doc;
    doc["total"] = result.report.total;
    doc["removed_all_correct"] = result.report.removed_all_correct;
    doc["retained"] = result.report.retained;
    doc["pass_rate_histogram"] = result.report.pass_rate_histogram;
    doc["retained_ids"] = result.retained_ids;
    atomic_write(path, doc.dump(2) + "\n");
}

ordered_json report_to_json(const Report& report) {
    ordered_json doc;
    doc["accuracy"] = report.accuracy;
    doc["total"] = report.total;
    doc["judged"] = report.judged;
    doc["correct"] = report.correct_count;
    doc["judge_failures"] = report.judge_failures;
    doc["record_failures"] = report.record_failures;
    ordered_json benchmarks = ordered_json::object();
    for (const auto& [name, entry] : report.per_benchmark) {
        benchmarks[name] = {{"total", entry.total},
                            {"correct", entry.correct},
                            {"accuracy", entry.accuracy}};
    }
    doc["per_benchmark"] = std::move(benchmarks);
    ordered_json hops = ordered_json::object();
    for (const auto& [name, entry] : report.per_hop) {
        hops[name] = {{"total", entry.total},
                      {"correct", entry.correct},
                      {"accuracy", entry.accuracy}};
    }
    doc["per_hop"] = std::move(hops);
    doc["perception_defined"] = report.perception_defined;
    doc["perception_rate"] =
        report.perception_rate ? ordered_json(*report.perception_rate) : ordered_json(nullptr);
    doc["v_precision"] =
        report.v_precision ? ordered_json(*report.v_precision) : ordered_json(nullptr);
    doc["v_recall"] = report.v_recall ? ordered_json(*report.v_recall) : ordered_json(nullptr);
    if (report.latency) {
        doc["latency"] = {{"mean", report.latency->mean},
                          {"p50", report.latency->p50},
                          {"p95", report.latency->p95},
                          {"count", report.latency->count}};
    } else {
        doc["latency"] = nullptr;
    }
    doc["tool_valid_rate"] =
        report.tool_valid_rate ? ordered_json(*report.tool_valid_rate) : ordered_json(nullptr);
    return doc;
}

void write_report_json(const Report& report, const PipelineConfig& config,
                       const std::string& path) {
    ordered_json doc = report_to_json(report);
    doc["config"] = config_to_json(config);
    atomic_write(path, doc.dump(2) + "\n");
}

ordered_json eval_record_to_json(const EvalRecord& record) {
    ordered_json doc;
    doc["query_id"] = record.query_id;
    doc["prediction"] = record.prediction;
    doc["gold"] = record.gold;
    doc["correct"] = record.correct;
    doc["benchmark"] = record.benchmark;
    doc["hop"] = to_string(record.hop);
    if (record.hit) {
        doc["hit"] = *record.hit;
    }
    if (record.latency_seconds) {
        doc["latency_seconds"] = *record.latency_seconds;
    }
    if (record.tool_valid) {
        doc["tool_valid"] = *record.tool_valid;
    }
    if (record.judge_failed) {
        doc["judge_failed"] = true;
    }
    if (!record.failure.empty()) {
        doc["failure"] = record.failure;
    }
    return doc;
}

std::vector<EvalRecord> load_eval_records(const std::string& path, const HitPolicy& policy) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open eval records file: " + path);
    }
    std::vector<EvalRecord> records;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        const std::string context = path + ":" + std::to_string(line_number);
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw SchemaError(context + ": invalid JSON");
        }
        if (!doc.contains("query_id") || !doc["query_id"].is_string()) {
            throw SchemaError(context + ": missing query_id");
        }
        EvalRecord record;
        record.query_id = doc["query_id"].get<std::string>();
        record.prediction = doc.value("prediction", "");
        record.gold = doc.value("gold", "");
        record.benchmark = doc.value("benchmark", "default");
        record.hop = hop_from_string(doc.value("hop", "unknown"));
        if (doc.contains("latency_seconds") && doc["latency_seconds"].is_number()) {
            const double latency = doc["latency_seconds"].get<double>();
            if (latency < 0) {
                throw SchemaError(context + ": latency_seconds must be >= 0");
            }
            record.latency_seconds = latency;
        }
        if (doc.contains("tool_valid") && doc["tool_valid"].is_number_integer()) {
            record.tool_valid = doc["tool_valid"].get<int>();
        }
        record.judge_failed = doc.value("judge_failed", false);
        record.failure = doc.value("failure", "");

        if (doc.contains("correct") && doc["correct"].is_boolean()) {
            record.correct = doc["correct"].get<bool>();
        } else {
            record.correct =
                answer_reward(record.prediction, record.gold, AnswerMode::exact_normalized) == 1;
        }

        if (doc.contains("hit") && doc["hit"].is_boolean()) {
            record.hit = doc["hit"].get<bool>();
        }
        if (doc.contains("golden_region") && doc.contains("attended_regions")) {
            const auto golden = rect_from_json(doc["golden_region"]);
            const auto regions = regions_from_json(doc["attended_regions"]);
            if (golden && golden->positive_area()) {
                AttentionRecord attention;
                attention.query_id = record.query_id;
                attention.attended_regions = regions;
                attention.page_id = doc.value("page_id", "");
                record.hit = perception_hit(attention, *golden, policy);
            }
        }
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace lf
