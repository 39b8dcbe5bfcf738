#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lf/errors.hpp"
#include "lf/pipeline.hpp"
#include "lf/prompts.hpp"
#include "lf/retrieval.hpp"

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kGenKeyEnv = "LF_GEN_API_KEY";
constexpr const char* kJudgeKeyEnv = "LF_JUDGE_API_KEY";

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
    cmd->add_option("--config", common.config_path, "JSON config file");
    cmd->add_option("--set", common.overrides,
                    "Override a config value, e.g. --set reward.alpha=0.5 (repeatable)");
}

lf::PipelineConfig effective_config(const CommonOptions& common) {
    lf::PipelineConfig config;
    if (!common.config_path.empty()) {
        config = lf::load_config(common.config_path);
    }
    for (const std::string& assignment : common.overrides) {
        lf::apply_override(config, assignment);
    }
    return config;
}

lf::Toolbox resolve_toolbox(const std::string& path, bool deployed) {
    if (deployed || path.empty()) {
        return lf::deployed_toolbox();
    }
    return lf::load_toolbox(path);
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw lf::IoError("cannot open file: " + path);
    }
    std::vector<json> docs;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) {
            throw lf::SchemaError(path + ":" + std::to_string(line_number) + ": invalid JSON");
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw lf::IoError("cannot write file: " + path);
    }
    out << content;
}

int cmd_parse(const std::string& input, const std::string& output) {
    const lf::TraceCorpus corpus = lf::load_trace_corpus(input);
    if (!output.empty()) {
        std::string content;
        for (const lf::TraceRecord& record : corpus.records) {
            ordered_json doc;
            doc["id"] = record.query.id;
            doc["ok"] = record.failure.empty();
            if (!record.failure.empty()) {
                doc["failure"] = record.failure;
            }
            if (record.trace) {
                doc["tag_order_ok"] = record.trace->tag_order_ok;
                doc["answer"] = lf::trimmed_answer(*record.trace);
                ordered_json steps = ordered_json::array();
                for (const lf::ToolInvocation& step : record.trace->exec_steps) {
                    steps.push_back({{"name", step.name}, {"args", step.args}});
                }
                doc["exec_steps"] = std::move(steps);
                doc["routed_pages"] = record.trace->routed_pages;
            }
            content += doc.dump();
            content += '\n';
        }
        write_text(output, content);
    }
    std::cout << "parsed " << corpus.records.size() << " record(s): " << corpus.successes
              << " ok, " << corpus.failures << " failed\n";
    return 0;
}

int cmd_curate(const CommonOptions& common, const std::string& input, int k,
               const std::string& toolbox_out, const std::string& pool_out) {
    lf::PipelineConfig config = effective_config(common);
    if (k > 0) {
        config.curation.k = k;
    }
    if (!toolbox_out.empty()) {
        config.paths.toolbox = toolbox_out;
    }
    if (!pool_out.empty()) {
        config.paths.pool = pool_out;
    }
    const lf::TraceCorpus corpus = lf::load_trace_corpus(input);
    const lf::CurationRunResult result = lf::run_curation(config, corpus);
    std::cout << "processed " << result.pool.trajectories_processed << " trajectories, pool size "
              << result.pool.presence_count.size() << "\n";
    std::cout << "top-" << result.toolbox.tools.size() << " toolbox covers "
              << result.toolbox.coverage * 100.0 << "% of tool usage\n";
    for (std::size_t i = 0; i < result.toolbox.tools.size(); ++i) {
        std::cout << "  " << result.toolbox.tools[i].name << " (" << result.toolbox.counts[i]
                  << ")\n";
    }
    return 0;
}

int cmd_toolbox_render(const std::string& toolbox_path, bool deployed, int num_images,
                       const std::string& output) {
    const lf::Toolbox box = resolve_toolbox(toolbox_path, deployed);
    const std::string prompt = lf::render_toolbox_prompt(box, num_images);
    if (output.empty()) {
        std::cout << prompt;
    } else {
        write_text(output, prompt);
    }
    return 0;
}

int cmd_reward(const CommonOptions& common, const std::string& input,
               const std::string& toolbox_path, bool deployed, const std::string& rewards_out,
               const std::string& advantages_out, const std::string& filter_out) {
    const lf::PipelineConfig config = effective_config(common);
    const lf::Toolbox box = resolve_toolbox(toolbox_path, deployed);
    const lf::TraceCorpus corpus = lf::load_trace_corpus(input);

    lf::QueryVerdictProvider judge;
    std::unique_ptr<lf::ChatClient> judge_client;
    if (config.reward.answer_mode == lf::AnswerMode::judge) {
        judge_client = lf::make_client(config.clients.judge, config.clients.inline_base64_images,
                                       kJudgeKeyEnv);
        lf::JudgeOptions judge_options;
        judge_options.model = config.clients.judge.model;
        judge_options.parse_retries = config.evaluation.judge_retries;
        judge_options.temperature = config.clients.judge.temperature;
        judge = [client = judge_client.get(), judge_options](const lf::QueryInstance& query,
                                                             const std::string& prediction) {
            return lf::judge_verdict(query.question, query.golden_answer, prediction, *client,
                                     judge_options, query.id);
        };
    }

    const lf::RewardRunResult result = lf::run_reward(config, corpus, box, judge);
    if (!rewards_out.empty()) {
        lf::write_reward_report(result.records, rewards_out);
    }
    if (!advantages_out.empty()) {
        if (result.groups.empty()) {
            throw lf::SchemaError(
                "advantage export requested but the corpus is not grouped into " +
                std::to_string(config.reward.group_size) + " rollouts per query");
        }
        lf::write_advantage_export(result.groups, advantages_out);
    }
    if (!filter_out.empty()) {
        if (!result.filter) {
            throw lf::SchemaError("difficulty filter requires a grouped corpus");
        }
        lf::write_filter_report(*result.filter, filter_out);
    }
    std::size_t valid = 0;
    for (const lf::RewardRecord& record : result.records) {
        valid += record.r_tool;
    }
    std::cout << "scored " << result.records.size() << " trace(s), " << valid
              << " structurally valid\n";
    if (result.filter) {
        std::cout << "difficulty filter: " << result.filter->report.retained << "/"
                  << result.filter->report.total << " retained\n";
    }
    return 0;
}

int cmd_filter(const std::string& input, int group_size, const std::string& output) {
    std::map<std::string, std::vector<int>> records;
    for (const json& doc : read_jsonl(input)) {
        if (!doc.contains("query_id") || !doc.contains("correct") ||
            !doc["correct"].is_array()) {
            throw lf::SchemaError("filter input lines need {query_id, correct: [0|1,...]}");
        }
        std::vector<int> correctness;
        for (const auto& v : doc["correct"]) {
            correctness.push_back(v.get<int>());
        }
        records[doc["query_id"].get<std::string>()] = std::move(correctness);
    }
    const lf::DifficultyFilterResult result = lf::difficulty_filter(records, group_size);
    if (!output.empty()) {
        lf::write_filter_report(result, output);
    }
    std::cout << "retained " << result.report.retained << "/" << result.report.total
              << " (removed " << result.report.removed_all_correct << " all-correct)\n";
    return 0;
}

int cmd_advantages(const std::string& input, double epsilon, const std::string& output) {
    std::vector<lf::GroupRollout> groups;
    for (const json& doc : read_jsonl(input)) {
        if (!doc.contains("query_id") || !doc.contains("rewards") ||
            !doc["rewards"].is_array()) {
            throw lf::SchemaError("advantage input lines need {query_id, rewards: [...]}");
        }
        lf::GroupRollout group;
        group.query_id = doc["query_id"].get<std::string>();
        for (const auto& v : doc["rewards"]) {
            group.rewards.push_back(v.get<double>());
        }
        group.advantages = lf::group_advantages(group.rewards, epsilon);
        groups.push_back(std::move(group));
    }
    const lf::SamplingPartition partition = lf::dynamic_sampling_filter(std::move(groups));
    std::vector<lf::GroupRollout> ordered;
    ordered.insert(ordered.end(), partition.kept.begin(), partition.kept.end());
    ordered.insert(ordered.end(), partition.dropped.begin(), partition.dropped.end());
    if (!output.empty()) {
        lf::write_advantage_export(ordered, output);
    }
    std::cout << "computed advantages for " << ordered.size() << " group(s), "
              << partition.dropped.size() << " dropped (zero variance)\n";
    return 0;
}

int cmd_index_build(const std::string& input, const std::string& output) {
    const lf::PageIndex index = lf::build_index_from_jsonl(input);
    lf::save_index(index, output);
    std::cout << "indexed " << index.entries.size() << " page(s), dim " << index.dim << "\n";
    return 0;
}

int cmd_retrieve(const std::string& index_path, const std::string& queries_path, int k,
                 const std::string& report_path, const std::string& golds_path,
                 const std::string& similarity) {
    const lf::PageIndex index = lf::load_index(index_path);
    const auto queries = lf::load_embeddings_jsonl(queries_path, "query_id");
    const lf::Similarity sim = lf::similarity_from_string(similarity);

    std::vector<lf::RetrievalResult> results;
    std::string content;
    for (const auto& [query_id, matrix] : queries) {
        lf::RetrievalResult result = lf::retrieve_topk(index, matrix, k, sim, query_id);
        ordered_json doc;
        doc["query_id"] = result.query_id;
        ordered_json ranked = ordered_json::array();
        for (const lf::ScoredPage& page : result.ranked) {
            ranked.push_back({{"page_id", page.page_id}, {"score", page.score}});
        }
        doc["ranked"] = std::move(ranked);
        doc["k"] = result.k;
        content += doc.dump();
        content += '\n';
        results.push_back(std::move(result));
    }
    if (!report_path.empty()) {
        write_text(report_path, content);
    }
    std::cout << "retrieved top-" << k << " for " << results.size() << " quer(y/ies)\n";

    if (!golds_path.empty()) {
        std::map<std::string, std::set<std::string>> golds;
        for (const json& doc : read_jsonl(golds_path)) {
            if (!doc.contains("query_id") || !doc.contains("golden_pages")) {
                throw lf::SchemaError("golds lines need {query_id, golden_pages: [...]}");
            }
            std::set<std::string> pages;
            for (const auto& page : doc["golden_pages"]) {
                pages.insert(page.get<std::string>());
            }
            golds[doc["query_id"].get<std::string>()] = std::move(pages);
        }
        std::size_t skipped = 0;
        std::cout << "recall@1 " << lf::recall_at_k(results, golds, 1, &skipped) * 100.0 << "%\n";
        std::cout << "recall@" << k << " " << lf::recall_at_k(results, golds, k) * 100.0
                  << "%\n";
        std::cout << "mrr@5 " << lf::mrr_at_k(results, golds, 5) * 100.0 << "%\n";
        if (skipped > 0) {
            std::cout << skipped << " quer(y/ies) without golds excluded\n";
        }
    }
    return 0;
}

int cmd_evaluate(const CommonOptions& common, const std::string& input,
                 const std::string& toolbox_path, bool deployed, const std::string& records_path,
                 const std::string& report_path, bool fresh, const std::string& index_path,
                 const std::string& query_embeddings_path) {
    lf::PipelineConfig config = effective_config(common);
    if (!report_path.empty()) {
        config.paths.report = report_path;
    }
    const lf::Toolbox box = resolve_toolbox(toolbox_path, deployed);
    const std::string dataset_path = input.empty() ? config.paths.input : input;
    if (dataset_path.empty()) {
        throw lf::ConfigError("evaluate needs --in or paths.input");
    }
    const lf::TraceCorpus dataset = lf::load_trace_corpus(dataset_path, {.require_trace = false});

    std::unique_ptr<lf::RetrievalInputs> retrieval;
    const std::string effective_index =
        index_path.empty() ? config.paths.index : index_path;
    if (!effective_index.empty()) {
        if (query_embeddings_path.empty()) {
            throw lf::ConfigError("--index requires --query-embeddings");
        }
        retrieval = std::make_unique<lf::RetrievalInputs>();
        retrieval->index = lf::load_index(effective_index);
        for (auto& [query_id, matrix] :
             lf::load_embeddings_jsonl(query_embeddings_path, "query_id")) {
            retrieval->query_embeddings.emplace(query_id, std::move(matrix));
        }
    }

    auto generation = lf::make_client(config.clients.generation,
                                      config.clients.inline_base64_images, kGenKeyEnv);
    std::unique_ptr<lf::ChatClient> judge;
    if (config.reward.answer_mode == lf::AnswerMode::judge) {
        judge = lf::make_client(config.clients.judge, config.clients.inline_base64_images,
                                kJudgeKeyEnv);
    }

    if (fresh && !records_path.empty()) {
        std::remove(records_path.c_str());
    }
    const lf::EvaluateRunResult result = lf::run_evaluate(
        config, dataset, *generation, judge.get(), box, records_path, retrieval.get());
    std::cout << "evaluated " << result.records.size() << " quer(y/ies), accuracy "
              << result.report.accuracy * 100.0 << "%";
    if (result.report.judge_failures > 0) {
        std::cout << " (" << result.report.judge_failures << " judge failure(s) excluded)";
    }
    std::cout << "\n";
    if (config.paths.report.empty()) {
        std::cout << lf::report_to_json(result.report).dump(2) << "\n";
    }
    return 0;
}

int cmd_report(const CommonOptions& common, const std::string& input,
               const std::string& output) {
    const lf::PipelineConfig config = effective_config(common);
    const std::vector<lf::EvalRecord> records =
        lf::load_eval_records(input, config.evaluation.hit_policy);
    if (records.empty()) {
        throw lf::SchemaError("no records in " + input);
    }
    const lf::Report report = lf::aggregate_report(records);
    if (!output.empty()) {
        lf::write_report_json(report, config, output);
    } else {
        std::cout << lf::report_to_json(report).dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"langforge: linguistic-toolchain curation, rewards, retrieval and evaluation"};
    app.require_subcommand(1);

    // parse
    auto* parse_cmd = app.add_subcommand("parse", "Parse and validate a trace corpus");
    std::string parse_in;
    std::string parse_out;
    parse_cmd->add_option("--in", parse_in, "Trace corpus (JSONL)")->required();
    parse_cmd->add_option("--out", parse_out, "Parsed traces output (JSONL)");

    // curate
    auto* curate_cmd = app.add_subcommand("curate", "Build the tool pool and Top-K toolbox");
    CommonOptions curate_common;
    std::string curate_in;
    int curate_k = 0;
    std::string curate_toolbox;
    std::string curate_pool;
    curate_cmd->add_option("--in", curate_in, "Trajectory corpus (JSONL)")->required();
    curate_cmd->add_option("--k", curate_k, "Toolbox size (default 7)");
    curate_cmd->add_option("--toolbox-out", curate_toolbox, "Toolbox file to write");
    curate_cmd->add_option("--pool-out", curate_pool, "Pool snapshot file to write");
    add_common(curate_cmd, curate_common);

    // toolbox render
    auto* toolbox_cmd = app.add_subcommand("toolbox", "Toolbox utilities");
    toolbox_cmd->require_subcommand(1);
    auto* render_cmd = toolbox_cmd->add_subcommand("render", "Render the inference prompt");
    std::string render_toolbox_path;
    bool render_deployed = false;
    int render_images = 3;
    std::string render_out;
    render_cmd->add_option("--toolbox", render_toolbox_path, "Toolbox file");
    render_cmd->add_flag("--deployed", render_deployed, "Use the built-in deployed toolbox");
    render_cmd->add_option("--num-images", render_images, "Image count substitution");
    render_cmd->add_option("--out", render_out, "Write the prompt to a file");

    // reward
    auto* reward_cmd = app.add_subcommand("reward", "Score traces and export advantages");
    CommonOptions reward_common;
    std::string reward_in;
    std::string reward_toolbox;
    bool reward_deployed = false;
    std::string reward_out;
    std::string reward_advantages;
    std::string reward_filter;
    reward_cmd->add_option("--in", reward_in, "Rollout corpus (JSONL)")->required();
    reward_cmd->add_option("--toolbox", reward_toolbox, "Toolbox file");
    reward_cmd->add_flag("--deployed", reward_deployed, "Use the built-in deployed toolbox");
    reward_cmd->add_option("--out", reward_out, "Reward report (JSONL)");
    reward_cmd->add_option("--advantages-out", reward_advantages, "Advantage export (JSONL)");
    reward_cmd->add_option("--filter-out", reward_filter, "Difficulty-filter report (JSON)");
    add_common(reward_cmd, reward_common);

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "Difficulty-filter rollout correctness");
    std::string filter_in;
    int filter_group = 8;
    std::string filter_out;
    filter_cmd->add_option("--in", filter_in, "Correctness lines (JSONL)")->required();
    filter_cmd->add_option("--group-size", filter_group, "Rollouts per query (default 8)");
    filter_cmd->add_option("--out", filter_out, "Filter report (JSON)");

    // advantages
    auto* adv_cmd = app.add_subcommand("advantages", "Group-relative advantages");
    std::string adv_in;
    double adv_epsilon = 1e-6;
    std::string adv_out;
    adv_cmd->add_option("--in", adv_in, "Reward groups (JSONL)")->required();
    adv_cmd->add_option("--epsilon", adv_epsilon, "Std epsilon (default 1e-6)");
    adv_cmd->add_option("--out", adv_out, "Advantage export (JSONL)");

    // index build
    auto* index_cmd = app.add_subcommand("index", "Index utilities");
    index_cmd->require_subcommand(1);
    auto* build_cmd = index_cmd->add_subcommand("build", "Compile embeddings into an index");
    std::string build_in;
    std::string build_out;
    build_cmd->add_option("--in", build_in, "Page embeddings (JSONL)")->required();
    build_cmd->add_option("--out", build_out, "Index file")->required();

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "Late-interaction top-k retrieval");
    std::string retrieve_index;
    std::string retrieve_queries;
    int retrieve_k = 3;
    std::string retrieve_report;
    std::string retrieve_golds;
    std::string retrieve_similarity = "dot";
    retrieve_cmd->add_option("--index", retrieve_index, "Index file")->required();
    retrieve_cmd->add_option("--queries", retrieve_queries, "Query embeddings (JSONL)")
        ->required();
    retrieve_cmd->add_option("--k", retrieve_k, "Pages per query (default 3)");
    retrieve_cmd->add_option("--report", retrieve_report, "Ranked results (JSONL)");
    retrieve_cmd->add_option("--golds", retrieve_golds, "Gold pages for metrics (JSONL)");
    retrieve_cmd->add_option("--similarity", retrieve_similarity, "dot or cosine");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "End-to-end evaluation run");
    CommonOptions eval_common;
    std::string eval_in;
    std::string eval_toolbox;
    bool eval_deployed = false;
    std::string eval_records;
    std::string eval_report;
    bool eval_fresh = false;
    std::string eval_index;
    std::string eval_query_embeddings;
    eval_cmd->add_option("--in", eval_in, "Query dataset (JSONL)");
    eval_cmd->add_option("--toolbox", eval_toolbox, "Toolbox file");
    eval_cmd->add_flag("--deployed", eval_deployed, "Use the built-in deployed toolbox");
    eval_cmd->add_option("--records", eval_records, "Per-query records file (JSONL, resumable)");
    eval_cmd->add_option("--report", eval_report, "Aggregate report (JSON)");
    eval_cmd->add_flag("--fresh", eval_fresh, "Ignore an existing records file");
    eval_cmd->add_option("--index", eval_index, "Page index for retrieval-based page selection");
    eval_cmd->add_option("--query-embeddings", eval_query_embeddings,
                         "Query embeddings (JSONL) for --index");
    add_common(eval_cmd, eval_common);

    // report
    auto* report_cmd = app.add_subcommand("report", "Aggregate precomputed eval records");
    CommonOptions report_common;
    std::string report_in;
    std::string report_out;
    report_cmd->add_option("--in", report_in, "Eval records (JSONL)")->required();
    report_cmd->add_option("--out", report_out, "Report file (JSON)");
    add_common(report_cmd, report_common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (parse_cmd->parsed()) {
            return cmd_parse(parse_in, parse_out);
        }
        if (curate_cmd->parsed()) {
            return cmd_curate(curate_common, curate_in, curate_k, curate_toolbox, curate_pool);
        }
        if (toolbox_cmd->parsed()) {
            return cmd_toolbox_render(render_toolbox_path, render_deployed, render_images,
                                      render_out);
        }
        if (reward_cmd->parsed()) {
            return cmd_reward(reward_common, reward_in, reward_toolbox, reward_deployed,
                              reward_out, reward_advantages, reward_filter);
        }
        if (filter_cmd->parsed()) {
            return cmd_filter(filter_in, filter_group, filter_out);
        }
        if (adv_cmd->parsed()) {
            return cmd_advantages(adv_in, adv_epsilon, adv_out);
        }
        if (index_cmd->parsed()) {
            return cmd_index_build(build_in, build_out);
        }
        if (retrieve_cmd->parsed()) {
            return cmd_retrieve(retrieve_index, retrieve_queries, retrieve_k, retrieve_report,
                                retrieve_golds, retrieve_similarity);
        }
        if (eval_cmd->parsed()) {
            return cmd_evaluate(eval_common, eval_in, eval_toolbox, eval_deployed, eval_records,
                                eval_report, eval_fresh, eval_index, eval_query_embeddings);
        }
        if (report_cmd->parsed()) {
            return cmd_report(report_common, report_in, report_out);
        }
    } catch (const lf::ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const lf::TransportError& err) {
        std::cerr << "transport error: " << err.what() << "\n";
        return 3;
    } catch (const lf::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 0;
}
