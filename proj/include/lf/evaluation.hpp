#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lf/client.hpp"
#include "lf/trace.hpp"

namespace lf {

enum class Hop {
    single,
    multi,
    unknown,
};

Hop hop_from_string(std::string_view name);
const char* to_string(Hop hop);

struct EvalRecord {
    std::string query_id;
    std::string prediction;
    std::string gold;
    bool correct = false;
    std::optional<bool> hit;  // golden-region perception, when region data existed
    std::optional<double> latency_seconds;
    std::string benchmark;
    Hop hop = Hop::unknown;
    bool judge_failed = false;        // excluded from the accuracy denominator
    std::optional<int> tool_valid;    // structural validity bit, when computed
    std::string failure;              // non-empty when the record could not be produced
};

struct AttentionRecord {
    std::string query_id;
    std::vector<WeightedRect> attended_regions;
    std::string page_id;
};

struct HitPolicy {
    enum class Kind {
        intersect,    // any attended rectangle overlaps with positive area
        iou,          // max IoU >= threshold
        peak_in_box,  // highest-weight rectangle's center inside the golden box
    };
    Kind kind = Kind::intersect;
    double iou_threshold = 0.5;
};

HitPolicy::Kind hit_policy_from_string(std::string_view name);
const char* to_string(HitPolicy::Kind kind);

struct LatencyStats {
    double mean = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    std::size_t count = 0;
};

struct BreakdownEntry {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct Report {
    std::size_t total = 0;
    std::size_t judged = 0;  // total minus judge and record failures
    std::size_t correct_count = 0;
    std::size_t judge_failures = 0;
    std::size_t record_failures = 0;
    double accuracy = 0.0;
    std::map<std::string, BreakdownEntry> per_benchmark;
    std::map<std::string, BreakdownEntry> per_hop;
    std::size_t perception_defined = 0;
    std::optional<double> perception_rate;
    std::optional<double> v_precision;
    std::optional<double> v_recall;
    std::optional<LatencyStats> latency;
    std::optional<double> tool_valid_rate;
};

// Extracts the verdict from a judge reply: the first occurrence of
// <judge>True</judge> or <judge>False</judge> wins (case-sensitive);
// nullopt when neither is present.
std::optional<bool> parse_judge_reply(std::string_view reply);

struct JudgeOptions {
    std::string model;
    int parse_retries = 2;
    double temperature = 0.0;
};

// Renders the judge prompt, sends it through the client and parses the
// verdict. Malformed replies are retried parse_retries times, then
// JudgeParseError is thrown; transport failures become JudgeTransportError.
bool judge_verdict(const std::string& question, const std::string& gold,
                   const std::string& prediction, ChatClient& client,
                   const JudgeOptions& options = {}, const std::string& tag = "");

// Whether attention hit the golden region under the given policy. The
// golden page id, when non-empty, must match the attention record's page.
bool perception_hit(const AttentionRecord& attention, const Rect& golden,
                    const HitPolicy& policy = {}, const std::string& golden_page_id = "");

// Hit fraction over records where hit is defined. Throws NoPerceptionData
// when no record qualifies.
double perception_rate(const std::vector<EvalRecord>& records);

// P(correct | hit) over perception-defined records. Throws NoHits.
double v_precision(const std::vector<EvalRecord>& records);

// P(hit | correct) over perception-defined records. Throws NoCorrect.
double v_recall(const std::vector<EvalRecord>& records);

Report aggregate_report(const std::vector<EvalRecord>& records);

}  // namespace lf
