#include "lf/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "lf/errors.hpp"
#include "lf/prompts.hpp"

namespace lf {

namespace {

double intersection_area(const Rect& a, const Rect& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0 || h <= 0) {
        return 0.0;
    }
    return w * h;
}

double iou(const Rect& a, const Rect& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

double percentile(std::vector<double> sorted_values, double pct) {
    // Nearest-rank over pre-sorted values.
    if (sorted_values.empty()) {
        return 0.0;
    }
    const double rank = std::ceil(pct / 100.0 * static_cast<double>(sorted_values.size()));
    const std::size_t idx = static_cast<std::size_t>(
        std::clamp<double>(rank, 1.0, static_cast<double>(sorted_values.size())));
    return sorted_values[idx - 1];
}

}  // namespace

Hop hop_from_string(std::string_view name) {
    if (name == "single") {
        return Hop::single;
    }
    if (name == "multi") {
        return Hop::multi;
    }
    return Hop::unknown;
}

const char* to_string(Hop hop) {
    switch (hop) {
        case Hop::single:
            return "single";
        case Hop::multi:
            return "multi";
        case Hop::unknown:
            return "unknown";
    }
    return "unknown";
}

HitPolicy::Kind hit_policy_from_string(std::string_view name) {
    if (name == "intersect") {
        return HitPolicy::Kind::intersect;
    }
    if (name == "iou") {
        return HitPolicy::Kind::iou;
    }
    if (name == "peak_in_box") {
        return HitPolicy::Kind::peak_in_box;
    }
    throw ConfigError("unknown hit policy: " + std::string(name));
}

const char* to_string(HitPolicy::Kind kind) {
    switch (kind) {
        case HitPolicy::Kind::intersect:
            return "intersect";
        case HitPolicy::Kind::iou:
            return "iou";
        case HitPolicy::Kind::peak_in_box:
            return "peak_in_box";
    }
    return "unknown";
}

std::optional<bool> parse_judge_reply(std::string_view reply) {
    const std::size_t pos_true = reply.find("<judge>True</judge>");
    const std::size_t pos_false = reply.find("<judge>False</judge>");
    if (pos_true == std::string_view::npos && pos_false == std::string_view::npos) {
        return std::nullopt;
    }
    return pos_true < pos_false;
}

bool judge_verdict(const std::string& question, const std::string& gold,
                   const std::string& prediction, ChatClient& client,
                   const JudgeOptions& options, const std::string& tag) {
    PromptParams params;
    params.query = question;
    params.gold = gold;
    params.prediction = prediction;
    const RenderedPrompt prompt = render_prompt_parts(PromptKind::judge, params);

    ChatRequest request;
    request.model = options.model;
    request.temperature = options.temperature;
    request.tag = tag;
    request.messages = {{"system", prompt.system, {}}, {"user", prompt.user, {}}};

    for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
        ChatReply reply;
        try {
            reply = client.send(request);
        } catch (const TransportError& err) {
            throw JudgeTransportError(err.what());
        }
        if (const auto verdict = parse_judge_reply(reply.content)) {
            return *verdict;
        }
    }
    throw JudgeParseError("judge reply never contained a <judge> verdict (tag '" + tag + "')");
}

bool perception_hit(const AttentionRecord& attention, const Rect& golden, const HitPolicy& policy,
                    const std::string& golden_page_id) {
    if (!golden_page_id.empty() && !attention.page_id.empty() &&
        attention.page_id != golden_page_id) {
        throw PageMismatch("perception_hit: attention page '" + attention.page_id +
                           "' does not match golden page '" + golden_page_id + "'");
    }
    if (attention.attended_regions.empty()) {
        return false;
    }
    switch (policy.kind) {
        case HitPolicy::Kind::intersect:
            return std::any_of(attention.attended_regions.begin(),
                               attention.attended_regions.end(), [&](const WeightedRect& region) {
                                   return intersection_area(region.rect, golden) > 0;
                               });
        case HitPolicy::Kind::iou: {
            double best = 0.0;
            for (const WeightedRect& region : attention.attended_regions) {
                best = std::max(best, iou(region.rect, golden));
            }
            return best >= policy.iou_threshold;
        }
        case HitPolicy::Kind::peak_in_box: {
            const WeightedRect* peak = &attention.attended_regions.front();
            for (const WeightedRect& region : attention.attended_regions) {
                if (region.weight.value_or(1.0) > peak->weight.value_or(1.0)) {
                    peak = &region;
                }
            }
            const double cx = (peak->rect.x1 + peak->rect.x2) / 2.0;
            const double cy = (peak->rect.y1 + peak->rect.y2) / 2.0;
            return cx >= golden.x1 && cx <= golden.x2 && cy >= golden.y1 && cy <= golden.y2;
        }
    }
    return false;
}

double perception_rate(const std::vector<EvalRecord>& records) {
    std::size_t defined = 0;
    std::size_t hits = 0;
    for (const EvalRecord& record : records) {
        if (!record.hit) {
            continue;
        }
        ++defined;
        hits += *record.hit ? 1 : 0;
    }
    if (defined == 0) {
        throw NoPerceptionData("perception_rate: no record has perception data");
    }
    return static_cast<double>(hits) / static_cast<double>(defined);
}

double v_precision(const std::vector<EvalRecord>& records) {
    std::size_t hits = 0;
    std::size_t correct_hits = 0;
    for (const EvalRecord& record : records) {
        if (!record.hit || !*record.hit) {
            continue;
        }
        ++hits;
        correct_hits += record.correct ? 1 : 0;
    }
    if (hits == 0) {
        throw NoHits("v_precision: no record hit the golden region");
    }
    return static_cast<double>(correct_hits) / static_cast<double>(hits);
}

double v_recall(const std::vector<EvalRecord>& records) {
    std::size_t correct = 0;
    std::size_t correct_hits = 0;
    for (const EvalRecord& record : records) {
        if (!record.hit || !record.correct) {
            continue;
        }
        ++correct;
        correct_hits += *record.hit ? 1 : 0;
    }
    if (correct == 0) {
        throw NoCorrect("v_recall: no correct record with perception data");
    }
    return static_cast<double>(correct_hits) / static_cast<double>(correct);
}

Report aggregate_report(const std::vector<EvalRecord>& records) {
    Report report;
    report.total = records.size();

    std::vector<double> latencies;
    std::size_t perception_hits = 0;
    std::size_t perception_correct = 0;
    std::size_t perception_correct_hits = 0;
    std::size_t tool_defined = 0;
    std::size_t tool_valid = 0;

    for (const EvalRecord& record : records) {
        if (!record.failure.empty()) {
            ++report.record_failures;
        } else if (record.judge_failed) {
            ++report.judge_failures;
        } else {
            ++report.judged;
            if (record.correct) {
                ++report.correct_count;
            }
            BreakdownEntry& benchmark =
                report.per_benchmark[record.benchmark.empty() ? "default" : record.benchmark];
            ++benchmark.total;
            benchmark.correct += record.correct ? 1 : 0;
            BreakdownEntry& hop = report.per_hop[to_string(record.hop)];
            ++hop.total;
            hop.correct += record.correct ? 1 : 0;
        }
        if (record.hit) {
            ++report.perception_defined;
            perception_hits += *record.hit ? 1 : 0;
            if (record.correct) {
                ++perception_correct;
                perception_correct_hits += *record.hit ? 1 : 0;
            }
        }
        if (record.latency_seconds) {
            latencies.push_back(*record.latency_seconds);
        }
        if (record.tool_valid) {
            ++tool_defined;
            tool_valid += *record.tool_valid;
        }
    }

    report.accuracy = report.judged == 0
                          ? 0.0
                          : static_cast<double>(report.correct_count) /
                                static_cast<double>(report.judged);
    for (auto& [name, entry] : report.per_benchmark) {
        entry.accuracy =
            entry.total == 0 ? 0.0 : static_cast<double>(entry.correct) / entry.total;
    }
    for (auto& [name, entry] : report.per_hop) {
        entry.accuracy =
            entry.total == 0 ? 0.0 : static_cast<double>(entry.correct) / entry.total;
    }

    if (report.perception_defined > 0) {
        report.perception_rate = static_cast<double>(perception_hits) /
                                 static_cast<double>(report.perception_defined);
        if (perception_hits > 0) {
            report.v_precision = static_cast<double>(perception_correct_hits) /
                                 static_cast<double>(perception_hits);
        }
        if (perception_correct > 0) {
            report.v_recall = static_cast<double>(perception_correct_hits) /
                              static_cast<double>(perception_correct);
        }
    }

    if (!latencies.empty()) {
        LatencyStats stats;
        stats.count = latencies.size();
        double total = 0.0;
        for (double v : latencies) {
            total += v;
        }
        stats.mean = total / static_cast<double>(latencies.size());
        std::sort(latencies.begin(), latencies.end());
        stats.p50 = percentile(latencies, 50.0);
        stats.p95 = percentile(latencies, 95.0);
        report.latency = stats;
    }

    if (tool_defined > 0) {
        report.tool_valid_rate =
            static_cast<double>(tool_valid) / static_cast<double>(tool_defined);
    }
    return report;
}

}  // namespace lf
