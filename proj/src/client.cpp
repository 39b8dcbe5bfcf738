#include "lf/client.hpp"

#include <chrono>
#include <fstream>
#include <thread>

#include "lf/errors.hpp"

#include <httplib.h>
#include <json.hpp>

namespace lf {

namespace {

using json = nlohmann::json;

constexpr int kMaxBackoffMs = 30000;

std::string base64_encode(const std::string& input) {
    static constexpr char kAlphabet[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((input.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < input.size()) {
        const unsigned triple = (static_cast<unsigned char>(input[i]) << 16) |
                                (static_cast<unsigned char>(input[i + 1]) << 8) |
                                static_cast<unsigned char>(input[i + 2]);
        out += kAlphabet[(triple >> 18) & 0x3f];
        out += kAlphabet[(triple >> 12) & 0x3f];
        out += kAlphabet[(triple >> 6) & 0x3f];
        out += kAlphabet[triple & 0x3f];
        i += 3;
    }
    if (i + 1 == input.size()) {
        const unsigned rest = static_cast<unsigned char>(input[i]) << 16;
        out += kAlphabet[(rest >> 18) & 0x3f];
        out += kAlphabet[(rest >> 12) & 0x3f];
        out += "==";
    } else if (i + 2 == input.size()) {
        const unsigned rest = (static_cast<unsigned char>(input[i]) << 16) |
                              (static_cast<unsigned char>(input[i + 1]) << 8);
        out += kAlphabet[(rest >> 18) & 0x3f];
        out += kAlphabet[(rest >> 12) & 0x3f];
        out += kAlphabet[(rest >> 6) & 0x3f];
        out += '=';
    }
    return out;
}

std::string image_url(const std::string& ref, bool inline_base64) {
    if (!inline_base64) {
        return ref;
    }
    std::ifstream in(ref, std::ios::binary);
    if (!in) {
        throw IoError("cannot read image for inlining: " + ref);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return "data:image/png;base64," + base64_encode(bytes);
}

json request_body(const ChatRequest& request, bool inline_base64) {
    json body;
    body["model"] = request.model;
    body["temperature"] = request.temperature;
    json messages = json::array();
    for (const ChatMessage& message : request.messages) {
        json entry;
        entry["role"] = message.role;
        if (message.image_refs.empty()) {
            entry["content"] = message.content;
        } else {
            json parts = json::array();
            parts.push_back({{"type", "text"}, {"text", message.content}});
            for (const std::string& ref : message.image_refs) {
                parts.push_back({{"type", "image_url"},
                                 {"image_url", {{"url", image_url(ref, inline_base64)}}}});
            }
            entry["content"] = std::move(parts);
        }
        messages.push_back(std::move(entry));
    }
    body["messages"] = std::move(messages);
    return body;
}

std::string extract_content(const std::string& body) {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array() ||
        doc["choices"].empty()) {
        throw EmptyReply("reply has no choices");
    }
    const auto& message = doc["choices"][0]["message"];
    if (!message.contains("content") || !message["content"].is_string()) {
        throw EmptyReply("reply choice has no message content");
    }
    std::string content = message["content"].get<std::string>();
    if (content.empty()) {
        throw EmptyReply("reply content is empty");
    }
    return content;
}

}  // namespace

HttpChatClient::HttpChatClient(HttpClientOptions options) : options_(std::move(options)) {
    const std::string& endpoint = options_.endpoint;
    static constexpr std::string_view kScheme = "http://";
    if (endpoint.rfind(kScheme, 0) != 0) {
        throw ConfigError("endpoint must start with http:// : " + endpoint);
    }
    const std::size_t path_start = endpoint.find('/', kScheme.size());
    if (path_start == std::string::npos) {
        host_ = endpoint;
        path_prefix_.clear();
    } else {
        host_ = endpoint.substr(0, path_start);
        path_prefix_ = endpoint.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') {
            path_prefix_.pop_back();
        }
    }
}

ChatReply HttpChatClient::send(const ChatRequest& request) {
    const std::string path = path_prefix_ + "/chat/completions";
    const std::string body = request_body(request, options_.inline_base64_images).dump();

    const auto start = std::chrono::steady_clock::now();
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            const long long delay = std::min<long long>(
                static_cast<long long>(options_.backoff_ms) << (attempt - 1), kMaxBackoffMs);
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }

        httplib::Client client(host_);
        client.set_connection_timeout(std::chrono::milliseconds(
            static_cast<long long>(options_.timeout_seconds * 1000)));
        client.set_read_timeout(std::chrono::milliseconds(
            static_cast<long long>(options_.timeout_seconds * 1000)));
        httplib::Headers headers;
        if (!options_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + options_.api_key);
        }

        auto result = client.Post(path, headers, body, "application/json");
        if (!result) {
            last_error = "transport: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status == 200) {
            ChatReply reply;
            reply.content = extract_content(result->body);
            reply.latency_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            return reply;
        }
        if (result->status == 429 || result->status >= 500) {
            last_error = "status " + std::to_string(result->status);
            continue;
        }
        throw NonRetriableStatus("status " + std::to_string(result->status) + " from " + host_ +
                                 path);
    }
    throw TransportError("exhausted " + std::to_string(options_.max_retries) + " retries to " +
                         host_ + path + " (" + last_error + ")");
}

StubChatClient::StubChatClient(std::map<std::string, StubReply> replies, std::string default_reply)
    : replies_(std::move(replies)), default_reply_(std::move(default_reply)) {}

StubChatClient StubChatClient::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open stub replies file: " + path);
    }
    std::map<std::string, StubReply> replies;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.contains("query_id") || !doc.contains("reply")) {
            throw SchemaError(path + ":" + std::to_string(line_number) +
                              ": expected {query_id, reply}");
        }
        StubReply reply;
        reply.content = doc["reply"].get<std::string>();
        reply.latency_seconds = doc.value("latency_seconds", 0.0);
        replies[doc["query_id"].get<std::string>()] = std::move(reply);
    }
    return StubChatClient(std::move(replies));
}

void StubChatClient::set_reply(const std::string& tag, StubReply reply) {
    replies_[tag] = std::move(reply);
}

ChatReply StubChatClient::send(const ChatRequest& request) {
    const auto it = replies_.find(request.tag);
    if (it == replies_.end()) {
        if (default_reply_.empty()) {
            throw TransportError("stub client has no reply for tag '" + request.tag + "'");
        }
        return {default_reply_, 0.0};
    }
    return {it->second.content, it->second.latency_seconds};
}

ChatReply generate(ChatClient& client, const ChatRequest& request) {
    return client.send(request);
}

}  // namespace lf
