#pragma once

#include <map>
#include <string>
#include <vector>

namespace lf {

struct ChatMessage {
    std::string role;  // "system" or "user"
    std::string content;
    std::vector<std::string> image_refs;  // URLs/paths carried as content parts
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    std::string tag;  // request identity (query id); used for stub lookups
};

struct ChatReply {
    std::string content;
    double latency_seconds = 0.0;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual ChatReply send(const ChatRequest& request) = 0;
    // Deterministic clients report fixture latencies instead of wall clock.
    virtual bool deterministic() const { return false; }
};

struct HttpClientOptions {
    std::string endpoint;  // e.g. http://127.0.0.1:8080/v1
    std::string api_key;
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int backoff_ms = 500;
    bool inline_base64_images = false;
};

// Chat-completions client: POSTs to <endpoint>/chat/completions and pulls
// the first choice's message content. Transport failures, 429 and 5xx are
// retried with exponential backoff; other 4xx fail immediately.
class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(HttpClientOptions options);
    ChatReply send(const ChatRequest& request) override;

private:
    HttpClientOptions options_;
    std::string host_;  // scheme://host:port
    std::string path_prefix_;
};

struct StubReply {
    std::string content;
    double latency_seconds = 0.0;
};

// Fixture-backed client: replies are looked up by request tag. Lets every
// pipeline run operate with no network.
class StubChatClient final : public ChatClient {
public:
    StubChatClient() = default;
    explicit StubChatClient(std::map<std::string, StubReply> replies,
                            std::string default_reply = "");

    // Loads a JSONL fixture: one {query_id, reply, latency_seconds?} per line.
    static StubChatClient from_file(const std::string& path);

    void set_reply(const std::string& tag, StubReply reply);
    ChatReply send(const ChatRequest& request) override;
    bool deterministic() const override { return true; }

private:
    std::map<std::string, StubReply> replies_;
    std::string default_reply_;
};

ChatReply generate(ChatClient& client, const ChatRequest& request);

}  // namespace lf
