#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pprobe/errors.hpp"

namespace pprobe {

struct ChatRequest {
    std::string instruction;   // system-style steering text, may be empty
    std::string user;          // user-visible content
    double temperature = 0.0;  // sampling off by default: scoring needs determinism
    int max_tokens = 1024;
    std::string model;         // empty -> provider default
};

struct LogprobResponse {
    std::vector<std::string> tokens;
    std::vector<double> logprobs;  // natural log, one per token
};

// Uniform access to a chat backend. Implementations do their own transport
// retries; callers see either a reply or a ProviderError subclass.
class Provider {
  public:
    virtual ~Provider() = default;

    virtual std::string chat(const ChatRequest& req) = 0;
    virtual LogprobResponse token_logprobs(const std::string& text,
                                           const std::string& model = {}) = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;

    // Backend name as configured ("m1", "judge", ...). Used in logs and records.
    virtual std::string id() const = 0;
    // Model identifier substituted into requests that leave `model` empty.
    virtual std::string default_model() const = 0;
};

// ---- request fingerprints ----
// Stable content hashes; the mock script map is keyed by these. Any change
// here invalidates recorded scripts, so the encoding is versioned by field
// separators rather than by accident.
std::string chat_fingerprint(const ChatRequest& req);
std::string logprob_fingerprint(const std::string& text, const std::string& model);
std::string embed_fingerprint(const std::vector<std::string>& texts, const std::string& model);

// =====================================================================
// Scripted mock
// =====================================================================

enum class CallKind { Chat, Logprobs, Embed };
std::string_view call_kind_name(CallKind k);

struct CallRecord {
    CallKind kind;
    std::string fingerprint;
    std::string summary;  // first bytes of the request, for debugging
};

// One script entry. Exact-fingerprint entries take a response sequence:
// call n gets responses[min(n, len-1)]. Matcher entries respond to any
// request whose fields contain the given needles, via a deterministic
// responder. First matching entry wins, in file order.
struct MockRule {
    CallKind kind = CallKind::Chat;

    std::string fingerprint;            // exact match when non-empty
    std::string instruction_contains;   // matcher fields, all must hold
    std::string user_contains;

    // Responders. "canned": next string from `responses`.
    // "hash_choice": responses[stable_hash64(model|user) % n].
    // "prefix": `prefix` + user text.
    // "hash_logprobs": per-token logprob -(0.5 + 3.5*frac(hash(token))).
    // "hash_embed": `dim`-long vector derived from hash(text, j).
    std::string respond = "canned";
    std::vector<std::string> responses;
    std::string prefix;
    std::size_t dim = 8;
};

struct MockScript {
    bool strict = true;
    std::vector<MockRule> rules;

    static MockScript from_file(const std::string& path);
};

class MockProvider : public Provider {
  public:
    MockProvider(std::string name, std::string model, MockScript script = {})
        : name_(std::move(name)), model_(std::move(model)), script_(std::move(script)) {}

    std::string chat(const ChatRequest& req) override;
    LogprobResponse token_logprobs(const std::string& text,
                                   const std::string& model) override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    std::string id() const override { return name_; }
    std::string default_model() const override { return model_; }

    // ---- scripting interface (used by tests; file scripts use MockScript) ----
    void script_chat(const ChatRequest& req, std::string response);
    void script_chat_sequence(const ChatRequest& req, std::vector<std::string> responses);
    void add_rule(MockRule rule);
    void set_strict(bool strict) { script_.strict = strict; }

    std::vector<CallRecord> call_log() const;
    std::size_t call_count() const;

  private:
    ChatRequest effective(const ChatRequest& req) const;
    const MockRule* match_locked(CallKind kind, const std::string& fingerprint,
                                 const std::string& instruction, const std::string& user);

    std::string name_;
    std::string model_;
    MockScript script_;
    mutable std::mutex mu_;
    std::vector<CallRecord> log_;
    std::map<std::size_t, std::size_t> consumed_;  // rule index -> sequence cursor
};

// Deterministic helpers shared by the mock responders and by tests that
// predict mock output.
double mock_token_logprob(std::string_view token);
std::vector<double> mock_embedding(std::string_view text, std::size_t dim);

// =====================================================================
// HTTP backend
// =====================================================================

struct HttpBackendConfig {
    std::string name;
    std::string base_url;  // e.g. "https://api.example.com"
    std::string model;
    std::string chat_path = "/v1/chat/completions";
    std::string score_path = "/v1/completions";
    std::string embed_path = "/v1/embeddings";
    std::string key_env;   // defaults to PA_API_KEY_<NAME> when empty
    int max_retries = 3;   // transient failures: 5xx, 429, transport
    double requests_per_minute = 0.0;  // 0 disables client-side pacing
    double call_budget_seconds = 120.0;
    double backoff_initial_seconds = 0.5;
};

// Credentials come exclusively from the environment; config files carry only
// the variable NAME. Resolution happens per call so tests can swap keys.
std::string resolve_api_key(const HttpBackendConfig& cfg);

class HttpProvider : public Provider {
  public:
    explicit HttpProvider(HttpBackendConfig cfg);

    std::string chat(const ChatRequest& req) override;
    LogprobResponse token_logprobs(const std::string& text,
                                   const std::string& model) override;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

    std::string id() const override { return cfg_.name; }
    std::string default_model() const override { return cfg_.model; }

  private:
    // POSTs JSON, enforcing pacing, bounded retries with exponential backoff
    // and the per-call wall-clock budget. Returns the response body.
    std::string post_json(const std::string& path, const std::string& body);
    void pace();

    HttpBackendConfig cfg_;
    std::mutex pace_mu_;
    std::chrono::steady_clock::time_point last_request_{};
};

}  // namespace pprobe
