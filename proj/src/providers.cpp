#include "pprobe/providers.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "pprobe/text.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

using nlohmann::json;

namespace {

constexpr char kSep = '\x1f';

std::string summarize(std::string_view s) {
    constexpr std::size_t kMax = 96;
    if (s.size() <= kMax) return std::string(s);
    return std::string(s.substr(0, kMax)) + "...";
}

}  // namespace

std::string_view call_kind_name(CallKind k) {
    switch (k) {
        case CallKind::Chat: return "chat";
        case CallKind::Logprobs: return "logprobs";
        case CallKind::Embed: return "embed";
    }
    return "";
}

// max_tokens is an operational cap, not request content, so it stays out of
// the fingerprint; scripts keep matching when the cap is tuned.
std::string chat_fingerprint(const ChatRequest& req) {
    std::ostringstream enc;
    enc << "chat" << kSep << req.model << kSep << req.temperature << kSep
        << req.instruction << kSep << req.user;
    return hash_hex(stable_hash64(enc.str()));
}

std::string logprob_fingerprint(const std::string& text, const std::string& model) {
    std::string enc = "logprobs";
    enc += kSep;
    enc += model;
    enc += kSep;
    enc += text;
    return hash_hex(stable_hash64(enc));
}

std::string embed_fingerprint(const std::vector<std::string>& texts, const std::string& model) {
    std::string enc = "embed";
    enc += kSep;
    enc += model;
    for (const auto& t : texts) {
        enc += kSep;
        enc += t;
    }
    return hash_hex(stable_hash64(enc));
}

// ---------------------------------------------------------------------
// Mock
// ---------------------------------------------------------------------

double mock_token_logprob(std::string_view token) {
    const double frac =
        static_cast<double>(stable_hash64(token) % 4096u) / 4096.0;
    return -(0.5 + 3.5 * frac);
}

std::vector<double> mock_embedding(std::string_view text, std::size_t dim) {
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        const std::uint64_t h =
            stable_hash64(text, kHashOffsetBasis ^ (0x9E3779B97F4A7C15ULL * (j + 1)));
        v[j] = static_cast<double>(h % 8192u) / 8192.0 - 0.5;
    }
    return v;
}

MockScript MockScript::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mock script: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("mock script " + path + ": " + e.what());
    }

    MockScript script;
    script.strict = doc.value("strict", true);
    for (const auto& entry : doc.value("entries", json::array())) {
        MockRule rule;
        const std::string kind = entry.value("kind", "chat");
        if (kind == "chat") rule.kind = CallKind::Chat;
        else if (kind == "logprobs") rule.kind = CallKind::Logprobs;
        else if (kind == "embed") rule.kind = CallKind::Embed;
        else throw ConfigError("mock script " + path + ": unknown kind " + kind);

        rule.fingerprint = entry.value("fingerprint", "");
        rule.instruction_contains = entry.value("instruction_contains", "");
        rule.user_contains = entry.value("user_contains", "");
        rule.respond = entry.value("respond", "canned");
        rule.prefix = entry.value("prefix", "");
        rule.dim = entry.value("dim", std::size_t{8});
        if (entry.contains("response")) {
            rule.responses.push_back(entry["response"].get<std::string>());
        }
        for (const auto& r : entry.value("responses", json::array())) {
            rule.responses.push_back(r.get<std::string>());
        }
        script.rules.push_back(std::move(rule));
    }
    return script;
}

ChatRequest MockProvider::effective(const ChatRequest& req) const {
    ChatRequest e = req;
    if (e.model.empty()) e.model = model_;
    return e;
}

void MockProvider::script_chat(const ChatRequest& req, std::string response) {
    script_chat_sequence(req, {std::move(response)});
}

void MockProvider::script_chat_sequence(const ChatRequest& req,
                                        std::vector<std::string> responses) {
    MockRule rule;
    rule.kind = CallKind::Chat;
    rule.fingerprint = chat_fingerprint(effective(req));
    rule.responses = std::move(responses);
    add_rule(std::move(rule));
}

void MockProvider::add_rule(MockRule rule) {
    std::lock_guard<std::mutex> lock(mu_);
    script_.rules.push_back(std::move(rule));
}

std::vector<CallRecord> MockProvider::call_log() const {
    std::lock_guard<std::mutex> lock(mu_);
    return log_;
}

std::size_t MockProvider::call_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return log_.size();
}

const MockRule* MockProvider::match_locked(CallKind kind, const std::string& fingerprint,
                                           const std::string& instruction,
                                           const std::string& user) {
    for (const auto& rule : script_.rules) {
        if (rule.kind != kind) continue;
        if (!rule.fingerprint.empty()) {
            if (rule.fingerprint == fingerprint) return &rule;
            continue;
        }
        if (!rule.instruction_contains.empty() &&
            instruction.find(rule.instruction_contains) == std::string::npos) {
            continue;
        }
        if (!rule.user_contains.empty() && user.find(rule.user_contains) == std::string::npos) {
            continue;
        }
        return &rule;
    }
    return nullptr;
}

std::string MockProvider::chat(const ChatRequest& req) {
    const ChatRequest e = effective(req);
    const std::string fp = chat_fingerprint(e);

    std::lock_guard<std::mutex> lock(mu_);
    log_.push_back({CallKind::Chat, fp, summarize(e.user)});

    const MockRule* rule = match_locked(CallKind::Chat, fp, e.instruction, e.user);
    if (!rule) {
        if (script_.strict) {
            throw MockScriptError("unscripted chat request " + fp + ": " + summarize(e.user));
        }
        return "";
    }
    if (rule->respond == "hash_choice") {
        if (rule->responses.empty()) throw ConfigError("hash_choice rule without responses");
        const std::uint64_t h = stable_hash64(e.model + std::string(1, kSep) + e.user);
        return rule->responses[h % rule->responses.size()];
    }
    if (rule->respond == "prefix") {
        return rule->prefix + e.user;
    }
    if (rule->responses.empty()) throw ConfigError("mock chat rule without responses");
    std::size_t& cursor = consumed_[static_cast<std::size_t>(rule - script_.rules.data())];
    const std::size_t i = std::min(cursor, rule->responses.size() - 1);
    ++cursor;
    return rule->responses[i];
}

LogprobResponse MockProvider::token_logprobs(const std::string& text, const std::string& model) {
    const std::string m = model.empty() ? model_ : model;
    const std::string fp = logprob_fingerprint(text, m);

    std::lock_guard<std::mutex> lock(mu_);
    log_.push_back({CallKind::Logprobs, fp, summarize(text)});

    const MockRule* rule = match_locked(CallKind::Logprobs, fp, "", text);
    if (!rule) {
        if (script_.strict) {
            throw MockScriptError("unscripted logprob request " + fp + ": " + summarize(text));
        }
        rule = nullptr;
    }
    if (!rule || rule->respond == "hash_logprobs") {
        LogprobResponse out;
        for (auto& tok : tokenize(text)) {
            out.logprobs.push_back(mock_token_logprob(tok));
            out.tokens.push_back(std::move(tok));
        }
        return out;
    }
    if (rule->responses.empty()) throw ConfigError("mock logprob rule without responses");
    std::size_t& cursor = consumed_[static_cast<std::size_t>(rule - script_.rules.data())];
    const std::size_t i = std::min(cursor, rule->responses.size() - 1);
    ++cursor;

    // Canned form: either a bare array of logprobs or {"tokens": [...],
    // "logprobs": [...]}.
    json doc = json::parse(rule->responses[i]);
    LogprobResponse out;
    if (doc.is_array()) {
        for (const auto& v : doc) {
            out.tokens.push_back("t" + std::to_string(out.tokens.size()));
            out.logprobs.push_back(v.get<double>());
        }
    } else {
        for (const auto& t : doc.value("tokens", json::array())) {
            out.tokens.push_back(t.get<std::string>());
        }
        for (const auto& v : doc.value("logprobs", json::array())) {
            out.logprobs.push_back(v.get<double>());
        }
    }
    return out;
}

std::vector<std::vector<double>> MockProvider::embed(const std::vector<std::string>& texts) {
    const std::string fp = embed_fingerprint(texts, model_);
    const std::string joined = texts.empty() ? std::string() : texts.front();

    std::lock_guard<std::mutex> lock(mu_);
    log_.push_back({CallKind::Embed, fp, summarize(joined)});

    const MockRule* rule = match_locked(CallKind::Embed, fp, "", joined);
    if (!rule) {
        if (script_.strict) {
            throw MockScriptError("unscripted embed request " + fp);
        }
        rule = nullptr;
    }
    if (!rule || rule->respond == "hash_embed") {
        const std::size_t dim = rule ? rule->dim : 8;
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(mock_embedding(t, dim));
        return out;
    }
    if (rule->responses.empty()) throw ConfigError("mock embed rule without responses");
    std::size_t& cursor = consumed_[static_cast<std::size_t>(rule - script_.rules.data())];
    const std::size_t i = std::min(cursor, rule->responses.size() - 1);
    ++cursor;

    json doc = json::parse(rule->responses[i]);
    std::vector<std::vector<double>> out;
    for (const auto& row : doc) {
        out.push_back(row.get<std::vector<double>>());
    }
    if (out.size() != texts.size()) {
        throw DimensionMismatchError("scripted embedding count " + std::to_string(out.size()) +
                                     " != request count " + std::to_string(texts.size()));
    }
    return out;
}

// ---------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------

std::string resolve_api_key(const HttpBackendConfig& cfg) {
    std::string var = cfg.key_env;
    if (var.empty()) {
        var = "PA_API_KEY_";
        for (char c : cfg.name) {
            var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
    }
    const char* value = std::getenv(var.c_str());
    if (!value || !*value) {
        throw AuthFailureError("credential variable " + var + " is not set");
    }
    return value;
}

HttpProvider::HttpProvider(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}

void HttpProvider::pace() {
    if (cfg_.requests_per_minute <= 0) return;
    const auto interval = std::chrono::duration<double>(60.0 / cfg_.requests_per_minute);
    std::unique_lock<std::mutex> lock(pace_mu_);
    const auto now = std::chrono::steady_clock::now();
    if (last_request_.time_since_epoch().count() != 0) {
        const auto next_ok = last_request_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval);
        if (now < next_ok) {
            lock.unlock();
            std::this_thread::sleep_until(next_ok);
            lock.lock();
        }
    }
    last_request_ = std::chrono::steady_clock::now();
}

std::string HttpProvider::post_json(const std::string& path, const std::string& body) {
    const std::string key = resolve_api_key(cfg_);
    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(static_cast<time_t>(cfg_.call_budget_seconds), 0);
    httplib::Headers headers = {{"Authorization", "Bearer " + key}};

    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(cfg_.call_budget_seconds));

    std::string last_error = "no attempt made";
    bool rate_limited = false;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            const double delay = cfg_.backoff_initial_seconds * std::pow(2.0, attempt - 1);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            if (std::chrono::steady_clock::now() >= deadline) break;
        }
        pace();
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            rate_limited = false;
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw AuthFailureError(cfg_.name + ": HTTP " + std::to_string(res->status));
        }
        if (res->status == 429) {
            last_error = "HTTP 429";
            rate_limited = true;
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            rate_limited = false;
            continue;
        }
        if (res->status >= 400) {
            throw ProviderError(cfg_.name + ": HTTP " + std::to_string(res->status) + ": " +
                                summarize(res->body));
        }
        return res->body;
    }
    if (rate_limited) {
        throw RateLimitedError(cfg_.name + ": retries exhausted: " + last_error);
    }
    throw TransportError(cfg_.name + ": retries exhausted: " + last_error);
}

std::string HttpProvider::chat(const ChatRequest& req) {
    json messages = json::array();
    if (!req.instruction.empty()) {
        messages.push_back({{"role", "system"}, {"content", req.instruction}});
    }
    messages.push_back({{"role", "user"}, {"content", req.user}});
    json body = {
        {"model", req.model.empty() ? cfg_.model : req.model},
        {"messages", messages},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    const std::string raw = post_json(cfg_.chat_path, body.dump());
    try {
        json doc = json::parse(raw);
        const auto& choice = doc.at("choices").at(0);
        if (choice.value("finish_reason", "") == "content_filter") {
            throw ContentFilteredError(cfg_.name + ": content filtered");
        }
        return choice.at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ProviderError(cfg_.name + ": malformed chat response: " + e.what());
    }
}

LogprobResponse HttpProvider::token_logprobs(const std::string& text, const std::string& model) {
    json body = {
        {"model", model.empty() ? cfg_.model : model},
        {"prompt", text},
        {"max_tokens", 0},
        {"echo", true},
        {"logprobs", 0},
    };
    const std::string raw = post_json(cfg_.score_path, body.dump());
    try {
        json doc = json::parse(raw);
        const auto& choice = doc.at("choices").at(0);
        if (!choice.contains("logprobs") || choice["logprobs"].is_null()) {
            throw NoLogprobsError(cfg_.name + ": backend returned no logprobs");
        }
        const auto& lp = choice["logprobs"];
        LogprobResponse out;
        const auto& tokens = lp.at("tokens");
        const auto& values = lp.at("token_logprobs");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i].is_null()) continue;  // leading token has no conditional
            out.tokens.push_back(tokens[i].get<std::string>());
            out.logprobs.push_back(values[i].get<double>());
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(cfg_.name + ": malformed logprob response: " + e.what());
    }
}

std::vector<std::vector<double>> HttpProvider::embed(const std::vector<std::string>& texts) {
    json body = {
        {"model", cfg_.model},
        {"input", texts},
    };
    const std::string raw = post_json(cfg_.embed_path, body.dump());
    try {
        json doc = json::parse(raw);
        const auto& data = doc.at("data");
        std::vector<std::vector<double>> out;
        for (const auto& item : data) {
            out.push_back(item.at("embedding").get<std::vector<double>>());
        }
        if (out.size() != texts.size()) {
            throw DimensionMismatchError(cfg_.name + ": embedding count mismatch");
        }
        for (const auto& v : out) {
            if (v.size() != out.front().size()) {
                throw DimensionMismatchError(cfg_.name + ": ragged embedding dimensions");
            }
        }
        return out;
    } catch (const json::exception& e) {
        throw ProviderError(cfg_.name + ": malformed embedding response: " + e.what());
    }
}

}  // namespace pprobe
