#include "pprobe/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <thread>
#include <unordered_map>

#include "pprobe/anatomy.hpp"
#include "pprobe/errors.hpp"
#include "pprobe/pplfilter.hpp"
#include "pprobe/serialize.hpp"
#include "pprobe/text.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json_atomic(const fs::path& path, const json& doc) {
    pprobe::write_json_atomic(path.string(), doc);
}

std::optional<json> load_json_if_present(const fs::path& path) {
    return pprobe::load_json_if_present(path.string());
}

std::string sanitize_name(std::string_view raw) {
    std::string out;
    for (char c : raw) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ||
                              c == '.'
                          ? c
                          : '-');
    }
    return out;
}

bool valid_id(std::string_view id) {
    if (id.empty()) return false;
    for (char c : id) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
            return false;
        }
    }
    return true;
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

bool contains_known_tag(const std::string& text) {
    for (auto l : kAllLabels) {
        if (text.find("<" + std::string(label_tag(l)) + ">") != std::string::npos) return true;
    }
    return false;
}

}  // namespace

// ---------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------

std::vector<PromptRecord> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);

    std::vector<PromptRecord> out;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;

        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("dataset record is not valid JSON: ") + e.what(),
                             line_no);
        }

        PromptRecord rec;
        try {
            rec.id = doc.at("id").get<std::string>();
            const std::string task = doc.at("task").get<std::string>();
            auto kind = task_from_name(task);
            if (!kind) throw ParseError("unknown task kind: " + task, line_no);
            rec.task = *kind;
            rec.prompt = doc.at("prompt").get<std::string>();
            if (!doc.contains("gold") || !doc["gold"].is_string() ||
                doc["gold"].get<std::string>().empty()) {
                throw ParseError("missing gold for " + task + " task", line_no);
            }
            rec.gold = doc["gold"].get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(std::string("dataset record missing field: ") + e.what(), line_no);
        }

        if (!valid_id(rec.id)) {
            throw ParseError("record id must match [A-Za-z0-9_.-]+: '" + rec.id + "'", line_no);
        }
        if (auto it = seen.find(rec.id); it != seen.end()) {
            throw DuplicateIdError("duplicate prompt id '" + rec.id + "' (lines " +
                                   std::to_string(it->second) + " and " +
                                   std::to_string(line_no) + ")");
        }
        seen.emplace(rec.id, line_no);

        rec.pretagged = contains_known_tag(rec.prompt);
        if (rec.pretagged) {
            try {
                parse_tagged(rec.prompt);  // validated at load, parsed again on use
            } catch (const Error& e) {
                throw ParseError(std::string("tagged prompt rejected: ") + e.what(), line_no);
            }
        }
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw ParseError("dataset holds no records", line_no);
    return out;
}

// ---------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------

namespace {

std::string resolve_relative(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path candidate(p);
    if (candidate.is_absolute()) return p;
    return (base / candidate).lexically_normal().string();
}

}  // namespace

CampaignConfig CampaignConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    const fs::path base = fs::path(path).parent_path();

    CampaignConfig cfg;
    try {
        cfg.dataset = resolve_relative(base, doc.at("dataset").get<std::string>());
        cfg.output_dir = resolve_relative(base, doc.at("output_dir").get<std::string>());
        if (!doc.contains("base_seed")) {
            throw ConfigError("config requires base_seed; there is no default seed");
        }
        cfg.base_seed = doc["base_seed"].get<std::uint64_t>();

        for (const auto& [name, spec] : doc.at("backends").items()) {
            BackendSpec b;
            b.name = name;
            b.type = spec.at("type").get<std::string>();
            b.model = spec.value("model", name);
            b.script = resolve_relative(base, spec.value("script", ""));
            b.http.name = name;
            b.http.model = b.model;
            b.http.base_url = spec.value("base_url", "");
            b.http.chat_path = spec.value("chat_path", b.http.chat_path);
            b.http.score_path = spec.value("score_path", b.http.score_path);
            b.http.embed_path = spec.value("embed_path", b.http.embed_path);
            b.http.key_env = spec.value("key_env", "");
            b.http.max_retries = spec.value("max_retries", b.http.max_retries);
            b.http.requests_per_minute =
                spec.value("requests_per_minute", b.http.requests_per_minute);
            b.http.call_budget_seconds =
                spec.value("call_budget_seconds", b.http.call_budget_seconds);
            cfg.backends[name] = std::move(b);
        }

        cfg.target_backends = doc.at("target_backends").get<std::vector<std::string>>();
        cfg.classifier_backend = doc.value("classifier_backend", "");
        cfg.paraphrase_backend = doc.value("paraphrase_backend", "");
        cfg.ppl_backend = doc.value("ppl_backend", "");
        cfg.judge_backend = doc.value("judge_backend", "");
        cfg.embed_backend = doc.value("embed_backend", "");

        if (doc.contains("targets")) {
            for (const auto& t : doc["targets"]) {
                auto target = PerturbationTarget::from_code(t.get<std::string>());
                if (!target) throw ConfigError("unknown target code: " + t.get<std::string>());
                cfg.targets.push_back(*target);
            }
        } else {
            for (auto l : kAllLabels) cfg.targets.push_back(PerturbationTarget::component(l));
            cfg.targets.push_back(PerturbationTarget::control());
        }
        if (doc.contains("strategies")) {
            for (const auto& s : doc["strategies"]) {
                auto strategy = strategy_from_code(s.get<std::string>());
                if (!strategy) throw ConfigError("unknown strategy code: " + s.get<std::string>());
                cfg.strategies.push_back(*strategy);
            }
        } else {
            cfg.strategies = {Strategy::SCI, Strategy::SYR, Strategy::WOD, Strategy::SER,
                              Strategy::COD};
        }

        cfg.rate = doc.value("rate", cfg.rate);
        cfg.ppl_fraction = doc.value("ppl_fraction", cfg.ppl_fraction);
        cfg.evaluate_unfiltered = doc.value("evaluate_unfiltered", cfg.evaluate_unfiltered);
        if (doc.contains("pcm_weights")) {
            const auto& w = doc["pcm_weights"];
            cfg.pcm_weights.lexical = w.value("lexical", 0.2);
            cfg.pcm_weights.syntactic = w.value("syntactic", 0.2);
            cfg.pcm_weights.semantic = w.value("semantic", 0.2);
            cfg.pcm_weights.structural = w.value("structural", 0.2);
            cfg.pcm_weights.task = w.value("task", 0.2);
        }
        if (doc.contains("task_ratings")) {
            cfg.task_ratings = doc["task_ratings"].get<std::map<std::string, double>>();
        }
        cfg.lexicon_path = resolve_relative(base, doc.value("lexicon", ""));
        cfg.stopwords_path = resolve_relative(base, doc.value("stopwords", ""));
        cfg.workers = doc.value("workers", cfg.workers);
        cfg.failure_budget = doc.value("failure_budget", cfg.failure_budget);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

void CampaignConfig::validate() const {
    if (dataset.empty()) throw ConfigError("config lacks a dataset path");
    if (output_dir.empty()) throw ConfigError("config lacks an output_dir");
    if (target_backends.empty()) throw ConfigError("config names no target backends");
    if (targets.empty()) throw ConfigError("config enables no perturbation targets");
    if (strategies.empty()) throw ConfigError("config enables no strategies");
    if (rate <= 0.0 || rate > 1.0) throw ConfigError("rate must be in (0, 1]");
    if (ppl_fraction <= 0.0 || ppl_fraction > 1.0) {
        throw ConfigError("ppl_fraction must be in (0, 1]");
    }
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (failure_budget < 0) throw ConfigError("failure_budget must be non-negative");
    pcm_weights.validate();
    TaskRatings::with_overrides(task_ratings);  // range check

    auto require_backend = [&](const std::string& name, const char* role) {
        if (name.empty()) return;
        if (!backends.count(name)) {
            throw ConfigError(std::string(role) + " backend '" + name +
                              "' is not defined under backends");
        }
    };
    for (const auto& t : target_backends) {
        if (!backends.count(t)) {
            throw ConfigError("target backend '" + t + "' is not defined under backends");
        }
    }
    require_backend(classifier_backend, "classifier");
    require_backend(paraphrase_backend, "paraphrase");
    require_backend(ppl_backend, "ppl");
    require_backend(judge_backend, "judge");
    require_backend(embed_backend, "embed");
    if (ppl_backend.empty()) throw ConfigError("config requires a ppl backend");
    if (embed_backend.empty()) throw ConfigError("config requires an embed backend");

    for (const auto& [name, spec] : backends) {
        if (!valid_id(name)) {
            throw ConfigError("backend name must match [A-Za-z0-9_.-]+: '" + name + "'");
        }
        if (spec.type == "mock") {
            if (spec.script.empty()) {
                throw ConfigError("mock backend '" + name + "' needs a script path");
            }
        } else if (spec.type == "http") {
            if (spec.http.base_url.empty()) {
                throw ConfigError("http backend '" + name + "' needs a base_url");
            }
        } else {
            throw ConfigError("backend '" + name + "' has unknown type '" + spec.type + "'");
        }
    }

    bool ser = false;
    for (auto s : strategies) ser = ser || s == Strategy::SER;
    if (ser && paraphrase_backend.empty()) {
        throw ConfigError("SER strategy requires a paraphrase backend");
    }
    bool syr = false;
    for (auto s : strategies) syr = syr || s == Strategy::SYR;
    if (syr && lexicon_path.empty()) {
        throw ConfigError("SYR strategy requires a lexicon path");
    }
    bool crt = false;
    for (const auto& t : targets) crt = crt || t.is_control();
    if (crt && stopwords_path.empty()) {
        throw ConfigError("control target requires a stopword list");
    }
}

// output_dir stays out of the hash: where results land does not change what
// the campaign computes, and determinism checks run the same campaign into
// two directories.
std::string CampaignConfig::canonical_json() const {
    json backends_json = json::object();
    for (const auto& [name, b] : backends) {
        backends_json[name] = {
            {"type", b.type},
            {"model", b.model},
            {"script", b.script},
            {"base_url", b.http.base_url},
            {"chat_path", b.http.chat_path},
            {"score_path", b.http.score_path},
            {"embed_path", b.http.embed_path},
        };
    }
    std::vector<std::string> target_codes;
    for (const auto& t : targets) target_codes.push_back(t.code());
    std::vector<std::string> strategy_codes;
    for (auto s : strategies) strategy_codes.emplace_back(strategy_code(s));

    const json doc = {
        {"dataset", dataset},
        {"backends", backends_json},
        {"target_backends", target_backends},
        {"classifier_backend", classifier_backend},
        {"paraphrase_backend", paraphrase_backend},
        {"ppl_backend", ppl_backend},
        {"judge_backend", judge_backend},
        {"embed_backend", embed_backend},
        {"targets", target_codes},
        {"strategies", strategy_codes},
        {"rate", rate},
        {"ppl_fraction", ppl_fraction},
        {"evaluate_unfiltered", evaluate_unfiltered},
        {"base_seed", base_seed},
        {"pcm_weights",
         {{"lexical", pcm_weights.lexical},
          {"syntactic", pcm_weights.syntactic},
          {"semantic", pcm_weights.semantic},
          {"structural", pcm_weights.structural},
          {"task", pcm_weights.task}}},
        {"task_ratings", task_ratings},
        {"lexicon", lexicon_path},
        {"stopwords", stopwords_path},
    };
    return doc.dump();
}

std::string CampaignConfig::config_hash() const {
    return hash_hex(stable_hash64(canonical_json()));
}

std::unique_ptr<Provider> make_provider(const BackendSpec& spec) {
    if (spec.type == "mock") {
        return std::make_unique<MockProvider>(spec.name, spec.model,
                                              MockScript::from_file(spec.script));
    }
    if (spec.type == "http") {
        return std::make_unique<HttpProvider>(spec.http);
    }
    throw ConfigError("backend '" + spec.name + "' has unknown type '" + spec.type + "'");
}

// ---------------------------------------------------------------------
// Campaign
// ---------------------------------------------------------------------

namespace {

using ProviderMap = std::map<std::string, std::shared_ptr<Provider>>;

struct PromptArtifacts {
    DissectedPrompt dissected;
    std::vector<std::string> warnings;
    std::vector<PerturbedCandidate> candidates;  // post-ppl set
    double baseline_ppl = 0.0;
    std::vector<EvalRecord> records;             // all models
    PcmBreakdown pcm;
    std::vector<std::string> notices;
};

struct CampaignContext {
    const CampaignConfig* cfg = nullptr;
    fs::path out;
    ProviderMap providers;
    SynonymLexicon lexicon;
    Stopwords stopwords;
    IdfTable idf;
    TaskRatings ratings;
    std::string dataset_name;

    Provider* get(const std::string& name) const {
        auto it = providers.find(name);
        return it == providers.end() ? nullptr : it->second.get();
    }
};

// A loadable copy of the resolved config lands in the output dir, so
// `report <rundir>` can rebuild aggregates with no other inputs.
json config_to_json(const CampaignConfig& cfg) {
    json backends_json = json::object();
    for (const auto& [name, b] : cfg.backends) {
        json spec = {{"type", b.type}, {"model", b.model}};
        if (!b.script.empty()) spec["script"] = b.script;
        if (!b.http.base_url.empty()) {
            spec["base_url"] = b.http.base_url;
            spec["chat_path"] = b.http.chat_path;
            spec["score_path"] = b.http.score_path;
            spec["embed_path"] = b.http.embed_path;
            spec["key_env"] = b.http.key_env;
            spec["max_retries"] = b.http.max_retries;
            spec["requests_per_minute"] = b.http.requests_per_minute;
            spec["call_budget_seconds"] = b.http.call_budget_seconds;
        }
        backends_json[name] = std::move(spec);
    }
    std::vector<std::string> target_codes;
    for (const auto& t : cfg.targets) target_codes.push_back(t.code());
    std::vector<std::string> strategy_codes;
    for (auto s : cfg.strategies) strategy_codes.emplace_back(strategy_code(s));
    return {
        {"dataset", cfg.dataset},
        {"output_dir", "."},
        {"backends", backends_json},
        {"target_backends", cfg.target_backends},
        {"classifier_backend", cfg.classifier_backend},
        {"paraphrase_backend", cfg.paraphrase_backend},
        {"ppl_backend", cfg.ppl_backend},
        {"judge_backend", cfg.judge_backend},
        {"embed_backend", cfg.embed_backend},
        {"targets", target_codes},
        {"strategies", strategy_codes},
        {"rate", cfg.rate},
        {"ppl_fraction", cfg.ppl_fraction},
        {"evaluate_unfiltered", cfg.evaluate_unfiltered},
        {"base_seed", cfg.base_seed},
        {"pcm_weights",
         {{"lexical", cfg.pcm_weights.lexical},
          {"syntactic", cfg.pcm_weights.syntactic},
          {"semantic", cfg.pcm_weights.semantic},
          {"structural", cfg.pcm_weights.structural},
          {"task", cfg.pcm_weights.task}}},
        {"task_ratings", cfg.task_ratings},
        {"lexicon", cfg.lexicon_path},
        {"stopwords", cfg.stopwords_path},
        {"workers", cfg.workers},
        {"failure_budget", cfg.failure_budget},
    };
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Stage 1: reuse tags when the record came tagged, otherwise classify.
void stage_dissect(const CampaignContext& ctx, const PromptRecord& rec, PromptArtifacts& art) {
    const fs::path path = ctx.out / "dissect" / (rec.id + ".json");
    if (auto doc = load_json_if_present(path)) {
        art.dissected = dissected_from_json(*doc);
        art.warnings = doc->value("warnings", std::vector<std::string>{});
        return;
    }
    if (rec.pretagged) {
        art.dissected = parse_tagged(rec.prompt);
    } else {
        Provider* classifier = ctx.get(ctx.cfg->classifier_backend);
        if (!classifier) {
            throw ConfigError("raw prompt '" + rec.id + "' needs a classifier backend");
        }
        DissectionOutcome outcome = dissect(rec.prompt, *classifier);
        art.dissected = std::move(outcome.prompt);
        art.warnings = std::move(outcome.warnings);
    }
    json doc = dissected_to_json(art.dissected);
    doc["id"] = rec.id;
    doc["pretagged"] = rec.pretagged;
    doc["warnings"] = art.warnings;
    write_json_atomic(path, doc);
}

// Stage 2: the target x strategy candidate grid.
void stage_candidates(const CampaignContext& ctx, const PromptRecord& rec,
                      PromptArtifacts& art) {
    const fs::path path = ctx.out / "candidates" / (rec.id + ".json");
    if (auto doc = load_json_if_present(path)) {
        art.candidates.clear();
        for (const auto& c : doc->at("candidates")) {
            art.candidates.push_back(candidate_from_json(c));
        }
        for (const auto& n : doc->value("notices", std::vector<std::string>{})) {
            art.notices.push_back(n);
        }
        return;
    }
    Provider* paraphraser = ctx.get(ctx.cfg->paraphrase_backend);
    CandidateBatch batch =
        generate_candidates(art.dissected, rec.id, ctx.cfg->targets, ctx.cfg->strategies,
                            ctx.cfg->base_seed, ctx.lexicon, ctx.stopwords, paraphraser,
                            ctx.cfg->rate);
    art.candidates = std::move(batch.candidates);
    for (const auto& n : batch.notices) art.notices.push_back(n);

    json cands = json::array();
    for (const auto& c : art.candidates) cands.push_back(candidate_to_json(c));
    write_json_atomic(path, {{"id", rec.id}, {"candidates", cands}, {"notices", batch.notices}});
}

// Stage 3: perplexity ratios and the retained subset.
void stage_ppl(const CampaignContext& ctx, const PromptRecord& rec, PromptArtifacts& art) {
    const fs::path path = ctx.out / "ppl" / (rec.id + ".json");
    if (auto doc = load_json_if_present(path)) {
        art.candidates.clear();
        for (const auto& c : doc->at("candidates")) {
            art.candidates.push_back(candidate_from_json(c));
        }
        art.baseline_ppl = doc->at("baseline_ppl").get<double>();
        for (const auto& n : doc->value("notices", std::vector<std::string>{})) {
            art.notices.push_back(n);
        }
        return;
    }
    Provider* scorer = ctx.get(ctx.cfg->ppl_backend);
    if (!scorer) throw ConfigError("campaign requires the ppl backend");

    ScoredBatch scored =
        score_candidates(std::move(art.candidates), plain_text(art.dissected), *scorer);
    const auto retained = filter_top(scored.scored, ctx.cfg->ppl_fraction);
    for (auto& c : scored.scored) {
        for (const auto& r : retained) {
            if (r.id == c.id) {
                c.retained = true;
                break;
            }
        }
    }
    art.candidates = std::move(scored.scored);
    art.baseline_ppl = scored.baseline_ppl;
    for (const auto& n : scored.notices) art.notices.push_back(n);

    json cands = json::array();
    for (const auto& c : art.candidates) cands.push_back(candidate_to_json(c));
    write_json_atomic(path, {{"id", rec.id},
                             {"baseline_ppl", art.baseline_ppl},
                             {"candidates", cands},
                             {"notices", scored.notices}});
}

EvalRecord make_record(const CampaignContext& ctx, const PromptRecord& rec,
                       const PerturbedCandidate& cand, const std::string& model_name,
                       const std::string& baseline_output, const std::string& output,
                       Provider* judge, std::vector<std::string>& notices) {
    EvalRecord r;
    r.source_id = rec.id;
    r.cand_id = cand.id;
    r.model = model_name;
    r.dataset = ctx.dataset_name;
    r.component = cand.spec.target.code();
    r.strategy = std::string(strategy_code(cand.spec.strategy));
    r.in_filtered = cand.retained;
    r.baseline_output = baseline_output;
    r.output = output;

    switch (rec.task) {
        case TaskKind::Classification:
            r.success = success_classification(output, rec.gold);
            r.evidence = r.success ? "gold answer absent from output"
                                   : "gold answer present in output";
            break;
        case TaskKind::Translation: {
            const double score = bleu(output, rec.gold);
            r.success = bleu_indicates_success(score);
            r.evidence = "bleu=" + format_fixed(score, 4);
            break;
        }
        case TaskKind::CodeGeneration: {
            if (!judge) throw ConfigError("CodeGeneration task requires a judge backend");
            const auto verdict = success_codegen(output, rec.gold, *judge);
            if (!verdict) {
                r.indeterminate = true;
                r.evidence = "judge=indeterminate";
                notices.push_back("judge indeterminate for " + cand.id + " on " + model_name +
                                  "; excluded from totals");
            } else {
                r.success = *verdict;
                r.evidence = *verdict ? "judge=INCORRECT" : "judge=CORRECT";
            }
            break;
        }
    }
    return r;
}

// Stage 4: query every target model with clean and perturbed prompts.
void stage_eval(const CampaignContext& ctx, const PromptRecord& rec, PromptArtifacts& art) {
    Provider* judge = ctx.get(ctx.cfg->judge_backend);

    for (const auto& model_name : ctx.cfg->target_backends) {
        const fs::path path = ctx.out / "eval" / rec.id / (sanitize_name(model_name) + ".json");
        if (auto doc = load_json_if_present(path)) {
            for (const auto& r : doc->at("records")) art.records.push_back(record_from_json(r));
            for (const auto& n : doc->value("notices", std::vector<std::string>{})) {
                art.notices.push_back(n);
            }
            continue;
        }
        Provider* target = ctx.get(model_name);
        if (!target) throw ConfigError("target backend '" + model_name + "' missing");

        std::vector<std::string> notices;
        ChatRequest base_req;
        base_req.user = plain_text(art.dissected);
        const std::string baseline_output = target->chat(base_req);

        std::vector<EvalRecord> records;
        for (const auto& cand : art.candidates) {
            if (!ctx.cfg->evaluate_unfiltered && !cand.retained) continue;
            ChatRequest req;
            req.user = cand.text;
            const std::string output = target->chat(req);
            records.push_back(
                make_record(ctx, rec, cand, model_name, baseline_output, output, judge, notices));
        }

        json recs = json::array();
        for (const auto& r : records) recs.push_back(record_to_json(r));
        write_json_atomic(path, {{"id", rec.id},
                                 {"model", model_name},
                                 {"baseline_output", baseline_output},
                                 {"records", recs},
                                 {"notices", notices}});
        for (auto& r : records) art.records.push_back(std::move(r));
        for (auto& n : notices) art.notices.push_back(std::move(n));
    }
}

// Stage 5: prompt complexity.
void stage_pcm(const CampaignContext& ctx, const PromptRecord& rec, PromptArtifacts& art) {
    const fs::path path = ctx.out / "pcm" / (rec.id + ".json");
    if (auto doc = load_json_if_present(path)) {
        art.pcm = pcm_from_json(*doc);
        return;
    }
    Provider* embedder = ctx.get(ctx.cfg->embed_backend);
    if (!embedder) throw ConfigError("campaign requires the embed backend");
    art.pcm = compute_pcm(plain_text(art.dissected), art.dissected, rec.task,
                          ctx.cfg->pcm_weights, ctx.idf, *embedder, ctx.ratings);
    json doc = pcm_to_json(art.pcm);
    doc["id"] = rec.id;
    write_json_atomic(path, doc);
}

void run_prompt(const CampaignContext& ctx, const PromptRecord& rec, PromptArtifacts& art) {
    stage_dissect(ctx, rec, art);
    stage_candidates(ctx, rec, art);
    stage_ppl(ctx, rec, art);
    stage_eval(ctx, rec, art);
    stage_pcm(ctx, rec, art);
}

CampaignContext make_context(const CampaignConfig& cfg, const ProviderMap& providers,
                             const std::vector<PromptRecord>& dataset) {
    CampaignContext ctx;
    ctx.cfg = &cfg;
    ctx.out = cfg.output_dir;
    ctx.providers = providers;
    ctx.dataset_name = fs::path(cfg.dataset).stem().string();
    if (!cfg.lexicon_path.empty()) ctx.lexicon = SynonymLexicon::from_file(cfg.lexicon_path);
    if (!cfg.stopwords_path.empty()) ctx.stopwords = Stopwords::from_file(cfg.stopwords_path);
    ctx.ratings = TaskRatings::with_overrides(cfg.task_ratings);

    // The idf corpus is the whole dataset in its plain form, fixed before any
    // provider round trip so it never depends on classification output.
    std::vector<std::string> corpus;
    for (const auto& rec : dataset) {
        if (rec.pretagged) {
            corpus.push_back(plain_text(parse_tagged(rec.prompt)));
        } else {
            std::string joined;
            for (const auto& s : split_sentences(rec.prompt)) {
                if (!joined.empty()) joined.push_back(' ');
                joined += s;
            }
            corpus.push_back(std::move(joined));
        }
    }
    ctx.idf = IdfTable::build(corpus);
    return ctx;
}

CampaignReport aggregate(const CampaignConfig& cfg, const CampaignContext& ctx,
                         const std::vector<PromptRecord>& dataset,
                         std::vector<PromptArtifacts>& artifacts, std::size_t failed) {
    CampaignReport report;
    report.dataset_name = ctx.dataset_name;
    report.config_hash = cfg.config_hash();
    report.base_seed = cfg.base_seed;
    report.prompts_total = dataset.size();
    report.prompts_failed = failed;

    // The filter comparison reuses one set of model outputs: "wo" covers every
    // evaluated candidate, "w" the retained subset.
    std::vector<EvalRecord> expanded;
    for (const auto& art : artifacts) {
        for (const auto& r : art.records) {
            if (cfg.evaluate_unfiltered) {
                EvalRecord wo = r;
                wo.ppl_group = "wo";
                expanded.push_back(std::move(wo));
            }
            if (r.in_filtered) {
                EvalRecord w = r;
                w.ppl_group = "w";
                expanded.push_back(std::move(w));
            }
        }
    }
    report.cells = asr(expanded, GroupBy{});

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        report.pcm.push_back({dataset[i].id, artifacts[i].pcm});
        for (const auto& w : artifacts[i].warnings) {
            report.warnings.push_back(dataset[i].id + ": " + w);
        }
        for (const auto& n : artifacts[i].notices) {
            report.notices.push_back(dataset[i].id + ": " + n);
        }
    }
    return report;
}

CampaignReport run_campaign_impl(const CampaignConfig& cfg, const ProviderMap& providers) {
    cfg.validate();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    // A manifest pins the output directory to one campaign configuration.
    const fs::path manifest_path = out / "manifest.json";
    if (auto manifest = load_json_if_present(manifest_path)) {
        const std::string prior = manifest->value("config_hash", "");
        if (prior != cfg.config_hash()) {
            throw ConfigError("output dir " + out.string() +
                              " belongs to a different campaign (config hash " + prior + ")");
        }
    }
    const std::string started = timestamp_now();

    const std::vector<PromptRecord> dataset = load_dataset(cfg.dataset);
    CampaignContext ctx = make_context(cfg, providers, dataset);

    write_json_atomic(manifest_path, {{"config_hash", cfg.config_hash()},
                                      {"base_seed", cfg.base_seed},
                                      {"dataset", ctx.dataset_name},
                                      {"started_at", started},
                                      {"finished_at", nullptr}});
    write_json_atomic(out / "config.json", config_to_json(cfg));

    std::vector<PromptArtifacts> artifacts(dataset.size());
    std::vector<std::string> failures(dataset.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= dataset.size()) return;
            try {
                run_prompt(ctx, dataset[i], artifacts[i]);
            } catch (const FailureBudgetExceededError&) {
                throw;
            } catch (const ConfigError&) {
                throw;  // configuration mistakes fail fast, never per prompt
            } catch (const Error& e) {
                failures[i] = e.what();
            }
        }
    };

    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), std::max<std::size_t>(1, dataset.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    worker();
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::size_t failed = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!failures[i].empty()) {
            ++failed;
            artifacts[i].notices.push_back("prompt failed: " + failures[i]);
        }
    }
    if (failed > static_cast<std::size_t>(cfg.failure_budget)) {
        throw FailureBudgetExceededError(std::to_string(failed) +
                                         " prompts failed, budget is " +
                                         std::to_string(cfg.failure_budget));
    }

    CampaignReport report = aggregate(cfg, ctx, dataset, artifacts, failed);
    emit_reports(report, cfg.output_dir);

    write_json_atomic(manifest_path, {{"config_hash", cfg.config_hash()},
                                      {"base_seed", cfg.base_seed},
                                      {"dataset", ctx.dataset_name},
                                      {"started_at", started},
                                      {"finished_at", timestamp_now()}});
    return report;
}

}  // namespace

CampaignReport run_campaign(const CampaignConfig& cfg) {
    ProviderMap providers;
    for (const auto& [name, spec] : cfg.backends) {
        providers[name] = std::shared_ptr<Provider>(make_provider(spec));
    }
    return run_campaign_impl(cfg, providers);
}

CampaignReport run_campaign(const CampaignConfig& cfg,
                            const std::map<std::string, std::shared_ptr<Provider>>& providers) {
    return run_campaign_impl(cfg, providers);
}

CampaignReport rebuild_report(const CampaignConfig& cfg) {
    cfg.validate();
    const std::vector<PromptRecord> dataset = load_dataset(cfg.dataset);
    const fs::path out = cfg.output_dir;

    std::vector<PromptArtifacts> artifacts(dataset.size());
    CampaignContext ctx;
    ctx.cfg = &cfg;
    ctx.out = out;
    ctx.dataset_name = fs::path(cfg.dataset).stem().string();

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& rec = dataset[i];
        auto dissect_doc = load_json_if_present(out / "dissect" / (rec.id + ".json"));
        auto cand_doc = load_json_if_present(out / "candidates" / (rec.id + ".json"));
        auto ppl_doc = load_json_if_present(out / "ppl" / (rec.id + ".json"));
        auto pcm_doc = load_json_if_present(out / "pcm" / (rec.id + ".json"));
        if (!dissect_doc || !cand_doc || !ppl_doc || !pcm_doc) {
            throw IoError("stage files missing for prompt '" + rec.id +
                          "'; run the campaign first");
        }
        artifacts[i].dissected = dissected_from_json(*dissect_doc);
        artifacts[i].warnings = dissect_doc->value("warnings", std::vector<std::string>{});
        for (const auto& c : ppl_doc->at("candidates")) {
            artifacts[i].candidates.push_back(candidate_from_json(c));
        }
        // Notice order matches the live pipeline: candidates, ppl, eval.
        for (const auto& n : cand_doc->value("notices", std::vector<std::string>{})) {
            artifacts[i].notices.push_back(n);
        }
        for (const auto& n : ppl_doc->value("notices", std::vector<std::string>{})) {
            artifacts[i].notices.push_back(n);
        }
        artifacts[i].pcm = pcm_from_json(*pcm_doc);
        for (const auto& model_name : cfg.target_backends) {
            auto eval_doc =
                load_json_if_present(out / "eval" / rec.id / (sanitize_name(model_name) + ".json"));
            if (!eval_doc) {
                throw IoError("eval stage missing for prompt '" + rec.id + "', model '" +
                              model_name + "'");
            }
            for (const auto& r : eval_doc->at("records")) {
                artifacts[i].records.push_back(record_from_json(r));
            }
            for (const auto& n : eval_doc->value("notices", std::vector<std::string>{})) {
                artifacts[i].notices.push_back(n);
            }
        }
    }
    return aggregate(cfg, ctx, dataset, artifacts, 0);
}

// ---------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------

void emit_reports(const CampaignReport& report, const std::string& output_dir) {
    const fs::path dir = fs::path(output_dir) / "report";

    json cells = json::array();
    for (const auto& c : report.cells) cells.push_back(cell_to_json(c));
    json pcm_rows = json::array();
    for (const auto& p : report.pcm) {
        json row = pcm_to_json(p.breakdown);
        row["id"] = p.id;
        pcm_rows.push_back(std::move(row));
    }
    write_json_atomic(dir / "report.json", {{"dataset", report.dataset_name},
                                            {"config_hash", report.config_hash},
                                            {"base_seed", report.base_seed},
                                            {"prompts_total", report.prompts_total},
                                            {"prompts_failed", report.prompts_failed},
                                            {"cells", cells},
                                            {"pcm", pcm_rows},
                                            {"warnings", report.warnings},
                                            {"notices", report.notices}});

    // Flat ASR table.
    std::string tsv = "model\tdataset\tcomponent\tstrategy\tppl\tn_success\tn_total\tasr\n";
    for (const auto& c : report.cells) {
        tsv += c.model + "\t" + c.dataset + "\t" + c.component + "\t" + c.strategy + "\t" +
               c.ppl_group + "\t" + std::to_string(c.n_success) + "\t" +
               std::to_string(c.n_total) + "\t" + format_fixed(c.asr, 4) + "\n";
    }
    write_file_atomic(dir / "asr.tsv", tsv);

    // Component x strategy matrices, one per (model, ppl flag).
    static const char* kRows[] = {"ROL", "DIR", "ADI", "OFT", "EXA", "CRT"};
    static const char* kCols[] = {"SCI", "SYR", "WOD", "SER", "COD"};
    std::vector<std::pair<std::string, std::string>> panes;
    for (const auto& c : report.cells) {
        std::pair<std::string, std::string> key{c.model, c.ppl_group};
        bool found = false;
        for (const auto& p : panes) found = found || p == key;
        if (!found) panes.push_back(std::move(key));
    }
    std::sort(panes.begin(), panes.end());
    for (const auto& [model, ppl] : panes) {
        std::string matrix = "component";
        for (const char* col : kCols) {
            matrix += "\t";
            matrix += col;
        }
        matrix += "\n";
        for (const char* row : kRows) {
            matrix += row;
            for (const char* col : kCols) {
                const AsrCell* hit = nullptr;
                for (const auto& c : report.cells) {
                    if (c.model == model && c.ppl_group == ppl && c.component == row &&
                        c.strategy == col) {
                        hit = &c;
                        break;
                    }
                }
                matrix += "\t";
                matrix += hit ? format_fixed(hit->asr, 4) : "-";
            }
            matrix += "\n";
        }
        write_file_atomic(dir / ("heatmap_" + sanitize_name(model) + "_" + ppl + ".tsv"),
                          matrix);
    }

    // Per-model rollup with dispersion over its component x strategy cells.
    std::string summary =
        "model\tdataset\tppl\tn_success\tn_total\tasr\tcell_mean\tcell_std\n";
    for (const auto& [model, ppl] : panes) {
        std::size_t ns = 0, nt = 0;
        std::vector<double> cell_values;
        for (const auto& c : report.cells) {
            if (c.model != model || c.ppl_group != ppl) continue;
            ns += c.n_success;
            nt += c.n_total;
            cell_values.push_back(c.asr);
        }
        if (nt == 0) continue;
        double mean = 0.0;
        for (double v : cell_values) mean += v;
        mean /= static_cast<double>(cell_values.size());
        double var = 0.0;
        for (double v : cell_values) var += (v - mean) * (v - mean);
        // Sample standard deviation; a single cell has no dispersion.
        const double stddev = cell_values.size() > 1
                                  ? std::sqrt(var / static_cast<double>(cell_values.size() - 1))
                                  : 0.0;
        summary += model + "\t" + report.dataset_name + "\t" + ppl + "\t" +
                   std::to_string(ns) + "\t" + std::to_string(nt) + "\t" +
                   format_fixed(100.0 * static_cast<double>(ns) / static_cast<double>(nt), 4) +
                   "\t" + format_fixed(mean, 4) + "\t" + format_fixed(stddev, 4) + "\n";
    }
    write_file_atomic(dir / "summary.tsv", summary);

    // Per-prompt complexity table.
    std::string pcm_tsv = "id\tlexical\tsyntactic\tsemantic\tstructural\ttask\ttotal\n";
    for (const auto& p : report.pcm) {
        pcm_tsv += p.id + "\t" + format_fixed(p.breakdown.lexical, 6) + "\t" +
                   format_fixed(p.breakdown.syntactic, 6) + "\t" +
                   format_fixed(p.breakdown.semantic, 6) + "\t" +
                   format_fixed(p.breakdown.structural, 6) + "\t" +
                   format_fixed(p.breakdown.task, 6) + "\t" +
                   format_fixed(p.breakdown.total, 6) + "\n";
    }
    write_file_atomic(dir / "pcm.tsv", pcm_tsv);
}

}  // namespace pprobe
