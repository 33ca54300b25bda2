#include "pprobe/runner.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "pprobe/errors.hpp"
#include "pprobe/providers.hpp"
#include "pprobe/text.hpp"
#include "testutil.hpp"

using namespace pprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Four pre-tagged prompts, small enough to count candidates by hand. Only
// t1 carries a Role span; t3 is the lone judge-evaluated task.
const char* kMiniDataset =
    R"({"id":"t1","task":"Classification","prompt":"<Role>You are a tidy helper.</Role> <Directive>Say yes or no.</Directive>","gold":"yes"})"
    "\n"
    R"({"id":"t2","task":"Classification","prompt":"<Directive>Answer the question now please.</Directive>","gold":"no"})"
    "\n"
    R"({"id":"t3","task":"CodeGeneration","prompt":"<Directive>Write a sorting function quickly.</Directive>","gold":"sorted output"})"
    "\n"
    R"({"id":"t4","task":"Translation","prompt":"<Directive>Translate the phrase correctly today.</Directive>","gold":"the phrase translated"})"
    "\n";

BackendSpec mock_spec(const std::string& name, const std::string& script) {
    BackendSpec b;
    b.name = name;
    b.type = "mock";
    b.model = name + "-model";
    b.script = script;
    return b;
}

// Targets Role and Directive with the two provider-free strategies, so every
// call the campaign makes goes to the target, scorer, embedder or judge.
CampaignConfig mini_config(const testutil::TempDir& tmp, const std::string& out_child) {
    CampaignConfig cfg;
    cfg.dataset = tmp.str("mini.jsonl");
    cfg.output_dir = tmp.str(out_child);
    const std::string script = tmp.str("unused.json");  // injected providers never open it
    for (const char* name : {"tm", "scorer", "embedder", "judge"}) {
        cfg.backends[name] = mock_spec(name, script);
    }
    cfg.target_backends = {"tm"};
    cfg.ppl_backend = "scorer";
    cfg.embed_backend = "embedder";
    cfg.judge_backend = "judge";
    cfg.targets = {PerturbationTarget::component(ComponentLabel::Role),
                   PerturbationTarget::component(ComponentLabel::Directive)};
    cfg.strategies = {Strategy::SCI, Strategy::WOD};
    cfg.rate = 0.1;
    cfg.ppl_fraction = 0.5;
    cfg.evaluate_unfiltered = true;
    cfg.base_seed = 99;
    cfg.workers = 2;
    cfg.failure_budget = 0;
    return cfg;
}

struct MiniProviders {
    std::shared_ptr<MockProvider> target;
    std::shared_ptr<MockProvider> scorer;
    std::shared_ptr<MockProvider> embedder;
    std::shared_ptr<MockProvider> judge;

    std::map<std::string, std::shared_ptr<Provider>> map() const {
        return {{"tm", target}, {"scorer", scorer}, {"embedder", embedder}, {"judge", judge}};
    }
};

// Every responder is keyed on the request alone, so two runs (and any worker
// interleaving) produce identical outputs.
MiniProviders make_mini_providers() {
    MiniProviders p;

    MockScript target_script;
    MockRule any_chat;
    any_chat.kind = CallKind::Chat;
    any_chat.respond = "hash_choice";
    any_chat.responses = {"yes indeed", "absolutely no"};
    target_script.rules.push_back(any_chat);
    p.target = std::make_shared<MockProvider>("tm", "tm-model", target_script);

    MockScript judge_script;
    MockRule verdict;
    verdict.kind = CallKind::Chat;
    verdict.instruction_contains = "strict reviewer";
    verdict.respond = "hash_choice";
    verdict.responses = {"shrug"};  // never a verdict: every judgement is indeterminate
    judge_script.rules.push_back(verdict);
    p.judge = std::make_shared<MockProvider>("judge", "judge-model", judge_script);

    MockScript lax;
    lax.strict = false;
    p.scorer = std::make_shared<MockProvider>("scorer", "scorer-model", lax);
    p.embedder = std::make_shared<MockProvider>("embedder", "embedder-model", lax);
    return p;
}

void check_same_report(const CampaignReport& a, const CampaignReport& b) {
    CHECK(a.dataset_name == b.dataset_name);
    CHECK(a.config_hash == b.config_hash);
    CHECK(a.base_seed == b.base_seed);
    CHECK(a.prompts_total == b.prompts_total);
    CHECK(a.prompts_failed == b.prompts_failed);
    CHECK(a.warnings == b.warnings);
    CHECK(a.notices == b.notices);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].model == b.cells[i].model);
        CHECK(a.cells[i].dataset == b.cells[i].dataset);
        CHECK(a.cells[i].component == b.cells[i].component);
        CHECK(a.cells[i].strategy == b.cells[i].strategy);
        CHECK(a.cells[i].ppl_group == b.cells[i].ppl_group);
        CHECK(a.cells[i].n_success == b.cells[i].n_success);
        CHECK(a.cells[i].n_total == b.cells[i].n_total);
        CHECK(a.cells[i].asr == b.cells[i].asr);
    }
    REQUIRE(a.pcm.size() == b.pcm.size());
    for (std::size_t i = 0; i < a.pcm.size(); ++i) {
        CHECK(a.pcm[i].id == b.pcm[i].id);
        CHECK(a.pcm[i].breakdown.lexical == b.pcm[i].breakdown.lexical);
        CHECK(a.pcm[i].breakdown.syntactic == b.pcm[i].breakdown.syntactic);
        CHECK(a.pcm[i].breakdown.semantic == b.pcm[i].breakdown.semantic);
        CHECK(a.pcm[i].breakdown.structural == b.pcm[i].breakdown.structural);
        CHECK(a.pcm[i].breakdown.task == b.pcm[i].breakdown.task);
        CHECK(a.pcm[i].breakdown.total == b.pcm[i].breakdown.total);
    }
}

std::size_t count_of(const std::vector<std::string>& xs, const std::string& needle) {
    return static_cast<std::size_t>(std::count(xs.begin(), xs.end(), needle));
}

// Healthy scorer except for texts carrying the poison marker; mirrors the
// lax-mock logprob law so the healthy prompts score deterministically.
class PoisonScorer : public Provider {
  public:
    std::string chat(const ChatRequest&) override { return ""; }

    LogprobResponse token_logprobs(const std::string& text, const std::string&) override {
        if (text.find("zzfail") != std::string::npos) {
            throw TransportError("scorer: retries exhausted: HTTP 503");
        }
        LogprobResponse out;
        for (const auto& tok : tokenize(text)) {
            out.tokens.push_back(tok);
            out.logprobs.push_back(mock_token_logprob(tok));
        }
        return out;
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(mock_embedding(t, 8));
        return out;
    }

    std::string id() const override { return "scorer"; }
    std::string default_model() const override { return "scorer-model"; }
};

}  // namespace

// ---------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------

TEST_CASE("the fixture corpus loads with its tag status intact") {
    const auto records = load_dataset((testutil::fixture_dir() / "prompts.jsonl").string());
    REQUIRE(records.size() == 8);

    const std::vector<std::string> ids = {"pubmedqa-raw", "pubmedqa-pa", "emea-raw", "emea-pa",
                                          "leetcode-raw", "leetcode-pa", "codegen-raw",
                                          "codegen-pa"};
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].id == ids[i]);
        CHECK(!records[i].prompt.empty());
        CHECK(!records[i].gold.empty());
        // The -pa variants are pre-tagged, their -raw twins are plain text.
        CHECK(records[i].pretagged == (records[i].id.ends_with("-pa")));
    }
    CHECK(records[0].task == TaskKind::Classification);
    CHECK(records[2].task == TaskKind::Translation);
    CHECK(records[6].task == TaskKind::CodeGeneration);
}

TEST_CASE("dataset loading rejects malformed records with line numbers") {
    testutil::TempDir tmp("pprobe-dataset");
    const auto write = [&](const std::string& name, const std::string& body) {
        testutil::spit(tmp.path() / name, body);
        return tmp.str(name);
    };
    const std::string ok =
        R"({"id":"ok","task":"Classification","prompt":"Say yes.","gold":"yes"})";

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_dataset(tmp.str("absent.jsonl")), IoError);
    }
    SUBCASE("broken JSON carries the offending line") {
        const auto path = write("bad.jsonl", ok + "\n{nope\n");
        try {
            load_dataset(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 2);
            CHECK(std::string(e.what()).starts_with("dataset record is not valid JSON: "));
        }
    }
    SUBCASE("unknown task kind") {
        const auto path = write(
            "task.jsonl", R"({"id":"x","task":"Poetry","prompt":"Hm.","gold":"g"})" "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path), "unknown task kind: Poetry (line 1)",
                             ParseError);
    }
    SUBCASE("gold is required, string-typed and non-empty") {
        const char* bodies[] = {
            R"({"id":"x","task":"Classification","prompt":"Say yes."})",
            R"({"id":"x","task":"Classification","prompt":"Say yes.","gold":11})",
            R"({"id":"x","task":"Classification","prompt":"Say yes.","gold":""})",
        };
        for (const char* body : bodies) {
            const auto path = write("gold.jsonl", std::string(body) + "\n");
            CHECK_THROWS_WITH_AS(load_dataset(path),
                                 "missing gold for Classification task (line 1)", ParseError);
        }
    }
    SUBCASE("missing prompt field") {
        const auto path =
            write("field.jsonl", R"({"id":"x","task":"Classification","gold":"g"})" "\n");
        try {
            load_dataset(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 1);
            CHECK(std::string(e.what()).starts_with("dataset record missing field: "));
        }
    }
    SUBCASE("record ids are restricted to filename-safe characters") {
        const auto path = write(
            "id.jsonl",
            R"({"id":"has space","task":"Classification","prompt":"P.","gold":"g"})" "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path),
                             "record id must match [A-Za-z0-9_.-]+: 'has space' (line 1)",
                             ParseError);
    }
    SUBCASE("duplicate ids report both lines, counting blanks") {
        const auto path = write(
            "dup.jsonl",
            R"({"id":"dup","task":"Classification","prompt":"A.","gold":"g"})" "\n\n"
            R"({"id":"dup","task":"Classification","prompt":"B.","gold":"g"})" "\n");
        CHECK_THROWS_WITH_AS(load_dataset(path), "duplicate prompt id 'dup' (lines 1 and 3)",
                             DuplicateIdError);
    }
    SUBCASE("malformed pre-tagged prompts are rejected at load time") {
        const auto path = write(
            "tagged.jsonl",
            R"({"id":"x","task":"Classification","prompt":"<Role>open","gold":"g"})" "\n");
        try {
            load_dataset(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line == 1);
            CHECK(std::string(e.what()).starts_with("tagged prompt rejected: "));
        }
    }
    SUBCASE("an all-blank file holds no records") {
        const auto path = write("empty.jsonl", "\n  \n");
        CHECK_THROWS_WITH_AS(load_dataset(path), "dataset holds no records (line 2)",
                             ParseError);
    }
}

// ---------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------

TEST_CASE("the fixture campaign config resolves paths against its own directory") {
    const auto cfg_path = testutil::fixture_dir() / "campaign.json";
    const auto cfg = CampaignConfig::from_file(cfg_path.string());

    CHECK(cfg.dataset == (testutil::fixture_dir() / "prompts.jsonl").string());
    CHECK(cfg.output_dir == (testutil::fixture_dir() / "out").string());
    CHECK(cfg.lexicon_path ==
          (testutil::fixture_dir() / ".." / "lexicon.tsv").lexically_normal().string());
    CHECK(cfg.stopwords_path ==
          (testutil::fixture_dir() / ".." / "stopwords.txt").lexically_normal().string());
    CHECK(cfg.base_seed == 20250817);
    CHECK(cfg.rate == 0.1);
    CHECK(cfg.ppl_fraction == 0.2);
    CHECK(cfg.evaluate_unfiltered);
    CHECK(cfg.workers == 2);
    CHECK(cfg.failure_budget == 0);
    CHECK(cfg.target_backends == std::vector<std::string>{"m1", "m2"});
    CHECK(cfg.backends.size() == 7);
    CHECK(cfg.backends.at("m1").model == "alpha-7b");
    CHECK(cfg.backends.at("classifier").script ==
          (testutil::fixture_dir() / "mock" / "classifier.json").string());

    // Omitted target/strategy lists enable the full grid.
    REQUIRE(cfg.targets.size() == 6);
    const std::vector<std::string> codes = {"ROL", "DIR", "ADI", "OFT", "EXA", "CRT"};
    for (std::size_t i = 0; i < codes.size(); ++i) CHECK(cfg.targets[i].code() == codes[i]);
    CHECK(cfg.strategies == std::vector<Strategy>{Strategy::SCI, Strategy::SYR, Strategy::WOD,
                                                  Strategy::SER, Strategy::COD});

    // The whole campaign pipeline keys artifacts off this value.
    CHECK(cfg.config_hash() == "3c3b627fbf5dc7d2");
}

TEST_CASE("config files fill defaults and reject malformed input") {
    testutil::TempDir tmp("pprobe-config");
    fs::create_directory(tmp.path() / "cfg");
    const auto write = [&](const std::string& body) {
        testutil::spit(tmp.path() / "cfg" / "campaign.json", body);
        return tmp.str("cfg/campaign.json");
    };
    // Default targets include the control row and default strategies include
    // SYR and SER, so the minimal config still names their inputs.
    const std::string minimal = R"({
        "dataset": "../mini.jsonl",
        "output_dir": "out",
        "base_seed": 5,
        "backends": {
            "tm": {"type": "mock", "script": "s.json"},
            "scorer": {"type": "mock", "script": "s.json"},
            "embedder": {"type": "mock", "script": "s.json"},
            "para": {"type": "mock", "script": "s.json"}
        },
        "target_backends": ["tm"],
        "paraphrase_backend": "para",
        "ppl_backend": "scorer",
        "embed_backend": "embedder",
        "lexicon": "lex.tsv",
        "stopwords": "stop.txt"
    })";

    SUBCASE("defaults and relative resolution") {
        const auto cfg = CampaignConfig::from_file(write(minimal));
        CHECK(cfg.dataset == (tmp.path() / "mini.jsonl").string());
        CHECK(cfg.output_dir == (tmp.path() / "cfg" / "out").string());
        CHECK(cfg.lexicon_path == (tmp.path() / "cfg" / "lex.tsv").string());
        CHECK(cfg.backends.at("tm").script == (tmp.path() / "cfg" / "s.json").string());
        CHECK(cfg.backends.at("tm").model == "tm");  // model defaults to the backend name
        CHECK(cfg.rate == kDefaultPerturbRate);
        CHECK(cfg.ppl_fraction == 0.2);
        CHECK(cfg.evaluate_unfiltered);
        CHECK(cfg.workers == 1);
        CHECK(cfg.failure_budget == 3);
        CHECK(cfg.targets.size() == 6);
        CHECK(cfg.strategies.size() == 5);
        CHECK(cfg.classifier_backend.empty());
        CHECK(cfg.judge_backend.empty());
    }
    SUBCASE("base_seed is mandatory") {
        json doc = json::parse(minimal);
        doc.erase("base_seed");
        CHECK_THROWS_WITH_AS(CampaignConfig::from_file(write(doc.dump())),
                             "config requires base_seed; there is no default seed",
                             ConfigError);
    }
    SUBCASE("broken JSON") {
        try {
            CampaignConfig::from_file(write("{nope"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).starts_with("config is not valid JSON: "));
        }
    }
    SUBCASE("missing required field") {
        json doc = json::parse(minimal);
        doc.erase("dataset");
        try {
            CampaignConfig::from_file(write(doc.dump()));
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).starts_with("config field error: "));
        }
    }
    SUBCASE("unknown target code") {
        json doc = json::parse(minimal);
        doc["targets"] = {"ROL", "XYZ"};
        CHECK_THROWS_WITH_AS(CampaignConfig::from_file(write(doc.dump())),
                             "unknown target code: XYZ", ConfigError);
    }
    SUBCASE("unknown strategy code") {
        json doc = json::parse(minimal);
        doc["strategies"] = {"QQQ"};
        CHECK_THROWS_WITH_AS(CampaignConfig::from_file(write(doc.dump())),
                             "unknown strategy code: QQQ", ConfigError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(CampaignConfig::from_file(tmp.str("cfg/absent.json")), IoError);
    }
}

TEST_CASE("config validation pins its diagnostics") {
    testutil::TempDir tmp("pprobe-validate");
    const auto base = [&] { return mini_config(tmp, "out"); };
    const auto expect = [&](CampaignConfig cfg, const char* message) {
        CHECK_THROWS_WITH_AS(cfg.validate(), message, ConfigError);
    };

    {
        CampaignConfig cfg = base();
        CHECK_NOTHROW(cfg.validate());
    }
    {
        CampaignConfig cfg = base();
        cfg.dataset.clear();
        expect(std::move(cfg), "config lacks a dataset path");
    }
    {
        CampaignConfig cfg = base();
        cfg.output_dir.clear();
        expect(std::move(cfg), "config lacks an output_dir");
    }
    {
        CampaignConfig cfg = base();
        cfg.target_backends.clear();
        expect(std::move(cfg), "config names no target backends");
    }
    {
        CampaignConfig cfg = base();
        cfg.targets.clear();
        expect(std::move(cfg), "config enables no perturbation targets");
    }
    {
        CampaignConfig cfg = base();
        cfg.strategies.clear();
        expect(std::move(cfg), "config enables no strategies");
    }
    for (double rate : {0.0, -0.2, 1.2}) {
        CampaignConfig cfg = base();
        cfg.rate = rate;
        expect(std::move(cfg), "rate must be in (0, 1]");
    }
    for (double fraction : {0.0, 1.0000001}) {
        CampaignConfig cfg = base();
        cfg.ppl_fraction = fraction;
        expect(std::move(cfg), "ppl_fraction must be in (0, 1]");
    }
    {
        CampaignConfig cfg = base();
        cfg.workers = 0;
        expect(std::move(cfg), "workers must be at least 1");
    }
    {
        CampaignConfig cfg = base();
        cfg.failure_budget = -1;
        expect(std::move(cfg), "failure_budget must be non-negative");
    }
    {
        CampaignConfig cfg = base();
        cfg.target_backends = {"ghost"};
        expect(std::move(cfg), "target backend 'ghost' is not defined under backends");
    }
    {
        CampaignConfig cfg = base();
        cfg.judge_backend = "ghost";
        expect(std::move(cfg), "judge backend 'ghost' is not defined under backends");
    }
    {
        CampaignConfig cfg = base();
        cfg.ppl_backend.clear();
        expect(std::move(cfg), "config requires a ppl backend");
    }
    {
        CampaignConfig cfg = base();
        cfg.embed_backend.clear();
        expect(std::move(cfg), "config requires an embed backend");
    }
    {
        CampaignConfig cfg = base();
        cfg.backends["bad name"] = mock_spec("bad name", "s.json");
        expect(std::move(cfg), "backend name must match [A-Za-z0-9_.-]+: 'bad name'");
    }
    {
        CampaignConfig cfg = base();
        cfg.backends.at("tm").script.clear();
        expect(std::move(cfg), "mock backend 'tm' needs a script path");
    }
    {
        CampaignConfig cfg = base();
        cfg.backends.at("tm").type = "http";
        expect(std::move(cfg), "http backend 'tm' needs a base_url");
    }
    {
        CampaignConfig cfg = base();
        cfg.backends.at("tm").type = "carrier-pigeon";
        expect(std::move(cfg), "backend 'tm' has unknown type 'carrier-pigeon'");
    }
    {
        CampaignConfig cfg = base();
        cfg.strategies = {Strategy::SER};
        expect(std::move(cfg), "SER strategy requires a paraphrase backend");
    }
    {
        CampaignConfig cfg = base();
        cfg.strategies = {Strategy::SYR};
        expect(std::move(cfg), "SYR strategy requires a lexicon path");
    }
    {
        CampaignConfig cfg = base();
        cfg.targets = {PerturbationTarget::control()};
        expect(std::move(cfg), "control target requires a stopword list");
    }
}

TEST_CASE("the config hash ignores placement and concurrency") {
    testutil::TempDir tmp("pprobe-hash");
    const CampaignConfig base = mini_config(tmp, "out");
    const std::string hash = base.config_hash();
    CHECK(hash.size() == 16);
    CHECK_NOTHROW(json::parse(base.canonical_json()));

    // Where results land and how fast they are computed cannot change them.
    {
        CampaignConfig cfg = base;
        cfg.output_dir = tmp.str("elsewhere");
        cfg.workers = 7;
        cfg.failure_budget = 12;
        CHECK(cfg.config_hash() == hash);
    }
    const auto differs = [&](auto mutate) {
        CampaignConfig cfg = base;
        mutate(cfg);
        CHECK(cfg.config_hash() != hash);
    };
    differs([](CampaignConfig& c) { c.rate = 0.2; });
    differs([](CampaignConfig& c) { c.base_seed = 100; });
    differs([](CampaignConfig& c) { c.ppl_fraction = 0.7; });
    differs([](CampaignConfig& c) { c.evaluate_unfiltered = false; });
    differs([](CampaignConfig& c) { c.dataset += ".other"; });
    differs([](CampaignConfig& c) { c.strategies.pop_back(); });
    differs([](CampaignConfig& c) { c.backends.at("tm").model = "tm-v2"; });
}

TEST_CASE("make_provider builds the configured backend type") {
    BackendSpec spec;
    spec.name = "classifier";
    spec.type = "mock";
    spec.model = "tagger-1";
    spec.script = (testutil::fixture_dir() / "mock" / "classifier.json").string();

    auto mock = make_provider(spec);
    REQUIRE(mock != nullptr);
    CHECK(mock->id() == "classifier");
    CHECK(mock->default_model() == "tagger-1");

    spec.script = (testutil::fixture_dir() / "mock" / "absent.json").string();
    CHECK_THROWS_AS(make_provider(spec), IoError);

    BackendSpec http;
    http.name = "remote";
    http.type = "http";
    http.model = "m-x";
    http.http.name = "remote";
    http.http.model = "m-x";
    http.http.base_url = "http://127.0.0.1:1";
    auto provider = make_provider(http);
    REQUIRE(provider != nullptr);
    CHECK(provider->id() == "remote");

    BackendSpec odd;
    odd.name = "odd";
    odd.type = "teapot";
    CHECK_THROWS_WITH_AS(make_provider(odd), "backend 'odd' has unknown type 'teapot'",
                         ConfigError);
}

// ---------------------------------------------------------------------
// Campaign end to end
// ---------------------------------------------------------------------

TEST_CASE("a mock campaign persists every stage and resumes without provider calls") {
    testutil::TempDir tmp("pprobe-campaign");
    testutil::spit(tmp.path() / "mini.jsonl", kMiniDataset);
    const CampaignConfig cfg = mini_config(tmp, "out1");
    MiniProviders prov = make_mini_providers();

    const CampaignReport run1 = run_campaign(cfg, prov.map());

    CHECK(run1.dataset_name == "mini");
    CHECK(run1.config_hash == cfg.config_hash());
    CHECK(run1.base_seed == 99);
    CHECK(run1.prompts_total == 4);
    CHECK(run1.prompts_failed == 0);
    CHECK(run1.warnings.empty());

    // Pre-tagged prompts need no classifier; per-prompt call counts are
    // fixed: chats = baseline + one per candidate, logprobs likewise, one
    // embed batch for the only multi-sentence prompt, two judge attempts per
    // code-generation record.
    CHECK(prov.target->call_count() == 14);
    CHECK(prov.scorer->call_count() == 14);
    CHECK(prov.embedder->call_count() == 1);
    CHECK(prov.judge->call_count() == 4);

    // t2..t4 lack a Role span; t3's judgements never reach a verdict.
    for (const std::string id : {"t2", "t3", "t4"}) {
        for (const std::string strat : {"SCI", "WOD"}) {
            CHECK(count_of(run1.notices, id + ": skipped " + id + "/ROL/" + strat +
                                             ": component absent") == 1);
        }
    }
    for (const std::string strat : {"SCI", "WOD"}) {
        CHECK(count_of(run1.notices, "t3: judge indeterminate for t3/DIR/" + strat +
                                         " on tm; excluded from totals") == 1);
    }

    // Ten records: four from t1, two from each other prompt. Both t3 records
    // are indeterminate; retention keeps half of each prompt's candidates.
    std::size_t wo_total = 0, w_total = 0;
    for (const auto& c : run1.cells) {
        CHECK(c.model == "tm");
        CHECK(c.dataset == "mini");
        CHECK((c.component == "ROL" || c.component == "DIR"));
        CHECK((c.strategy == "SCI" || c.strategy == "WOD"));
        REQUIRE((c.ppl_group == "wo" || c.ppl_group == "w"));
        CHECK(c.n_total > 0);
        CHECK(c.asr == doctest::Approx(100.0 * static_cast<double>(c.n_success) /
                                       static_cast<double>(c.n_total))
                           .epsilon(1e-12));
        (c.ppl_group == "wo" ? wo_total : w_total) += c.n_total;
    }
    CHECK(wo_total == 8);
    CHECK(w_total == 4);
    const auto key = [](const AsrCell& c) {
        return std::tie(c.model, c.dataset, c.component, c.strategy, c.ppl_group);
    };
    CHECK(std::is_sorted(run1.cells.begin(), run1.cells.end(),
                         [&](const AsrCell& a, const AsrCell& b) { return key(a) < key(b); }));

    REQUIRE(run1.pcm.size() == 4);
    const std::vector<std::string> ids = {"t1", "t2", "t3", "t4"};
    for (std::size_t i = 0; i < ids.size(); ++i) {
        CHECK(run1.pcm[i].id == ids[i]);
        CHECK(run1.pcm[i].breakdown.total > 0.0);
    }

    const fs::path out = cfg.output_dir;
    SUBCASE("every stage and report file lands in the output directory") {
        for (const char* rel :
             {"manifest.json", "config.json", "dissect/t1.json", "candidates/t1.json",
              "ppl/t1.json", "eval/t1/tm.json", "pcm/t1.json", "report/report.json",
              "report/asr.tsv", "report/heatmap_tm_wo.tsv", "report/heatmap_tm_w.tsv",
              "report/summary.tsv", "report/pcm.tsv"}) {
            CHECK_MESSAGE(fs::exists(out / rel), rel);
        }

        const json manifest = json::parse(testutil::slurp(out / "manifest.json"));
        CHECK(manifest.at("config_hash") == cfg.config_hash());
        CHECK(manifest.at("base_seed") == 99);
        CHECK(manifest.at("dataset") == "mini");
        CHECK(manifest.at("started_at").is_string());
        CHECK(manifest.at("finished_at").is_string());

        const json report = json::parse(testutil::slurp(out / "report" / "report.json"));
        CHECK(report.at("config_hash") == cfg.config_hash());
        CHECK(report.at("prompts_total") == 4);
        CHECK(report.at("cells").size() == run1.cells.size());

        const json eval_doc = json::parse(testutil::slurp(out / "eval" / "t4" / "tm.json"));
        REQUIRE(eval_doc.at("records").size() == 2);
        for (const auto& rec : eval_doc.at("records")) {
            CHECK(rec.at("source_id") == "t4");
            CHECK(rec.at("model") == "tm");
            CHECK(rec.at("dataset") == "mini");
            CHECK(rec.at("evidence").get<std::string>().starts_with("bleu="));
        }

        const std::string asr_tsv = testutil::slurp(out / "report" / "asr.tsv");
        CHECK(asr_tsv.starts_with(
            "model\tdataset\tcomponent\tstrategy\tppl\tn_success\tn_total\tasr\n"));
        const std::string heatmap = testutil::slurp(out / "report" / "heatmap_tm_wo.tsv");
        CHECK(heatmap.starts_with("component\tSCI\tSYR\tWOD\tSER\tCOD\n"));
        CHECK(heatmap.find("\nADI\t-\t-\t-\t-\t-\n") != std::string::npos);
        const std::string summary = testutil::slurp(out / "report" / "summary.tsv");
        CHECK(summary.starts_with(
            "model\tdataset\tppl\tn_success\tn_total\tasr\tcell_mean\tcell_std\n"));
        const std::string pcm_tsv = testutil::slurp(out / "report" / "pcm.tsv");
        CHECK(pcm_tsv.starts_with(
            "id\tlexical\tsyntactic\tsemantic\tstructural\ttask\ttotal\n"));
    }

    SUBCASE("a second run reloads every stage instead of recomputing") {
        const CampaignReport run2 = run_campaign(cfg, prov.map());
        check_same_report(run1, run2);
        CHECK(prov.target->call_count() == 14);
        CHECK(prov.scorer->call_count() == 14);
        CHECK(prov.embedder->call_count() == 1);
        CHECK(prov.judge->call_count() == 4);
    }

    SUBCASE("a fresh directory with fresh providers reproduces the report") {
        const CampaignConfig cfg2 = mini_config(tmp, "out2");
        MiniProviders fresh = make_mini_providers();
        const CampaignReport run3 = run_campaign(cfg2, fresh.map());
        CampaignReport expected = run1;
        check_same_report(expected, run3);
    }

    SUBCASE("rebuild_report reproduces the live aggregate from stage files") {
        const CampaignReport rebuilt = rebuild_report(cfg);
        check_same_report(run1, rebuilt);

        // The resolved copy written into the run directory is self-contained.
        const auto reloaded = CampaignConfig::from_file((out / "config.json").string());
        CHECK(reloaded.config_hash() == cfg.config_hash());
        CHECK(fs::weakly_canonical(reloaded.output_dir) == fs::weakly_canonical(out));
        check_same_report(run1, rebuild_report(reloaded));
    }

    SUBCASE("rebuild_report names the first missing stage") {
        CampaignConfig broken = cfg;
        broken.output_dir = tmp.str("rebuild");
        fs::create_directories(broken.output_dir);
        CHECK_THROWS_WITH_AS(rebuild_report(broken),
                             "stage files missing for prompt 't1'; run the campaign first",
                             IoError);

        fs::create_directories(fs::path(broken.output_dir) / "eval" / "t1");
        for (const char* stage : {"dissect", "candidates", "ppl", "pcm"}) {
            fs::create_directories(fs::path(broken.output_dir) / stage);
            fs::copy_file(out / stage / "t1.json",
                          fs::path(broken.output_dir) / stage / "t1.json");
        }
        try {
            rebuild_report(broken);
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).starts_with(
                "eval stage missing for prompt 't1', model 'tm'"));
        }
    }

    SUBCASE("an output directory never mixes two campaigns") {
        CampaignConfig other = cfg;
        other.rate = 0.2;
        try {
            run_campaign(other, prov.map());
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string what = e.what();
            CHECK(what.find("belongs to a different campaign (config hash " +
                            cfg.config_hash() + ")") != std::string::npos);
        }
    }
}

TEST_CASE("per-prompt failures are isolated until the budget runs out") {
    testutil::TempDir tmp("pprobe-budget");
    testutil::spit(
        tmp.path() / "mini.jsonl",
        R"({"id":"p1","task":"Classification","prompt":"<Directive>List three animal names now.</Directive>","gold":"cat"})"
        "\n"
        R"({"id":"p2","task":"Classification","prompt":"<Directive>Keep zzfail inside this sentence.</Directive>","gold":"ok"})"
        "\n"
        R"({"id":"p3","task":"Classification","prompt":"<Directive>Count to five aloud slowly.</Directive>","gold":"five"})"
        "\n");

    const auto configure = [&](const std::string& out_child, int budget) {
        CampaignConfig cfg = mini_config(tmp, out_child);
        cfg.targets = {PerturbationTarget::component(ComponentLabel::Directive)};
        cfg.strategies = {Strategy::SCI};
        cfg.ppl_fraction = 1.0;
        cfg.judge_backend.clear();
        cfg.workers = 1;
        cfg.failure_budget = budget;
        return cfg;
    };
    const auto providers = [&] {
        MiniProviders prov = make_mini_providers();
        std::map<std::string, std::shared_ptr<Provider>> map = prov.map();
        map["scorer"] = std::make_shared<PoisonScorer>();
        return map;
    };

    SUBCASE("within budget the healthy prompts still aggregate") {
        const CampaignReport report = run_campaign(configure("out-tolerant", 1), providers());
        CHECK(report.prompts_total == 3);
        CHECK(report.prompts_failed == 1);
        CHECK(count_of(report.notices,
                       "p2: prompt failed: scorer: retries exhausted: HTTP 503") == 1);

        std::size_t wo_total = 0;
        for (const auto& c : report.cells) {
            if (c.ppl_group == "wo") wo_total += c.n_total;
        }
        CHECK(wo_total == 2);  // one candidate each from p1 and p3

        REQUIRE(report.pcm.size() == 3);
        CHECK(report.pcm[1].id == "p2");
        CHECK(report.pcm[1].breakdown.total == 0.0);  // stage never ran
        CHECK(report.pcm[0].breakdown.total > 0.0);
        CHECK(report.pcm[2].breakdown.total > 0.0);
    }

    SUBCASE("past the budget the campaign aborts") {
        CHECK_THROWS_WITH_AS(run_campaign(configure("out-strict", 0), providers()),
                             "1 prompts failed, budget is 0", FailureBudgetExceededError);
    }
}
