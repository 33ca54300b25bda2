// promptprobe: batch driver and one-shot file transforms for the
// dissect / perturb / filter / evaluate pipeline.
//
//   dissect  <in> <out> --config <file>
//   perturb  <in> <out> --config <file> [--strategies ..] [--targets ..]
//                                       [--rate r] [--seed n]
//   pplscore <in> <out> --config <file> [--fraction f]
//   evaluate <in> <out> --config <file> [--models a,b]
//   pcm      <in> <out> --config <file> [--weights k=v,..]
//   campaign --config <file> [--output-dir d]
//   report   <rundir>
//
// <in> for dissect/perturb/pcm is a dataset file; pplscore consumes perturb
// output and evaluate consumes pplscore output. Exit codes: 0 success,
// 1 configuration or usage error, 2 provider failure, 3 file IO error.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <string>

#include "pprobe/anatomy.hpp"
#include "pprobe/errors.hpp"
#include "pprobe/pplfilter.hpp"
#include "pprobe/runner.hpp"
#include "pprobe/serialize.hpp"
#include "pprobe/util.hpp"

using nlohmann::json;
using namespace pprobe;

namespace {

struct Session {
    CampaignConfig cfg;
    std::vector<PromptRecord> dataset;
    std::map<std::string, std::shared_ptr<Provider>> providers;
    SynonymLexicon lexicon;
    Stopwords stopwords;

    Provider* get(const std::string& name) {
        auto it = providers.find(name);
        return it == providers.end() ? nullptr : it->second.get();
    }

    const PromptRecord& record(const std::string& id) const {
        for (const auto& rec : dataset) {
            if (rec.id == id) return rec;
        }
        throw ConfigError("prompt id '" + id + "' is not in the dataset");
    }
};

// dataset_override: the <in> positional of dataset-consuming subcommands
// takes precedence over the dataset named in the config.
Session open_session(const std::string& config_path, const std::string& dataset_override = "") {
    Session s;
    s.cfg = CampaignConfig::from_file(config_path);
    if (!dataset_override.empty()) s.cfg.dataset = dataset_override;
    s.dataset = load_dataset(s.cfg.dataset);
    for (const auto& [name, spec] : s.cfg.backends) {
        s.providers[name] = std::shared_ptr<Provider>(make_provider(spec));
    }
    if (!s.cfg.lexicon_path.empty()) s.lexicon = SynonymLexicon::from_file(s.cfg.lexicon_path);
    if (!s.cfg.stopwords_path.empty()) {
        s.stopwords = Stopwords::from_file(s.cfg.stopwords_path);
    }
    return s;
}

DissectedPrompt dissect_record(Session& s, const PromptRecord& rec,
                               std::vector<std::string>& warnings) {
    if (rec.pretagged) return parse_tagged(rec.prompt);
    Provider* classifier = s.get(s.cfg.classifier_backend);
    if (!classifier) throw ConfigError("raw prompt '" + rec.id + "' needs a classifier backend");
    DissectionOutcome out = dissect(rec.prompt, *classifier);
    warnings = out.warnings;
    return out.prompt;
}

json load_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open input: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("input " + path + " is not valid JSON: " + e.what());
    }
    return doc;
}

int cmd_dissect(Session& s, const std::string& out_path) {
    json out = json::array();
    for (const auto& rec : s.dataset) {
        std::vector<std::string> warnings;
        const DissectedPrompt d = dissect_record(s, rec, warnings);
        json doc = dissected_to_json(d);
        doc["id"] = rec.id;
        doc["pretagged"] = rec.pretagged;
        doc["warnings"] = warnings;
        doc["tagged"] = render_tagged(d);
        out.push_back(std::move(doc));
    }
    write_json_atomic(out_path, out);
    return 0;
}

int cmd_perturb(Session& s, const std::string& out_path) {
    json out = json::array();
    for (const auto& rec : s.dataset) {
        std::vector<std::string> warnings;
        const DissectedPrompt d = dissect_record(s, rec, warnings);
        CandidateBatch batch = generate_candidates(
            d, rec.id, s.cfg.targets, s.cfg.strategies, s.cfg.base_seed, s.lexicon, s.stopwords,
            s.get(s.cfg.paraphrase_backend), s.cfg.rate);
        json cands = json::array();
        for (const auto& c : batch.candidates) cands.push_back(candidate_to_json(c));
        out.push_back({{"id", rec.id}, {"candidates", cands}, {"notices", batch.notices}});
    }
    write_json_atomic(out_path, out);
    return 0;
}

int cmd_pplscore(Session& s, const std::string& in_path, const std::string& out_path) {
    Provider* scorer = s.get(s.cfg.ppl_backend);
    if (!scorer) throw ConfigError("pplscore needs a ppl backend");

    json out = json::array();
    for (const auto& entry : load_input(in_path)) {
        const PromptRecord& rec = s.record(entry.at("id").get<std::string>());
        std::vector<std::string> warnings;
        const DissectedPrompt d = dissect_record(s, rec, warnings);

        std::vector<PerturbedCandidate> candidates;
        for (const auto& c : entry.at("candidates")) candidates.push_back(candidate_from_json(c));
        ScoredBatch scored = score_candidates(std::move(candidates), plain_text(d), *scorer);
        for (const auto& kept : filter_top(scored.scored, s.cfg.ppl_fraction)) {
            for (auto& c : scored.scored) {
                if (c.id == kept.id) c.retained = true;
            }
        }
        json cands = json::array();
        for (const auto& c : scored.scored) cands.push_back(candidate_to_json(c));
        out.push_back({{"id", rec.id},
                       {"baseline_ppl", scored.baseline_ppl},
                       {"candidates", cands},
                       {"notices", scored.notices}});
    }
    write_json_atomic(out_path, out);
    return 0;
}

int cmd_evaluate(Session& s, const std::string& in_path, const std::string& out_path) {
    Provider* judge = s.get(s.cfg.judge_backend);
    const std::string dataset_name =
        std::filesystem::path(s.cfg.dataset).stem().string();

    json out = json::array();
    for (const auto& entry : load_input(in_path)) {
        const PromptRecord& rec = s.record(entry.at("id").get<std::string>());
        std::vector<std::string> warnings;
        const DissectedPrompt d = dissect_record(s, rec, warnings);

        json records = json::array();
        for (const auto& model_name : s.cfg.target_backends) {
            Provider* target = s.get(model_name);
            if (!target) throw ConfigError("target backend '" + model_name + "' missing");
            ChatRequest base_req;
            base_req.user = plain_text(d);
            const std::string baseline_output = target->chat(base_req);

            for (const auto& cj : entry.at("candidates")) {
                const PerturbedCandidate cand = candidate_from_json(cj);
                if (!s.cfg.evaluate_unfiltered && !cand.retained) continue;
                ChatRequest req;
                req.user = cand.text;
                const std::string output = target->chat(req);

                EvalRecord r;
                r.source_id = rec.id;
                r.cand_id = cand.id;
                r.model = model_name;
                r.dataset = dataset_name;
                r.component = cand.spec.target.code();
                r.strategy = std::string(strategy_code(cand.spec.strategy));
                r.in_filtered = cand.retained;
                r.baseline_output = baseline_output;
                r.output = output;
                switch (rec.task) {
                    case TaskKind::Classification:
                        r.success = success_classification(output, rec.gold);
                        break;
                    case TaskKind::Translation: {
                        const double score = bleu(output, rec.gold);
                        r.evidence = "bleu=" + std::to_string(score);
                        r.success = bleu_indicates_success(score);
                        break;
                    }
                    case TaskKind::CodeGeneration: {
                        if (!judge) throw ConfigError("CodeGeneration needs a judge backend");
                        const auto verdict = success_codegen(output, rec.gold, *judge);
                        if (verdict) {
                            r.success = *verdict;
                        } else {
                            r.indeterminate = true;
                        }
                        break;
                    }
                }
                records.push_back(record_to_json(r));
            }
        }
        out.push_back({{"id", rec.id}, {"records", records}});
    }
    write_json_atomic(out_path, out);
    return 0;
}

int cmd_pcm(Session& s, const std::string& out_path) {
    Provider* embedder = s.get(s.cfg.embed_backend);
    if (!embedder) throw ConfigError("pcm needs an embed backend");

    std::vector<std::string> corpus;
    std::vector<DissectedPrompt> dissected;
    for (const auto& rec : s.dataset) {
        std::vector<std::string> warnings;
        dissected.push_back(dissect_record(s, rec, warnings));
        corpus.push_back(plain_text(dissected.back()));
    }
    const IdfTable idf = IdfTable::build(corpus);
    const TaskRatings ratings = TaskRatings::with_overrides(s.cfg.task_ratings);

    json out = json::array();
    for (std::size_t i = 0; i < s.dataset.size(); ++i) {
        const PcmBreakdown b =
            compute_pcm(plain_text(dissected[i]), dissected[i], s.dataset[i].task,
                        s.cfg.pcm_weights, idf, *embedder, ratings);
        json row = pcm_to_json(b);
        row["id"] = s.dataset[i].id;
        out.push_back(std::move(row));
    }
    write_json_atomic(out_path, out);
    return 0;
}

// Comma-separated code lists from the command line replace config values.
void apply_overrides(CampaignConfig& cfg, const std::string& strategies,
                     const std::string& targets, double rate, std::uint64_t seed,
                     bool seed_set, double fraction, const std::string& models) {
    if (!strategies.empty()) {
        cfg.strategies.clear();
        for (const auto& code : split_on(strategies, ',')) {
            auto s = strategy_from_code(trim(code));
            if (!s) throw ConfigError("unknown strategy code: " + code);
            cfg.strategies.push_back(*s);
        }
    }
    if (!targets.empty()) {
        cfg.targets.clear();
        for (const auto& code : split_on(targets, ',')) {
            auto t = PerturbationTarget::from_code(trim(code));
            if (!t) throw ConfigError("unknown target code: " + code);
            cfg.targets.push_back(*t);
        }
    }
    if (rate > 0.0) cfg.rate = rate;
    if (seed_set) cfg.base_seed = seed;
    if (fraction > 0.0) cfg.ppl_fraction = fraction;
    if (!models.empty()) {
        cfg.target_backends.clear();
        for (const auto& m : split_on(models, ',')) cfg.target_backends.push_back(trim(m));
    }
    cfg.validate();
}

void apply_weight_overrides(CampaignConfig& cfg, const std::string& weights) {
    if (weights.empty()) return;
    for (const auto& pair : split_on(weights, ',')) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) throw ConfigError("weights expect key=value pairs");
        const std::string key = trim(pair.substr(0, eq));
        const double value = std::stod(pair.substr(eq + 1));
        if (key == "lexical") cfg.pcm_weights.lexical = value;
        else if (key == "syntactic") cfg.pcm_weights.syntactic = value;
        else if (key == "semantic") cfg.pcm_weights.semantic = value;
        else if (key == "structural") cfg.pcm_weights.structural = value;
        else if (key == "task") cfg.pcm_weights.task = value;
        else throw ConfigError("unknown weight key: " + key);
    }
    cfg.pcm_weights.validate();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt dissection, perturbation and robustness evaluation"};
    app.require_subcommand(1);

    std::string in_path, out_path, config_path, output_dir, rundir;
    std::string strategies, targets, models, weights;
    double rate = 0.0, fraction = 0.0;
    std::uint64_t seed = 0;

    auto add_io = [&](CLI::App* sub) {
        sub->add_option("in", in_path, "input file")->required();
        sub->add_option("out", out_path, "output file")->required();
        sub->add_option("--config", config_path, "campaign config file")->required();
    };
    add_io(app.add_subcommand("dissect", "split prompts into labeled sentence components"));
    auto* perturb = app.add_subcommand("perturb", "emit the perturbation candidate grid");
    add_io(perturb);
    perturb->add_option("--strategies", strategies, "comma-separated strategy codes");
    perturb->add_option("--targets", targets, "comma-separated target codes");
    perturb->add_option("--rate", rate, "perturbation rate in (0,1]");
    auto* seed_opt = perturb->add_option("--seed", seed, "base seed override");
    auto* pplscore = app.add_subcommand("pplscore", "rank candidates by perplexity ratio");
    add_io(pplscore);
    pplscore->add_option("--fraction", fraction, "retained fraction in (0,1]");
    auto* evaluate = app.add_subcommand("evaluate", "judge attack success per candidate");
    add_io(evaluate);
    evaluate->add_option("--models", models, "comma-separated target backend names");
    auto* pcm = app.add_subcommand("pcm", "compute prompt complexity breakdowns");
    add_io(pcm);
    pcm->add_option("--weights", weights, "comma-separated key=value weight overrides");
    auto* campaign = app.add_subcommand("campaign", "run the full batch campaign");
    campaign->add_option("--config", config_path, "campaign config file")->required();
    campaign->add_option("--output-dir", output_dir, "override the output directory");
    auto* report = app.add_subcommand("report", "rebuild reports from a campaign directory");
    report->add_option("rundir", rundir, "campaign output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "campaign") {
            CampaignConfig cfg = CampaignConfig::from_file(config_path);
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            const CampaignReport rep = run_campaign(cfg);
            std::cout << "dataset=" << rep.dataset_name << " prompts=" << rep.prompts_total
                      << " failed=" << rep.prompts_failed << " cells=" << rep.cells.size()
                      << " hash=" << rep.config_hash << "\n";
            return 0;
        }
        if (command == "report") {
            CampaignConfig cfg =
                CampaignConfig::from_file((std::filesystem::path(rundir) / "config.json").string());
            const CampaignReport rep = rebuild_report(cfg);
            emit_reports(rep, cfg.output_dir);
            std::cout << "dataset=" << rep.dataset_name << " cells=" << rep.cells.size()
                      << " hash=" << rep.config_hash << "\n";
            return 0;
        }

        const bool takes_dataset =
            command == "dissect" || command == "perturb" || command == "pcm";
        Session s = open_session(config_path, takes_dataset ? in_path : "");
        apply_overrides(s.cfg, strategies, targets, rate, seed, seed_opt->count() > 0, fraction,
                        models);
        apply_weight_overrides(s.cfg, weights);
        if (command == "dissect") return cmd_dissect(s, out_path);
        if (command == "perturb") return cmd_perturb(s, out_path);
        if (command == "pplscore") return cmd_pplscore(s, in_path, out_path);
        if (command == "evaluate") return cmd_evaluate(s, in_path, out_path);
        if (command == "pcm") return cmd_pcm(s, out_path);
        throw ConfigError("unknown command: " + command);
    } catch (const FailureBudgetExceededError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ProviderError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
