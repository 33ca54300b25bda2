#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pprobe/core.hpp"
#include "pprobe/eval.hpp"
#include "pprobe/pcm.hpp"
#include "pprobe/perturb.hpp"
#include "pprobe/providers.hpp"

namespace pprobe {

// One configured backend: a scripted mock or an HTTP endpoint.
struct BackendSpec {
    std::string name;
    std::string type;    // "mock" | "http"
    std::string model;
    std::string script;  // mock: path to the script file
    HttpBackendConfig http;
};

struct CampaignConfig {
    std::string dataset;
    std::string output_dir;

    std::map<std::string, BackendSpec> backends;
    std::vector<std::string> target_backends;
    std::string classifier_backend;
    std::string paraphrase_backend;
    std::string ppl_backend;
    std::string judge_backend;
    std::string embed_backend;

    std::vector<PerturbationTarget> targets;
    std::vector<Strategy> strategies;
    double rate = kDefaultPerturbRate;
    double ppl_fraction = 0.20;
    bool evaluate_unfiltered = true;

    std::uint64_t base_seed = 0;  // required in the file: no silent default
    PcmWeights pcm_weights;
    std::map<std::string, double> task_ratings;

    std::string lexicon_path;
    std::string stopwords_path;

    int workers = 1;
    int failure_budget = 3;  // prompts allowed to fail on provider errors

    static CampaignConfig from_file(const std::string& path);  // ConfigError
    void validate() const;                                     // ConfigError
    std::string canonical_json() const;
    std::string config_hash() const;
};

// Parses the line-delimited dataset. Errors carry the 1-based line number;
// duplicate ids and malformed pre-tagged prompts are rejected at load time.
std::vector<PromptRecord> load_dataset(const std::string& path);

std::unique_ptr<Provider> make_provider(const BackendSpec& spec);

struct PromptPcm {
    std::string id;
    PcmBreakdown breakdown;
};

struct CampaignReport {
    std::string dataset_name;
    std::string config_hash;
    std::uint64_t base_seed = 0;
    std::vector<AsrCell> cells;    // full grouping, sorted
    std::vector<PromptPcm> pcm;    // per prompt, dataset order
    std::vector<std::string> warnings;
    std::vector<std::string> notices;
    std::size_t prompts_total = 0;
    std::size_t prompts_failed = 0;
};

// Runs dissect -> perturb -> ppl-filter -> evaluate -> pcm -> aggregate,
// persisting every stage under output_dir. Stages with a valid persisted
// output are reloaded, not recomputed, so an interrupted campaign resumes
// without repeating provider calls. Per-prompt failures are isolated until
// failure_budget is exhausted (FailureBudgetExceededError).
CampaignReport run_campaign(const CampaignConfig& cfg);

// Same, with caller-owned providers keyed by backend name. Tests use this to
// observe call logs; the config-only overload builds providers itself.
CampaignReport run_campaign(const CampaignConfig& cfg,
                            const std::map<std::string, std::shared_ptr<Provider>>& providers);

// Rebuilds the aggregate report purely from persisted stage files.
CampaignReport rebuild_report(const CampaignConfig& cfg);

// Writes report.json, the flat ASR table, per-(model, ppl) heatmap matrices
// and the PCM summary under <output_dir>/report.
void emit_reports(const CampaignReport& report, const std::string& output_dir);

}  // namespace pprobe
