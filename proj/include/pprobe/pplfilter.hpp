#pragma once

#include <string>
#include <vector>

#include "pprobe/perturb.hpp"
#include "pprobe/providers.hpp"

namespace pprobe {

// Default fraction of candidates the filter keeps per source prompt.
inline constexpr double kDefaultRetainFraction = 0.20;

// exp of the mean negative token logprob. Throws EmptyTextError on empty
// input and NoLogprobsError when the provider returns no tokens.
double perplexity(const std::string& text, Provider& provider);

struct PplScore {
    double candidate_ppl = 0.0;
    double baseline_ppl = 0.0;
    double ratio = 0.0;  // candidate / baseline
};

PplScore make_ppl_score(double candidate_ppl, double baseline_ppl);

struct ScoredBatch {
    std::vector<PerturbedCandidate> scored;  // ppl and ppl_ratio set
    std::vector<std::string> notices;        // candidates dropped on provider failure
    double baseline_ppl = 0.0;
};

// Scores the clean text once, then every candidate against it. A provider
// failure on one candidate drops that candidate with a notice instead of
// aborting the batch.
ScoredBatch score_candidates(std::vector<PerturbedCandidate> candidates,
                             const std::string& baseline_text, Provider& provider);

// Keeps the max(1, ceil(fraction*N)) highest-ratio candidates, ties broken
// by candidate id ascending; the result stays in that sort order and is
// marked `retained`. Throws UnscoredCandidateError if any input candidate
// lacks a ratio.
std::vector<PerturbedCandidate> filter_top(const std::vector<PerturbedCandidate>& scored,
                                           double fraction = kDefaultRetainFraction);

}  // namespace pprobe
