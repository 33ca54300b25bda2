#include "pprobe/pplfilter.hpp"

#include <algorithm>
#include <cmath>

#include "pprobe/errors.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

double perplexity(const std::string& text, Provider& provider) {
    if (trim(text).empty()) {
        throw EmptyTextError("perplexity of empty text is undefined");
    }
    const LogprobResponse lp = provider.token_logprobs(text);
    if (lp.logprobs.empty()) {
        throw NoLogprobsError("provider returned no token logprobs");
    }
    double nll = 0.0;
    for (double v : lp.logprobs) nll -= v;
    return std::exp(nll / static_cast<double>(lp.logprobs.size()));
}

PplScore make_ppl_score(double candidate_ppl, double baseline_ppl) {
    return {candidate_ppl, baseline_ppl, candidate_ppl / baseline_ppl};
}

ScoredBatch score_candidates(std::vector<PerturbedCandidate> candidates,
                             const std::string& baseline_text, Provider& provider) {
    ScoredBatch out;
    out.baseline_ppl = perplexity(baseline_text, provider);

    for (auto& cand : candidates) {
        try {
            const double p = perplexity(cand.text, provider);
            cand.ppl = p;
            cand.ppl_ratio = p / out.baseline_ppl;
            out.scored.push_back(std::move(cand));
        } catch (const ProviderError& e) {
            // One bad candidate must not sink the batch.
            out.notices.push_back("dropped " + cand.id + ": " + e.what());
        }
    }
    return out;
}

std::vector<PerturbedCandidate> filter_top(const std::vector<PerturbedCandidate>& scored,
                                           double fraction) {
    for (const auto& c : scored) {
        if (!c.ppl_ratio) {
            throw UnscoredCandidateError("candidate " + c.id + " has no perplexity ratio");
        }
    }
    if (scored.empty()) return {};

    std::vector<PerturbedCandidate> sorted = scored;
    std::sort(sorted.begin(), sorted.end(),
              [](const PerturbedCandidate& a, const PerturbedCandidate& b) {
                  if (*a.ppl_ratio != *b.ppl_ratio) return *a.ppl_ratio > *b.ppl_ratio;
                  return a.id < b.id;
              });

    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(fraction * static_cast<double>(sorted.size()))));
    sorted.resize(std::min(keep, sorted.size()));
    for (auto& c : sorted) c.retained = true;
    return sorted;
}

}  // namespace pprobe
