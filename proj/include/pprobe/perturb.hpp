#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "pprobe/core.hpp"
#include "pprobe/providers.hpp"

namespace pprobe {

// Characters available to the insertion strategy.
inline constexpr std::string_view kSpecialChars = "#$%&@!";

// Default fraction of the token population a token-level strategy touches.
inline constexpr double kDefaultPerturbRate = 0.10;

// Fraction -> position count: round half up, at least one position.
std::size_t perturb_count(double rate, std::size_t population);

struct PerturbationSpec {
    PerturbationTarget target;
    Strategy strategy = Strategy::SCI;
    double rate = kDefaultPerturbRate;
    std::uint64_t seed = 0;
};

struct PerturbedCandidate {
    std::string source_id;
    std::string id;  // "<source>/<target>/<strategy>", the tie-break key
    PerturbationSpec spec;
    std::string text;         // mutated prompt, tags stripped
    std::string tagged_text;  // mutated prompt with component tags
    std::optional<double> ppl;
    std::optional<double> ppl_ratio;
    bool retained = false;  // set by the perplexity filter
    std::vector<std::string> flags;
};

class SynonymLexicon {
  public:
    static SynonymLexicon from_file(const std::string& path);

    // Entries are keyed by normalized token. Lists are non-empty and never
    // contain the key itself; from_file enforces both.
    void add(const std::string& word, std::vector<std::string> synonyms);
    const std::vector<std::string>* lookup(std::string_view normalized_token) const;
    std::size_t size() const { return entries_.size(); }

  private:
    std::map<std::string, std::vector<std::string>> entries_;
};

class Stopwords {
  public:
    static Stopwords from_file(const std::string& path);
    void add(const std::string& word) { words_.insert(word); }
    bool contains(std::string_view normalized_token) const;
    std::size_t size() const { return words_.size(); }

  private:
    std::unordered_set<std::string> words_;
};

// ---- the five strategies ----
// Token-level operators take one text; candidate generation applies them
// jointly across all spans of a component through the same machinery.

// Inserts one special character into max(1, round(rate*T)) tokens, chosen
// by stratified sampling so insertions spread across the text. Offsets are
// intra-token (never before the first character).
std::string insert_special_chars(const std::string& text, double rate, std::uint64_t seed);

// Deletes max(1, round(rate*T)) tokens, never all of them; survivors are
// re-joined with single spaces and the trailing sentence delimiter survives.
std::string delete_words(const std::string& text, double rate, std::uint64_t seed);

struct SynonymOutcome {
    std::string text;
    bool no_eligible = false;  // lexicon had no entry for any token
};

// Replaces max(1, round(rate*E)) of the E lexicon-eligible tokens, keeping
// edge punctuation and the original capitalization shape.
SynonymOutcome replace_synonyms(const std::string& text, double rate,
                                const SynonymLexicon& lexicon, std::uint64_t seed);

struct RewriteOutcome {
    std::vector<std::string> sentences;
    std::size_t rewritten_index = 0;
    bool identical_paraphrase = false;  // provider echoed the original twice
};

std::string paraphrase_instruction();

// Rewrites one uniformly chosen sentence via the paraphrase provider. An
// echo triggers one retry; a second echo keeps the original and flags it.
RewriteOutcome rewrite_sentence(const std::vector<std::string>& sentences,
                                Provider& paraphraser, std::uint64_t seed);

// Removes a component: spans labeled only `label` disappear, co-labeled
// spans lose the label but keep their text. Throws ComponentAbsentError /
// WouldEmptyPromptError per the preconditions.
DissectedPrompt delete_component(const DissectedPrompt& d, ComponentLabel label);

struct CandidateBatch {
    std::vector<PerturbedCandidate> candidates;
    std::vector<std::string> notices;  // per-pair skips, soft outcomes
};

// Full target x strategy grid over one dissected prompt. COD x CRT is
// invalid and silently absent; unsatisfiable pairs are skipped with a
// notice. Every candidate seed derives from (base_seed, source_id, target,
// strategy) alone, so regeneration is reproducible pair by pair.
CandidateBatch generate_candidates(const DissectedPrompt& d, const std::string& source_id,
                                   const std::vector<PerturbationTarget>& targets,
                                   const std::vector<Strategy>& strategies,
                                   std::uint64_t base_seed, const SynonymLexicon& lexicon,
                                   const Stopwords& stopwords, Provider* paraphraser,
                                   double rate = kDefaultPerturbRate);

std::uint64_t candidate_seed(std::uint64_t base_seed, const std::string& source_id,
                             const PerturbationTarget& target, Strategy strategy);

}  // namespace pprobe
