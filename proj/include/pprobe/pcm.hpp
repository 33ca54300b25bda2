#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pprobe/core.hpp"
#include "pprobe/providers.hpp"

namespace pprobe {

// Weights of the five complexity terms. All non-negative, at least one
// positive; equal weights by default.
struct PcmWeights {
    double lexical = 0.2;
    double syntactic = 0.2;
    double semantic = 0.2;
    double structural = 0.2;
    double task = 0.2;

    void validate() const;  // throws ConfigError
};

// Smoothed inverse document frequencies over a fixed corpus:
// idf(t) = ln((1+N)/(1+df(t))) + 1, with df = 0 for unseen tokens.
class IdfTable {
  public:
    static IdfTable build(const std::vector<std::string>& corpus);  // EmptyCorpusError

    double idf(std::string_view token) const;  // token already normalized
    double default_idf() const;                // unseen-token value
    std::size_t doc_count() const { return docs_; }

  private:
    std::map<std::string, double> idf_;
    std::size_t docs_ = 0;
};

// Mean idf of the prompt's normalized tokens.
double lexical_complexity(const std::string& text, const IdfTable& idf);

using DepthFn = std::function<double(const std::string&)>;

// Proxy for parse-tree depth: 1 + subordination markers + max bracket
// nesting + commas (capped at 3). Pluggable so a real parser can replace it.
double default_sentence_depth(const std::string& sentence);

// Mean sentence depth over the prompt's sentences.
double syntactic_complexity(const std::string& text, const DepthFn& depth = default_sentence_depth);

// Mean pairwise cosine dispersion, 2/(|S|(|S|-1)) * sum(1 - cos), over
// sentence embeddings. A single-sentence prompt scores 0; `degenerate`
// reports that case when non-null. Each distinct sentence is embedded once.
double semantic_complexity(const std::vector<std::string>& sentences, Provider& embedder,
                           bool* degenerate = nullptr);

// k * ln(|p|/k + 1) with k = number of distinct components present and
// |p| = token count of the untagged prompt.
double structural_complexity(const DissectedPrompt& d);

struct TaskRatings {
    double classification = 3.0;
    double translation = 3.0;
    double code_generation = 5.0;

    double of(TaskKind t) const;
    // Applies overrides by task name; values outside [1, 5] throw OutOfRangeError.
    static TaskRatings with_overrides(const std::map<std::string, double>& overrides);
};

double task_complexity(TaskKind task, const TaskRatings& ratings = {});

struct PcmBreakdown {
    double lexical = 0.0;
    double syntactic = 0.0;
    double semantic = 0.0;
    double structural = 0.0;
    double task = 0.0;
    double total = 0.0;
    bool semantic_degenerate = false;  // single-sentence prompt
};

// The full weighted metric. Sentence-level terms reuse the dissection
// splitter on the plain text; the structural term reads the span labels.
PcmBreakdown compute_pcm(const std::string& text, const DissectedPrompt& d, TaskKind task,
                         const PcmWeights& weights, const IdfTable& idf, Provider& embedder,
                         const TaskRatings& ratings = {},
                         const DepthFn& depth = default_sentence_depth);

}  // namespace pprobe
