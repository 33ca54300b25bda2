#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pprobe/providers.hpp"

namespace pprobe {

// BLEU score below which a translation counts as successfully attacked.
inline constexpr double kBleuSuccessThreshold = 20.0;

// ---- success predicates (true = the perturbation broke the model) ----

// Classification: the gold answer no longer appears in the output under
// case folding, whitespace collapsing and word-boundary matching.
bool success_classification(const std::string& output, const std::string& gold);

// Smoothed corpus-style BLEU for one sentence pair, 0..100. Modified n-gram
// precisions up to max_n with +1 smoothing on zero counts of orders >= 2,
// geometric mean, brevity penalty exp(min(0, 1 - r/c)). Tokenization folds
// case and separates punctuation from words.
double bleu(const std::string& candidate, const std::string& reference, int max_n = 4);
std::vector<std::string> bleu_tokenize(const std::string& text);

bool bleu_indicates_success(double score);  // score < threshold, strict
bool success_translation(const std::string& output, const std::string& reference);

std::string judge_instruction();
std::string judge_user_text(const std::string& task_description, const std::string& output);

enum class JudgeVerdict { Correct, Incorrect, Indeterminate };

// Asks the judge once, retries once if the verdict token is missing.
JudgeVerdict judge_code(const std::string& output, const std::string& task_description,
                        Provider& judge);

// nullopt = judge indeterminate; the caller excludes the record from totals.
std::optional<bool> success_codegen(const std::string& output,
                                    const std::string& task_description, Provider& judge);

// ---- aggregation ----

struct EvalRecord {
    std::string source_id;
    std::string cand_id;
    std::string model;
    std::string dataset;
    std::string component;  // target code: ROL..EXA, CRT
    std::string strategy;   // SCI..COD
    std::string ppl_group;  // "w" (filtered set) or "wo" (all candidates)
    bool in_filtered = false;
    std::string baseline_output;
    std::string output;
    bool success = false;
    bool indeterminate = false;
    std::string evidence;
};

struct GroupBy {
    bool model = true;
    bool dataset = true;
    bool component = true;
    bool strategy = true;
    bool ppl = true;
};

struct AsrCell {
    // "-" marks a dimension the grouping ignores.
    std::string model = "-";
    std::string dataset = "-";
    std::string component = "-";
    std::string strategy = "-";
    std::string ppl_group = "-";
    std::size_t n_success = 0;
    std::size_t n_total = 0;
    double asr = 0.0;  // 100 * n_success / n_total
};

// Groups records by the selected dimensions and computes the attack success
// rate per cell. Indeterminate records never enter n_total. Cells come back
// sorted by their key tuple.
std::vector<AsrCell> asr(const std::vector<EvalRecord>& records, const GroupBy& keys = {});

}  // namespace pprobe
