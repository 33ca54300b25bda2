#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pprobe/core.hpp"
#include "pprobe/providers.hpp"
#include "pprobe/text.hpp"

namespace pprobe {

// Target sentence plus up to `radius` neighbours on each side, clamped at
// the prompt edges.
struct ContextWindow {
    std::vector<std::string> before;
    std::string target;
    std::vector<std::string> after;
    std::size_t radius = 2;
};

ContextWindow context_window(const std::vector<std::string>& sentences,
                             std::size_t index, std::size_t radius = 2);

// The classification instruction sent with every sentence, and the layout
// of the user message. The [sentence] marker line makes the target
// unambiguous for both the model and scripted matchers.
std::string classification_instruction();
std::string classification_user_text(const ContextWindow& w);

struct ClassifyResult {
    LabelSet labels;
    bool fuzzy_repaired = false;  // label came from whitespace-normalized match
};

// One classification round trip; retries once on an unusable reply, then
// throws UnparseableReplyError. ProviderError passes through untouched.
ClassifyResult classify_sentence(const ContextWindow& w, Provider& provider);

struct DissectionOutcome {
    DissectedPrompt prompt;
    std::vector<std::string> warnings;
};

// Splits, classifies each sentence with context radius `radius`, then makes
// exactly one re-pass over sentences the first pass left unlabeled. A
// sentence unlabeled after the re-pass falls back to Directive and is
// recorded in `warnings`. Sentence text is never altered by classification.
DissectionOutcome dissect(const std::string& prompt, Provider& provider,
                          std::size_t radius = 2);

struct GoldAnnotation {
    std::string id;
    std::vector<LabelSet> labels;  // one set per sentence, index order
};

std::vector<GoldAnnotation> load_gold(const std::string& path);

// Fraction of prompts whose every sentence's predicted label set equals the
// gold set. Throws IdMismatchError / SentenceCountMismatchError when the
// two sides don't line up.
double dissection_accuracy(const std::map<std::string, DissectedPrompt>& predictions,
                           const std::vector<GoldAnnotation>& gold);

}  // namespace pprobe
