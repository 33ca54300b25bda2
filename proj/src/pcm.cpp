#include "pprobe/pcm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pprobe/errors.hpp"
#include "pprobe/text.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

void PcmWeights::validate() const {
    const double ws[] = {lexical, syntactic, semantic, structural, task};
    double sum = 0.0;
    for (double w : ws) {
        if (w < 0.0) throw ConfigError("complexity weights must be non-negative");
        sum += w;
    }
    if (sum <= 0.0) throw ConfigError("at least one complexity weight must be positive");
}

IdfTable IdfTable::build(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw EmptyCorpusError("idf table needs a non-empty corpus");

    std::map<std::string, std::size_t> df;
    for (const auto& doc : corpus) {
        std::set<std::string> seen;
        for (const auto& tok : tokenize(doc)) {
            const std::string norm = normalize_token(tok);
            if (!norm.empty()) seen.insert(norm);
        }
        for (const auto& t : seen) ++df[t];
    }

    IdfTable table;
    table.docs_ = corpus.size();
    const double n1 = 1.0 + static_cast<double>(corpus.size());
    for (const auto& [token, count] : df) {
        table.idf_[token] = std::log(n1 / (1.0 + static_cast<double>(count))) + 1.0;
    }
    return table;
}

double IdfTable::default_idf() const {
    return std::log(1.0 + static_cast<double>(docs_)) + 1.0;
}

double IdfTable::idf(std::string_view token) const {
    auto it = idf_.find(std::string(token));
    return it == idf_.end() ? default_idf() : it->second;
}

double lexical_complexity(const std::string& text, const IdfTable& idf) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& tok : tokenize(text)) {
        const std::string norm = normalize_token(tok);
        if (norm.empty()) continue;  // bare punctuation carries no content
        sum += idf.idf(norm);
        ++count;
    }
    if (count == 0) throw EmptyTextError("no scorable tokens for lexical complexity");
    return sum / static_cast<double>(count);
}

double default_sentence_depth(const std::string& sentence) {
    static const char* kMarkers[] = {"that", "which", "who",   "because", "although",
                                     "if",   "while", "when",  "since"};
    double depth = 1.0;

    for (const auto& tok : tokenize(sentence)) {
        const std::string norm = normalize_token(tok);
        for (const char* m : kMarkers) {
            if (norm == m) {
                depth += 1.0;
                break;
            }
        }
    }

    int open = 0;
    int max_nesting = 0;
    int commas = 0;
    for (char c : sentence) {
        if (c == '(' || c == '[' || c == '{') {
            ++open;
            max_nesting = std::max(max_nesting, open);
        } else if (c == ')' || c == ']' || c == '}') {
            open = std::max(0, open - 1);
        } else if (c == ',') {
            ++commas;
        }
    }
    return depth + max_nesting + std::min(commas, 3);
}

double syntactic_complexity(const std::string& text, const DepthFn& depth) {
    const auto sentences = split_sentences(text);  // EmptyInputError on blank text
    double sum = 0.0;
    for (const auto& s : sentences) sum += depth(s);
    return sum / static_cast<double>(sentences.size());
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatchError("embedding dimensions differ: " +
                                     std::to_string(a.size()) + " vs " +
                                     std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double semantic_complexity(const std::vector<std::string>& sentences, Provider& embedder,
                           bool* degenerate) {
    if (sentences.empty()) throw EmptyInputError("no sentences to embed");
    if (degenerate) *degenerate = sentences.size() == 1;
    if (sentences.size() == 1) return 0.0;

    // Embed each distinct sentence once; duplicated sentences share a vector.
    std::vector<std::string> unique;
    std::map<std::string, std::size_t> index;
    for (const auto& s : sentences) {
        if (index.emplace(s, unique.size()).second) unique.push_back(s);
    }
    const auto vectors = embedder.embed(unique);
    if (vectors.size() != unique.size()) {
        throw DimensionMismatchError("embedding count does not match sentence count");
    }

    const std::size_t n = sentences.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::size_t a = index[sentences[i]];
            const std::size_t b = index[sentences[j]];
            // A pair of identical mentions is parallel by definition; going
            // through sqrt would leave rounding residue in an exact zero.
            if (a == b) continue;
            sum += 1.0 - cosine(vectors[a], vectors[b]);
        }
    }
    return 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double structural_complexity(const DissectedPrompt& d) {
    LabelSet present;
    for (const auto& span : d.spans) {
        for (auto l : span.labels.to_list()) present.add(l);
    }
    const double k = static_cast<double>(present.size());
    if (k == 0.0) throw UnlabeledSpanError("structural complexity needs labeled spans");
    const double tokens = static_cast<double>(token_count(d.source));
    return k * std::log(tokens / k + 1.0);
}

double TaskRatings::of(TaskKind t) const {
    switch (t) {
        case TaskKind::Classification: return classification;
        case TaskKind::Translation: return translation;
        case TaskKind::CodeGeneration: return code_generation;
    }
    return classification;
}

TaskRatings TaskRatings::with_overrides(const std::map<std::string, double>& overrides) {
    TaskRatings r;
    for (const auto& [name, value] : overrides) {
        if (value < 1.0 || value > 5.0) {
            throw OutOfRangeError("task rating for " + name + " outside [1, 5]: " +
                                  std::to_string(value));
        }
        auto kind = task_from_name(name);
        if (!kind) throw ConfigError("unknown task kind in ratings: " + name);
        switch (*kind) {
            case TaskKind::Classification: r.classification = value; break;
            case TaskKind::Translation: r.translation = value; break;
            case TaskKind::CodeGeneration: r.code_generation = value; break;
        }
    }
    return r;
}

double task_complexity(TaskKind task, const TaskRatings& ratings) {
    return ratings.of(task);
}

PcmBreakdown compute_pcm(const std::string& text, const DissectedPrompt& d, TaskKind task,
                         const PcmWeights& weights, const IdfTable& idf, Provider& embedder,
                         const TaskRatings& ratings, const DepthFn& depth) {
    weights.validate();

    PcmBreakdown out;
    out.lexical = lexical_complexity(text, idf);
    out.syntactic = syntactic_complexity(text, depth);
    out.semantic = semantic_complexity(split_sentences(text), embedder, &out.semantic_degenerate);
    out.structural = structural_complexity(d);
    out.task = task_complexity(task, ratings);
    out.total = weights.lexical * out.lexical + weights.syntactic * out.syntactic +
                weights.semantic * out.semantic + weights.structural * out.structural +
                weights.task * out.task;
    return out;
}

}  // namespace pprobe
