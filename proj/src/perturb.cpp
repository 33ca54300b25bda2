#include "pprobe/perturb.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "pprobe/errors.hpp"
#include "pprobe/text.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

std::size_t perturb_count(double rate, std::size_t population) {
    const double raw = rate * static_cast<double>(population);
    const auto rounded = static_cast<std::size_t>(std::floor(raw + 0.5));
    return std::max<std::size_t>(1, rounded);
}

std::uint64_t candidate_seed(std::uint64_t base_seed, const std::string& source_id,
                             const PerturbationTarget& target, Strategy strategy) {
    std::uint64_t h = stable_hash64(std::to_string(base_seed));
    h = stable_hash64(source_id, h);
    h = stable_hash64(target.code(), h);
    h = stable_hash64(strategy_code(strategy), h);
    return h;
}

// ---------------------------------------------------------------------
// Lexicon and stopwords
// ---------------------------------------------------------------------

void SynonymLexicon::add(const std::string& word, std::vector<std::string> synonyms) {
    const std::string key = normalize_token(word);
    if (key.empty()) throw ConfigError("lexicon entry with empty headword");
    if (synonyms.empty()) throw ConfigError("lexicon entry '" + key + "' has no synonyms");
    for (const auto& s : synonyms) {
        if (normalize_token(s) == key) {
            throw ConfigError("lexicon entry '" + key + "' maps to itself");
        }
    }
    entries_[key] = std::move(synonyms);
}

const std::vector<std::string>* SynonymLexicon::lookup(std::string_view normalized_token) const {
    auto it = entries_.find(std::string(normalized_token));
    return it == entries_.end() ? nullptr : &it->second;
}

SynonymLexicon SynonymLexicon::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open synonym lexicon: " + path);
    SynonymLexicon lex;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || line[0] == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("lexicon line lacks a tab separator", line_no);
        }
        std::vector<std::string> syns;
        for (auto& s : split_on(line.substr(tab + 1), ',')) {
            std::string t = trim(s);
            if (!t.empty()) syns.push_back(std::move(t));
        }
        lex.add(trim(line.substr(0, tab)), std::move(syns));
    }
    return lex;
}

bool Stopwords::contains(std::string_view normalized_token) const {
    return words_.count(std::string(normalized_token)) > 0;
}

Stopwords Stopwords::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open stopword list: " + path);
    Stopwords sw;
    std::string line;
    while (std::getline(in, line)) {
        std::string w = normalize_token(trim(line));
        if (!w.empty() && line[0] != '#') sw.add(w);
    }
    return sw;
}

// ---------------------------------------------------------------------
// Token-level machinery, shared by the string ops and the component paths
// ---------------------------------------------------------------------

namespace {

// One token inside one of the texts under edit.
struct Slot {
    std::size_t text = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

std::vector<Slot> all_slots(const std::vector<std::string>& texts) {
    std::vector<Slot> out;
    for (std::size_t t = 0; t < texts.size(); ++t) {
        for (const auto& r : token_ranges(texts[t])) {
            out.push_back({t, r.begin, r.end});
        }
    }
    return out;
}

std::string slot_text(const std::vector<std::string>& texts, const Slot& s) {
    return texts[s.text].substr(s.begin, s.end - s.begin);
}

bool is_delim_char(char c) { return c == '.' || c == '?' || c == '!'; }

std::string trailing_delims(const std::string& s) {
    std::size_t e = s.size();
    while (e > 0 && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::size_t b = e;
    while (b > 0 && is_delim_char(s[b - 1])) --b;
    return s.substr(b, e - b);
}

// Inserts one special character into each of max(1, round(rate*T)) tokens of
// the population. Strata of width T/m over the population sequence keep the
// insertions spread out instead of clumping at one end.
void apply_sci(std::vector<std::string>& texts, const std::vector<Slot>& population,
               double rate, Rng& rng) {
    const std::size_t T = population.size();
    const std::size_t m = std::min(perturb_count(rate, T), T);

    struct Edit {
        Slot slot;
        std::size_t offset;
        char ch;
    };
    std::vector<Edit> edits;
    for (std::size_t j = 0; j < m; ++j) {
        const std::size_t lo = j * T / m;
        const std::size_t hi = (j + 1) * T / m;
        const Slot& slot = population[lo + rng.bounded(hi - lo)];
        const char ch = kSpecialChars[rng.bounded(kSpecialChars.size())];
        const std::size_t len = slot.end - slot.begin;
        const std::size_t offset = (len <= 1) ? 1 : 1 + rng.bounded(len - 1);
        edits.push_back({slot, offset, ch});
    }
    std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) {
        if (a.slot.text != b.slot.text) return a.slot.text > b.slot.text;
        return a.slot.begin > b.slot.begin;
    });
    for (const auto& e : edits) {
        texts[e.slot.text].insert(e.slot.begin + e.offset, 1, e.ch);
    }
}

// Deletes min(max(1, round(rate*|pop|)), max_delete) population tokens.
// Affected texts are re-joined with single spaces; a text that loses its
// final token keeps its original sentence delimiter.
void apply_wod(std::vector<std::string>& texts, const std::vector<Slot>& population,
               double rate, std::size_t max_delete, Rng& rng) {
    const std::size_t m = std::min(perturb_count(rate, population.size()), max_delete);
    const std::vector<std::size_t> picks = rng.sample(population.size(), m);

    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> removed(texts.size());
    for (std::size_t p : picks) {
        const Slot& s = population[p];
        removed[s.text].push_back({s.begin, s.end});
    }
    for (std::size_t t = 0; t < texts.size(); ++t) {
        if (removed[t].empty()) continue;
        const std::string& original = texts[t];
        std::string rebuilt;
        bool last_token_dropped = false;
        const auto ranges = token_ranges(original);
        for (std::size_t k = 0; k < ranges.size(); ++k) {
            const bool drop = std::any_of(removed[t].begin(), removed[t].end(),
                                          [&](const auto& r) { return r.first == ranges[k].begin; });
            if (drop) {
                last_token_dropped = (k + 1 == ranges.size());
                continue;
            }
            if (!rebuilt.empty()) rebuilt.push_back(' ');
            rebuilt += original.substr(ranges[k].begin, ranges[k].end - ranges[k].begin);
        }
        if (last_token_dropped && !rebuilt.empty() && !is_delim_char(rebuilt.back())) {
            rebuilt += trailing_delims(original);
        }
        texts[t] = std::move(rebuilt);
    }
}

std::string reshape_case(const std::string& original_core, std::string replacement) {
    const auto alpha_count = std::count_if(original_core.begin(), original_core.end(), [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) != 0;
    });
    const bool all_upper =
        alpha_count > 1 && std::all_of(original_core.begin(), original_core.end(), [](char c) {
            return !std::isalpha(static_cast<unsigned char>(c)) ||
                   std::isupper(static_cast<unsigned char>(c));
        });
    if (all_upper) {
        for (char& c : replacement) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return replacement;
    }
    if (!original_core.empty() && std::isupper(static_cast<unsigned char>(original_core.front())) &&
        !replacement.empty()) {
        replacement.front() =
            static_cast<char>(std::toupper(static_cast<unsigned char>(replacement.front())));
    }
    return replacement;
}

// Swaps lexicon synonyms into min(max(1, round(rate*E)), E) of the E
// eligible population tokens. Returns true when nothing was eligible.
bool apply_syr(std::vector<std::string>& texts, const std::vector<Slot>& population,
               double rate, const SynonymLexicon& lexicon, Rng& rng) {
    std::vector<Slot> eligible;
    for (const auto& s : population) {
        if (lexicon.lookup(normalize_token(slot_text(texts, s)))) eligible.push_back(s);
    }
    if (eligible.empty()) return true;

    const std::size_t m = std::min(perturb_count(rate, eligible.size()), eligible.size());
    const std::vector<std::size_t> picks = rng.sample(eligible.size(), m);

    struct Edit {
        Slot slot;
        std::string replacement;
    };
    std::vector<Edit> edits;
    for (std::size_t p : picks) {
        const Slot& slot = eligible[p];
        const std::string token = slot_text(texts, slot);

        std::size_t core_b = 0, core_e = token.size();
        while (core_b < core_e && is_ascii_punct(token[core_b])) ++core_b;
        while (core_e > core_b && is_ascii_punct(token[core_e - 1])) --core_e;
        const std::string core = token.substr(core_b, core_e - core_b);

        const std::vector<std::string>& options = *lexicon.lookup(normalize_token(token));
        std::string syn = reshape_case(core, options[rng.bounded(options.size())]);
        edits.push_back({slot, token.substr(0, core_b) + syn + token.substr(core_e)});
    }
    std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) {
        if (a.slot.text != b.slot.text) return a.slot.text > b.slot.text;
        return a.slot.begin > b.slot.begin;
    });
    for (const auto& e : edits) {
        texts[e.slot.text].replace(e.slot.begin, e.slot.end - e.slot.begin, e.replacement);
    }
    return false;
}

}  // namespace

// ---------------------------------------------------------------------
// Public string-level operators
// ---------------------------------------------------------------------

std::string insert_special_chars(const std::string& text, double rate, std::uint64_t seed) {
    std::vector<std::string> texts{text};
    const auto population = all_slots(texts);
    if (population.empty()) {
        throw EmptyTextError("insertion needs at least one token");
    }
    Rng rng(seed);
    apply_sci(texts, population, rate, rng);
    return texts[0];
}

std::string delete_words(const std::string& text, double rate, std::uint64_t seed) {
    std::vector<std::string> texts{text};
    const auto population = all_slots(texts);
    if (population.size() < 2) {
        throw TooShortError("word deletion needs at least two tokens");
    }
    Rng rng(seed);
    apply_wod(texts, population, rate, population.size() - 1, rng);
    return texts[0];
}

SynonymOutcome replace_synonyms(const std::string& text, double rate,
                                const SynonymLexicon& lexicon, std::uint64_t seed) {
    std::vector<std::string> texts{text};
    const auto population = all_slots(texts);
    if (population.empty()) {
        throw EmptyTextError("synonym replacement needs at least one token");
    }
    Rng rng(seed);
    const bool none = apply_syr(texts, population, rate, lexicon, rng);
    return {texts[0], none};
}

std::string paraphrase_instruction() {
    return "Rewrite the given sentence so that it keeps exactly the same meaning but uses "
           "different wording. Reply with only the rewritten sentence, nothing else.";
}

RewriteOutcome rewrite_sentence(const std::vector<std::string>& sentences,
                                Provider& paraphraser, std::uint64_t seed) {
    if (sentences.empty()) throw EmptyInputError("nothing to rewrite");
    Rng rng(seed);
    const std::size_t idx = rng.bounded(sentences.size());

    ChatRequest req;
    req.instruction = paraphrase_instruction();
    req.user = sentences[idx];

    RewriteOutcome out;
    out.sentences = sentences;
    out.rewritten_index = idx;

    const std::string original_norm = collapse_whitespace(sentences[idx]);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string reply = trim(paraphraser.chat(req));
        if (!reply.empty() && collapse_whitespace(reply) != original_norm) {
            out.sentences[idx] = reply;
            return out;
        }
    }
    out.identical_paraphrase = true;  // keep the original, flag the echo
    return out;
}

DissectedPrompt delete_component(const DissectedPrompt& d, ComponentLabel label) {
    bool present = false;
    bool survivor = false;
    for (const auto& span : d.spans) {
        if (span.labels.contains(label)) present = true;
        else survivor = true;
    }
    if (!present) {
        throw ComponentAbsentError("no span carries " + std::string(label_code(label)));
    }
    if (!survivor) {
        throw WouldEmptyPromptError("every span carries " + std::string(label_code(label)) +
                                    "; deletion would empty the prompt");
    }

    DissectedPrompt out;
    for (const auto& span : d.spans) {
        if (span.labels.contains(label) && span.labels.size() == 1) continue;
        SentenceSpan kept = span;
        kept.labels.remove(label);
        kept.index = out.spans.size();
        out.spans.push_back(std::move(kept));
    }
    out.source = plain_text(out);
    return out;
}

// ---------------------------------------------------------------------
// Candidate generation
// ---------------------------------------------------------------------

namespace {

// Applies a token strategy to the texts of the selected spans and writes the
// candidate. Spans emptied by deletion vanish from the result.
DissectedPrompt rebuild(const DissectedPrompt& d, const std::vector<std::size_t>& span_idx,
                        const std::vector<std::string>& mutated) {
    DissectedPrompt out;
    for (std::size_t i = 0; i < d.spans.size(); ++i) {
        std::string text = d.spans[i].text;
        const auto pos = std::find(span_idx.begin(), span_idx.end(), i);
        if (pos != span_idx.end()) {
            text = mutated[static_cast<std::size_t>(pos - span_idx.begin())];
        }
        if (trim(text).empty()) continue;
        out.spans.push_back({out.spans.size(), std::move(text), d.spans[i].labels});
    }
    out.source = plain_text(out);
    return out;
}

std::vector<Slot> function_word_slots(const std::vector<std::string>& texts,
                                      const Stopwords& stopwords) {
    std::vector<Slot> out;
    for (const auto& s : all_slots(texts)) {
        if (stopwords.contains(normalize_token(slot_text(texts, s)))) out.push_back(s);
    }
    return out;
}

}  // namespace

CandidateBatch generate_candidates(const DissectedPrompt& d, const std::string& source_id,
                                   const std::vector<PerturbationTarget>& targets,
                                   const std::vector<Strategy>& strategies,
                                   std::uint64_t base_seed, const SynonymLexicon& lexicon,
                                   const Stopwords& stopwords, Provider* paraphraser,
                                   double rate) {
    for (const auto& span : d.spans) {
        if (span.labels.empty()) {
            throw UnlabeledSpanError("span " + std::to_string(span.index) +
                                     " is unlabeled; dissect before perturbing");
        }
    }

    CandidateBatch batch;
    auto skip = [&](const PerturbationTarget& t, Strategy s, const std::string& why) {
        batch.notices.push_back("skipped " + source_id + "/" + t.code() + "/" +
                                std::string(strategy_code(s)) + ": " + why);
    };

    for (const auto& target : targets) {
        // Component targets operate on the spans carrying the label.
        std::vector<std::size_t> span_idx;
        if (!target.is_control()) {
            for (std::size_t i = 0; i < d.spans.size(); ++i) {
                if (d.spans[i].labels.contains(*target.label)) span_idx.push_back(i);
            }
        }

        for (const auto strategy : strategies) {
            if (target.is_control() && strategy == Strategy::COD) continue;  // undefined cell
            if (!target.is_control() && span_idx.empty()) {
                skip(target, strategy, "component absent");
                continue;
            }
            if (strategy == Strategy::SER && !paraphraser) {
                skip(target, strategy, "no paraphrase backend");
                continue;
            }

            const std::uint64_t seed = candidate_seed(base_seed, source_id, target, strategy);
            PerturbedCandidate cand;
            cand.source_id = source_id;
            cand.id = source_id + "/" + target.code() + "/" + std::string(strategy_code(strategy));
            cand.spec = {target, strategy, rate, seed};

            try {
                DissectedPrompt mutated;
                Rng rng(seed);

                if (target.is_control()) {
                    // Control: one uniformly chosen sentence, function words only,
                    // one uniformly chosen token when the sentence has none.
                    const std::size_t chosen = rng.bounded(d.spans.size());
                    std::vector<std::string> texts{d.spans[chosen].text};
                    std::vector<Slot> population = function_word_slots(texts, stopwords);
                    const std::size_t span_tokens = all_slots(texts).size();
                    if (population.empty() && strategy != Strategy::SER) {
                        const auto slots = all_slots(texts);
                        population.push_back(slots[rng.bounded(slots.size())]);
                        cand.flags.push_back("ControlFallbackToken");
                    }
                    switch (strategy) {
                        case Strategy::SCI:
                            apply_sci(texts, population, rate, rng);
                            break;
                        case Strategy::WOD: {
                            if (span_tokens < 2) throw TooShortError("control sentence too short");
                            apply_wod(texts, population, rate,
                                      std::min(population.size(), span_tokens - 1), rng);
                            break;
                        }
                        case Strategy::SYR:
                            if (apply_syr(texts, population, rate, lexicon, rng)) {
                                cand.flags.push_back("NoEligibleTokens");
                            }
                            break;
                        case Strategy::SER: {
                            const RewriteOutcome r = rewrite_sentence(texts, *paraphraser, seed);
                            texts = r.sentences;
                            if (r.identical_paraphrase) {
                                cand.flags.push_back("IdenticalParaphrase");
                            }
                            break;
                        }
                        case Strategy::COD:
                            break;  // unreachable
                    }
                    mutated = rebuild(d, {chosen}, texts);
                } else if (strategy == Strategy::COD) {
                    mutated = delete_component(d, *target.label);
                } else {
                    std::vector<std::string> texts;
                    texts.reserve(span_idx.size());
                    for (std::size_t i : span_idx) texts.push_back(d.spans[i].text);
                    const std::vector<Slot> population = all_slots(texts);

                    switch (strategy) {
                        case Strategy::SCI:
                            if (population.empty()) throw EmptyTextError("component has no tokens");
                            apply_sci(texts, population, rate, rng);
                            break;
                        case Strategy::WOD:
                            if (population.size() < 2) {
                                throw TooShortError("component has fewer than two tokens");
                            }
                            apply_wod(texts, population, rate, population.size() - 1, rng);
                            break;
                        case Strategy::SYR:
                            if (population.empty()) throw EmptyTextError("component has no tokens");
                            if (apply_syr(texts, population, rate, lexicon, rng)) {
                                cand.flags.push_back("NoEligibleTokens");
                            }
                            break;
                        case Strategy::SER: {
                            const RewriteOutcome r = rewrite_sentence(texts, *paraphraser, seed);
                            texts = r.sentences;
                            if (r.identical_paraphrase) {
                                cand.flags.push_back("IdenticalParaphrase");
                            }
                            break;
                        }
                        case Strategy::COD:
                            break;  // handled above
                    }
                    mutated = rebuild(d, span_idx, texts);
                }

                cand.text = plain_text(mutated);
                cand.tagged_text = render_tagged(mutated);
                batch.candidates.push_back(std::move(cand));
            } catch (const EmptyTextError& e) {
                skip(target, strategy, e.what());
            } catch (const TooShortError& e) {
                skip(target, strategy, e.what());
            } catch (const ComponentAbsentError& e) {
                skip(target, strategy, e.what());
            } catch (const WouldEmptyPromptError& e) {
                skip(target, strategy, e.what());
            }
        }
    }
    return batch;
}

}  // namespace pprobe
