#include "pprobe/anatomy.hpp"

#include <fstream>
#include <json.hpp>
#include <optional>

#include "pprobe/errors.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

using nlohmann::json;

ContextWindow context_window(const std::vector<std::string>& sentences, std::size_t index,
                             std::size_t radius) {
    if (index >= sentences.size()) {
        throw IndexOutOfRangeError("sentence index " + std::to_string(index) +
                                   " out of range (have " +
                                   std::to_string(sentences.size()) + ")");
    }
    ContextWindow w;
    w.radius = radius;
    w.target = sentences[index];
    const std::size_t lo = index > radius ? index - radius : 0;
    for (std::size_t i = lo; i < index; ++i) w.before.push_back(sentences[i]);
    const std::size_t hi = std::min(sentences.size(), index + radius + 1);
    for (std::size_t i = index + 1; i < hi; ++i) w.after.push_back(sentences[i]);
    return w;
}

std::string classification_instruction() {
    return
        "You are now an expert in prompt engineering for large language models. "
        "Please classify the given sentence into the five components: Role, Directive, "
        "Additional Information, Output Formatting and Examples. "
        "Role: Also known as a persona, this component can improve the writing style and "
        "tone of the text. Example: As a helpful assistant, answer the following question "
        "concisely. "
        "Directive: The main instruction or question in the prompt. i.e. What are the "
        "benefits of renewable energy? Or Tell me five books. "
        "Additional Information: Provides additional background information or situational "
        "details to help the model better understand the task. Example: You are writing an "
        "email to a colleague about a meeting next week. "
        "Output Formatting: Defines how the response should be structured or presented. "
        "Example: Answer the question in 'yes' or 'no'. "
        "Examples: Provides sample inputs and outputs to guide the model's response. "
        "Example: Input: 'Night' Output: 'Noche' (Spanish). "
        "Wrap the sentence in a tag for every component it belongs to, for example "
        "<Role></Role> or <Directive></Directive> or <Additional Information>"
        "</Additional Information>. Use the surrounding context only to decide the labels. "
        "Do not provide any explanations or additional content. "
        "The sentence should remain unmodified.";
}

std::string classification_user_text(const ContextWindow& w) {
    std::string out = "[context before]\n";
    if (w.before.empty()) {
        out += "(none)\n";
    } else {
        for (const auto& s : w.before) {
            out += s;
            out += '\n';
        }
    }
    out += "[sentence]\n";
    out += w.target;
    out += "\n[context after]\n";
    if (w.after.empty()) {
        out += "(none)";
    } else {
        for (std::size_t i = 0; i < w.after.size(); ++i) {
            if (i) out += '\n';
            out += w.after[i];
        }
    }
    return out;
}

namespace {

// Pulls (text, labels) regions out of a reply. Prefers the strict parser;
// falls back to a flat scan so a sloppy-but-recognizable reply still counts.
std::vector<SentenceSpan> reply_spans(const std::string& reply) {
    try {
        return parse_tagged(reply).spans;
    } catch (const Error&) {
    }
    std::vector<SentenceSpan> out;
    for (auto l : kAllLabels) {
        const std::string open = "<" + std::string(label_tag(l)) + ">";
        const std::string close = "</" + std::string(label_tag(l)) + ">";
        std::size_t pos = 0;
        while ((pos = reply.find(open, pos)) != std::string::npos) {
            const std::size_t body = pos + open.size();
            const std::size_t end = reply.find(close, body);
            if (end == std::string::npos) break;
            std::string chunk = reply.substr(body, end - body);
            // Inner known tags, if any, are noise here; strip them.
            for (auto inner : kAllLabels) {
                const std::string io = "<" + std::string(label_tag(inner)) + ">";
                const std::string ic = "</" + std::string(label_tag(inner)) + ">";
                std::size_t p;
                while ((p = chunk.find(io)) != std::string::npos) chunk.erase(p, io.size());
                while ((p = chunk.find(ic)) != std::string::npos) chunk.erase(p, ic.size());
            }
            LabelSet ls;
            ls.add(l);
            out.push_back({out.size(), trim(chunk), ls});
            pos = end + close.size();
        }
    }
    return out;
}

std::optional<ClassifyResult> extract_labels(const std::string& reply,
                                             const std::string& target) {
    const auto spans = reply_spans(reply);

    LabelSet exact;
    for (const auto& s : spans) {
        if (s.labels.empty()) continue;
        if (s.text == target) {
            for (auto l : s.labels.to_list()) exact.add(l);
        }
    }
    if (!exact.empty()) return ClassifyResult{exact, false};

    // Echo mismatch: accept a whitespace-normalized match, flagged as a repair.
    const std::string want = collapse_whitespace(target);
    LabelSet fuzzy;
    for (const auto& s : spans) {
        if (s.labels.empty()) continue;
        if (collapse_whitespace(s.text) == want) {
            for (auto l : s.labels.to_list()) fuzzy.add(l);
        }
    }
    if (!fuzzy.empty()) return ClassifyResult{fuzzy, true};
    return std::nullopt;
}

}  // namespace

ClassifyResult classify_sentence(const ContextWindow& w, Provider& provider) {
    ChatRequest req;
    req.instruction = classification_instruction();
    req.user = classification_user_text(w);

    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string reply = provider.chat(req);
        if (auto r = extract_labels(reply, w.target)) return *r;
    }
    throw UnparseableReplyError("no recognizable component tag for sentence: " +
                                w.target.substr(0, 60));
}

DissectionOutcome dissect(const std::string& prompt, Provider& provider, std::size_t radius) {
    const std::vector<std::string> sentences = split_sentences(prompt);

    DissectionOutcome out;
    std::vector<std::size_t> pending;

    for (std::size_t i = 0; i < sentences.size(); ++i) {
        out.prompt.spans.push_back({i, sentences[i], {}});
        try {
            const ClassifyResult r = classify_sentence(context_window(sentences, i, radius),
                                                       provider);
            out.prompt.spans[i].labels = r.labels;
            if (r.fuzzy_repaired) {
                out.warnings.push_back("sentence " + std::to_string(i) +
                                       ": labels recovered by whitespace-normalized match");
            }
        } catch (const UnparseableReplyError&) {
            pending.push_back(i);
        }
    }

    // Exactly one re-pass over whatever the first pass could not label.
    for (std::size_t i : pending) {
        try {
            const ClassifyResult r = classify_sentence(context_window(sentences, i, radius),
                                                       provider);
            out.prompt.spans[i].labels = r.labels;
            if (r.fuzzy_repaired) {
                out.warnings.push_back("sentence " + std::to_string(i) +
                                       ": labels recovered by whitespace-normalized match");
            }
        } catch (const UnparseableReplyError&) {
            out.prompt.spans[i].labels = {ComponentLabel::Directive};
            out.warnings.push_back("sentence " + std::to_string(i) +
                                   " unlabeled after re-pass; defaulted to Directive");
        }
    }

    out.prompt.source = plain_text(out.prompt);
    return out;
}

std::vector<GoldAnnotation> load_gold(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open gold annotations: " + path);

    std::vector<GoldAnnotation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            json doc = json::parse(line);
            GoldAnnotation g;
            g.id = doc.at("id").get<std::string>();
            for (const auto& arr : doc.at("labels")) {
                g.labels.push_back(LabelSet::from_codes(arr.get<std::vector<std::string>>()));
            }
            out.push_back(std::move(g));
        } catch (const json::exception& e) {
            throw ParseError(std::string("gold annotation: ") + e.what(), line_no);
        }
    }
    return out;
}

double dissection_accuracy(const std::map<std::string, DissectedPrompt>& predictions,
                           const std::vector<GoldAnnotation>& gold) {
    if (gold.empty()) throw EmptyInputError("no gold annotations to score against");

    std::size_t correct = 0;
    for (const auto& g : gold) {
        auto it = predictions.find(g.id);
        if (it == predictions.end()) {
            throw IdMismatchError("no prediction for prompt id " + g.id);
        }
        const auto& spans = it->second.spans;
        if (spans.size() != g.labels.size()) {
            throw SentenceCountMismatchError(
                "prompt " + g.id + ": predicted " + std::to_string(spans.size()) +
                " sentences, gold has " + std::to_string(g.labels.size()));
        }
        bool all = true;
        for (std::size_t i = 0; i < spans.size(); ++i) {
            if (spans[i].labels != g.labels[i]) {
                all = false;
                break;
            }
        }
        if (all) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(gold.size());
}

}  // namespace pprobe
