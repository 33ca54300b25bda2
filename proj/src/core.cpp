#include "pprobe/core.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "pprobe/errors.hpp"
#include "pprobe/text.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

std::string_view label_tag(ComponentLabel l) {
    switch (l) {
        case ComponentLabel::Role: return "Role";
        case ComponentLabel::Directive: return "Directive";
        case ComponentLabel::AdditionalInfo: return "Additional Information";
        case ComponentLabel::OutputFormatting: return "Output Formatting";
        case ComponentLabel::Examples: return "Examples";
    }
    return "";
}

std::string_view label_code(ComponentLabel l) {
    switch (l) {
        case ComponentLabel::Role: return "ROL";
        case ComponentLabel::Directive: return "DIR";
        case ComponentLabel::AdditionalInfo: return "ADI";
        case ComponentLabel::OutputFormatting: return "OFT";
        case ComponentLabel::Examples: return "EXA";
    }
    return "";
}

std::optional<ComponentLabel> label_from_tag(std::string_view tag) {
    for (auto l : kAllLabels) {
        if (label_tag(l) == tag) return l;
    }
    return std::nullopt;
}

std::optional<ComponentLabel> label_from_code(std::string_view code) {
    for (auto l : kAllLabels) {
        if (label_code(l) == code) return l;
    }
    return std::nullopt;
}

std::size_t LabelSet::size() const {
    std::size_t n = 0;
    for (auto l : kAllLabels) {
        if (contains(l)) ++n;
    }
    return n;
}

std::vector<ComponentLabel> LabelSet::to_list() const {
    std::vector<ComponentLabel> out;
    for (auto l : kAllLabels) {
        if (contains(l)) out.push_back(l);
    }
    return out;
}

std::vector<std::string> LabelSet::to_codes() const {
    std::vector<std::string> out;
    for (auto l : to_list()) out.emplace_back(label_code(l));
    return out;
}

LabelSet LabelSet::from_codes(const std::vector<std::string>& codes) {
    LabelSet s;
    for (const auto& c : codes) {
        auto l = label_from_code(c);
        if (!l) throw MalformedTagError("unknown label code: " + c);
        s.add(*l);
    }
    return s;
}

std::string plain_text(const DissectedPrompt& d) {
    std::string out;
    for (const auto& span : d.spans) {
        if (!out.empty()) out.push_back(' ');
        out += span.text;
    }
    return out;
}

std::string_view task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Classification: return "Classification";
        case TaskKind::Translation: return "Translation";
        case TaskKind::CodeGeneration: return "CodeGeneration";
    }
    return "";
}

std::optional<TaskKind> task_from_name(std::string_view name) {
    if (name == "Classification") return TaskKind::Classification;
    if (name == "Translation") return TaskKind::Translation;
    if (name == "CodeGeneration") return TaskKind::CodeGeneration;
    return std::nullopt;
}

std::string_view strategy_code(Strategy s) {
    switch (s) {
        case Strategy::SCI: return "SCI";
        case Strategy::SYR: return "SYR";
        case Strategy::WOD: return "WOD";
        case Strategy::SER: return "SER";
        case Strategy::COD: return "COD";
    }
    return "";
}

std::optional<Strategy> strategy_from_code(std::string_view code) {
    if (code == "SCI") return Strategy::SCI;
    if (code == "SYR") return Strategy::SYR;
    if (code == "WOD") return Strategy::WOD;
    if (code == "SER") return Strategy::SER;
    if (code == "COD") return Strategy::COD;
    return std::nullopt;
}

std::string PerturbationTarget::code() const {
    return label ? std::string(label_code(*label)) : std::string("CRT");
}

std::optional<PerturbationTarget> PerturbationTarget::from_code(std::string_view code) {
    if (code == "CRT") return PerturbationTarget::control();
    if (auto l = label_from_code(code)) return PerturbationTarget::component(*l);
    return std::nullopt;
}

// ---------------------------------------------------------------------
// Tagged text
// ---------------------------------------------------------------------

namespace {

struct TagToken {
    std::size_t pos = 0;   // byte offset of '<'
    std::size_t end = 0;   // one past '>'
    bool closing = false;
    ComponentLabel label = ComponentLabel::Role;
};

bool plausible_tag_name(std::string_view name) {
    if (name.empty() || !std::isalpha(static_cast<unsigned char>(name.front()))) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalpha(static_cast<unsigned char>(c)) || c == ' ';
    });
}

// Scans every <...> group once. Known component names become tag tokens.
// Unknown names are tolerated as literal prose unless an opening and a
// closing form pair up, which marks the input as corrupt markup.
std::vector<TagToken> scan_tags(const std::string& text) {
    std::vector<TagToken> tokens;
    std::map<std::string, std::size_t> unknown_opens;  // name -> first position

    std::size_t i = 0;
    while ((i = text.find('<', i)) != std::string::npos) {
        std::size_t close = text.find('>', i + 1);
        if (close == std::string::npos) break;
        std::string_view inner(text.data() + i + 1, close - i - 1);
        bool closing = !inner.empty() && inner.front() == '/';
        std::string_view name = closing ? inner.substr(1) : inner;

        if (auto l = label_from_tag(name)) {
            tokens.push_back({i, close + 1, closing, *l});
        } else if (plausible_tag_name(name)) {
            std::string key(name);
            if (!closing) {
                unknown_opens.emplace(key, i);
            } else if (unknown_opens.count(key) && unknown_opens[key] < i) {
                throw MalformedTagError("unknown tag: " + key);
            }
        }
        i = close + 1;
    }
    return tokens;
}

}  // namespace

DissectedPrompt parse_tagged(const std::string& text) {
    const std::vector<TagToken> tags = scan_tags(text);

    DissectedPrompt out;
    std::vector<ComponentLabel> stack;
    LabelSet open;
    std::size_t run_start = 0;

    auto flush = [&](std::size_t run_end) {
        std::string chunk =
            trim(std::string_view(text).substr(run_start, run_end - run_start));
        if (chunk.empty()) return;
        for (auto& sentence : split_sentences(chunk)) {
            out.spans.push_back({out.spans.size(), std::move(sentence), open});
        }
    };

    for (const auto& t : tags) {
        flush(t.pos);
        run_start = t.end;
        if (!t.closing) {
            if (open.contains(t.label)) {
                throw MalformedTagError("tag opened twice without closing: " +
                                        std::string(label_tag(t.label)));
            }
            stack.push_back(t.label);
            open.add(t.label);
        } else {
            if (stack.empty() || stack.back() != t.label) {
                // Either a stray close or a close of an outer region while an
                // inner one is still open; both mean the markup overlaps.
                throw MalformedTagError("misnested closing tag: " +
                                        std::string(label_tag(t.label)));
            }
            stack.pop_back();
            open.remove(t.label);
        }
    }
    flush(text.size());

    if (!stack.empty()) {
        throw MalformedTagError("unclosed tag: " +
                                std::string(label_tag(stack.back())));
    }

    out.source = plain_text(out);
    if (out.spans.empty()) {
        throw EmptyInputError("tagged text holds no sentences");
    }
    return out;
}

std::string render_tagged(const DissectedPrompt& d) {
    for (const auto& span : d.spans) {
        if (span.labels.empty()) {
            throw UnlabeledSpanError("span " + std::to_string(span.index) +
                                     " has no label; cannot render");
        }
    }

    std::string out;
    std::size_t i = 0;
    while (i < d.spans.size()) {
        LabelSet labels = d.spans[i].labels;
        std::string region = d.spans[i].text;
        std::size_t j = i + 1;
        while (j < d.spans.size() && d.spans[j].labels == labels) {
            region += ' ';
            region += d.spans[j].text;
            ++j;
        }
        if (!out.empty()) out.push_back(' ');
        auto list = labels.to_list();
        for (auto l : list) {
            out += '<';
            out += label_tag(l);
            out += '>';
        }
        out += region;
        for (auto it = list.rbegin(); it != list.rend(); ++it) {
            out += "</";
            out += label_tag(*it);
            out += '>';
        }
        i = j;
    }
    return out;
}

}  // namespace pprobe
