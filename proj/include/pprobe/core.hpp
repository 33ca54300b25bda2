#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pprobe {

// The five prompt components. Enum order is the canonical order used for
// nested tag rendering and for every serialized label list.
enum class ComponentLabel : std::uint8_t {
    Role = 0,
    Directive = 1,
    AdditionalInfo = 2,
    OutputFormatting = 3,
    Examples = 4,
};

inline constexpr std::array<ComponentLabel, 5> kAllLabels = {
    ComponentLabel::Role,
    ComponentLabel::Directive,
    ComponentLabel::AdditionalInfo,
    ComponentLabel::OutputFormatting,
    ComponentLabel::Examples,
};

// Tag name as it appears in tagged text, e.g. "Additional Information".
std::string_view label_tag(ComponentLabel l);
// Short code used in configs, reports and candidate ids, e.g. "ADI".
std::string_view label_code(ComponentLabel l);
std::optional<ComponentLabel> label_from_tag(std::string_view tag);
std::optional<ComponentLabel> label_from_code(std::string_view code);

// Small value-type set of component labels. Iteration and serialization
// always follow canonical enum order.
class LabelSet {
  public:
    LabelSet() = default;
    LabelSet(std::initializer_list<ComponentLabel> ls) {
        for (auto l : ls) add(l);
    }

    void add(ComponentLabel l) { bits_ |= bit(l); }
    void remove(ComponentLabel l) { bits_ &= static_cast<std::uint8_t>(~bit(l)); }
    bool contains(ComponentLabel l) const { return bits_ & bit(l); }
    bool empty() const { return bits_ == 0; }
    std::size_t size() const;

    std::vector<ComponentLabel> to_list() const;
    std::vector<std::string> to_codes() const;
    static LabelSet from_codes(const std::vector<std::string>& codes);

    friend bool operator==(LabelSet a, LabelSet b) { return a.bits_ == b.bits_; }
    friend bool operator!=(LabelSet a, LabelSet b) { return a.bits_ != b.bits_; }

  private:
    static std::uint8_t bit(ComponentLabel l) {
        return static_cast<std::uint8_t>(1u << static_cast<std::uint8_t>(l));
    }
    std::uint8_t bits_ = 0;
};

// One sentence of a prompt with the labels assigned to it. An empty label
// set only occurs transiently, between splitting and classification.
struct SentenceSpan {
    std::size_t index = 0;
    std::string text;
    LabelSet labels;
};

struct DissectedPrompt {
    std::string source;               // plain prompt text, tags stripped
    std::vector<SentenceSpan> spans;  // index order
};

// Plain prompt text rebuilt from the spans, single-spaced.
std::string plain_text(const DissectedPrompt& d);

enum class TaskKind { Classification, Translation, CodeGeneration };
std::string_view task_name(TaskKind t);
std::optional<TaskKind> task_from_name(std::string_view name);

enum class Strategy { SCI, SYR, WOD, SER, COD };
std::string_view strategy_code(Strategy s);
std::optional<Strategy> strategy_from_code(std::string_view code);

// Perturbation target: one of the five components, or the control setting
// that touches function words of one sentence regardless of component.
struct PerturbationTarget {
    static PerturbationTarget component(ComponentLabel l) { return {l}; }
    static PerturbationTarget control() { return {std::nullopt}; }

    bool is_control() const { return !label.has_value(); }
    std::string code() const;  // "ROL".."EXA" or "CRT"
    static std::optional<PerturbationTarget> from_code(std::string_view code);

    friend bool operator==(const PerturbationTarget& a, const PerturbationTarget& b) {
        return a.label == b.label;
    }

    std::optional<ComponentLabel> label;
};

// One dataset row. `prompt` holds either raw text or tagged text;
// `pretagged` records which one it was.
struct PromptRecord {
    std::string id;
    TaskKind task = TaskKind::Classification;
    std::string prompt;
    std::string gold;
    bool pretagged = false;
};

// Parses XML-style tagged text into sentence spans. Nested known tags
// assign multiple labels; text outside any tag yields unlabeled spans.
// A balanced pair of unknown tags or improper nesting of known tags
// throws MalformedTagError; a lone angle-bracketed phrase is literal text.
DissectedPrompt parse_tagged(const std::string& text);

// Inverse of parse_tagged. Adjacent spans with identical label sets merge
// into one region; multi-label regions nest in canonical order. Throws
// UnlabeledSpanError when any span has no label.
std::string render_tagged(const DissectedPrompt& d);

}  // namespace pprobe
