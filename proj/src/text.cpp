#include "pprobe/text.hpp"

#include <cctype>

#include "pprobe/errors.hpp"
#include "pprobe/util.hpp"

namespace pprobe {

namespace {

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_delim(char c) { return c == '.' || c == '?' || c == '!'; }

bool fence_at(std::string_view s, std::size_t i) {
    return i + 3 <= s.size() && s[i] == '`' && s[i + 1] == '`' && s[i + 2] == '`';
}

}  // namespace

std::vector<TokenRange> token_ranges(std::string_view text) {
    std::vector<TokenRange> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_ws(text[i])) ++i;
        if (i >= text.size()) break;
        std::size_t b = i;
        while (i < text.size() && !is_ws(text[i])) ++i;
        out.push_back({b, i});
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& r : token_ranges(text)) {
        out.emplace_back(text.substr(r.begin, r.end - r.begin));
    }
    return out;
}

std::size_t token_count(std::string_view text) {
    return token_ranges(text).size();
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> segments;
    std::size_t start = 0;
    std::size_t i = 0;
    const std::size_t n = text.size();

    auto flush = [&](std::size_t end) {
        std::string seg = trim(std::string_view(text).substr(start, end - start));
        if (!seg.empty()) segments.push_back(std::move(seg));
        start = end;
    };

    while (i < n) {
        if (fence_at(text, i)) {
            // Whatever punctuation a fenced block holds, it belongs to the
            // current sentence. An unterminated fence runs to end of text.
            std::size_t close = text.find("```", i + 3);
            i = (close == std::string::npos) ? n : close + 3;
            // A closing fence ends the sentence; a directly attached
            // delimiter run ("```.") rides along with it.
            std::size_t j = i;
            while (j < n && is_delim(text[j])) ++j;
            if (j == n || is_ws(text[j])) {
                flush(j);
            }
            i = j;
            continue;
        }
        if (is_delim(text[i])) {
            std::size_t j = i;
            while (j + 1 < n && is_delim(text[j + 1])) ++j;
            if (j + 1 == n || is_ws(text[j + 1])) {
                flush(j + 1);
                i = j + 1;
                continue;
            }
            i = j + 1;  // delimiter glued to more text ("2.0", ".py") stays put
            continue;
        }
        ++i;
    }
    flush(n);

    if (segments.empty()) {
        throw EmptyInputError("no sentences: input is empty or whitespace only");
    }
    return segments;
}

}  // namespace pprobe
