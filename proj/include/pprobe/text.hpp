#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pprobe {

// Half-open byte range of one whitespace-delimited token inside its text.
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Tokens are maximal runs of non-whitespace bytes.
std::vector<TokenRange> token_ranges(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);
std::size_t token_count(std::string_view text);

// Sentence segmentation. Splits after '.', '?' or '!' when the delimiter run
// is followed by whitespace or end of text; a ``` fenced region never splits,
// regardless of the punctuation inside it. Delimiters stay attached, segments
// are trimmed, and no empty segment is produced. Throws EmptyInputError when
// the input holds no segment at all.
std::vector<std::string> split_sentences(const std::string& text);

}  // namespace pprobe
