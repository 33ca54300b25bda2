#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pprobe {

// Root of the library's exception hierarchy. Everything thrown on purpose
// derives from this so callers can catch one type at the boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- tagged-text / model errors ----
struct MalformedTagError : Error { using Error::Error; };
struct UnlabeledSpanError : Error { using Error::Error; };
struct EmptyInputError : Error { using Error::Error; };
struct IndexOutOfRangeError : Error { using Error::Error; };

// ---- provider errors ----
struct ProviderError : Error { using Error::Error; };
struct TransportError : ProviderError { using ProviderError::ProviderError; };
struct RateLimitedError : ProviderError { using ProviderError::ProviderError; };
struct AuthFailureError : ProviderError { using ProviderError::ProviderError; };
struct ContentFilteredError : ProviderError { using ProviderError::ProviderError; };
struct NoLogprobsError : ProviderError { using ProviderError::ProviderError; };
struct DimensionMismatchError : ProviderError { using ProviderError::ProviderError; };
// Strict mock hit a request nothing was scripted for.
struct MockScriptError : ProviderError { using ProviderError::ProviderError; };

// ---- dissection errors ----
struct UnparseableReplyError : Error { using Error::Error; };
struct IdMismatchError : Error { using Error::Error; };
struct SentenceCountMismatchError : Error { using Error::Error; };

// ---- perturbation errors ----
struct EmptyTextError : Error { using Error::Error; };
struct TooShortError : Error { using Error::Error; };
struct ComponentAbsentError : Error { using Error::Error; };
struct WouldEmptyPromptError : Error { using Error::Error; };

// ---- scoring / metric errors ----
struct UnscoredCandidateError : Error { using Error::Error; };
struct EmptyCorpusError : Error { using Error::Error; };
struct OutOfRangeError : Error { using Error::Error; };
struct EmptyGoldError : Error { using Error::Error; };
struct EmptyReferenceError : Error { using Error::Error; };

// ---- batch / IO errors ----
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line_no)
        : Error(what + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    std::size_t line = 0;
};
struct DuplicateIdError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct FailureBudgetExceededError : Error { using Error::Error; };

}  // namespace pprobe
