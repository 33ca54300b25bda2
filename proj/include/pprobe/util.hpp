#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pprobe {

// FNV-1a, 64 bit. Stable across platforms and runs; used for request
// fingerprints, per-candidate seeds and config hashes, so it must never
// change once golden files exist.
inline constexpr std::uint64_t kHashOffsetBasis = 14695981039346656037ULL;

std::uint64_t stable_hash64(std::string_view data);
std::uint64_t stable_hash64(std::string_view data, std::uint64_t seed);

std::string hash_hex(std::uint64_t h);

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the bounded draw uses rejection sampling instead of
// std::uniform_int_distribution, whose output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    // Uniform in [0, n). n must be > 0.
    std::size_t bounded(std::size_t n);

    // k distinct indices from [0, n), ascending. k <= n.
    std::vector<std::size_t> sample(std::size_t n, std::size_t k);

  private:
    std::mt19937_64 eng_;
};

// ---- small string helpers shared across modules ----

std::string trim(std::string_view s);
std::string casefold(std::string_view s);            // ASCII lowercase
std::string collapse_whitespace(std::string_view s); // runs -> single space, trimmed
bool is_ascii_punct(char c);

// Strips punctuation from both ends of a token ("classification." -> "classification").
std::string strip_edge_punct(std::string_view token);

// casefold + strip_edge_punct, the normalization used for lexicon and
// stopword membership and for idf counting.
std::string normalize_token(std::string_view token);

std::vector<std::string> split_on(std::string_view s, char sep);

}  // namespace pprobe
