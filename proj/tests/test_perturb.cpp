#include "pprobe/perturb.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "pprobe/errors.hpp"
#include "pprobe/text.hpp"
#include "pprobe/util.hpp"
#include "testutil.hpp"

using namespace pprobe;

namespace {

// Multiset of characters the mutation added relative to the original.
std::string added_chars(const std::string& before, const std::string& after) {
    std::map<char, long> delta;
    for (char c : after) ++delta[c];
    for (char c : before) --delta[c];
    std::string out;
    for (const auto& [c, n] : delta) {
        CHECK(n >= 0);
        out.append(static_cast<std::size_t>(std::max<long>(0, n)), c);
    }
    return out;
}

SynonymLexicon tiny_lexicon() {
    SynonymLexicon lex;
    lex.add("classification", {"analysis"});
    lex.add("concise", {"brief"});
    lex.add("summarize", {"condense"});
    lex.add("respond", {"reply"});
    lex.add("example", {"sample"});
    lex.add("engineering", {"technical"});
    return lex;
}

DissectedPrompt five_component_prompt() {
    DissectedPrompt d;
    d.spans.push_back({0, "You are a concise assistant.", {ComponentLabel::Role}});
    d.spans.push_back({1, "Summarize the passage below.", {ComponentLabel::Directive}});
    d.spans.push_back(
        {2, "The passage comes from some engineering log.", {ComponentLabel::AdditionalInfo}});
    d.spans.push_back(
        {3, "Respond with only three bullet points.", {ComponentLabel::OutputFormatting}});
    d.spans.push_back(
        {4, "Example: input text gives output summary.", {ComponentLabel::Examples}});
    d.source = plain_text(d);
    return d;
}

const std::vector<PerturbationTarget> kGridTargets = {
    PerturbationTarget::component(ComponentLabel::Role),
    PerturbationTarget::component(ComponentLabel::Directive),
    PerturbationTarget::component(ComponentLabel::AdditionalInfo),
    PerturbationTarget::component(ComponentLabel::OutputFormatting),
    PerturbationTarget::component(ComponentLabel::Examples),
    PerturbationTarget::control(),
};
const std::vector<Strategy> kGridStrategies = {Strategy::SCI, Strategy::SYR, Strategy::WOD,
                                               Strategy::SER, Strategy::COD};

}  // namespace

TEST_CASE("perturb_count rounds half up and never returns zero") {
    CHECK(perturb_count(0.1, 1) == 1);
    CHECK(perturb_count(0.1, 4) == 1);
    CHECK(perturb_count(0.1, 5) == 1);
    CHECK(perturb_count(0.1, 14) == 1);
    CHECK(perturb_count(0.1, 15) == 2);  // 1.5 rounds up, not to even
    CHECK(perturb_count(0.1, 200) == 20);
    CHECK(perturb_count(0.25, 2) == 1);
    CHECK(perturb_count(0.5, 3) == 2);
    CHECK(perturb_count(1.0, 7) == 7);
    CHECK(perturb_count(0.01, 3) == 1);
}

TEST_CASE("candidate seeds depend on every identity field") {
    const auto rol = PerturbationTarget::component(ComponentLabel::Role);
    const auto dir = PerturbationTarget::component(ComponentLabel::Directive);
    CHECK(candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::SCI) ==
          0x963cb0394f6bfe22ULL);
    CHECK(candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::SCI) !=
          candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::WOD));
    CHECK(candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::SCI) !=
          candidate_seed(20250817, "pubmedqa-raw", dir, Strategy::SCI));
    CHECK(candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::SCI) !=
          candidate_seed(20250817, "pubmedqa-pa", rol, Strategy::SCI));
    CHECK(candidate_seed(20250817, "pubmedqa-raw", rol, Strategy::SCI) !=
          candidate_seed(20250818, "pubmedqa-raw", rol, Strategy::SCI));
}

TEST_CASE("special-character insertion adds the budgeted count inside tokens") {
    const std::string text = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const std::string out = insert_special_chars(text, 0.1, seed);
        CHECK(out.size() == text.size() + 1);
        const std::string added = added_chars(text, out);
        REQUIRE(added.size() == 1);
        CHECK(kSpecialChars.find(added[0]) != std::string_view::npos);
        CHECK(token_count(out) == token_count(text));
    }

    SUBCASE("rate scales the insertion count") {
        const std::string out = insert_special_chars(text, 0.35, 7);  // round(3.5) = 4
        CHECK(out.size() == text.size() + 4);
        for (char c : added_chars(text, out)) {
            CHECK(kSpecialChars.find(c) != std::string_view::npos);
        }
    }

    SUBCASE("a one-character token gets its insertion appended, never prefixed") {
        for (std::uint64_t seed = 0; seed < 32; ++seed) {
            const std::string out = insert_special_chars("+", 1.0, seed);
            REQUIRE(out.size() == 2);
            CHECK(out[0] == '+');
            CHECK(kSpecialChars.find(out[1]) != std::string_view::npos);
        }
    }

    SUBCASE("every token keeps its first character") {
        for (std::uint64_t seed = 0; seed < 32; ++seed) {
            const std::string out = insert_special_chars("ab cd ef", 1.0, seed);
            const auto toks = tokenize(out);
            REQUIRE(toks.size() == 3);
            CHECK(toks[0][0] == 'a');
            CHECK(toks[1][0] == 'c');
            CHECK(toks[2][0] == 'e');
        }
    }

    CHECK(insert_special_chars(text, 0.1, 42) == insert_special_chars(text, 0.1, 42));
    CHECK_THROWS_AS(insert_special_chars("   ", 0.1, 1), EmptyTextError);
}

TEST_CASE("word deletion removes the budgeted count and keeps the delimiter") {
    const std::string text = "one two three four five six seven eight nine ten.";
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const std::string out = delete_words(text, 0.1, seed);
        CHECK(token_count(out) == 9);
        CHECK(out.find("  ") == std::string::npos);
        CHECK(out.back() == '.');
    }

    SUBCASE("the survivor set mirrors an independent sample draw") {
        for (std::uint64_t seed = 0; seed < 64; ++seed) {
            const auto picks = Rng(seed).sample(2, 1);
            const std::string out = delete_words("alpha beta?!", 1.0, seed);
            if (picks[0] == 0) {
                CHECK(out == "beta?!");
            } else {
                CHECK(out == "alpha?!");  // delimiter run survives the deletion
            }
        }
    }

    SUBCASE("at least one token always survives") {
        for (std::uint64_t seed = 0; seed < 16; ++seed) {
            CHECK(token_count(delete_words("left right", 1.0, seed)) == 1);
        }
    }

    CHECK_THROWS_AS(delete_words("single", 0.1, 1), TooShortError);
    CHECK_THROWS_AS(delete_words("  ", 0.1, 1), TooShortError);
}

TEST_CASE("synonym replacement keeps shape: case, edge punctuation, spacing") {
    const SynonymLexicon lex = tiny_lexicon();

    auto single = [&](const std::string& text) {
        const SynonymOutcome out = replace_synonyms(text, 0.1, lex, 5);
        CHECK(!out.no_eligible);
        return out.text;
    };

    CHECK(single("a sentiment classification agent.") == "a sentiment analysis agent.");
    CHECK(single("Classification rules!") == "Analysis rules!");
    CHECK(single("USE CLASSIFICATION NOW") == "USE ANALYSIS NOW");
    CHECK(single("try classification, often.") == "try analysis, often.");
    CHECK(single("(classification)") == "(analysis)");

    SUBCASE("rate 1.0 replaces every eligible token and nothing else") {
        const SynonymOutcome out =
            replace_synonyms("please summarize this classification for example", 1.0, lex, 9);
        CHECK(out.text == "please condense this analysis for sample");
    }

    SUBCASE("texts with no lexicon hits come back unchanged and flagged") {
        const SynonymOutcome out = replace_synonyms("nothing matches here.", 0.1, lex, 3);
        CHECK(out.no_eligible);
        CHECK(out.text == "nothing matches here.");
    }

    CHECK_THROWS_AS(replace_synonyms(" ", 0.1, lex, 1), EmptyTextError);
}

TEST_CASE("the lexicon file parser rejects malformed entries") {
    testutil::TempDir tmp("pprobe-lex");
    testutil::spit(tmp.path() / "ok.tsv", "# comment\nbig\tlarge, huge\n\nsmall\tlittle\n");
    const auto lex = SynonymLexicon::from_file((tmp.path() / "ok.tsv").string());
    CHECK(lex.size() == 2);
    REQUIRE(lex.lookup("big") != nullptr);
    CHECK(*lex.lookup("big") == std::vector<std::string>{"large", "huge"});
    CHECK(lex.lookup("absent") == nullptr);

    testutil::spit(tmp.path() / "notab.tsv", "big large\n");
    CHECK_THROWS_AS(SynonymLexicon::from_file((tmp.path() / "notab.tsv").string()), ParseError);
    testutil::spit(tmp.path() / "self.tsv", "big\tBig\n");
    CHECK_THROWS_AS(SynonymLexicon::from_file((tmp.path() / "self.tsv").string()), ConfigError);
    CHECK_THROWS_AS(SynonymLexicon::from_file((tmp.path() / "missing.tsv").string()), IoError);

    testutil::spit(tmp.path() / "stop.txt", "# noise\nthe\nWith\n\nonly\n");
    const auto sw = Stopwords::from_file((tmp.path() / "stop.txt").string());
    CHECK(sw.size() == 3);
    CHECK(sw.contains("with"));
    CHECK(!sw.contains("noise"));
    CHECK_THROWS_AS(Stopwords::from_file((tmp.path() / "nofile.txt").string()), IoError);
}

TEST_CASE("sentence rewriting retries an echo once, then keeps the original") {
    const std::vector<std::string> sentences{"First one.", "Second two.", "Third three."};
    const std::uint64_t seed = 11;
    const std::size_t idx = Rng(seed).bounded(sentences.size());

    ChatRequest req;
    req.instruction = paraphrase_instruction();
    req.user = sentences[idx];

    SUBCASE("a fresh reply lands in place") {
        MockProvider mock("paraphrase", "para-1");
        mock.script_chat(req, "  Completely new words.  ");
        const RewriteOutcome out = rewrite_sentence(sentences, mock, seed);
        CHECK(out.rewritten_index == idx);
        CHECK(out.sentences[idx] == "Completely new words.");
        CHECK(!out.identical_paraphrase);
        CHECK(mock.call_count() == 1);
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            if (i != idx) CHECK(out.sentences[i] == sentences[i]);
        }
    }

    SUBCASE("one echo burns the retry, the second reply wins") {
        MockProvider mock("paraphrase", "para-1");
        mock.script_chat_sequence(req, {" " + sentences[idx] + " ", "Fresh phrasing."});
        const RewriteOutcome out = rewrite_sentence(sentences, mock, seed);
        CHECK(out.sentences[idx] == "Fresh phrasing.");
        CHECK(!out.identical_paraphrase);
        CHECK(mock.call_count() == 2);
    }

    SUBCASE("two echoes keep the original and raise the flag") {
        MockProvider mock("paraphrase", "para-1");
        mock.script_chat_sequence(req, {sentences[idx], sentences[idx]});
        const RewriteOutcome out = rewrite_sentence(sentences, mock, seed);
        CHECK(out.sentences == sentences);
        CHECK(out.identical_paraphrase);
        CHECK(mock.call_count() == 2);
    }

    SUBCASE("empty replies count as echoes") {
        MockProvider mock("paraphrase", "para-1");
        mock.script_chat_sequence(req, {"", "   "});
        const RewriteOutcome out = rewrite_sentence(sentences, mock, seed);
        CHECK(out.identical_paraphrase);
    }

    MockProvider mock("paraphrase", "para-1");
    CHECK_THROWS_AS(rewrite_sentence({}, mock, 1), EmptyInputError);
}

TEST_CASE("component deletion drops sole-label spans and strips shared labels") {
    DissectedPrompt d;
    d.spans.push_back({0, "R only.", {ComponentLabel::Role}});
    d.spans.push_back({1, "Shared text.", {ComponentLabel::Role, ComponentLabel::Directive}});
    d.spans.push_back({2, "D only.", {ComponentLabel::Directive}});
    d.source = plain_text(d);

    const DissectedPrompt out = delete_component(d, ComponentLabel::Role);
    REQUIRE(out.spans.size() == 2);
    CHECK(out.spans[0].index == 0);
    CHECK(out.spans[0].text == "Shared text.");
    CHECK(out.spans[0].labels == LabelSet{ComponentLabel::Directive});
    CHECK(out.spans[1].text == "D only.");
    CHECK(out.source == "Shared text. D only.");

    try {
        delete_component(d, ComponentLabel::Examples);
        FAIL("expected ComponentAbsentError");
    } catch (const ComponentAbsentError& e) {
        CHECK(std::string(e.what()) == "no span carries EXA");
    }

    DissectedPrompt all_dir;
    all_dir.spans.push_back({0, "Everything.", {ComponentLabel::Directive}});
    all_dir.spans.push_back(
        {1, "Still here.", {ComponentLabel::Directive, ComponentLabel::Role}});
    try {
        delete_component(all_dir, ComponentLabel::Directive);
        FAIL("expected WouldEmptyPromptError");
    } catch (const WouldEmptyPromptError& e) {
        CHECK(std::string(e.what()) ==
              "every span carries DIR; deletion would empty the prompt");
    }
}

TEST_CASE("candidate generation covers the grid and touches only the target") {
    const DissectedPrompt d = five_component_prompt();
    const SynonymLexicon lex = tiny_lexicon();
    Stopwords sw;
    for (const char* w : {"the", "a", "with", "from", "only", "some"}) sw.add(w);

    MockProvider para("paraphrase", "para-1");
    MockRule rule;
    rule.instruction_contains = "Rewrite the given sentence";
    rule.respond = "prefix";
    rule.prefix = "In other words, ";
    para.add_rule(rule);

    const CandidateBatch batch = generate_candidates(d, "demo", kGridTargets, kGridStrategies,
                                                     20250817, lex, sw, &para);
    CHECK(batch.notices.empty());
    REQUIRE(batch.candidates.size() == 29);

    SUBCASE("ids enumerate targets x strategies in caller order, COD x CRT absent") {
        std::vector<std::string> want;
        for (const auto& t : kGridTargets) {
            for (auto s : kGridStrategies) {
                if (t.is_control() && s == Strategy::COD) continue;
                want.push_back("demo/" + t.code() + "/" + std::string(strategy_code(s)));
            }
        }
        std::vector<std::string> got;
        for (const auto& c : batch.candidates) got.push_back(c.id);
        CHECK(got == want);
    }

    SUBCASE("seeds are reproducible pair by pair") {
        for (const auto& c : batch.candidates) {
            CHECK(c.spec.seed ==
                  candidate_seed(20250817, "demo", c.spec.target, c.spec.strategy));
        }
    }

    SUBCASE("non-target regions are byte-identical to the original") {
        const auto before = testutil::scan_regions(render_tagged(d));
        for (const auto& c : batch.candidates) {
            const auto after = testutil::scan_regions(c.tagged_text);
            if (c.spec.strategy == Strategy::COD) {
                // Every span here carries exactly one label, so deletion
                // must reproduce the original regions minus the target's.
                std::vector<testutil::TagRegion> want;
                for (const auto& r : before) {
                    if (!r.labels.contains(*c.spec.target.label)) want.push_back(r);
                }
                REQUIRE(after.size() == want.size());
                for (std::size_t i = 0; i < want.size(); ++i) {
                    CHECK(after[i].text == want[i].text);
                    CHECK(after[i].labels == want[i].labels);
                }
                continue;
            }
            REQUIRE(after.size() == before.size());
            std::size_t changed = 0;
            for (std::size_t i = 0; i < before.size(); ++i) {
                CHECK(after[i].labels == before[i].labels);
                if (after[i].text != before[i].text) {
                    ++changed;
                    if (!c.spec.target.is_control()) {
                        CHECK(before[i].labels.contains(*c.spec.target.label));
                    }
                }
            }
            const bool no_eligible =
                std::find(c.flags.begin(), c.flags.end(), "NoEligibleTokens") != c.flags.end();
            if (no_eligible) {
                CHECK(changed == 0);
            } else if (c.spec.target.is_control()) {
                CHECK(changed == 1);  // control touches exactly one sentence
            } else {
                CHECK(changed >= 1);
            }
        }
    }

    SUBCASE("regeneration is deterministic") {
        const CandidateBatch again = generate_candidates(d, "demo", kGridTargets,
                                                         kGridStrategies, 20250817, lex, sw,
                                                         &para);
        REQUIRE(again.candidates.size() == batch.candidates.size());
        for (std::size_t i = 0; i < batch.candidates.size(); ++i) {
            CHECK(again.candidates[i].text == batch.candidates[i].text);
            CHECK(again.candidates[i].tagged_text == batch.candidates[i].tagged_text);
            CHECK(again.candidates[i].flags == batch.candidates[i].flags);
        }
    }
}

TEST_CASE("unsatisfiable grid cells turn into skip notices, not candidates") {
    const SynonymLexicon lex = tiny_lexicon();
    Stopwords sw;
    sw.add("the");

    SUBCASE("absent component skips every strategy") {
        DissectedPrompt d;
        d.spans.push_back({0, "Do the thing.", {ComponentLabel::Directive}});
        d.source = plain_text(d);
        const auto batch = generate_candidates(
            d, "src", {PerturbationTarget::component(ComponentLabel::OutputFormatting)},
            kGridStrategies, 1, lex, sw, nullptr);
        CHECK(batch.candidates.empty());
        REQUIRE(batch.notices.size() == 5);
        CHECK(batch.notices[0] == "skipped src/OFT/SCI: component absent");
        CHECK(batch.notices[1] == "skipped src/OFT/SYR: component absent");
        CHECK(batch.notices[2] == "skipped src/OFT/WOD: component absent");
        CHECK(batch.notices[3] == "skipped src/OFT/SER: component absent");
        CHECK(batch.notices[4] == "skipped src/OFT/COD: component absent");
    }

    SUBCASE("missing paraphrase backend skips SER only") {
        DissectedPrompt d;
        d.spans.push_back({0, "Act as a helper.", {ComponentLabel::Role}});
        d.spans.push_back({1, "Answer briefly.", {ComponentLabel::Directive}});
        d.source = plain_text(d);
        const auto batch =
            generate_candidates(d, "src", {PerturbationTarget::component(ComponentLabel::Role)},
                                {Strategy::SER, Strategy::SCI}, 1, lex, sw, nullptr);
        REQUIRE(batch.notices.size() == 1);
        CHECK(batch.notices[0] == "skipped src/ROL/SER: no paraphrase backend");
        REQUIRE(batch.candidates.size() == 1);
        CHECK(batch.candidates[0].id == "src/ROL/SCI");
    }

    SUBCASE("a one-token component cannot lose a word") {
        DissectedPrompt d;
        d.spans.push_back({0, "Go.", {ComponentLabel::Role}});
        d.spans.push_back({1, "Answer briefly.", {ComponentLabel::Directive}});
        d.source = plain_text(d);
        const auto batch =
            generate_candidates(d, "src", {PerturbationTarget::component(ComponentLabel::Role)},
                                {Strategy::WOD}, 1, lex, sw, nullptr);
        CHECK(batch.candidates.empty());
        REQUIRE(batch.notices.size() == 1);
        CHECK(batch.notices[0] == "skipped src/ROL/WOD: component has fewer than two tokens");
    }

    SUBCASE("a one-token control sentence cannot lose a word either") {
        DissectedPrompt d;
        d.spans.push_back({0, "Go.", {ComponentLabel::Directive}});
        d.source = plain_text(d);
        const auto batch = generate_candidates(d, "src", {PerturbationTarget::control()},
                                               {Strategy::WOD}, 1, lex, sw, nullptr);
        CHECK(batch.candidates.empty());
        REQUIRE(batch.notices.size() == 1);
        CHECK(batch.notices[0] == "skipped src/CRT/WOD: control sentence too short");
    }

    SUBCASE("unlabeled spans are rejected outright") {
        DissectedPrompt d;
        d.spans.push_back({0, "Mystery sentence.", {}});
        d.source = plain_text(d);
        CHECK_THROWS_AS(generate_candidates(d, "src", kGridTargets, {Strategy::SCI}, 1, lex,
                                            sw, nullptr),
                        UnlabeledSpanError);
    }
}

TEST_CASE("control perturbations fall back to a random token when no function word exists") {
    // No stopwords at all: the control population is always empty, so SCI
    // must take the fallback token and SYR must additionally report that the
    // empty lexicon offered nothing.
    DissectedPrompt d;
    d.spans.push_back({0, "Quartz vials glow faintly.", {ComponentLabel::Directive}});
    d.source = plain_text(d);
    const SynonymLexicon empty_lex;
    const Stopwords no_words;

    const auto sci = generate_candidates(d, "src", {PerturbationTarget::control()},
                                         {Strategy::SCI}, 3, empty_lex, no_words, nullptr);
    REQUIRE(sci.candidates.size() == 1);
    CHECK(sci.candidates[0].flags == std::vector<std::string>{"ControlFallbackToken"});
    CHECK(sci.candidates[0].text.size() == d.source.size() + 1);

    const auto syr = generate_candidates(d, "src", {PerturbationTarget::control()},
                                         {Strategy::SYR}, 3, empty_lex, no_words, nullptr);
    REQUIRE(syr.candidates.size() == 1);
    CHECK(syr.candidates[0].flags ==
          std::vector<std::string>{"ControlFallbackToken", "NoEligibleTokens"});
    CHECK(syr.candidates[0].text == d.source);
}
