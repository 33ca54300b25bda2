#pragma once

// JSON forms of the persisted pipeline artifacts. The runner's stage files
// and the CLI's one-shot outputs share these shapes, so a perturb output can
// feed pplscore, and a campaign directory can be audited with plain tools.

#include <json.hpp>

#include "pprobe/core.hpp"
#include "pprobe/eval.hpp"
#include "pprobe/pcm.hpp"
#include "pprobe/perturb.hpp"

namespace pprobe {

nlohmann::json span_to_json(const SentenceSpan& s);
SentenceSpan span_from_json(const nlohmann::json& j);

nlohmann::json dissected_to_json(const DissectedPrompt& d);
DissectedPrompt dissected_from_json(const nlohmann::json& j);

nlohmann::json candidate_to_json(const PerturbedCandidate& c);
PerturbedCandidate candidate_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const EvalRecord& r);
EvalRecord record_from_json(const nlohmann::json& j);

nlohmann::json pcm_to_json(const PcmBreakdown& b);
PcmBreakdown pcm_from_json(const nlohmann::json& j);

nlohmann::json cell_to_json(const AsrCell& c);

// Atomic write: the content lands under a temporary name and is renamed into
// place, so a crash never leaves a half-written stage file.
void write_file_atomic(const std::string& path, const std::string& content);
void write_json_atomic(const std::string& path, const nlohmann::json& doc);

// Returns nullopt for a missing or unparseable file; unparseable leftovers
// from an interrupted run count as absent and are recomputed.
std::optional<nlohmann::json> load_json_if_present(const std::string& path);

}  // namespace pprobe
