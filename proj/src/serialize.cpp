#include "pprobe/serialize.hpp"

#include <filesystem>
#include <fstream>

#include "pprobe/errors.hpp"

namespace pprobe {

namespace fs = std::filesystem;
using nlohmann::json;

json span_to_json(const SentenceSpan& s) {
    return {{"index", s.index}, {"text", s.text}, {"labels", s.labels.to_codes()}};
}

SentenceSpan span_from_json(const json& j) {
    SentenceSpan s;
    s.index = j.at("index").get<std::size_t>();
    s.text = j.at("text").get<std::string>();
    s.labels = LabelSet::from_codes(j.at("labels").get<std::vector<std::string>>());
    return s;
}

json dissected_to_json(const DissectedPrompt& d) {
    json spans = json::array();
    for (const auto& s : d.spans) spans.push_back(span_to_json(s));
    return {{"source", d.source}, {"spans", spans}};
}

DissectedPrompt dissected_from_json(const json& j) {
    DissectedPrompt d;
    d.source = j.at("source").get<std::string>();
    for (const auto& s : j.at("spans")) d.spans.push_back(span_from_json(s));
    return d;
}

json candidate_to_json(const PerturbedCandidate& c) {
    json j = {
        {"source_id", c.source_id},
        {"id", c.id},
        {"target", c.spec.target.code()},
        {"strategy", std::string(strategy_code(c.spec.strategy))},
        {"rate", c.spec.rate},
        {"seed", c.spec.seed},
        {"text", c.text},
        {"tagged_text", c.tagged_text},
        {"retained", c.retained},
        {"flags", c.flags},
    };
    j["ppl"] = c.ppl ? json(*c.ppl) : json(nullptr);
    j["ppl_ratio"] = c.ppl_ratio ? json(*c.ppl_ratio) : json(nullptr);
    return j;
}

PerturbedCandidate candidate_from_json(const json& j) {
    PerturbedCandidate c;
    c.source_id = j.at("source_id").get<std::string>();
    c.id = j.at("id").get<std::string>();
    auto target = PerturbationTarget::from_code(j.at("target").get<std::string>());
    auto strategy = strategy_from_code(j.at("strategy").get<std::string>());
    if (!target || !strategy) throw ConfigError("candidate record with unknown target/strategy");
    c.spec.target = *target;
    c.spec.strategy = *strategy;
    c.spec.rate = j.at("rate").get<double>();
    c.spec.seed = j.at("seed").get<std::uint64_t>();
    c.text = j.at("text").get<std::string>();
    c.tagged_text = j.at("tagged_text").get<std::string>();
    c.retained = j.value("retained", false);
    c.flags = j.value("flags", std::vector<std::string>{});
    if (!j.at("ppl").is_null()) c.ppl = j["ppl"].get<double>();
    if (!j.at("ppl_ratio").is_null()) c.ppl_ratio = j["ppl_ratio"].get<double>();
    return c;
}

json record_to_json(const EvalRecord& r) {
    return {
        {"source_id", r.source_id}, {"cand_id", r.cand_id},
        {"model", r.model},         {"dataset", r.dataset},
        {"component", r.component}, {"strategy", r.strategy},
        {"in_filtered", r.in_filtered},
        {"baseline_output", r.baseline_output},
        {"output", r.output},
        {"success", r.success},
        {"indeterminate", r.indeterminate},
        {"evidence", r.evidence},
    };
}

EvalRecord record_from_json(const json& j) {
    EvalRecord r;
    r.source_id = j.at("source_id").get<std::string>();
    r.cand_id = j.at("cand_id").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.component = j.at("component").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.in_filtered = j.at("in_filtered").get<bool>();
    r.baseline_output = j.at("baseline_output").get<std::string>();
    r.output = j.at("output").get<std::string>();
    r.success = j.at("success").get<bool>();
    r.indeterminate = j.at("indeterminate").get<bool>();
    r.evidence = j.value("evidence", "");
    return r;
}

json pcm_to_json(const PcmBreakdown& b) {
    return {
        {"lexical", b.lexical},   {"syntactic", b.syntactic},
        {"semantic", b.semantic}, {"structural", b.structural},
        {"task", b.task},         {"total", b.total},
        {"semantic_degenerate", b.semantic_degenerate},
    };
}

PcmBreakdown pcm_from_json(const json& j) {
    PcmBreakdown b;
    b.lexical = j.at("lexical").get<double>();
    b.syntactic = j.at("syntactic").get<double>();
    b.semantic = j.at("semantic").get<double>();
    b.structural = j.at("structural").get<double>();
    b.task = j.at("task").get<double>();
    b.total = j.at("total").get<double>();
    b.semantic_degenerate = j.value("semantic_degenerate", false);
    return b;
}

json cell_to_json(const AsrCell& c) {
    return {
        {"model", c.model},         {"dataset", c.dataset},
        {"component", c.component}, {"strategy", c.strategy},
        {"ppl", c.ppl_group},       {"n_success", c.n_success},
        {"n_total", c.n_total},     {"asr", c.asr},
    };
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

void write_json_atomic(const std::string& path, const json& doc) {
    write_file_atomic(path, doc.dump(2) + "\n");
}

std::optional<json> load_json_if_present(const std::string& path) {
    if (!fs::exists(path)) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception&) {
        return std::nullopt;
    }
    return doc;
}

}  // namespace pprobe
