#include "dmas/corpus.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "dmas/errors.hpp"
#include "dmas/rng.hpp"

namespace dmas {

namespace {

using ordered_json = nlohmann::ordered_json;

QuestionKind parse_kind(const std::string& s, std::size_t line) {
    if (s == "discriminative") return QuestionKind::discriminative;
    if (s == "multiple_choice") return QuestionKind::multiple_choice;
    throw io_error("corpus line " + std::to_string(line) + ": unknown question_kind '" + s + "'");
}

}  // namespace

std::vector<CorpusRecord> load_corpus(const std::string& path, int expected_dim) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open corpus file: " + path);
    std::vector<CorpusRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw io_error("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            CorpusRecord r;
            r.id = j.at("id").get<std::string>();
            r.question = j.at("question").get<std::string>();
            r.kind = parse_kind(j.at("question_kind").get<std::string>(), line_no);
            r.answer = j.at("answer").get<std::string>();
            if (j.contains("options")) r.options = j.at("options").get<std::vector<std::string>>();
            r.visual = j.at("visual").get<std::vector<std::vector<double>>>();
            r.objects = j.at("objects").get<std::vector<std::string>>();
            if (expected_dim > 0) {
                for (const auto& v : r.visual)
                    if (v.size() != static_cast<std::size_t>(expected_dim))
                        throw io_error("corpus line " + std::to_string(line_no) +
                                       ": visual vector width " + std::to_string(v.size()) +
                                       ", expected " + std::to_string(expected_dim));
            }
            if (r.kind == QuestionKind::multiple_choice && r.options.size() < 2)
                throw io_error("corpus line " + std::to_string(line_no) +
                               ": multiple_choice needs at least two options");
            records.push_back(std::move(r));
        } catch (const io_error&) {
            throw;
        } catch (const std::exception& e) {
            throw io_error("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write corpus file: " + path);
    for (const CorpusRecord& r : records) {
        ordered_json j;
        j["id"] = r.id;
        j["question"] = r.question;
        j["question_kind"] =
            r.kind == QuestionKind::discriminative ? "discriminative" : "multiple_choice";
        j["answer"] = r.answer;
        if (!r.options.empty()) j["options"] = r.options;
        j["visual"] = r.visual;
        j["objects"] = r.objects;
        out << j.dump() << '\n';
    }
    if (!out) throw io_error("short write to corpus file: " + path);
}

ObjectLibrary load_object_library(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open object library: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error(std::string("object library: ") + e.what());
    }
    if (!j.is_object()) throw io_error("object library: top level must be an object");
    ObjectLibrary lib;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_array())
            throw io_error("object library: category '" + it.key() + "' must map to an array");
        lib[it.key()] = it.value().get<std::vector<std::string>>();
    }
    return lib;
}

ContrastiveSample make_contrastive(const CorpusRecord& record, const Tokenizer& tokenizer,
                                   std::uint64_t seed) {
    ContrastiveSample s;
    s.id = record.id;
    s.question = record.question;
    s.kind = record.kind;
    s.visual.vectors = record.visual;
    s.prompt = tokenizer.encode(record.question);
    s.y_pos = tokenizer.encode(record.answer);
    std::string neg = make_negative_answer(record.kind, record.answer, record.options,
                                           derive_seed(seed, "negative-answer/" + record.id));
    s.y_neg = tokenizer.encode(neg);
    return s;
}

}  // namespace dmas
