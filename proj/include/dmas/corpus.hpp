#pragma once

#include <string>
#include <vector>

#include "dmas/extraction.hpp"
#include "dmas/tokenizer.hpp"

namespace dmas {

// One JSONL corpus line. visual holds the raw prefix vectors; objects the
// ground-truth object names of the pictured scene.
struct CorpusRecord {
    std::string id;
    std::string question;
    QuestionKind kind = QuestionKind::discriminative;
    std::string answer;
    std::vector<std::string> options;
    std::vector<std::vector<double>> visual;
    std::vector<std::string> objects;
};

// Parses a JSONL corpus. Errors carry the 1-based line number. When
// expected_dim is nonzero every visual vector must have that width.
std::vector<CorpusRecord> load_corpus(const std::string& path, int expected_dim = 0);

// Deterministic writer: same records produce byte-identical files.
void save_corpus(const std::vector<CorpusRecord>& records, const std::string& path);

ObjectLibrary load_object_library(const std::string& path);

// Tokenizes a record and derives its untruthful answer. The negative-answer
// draw is seeded per record id so corpora rebuild identically.
ContrastiveSample make_contrastive(const CorpusRecord& record, const Tokenizer& tokenizer,
                                   std::uint64_t seed);

}  // namespace dmas
