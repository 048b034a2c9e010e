#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/corpus.hpp"
#include "dmas/errors.hpp"
#include "testutil.hpp"

using namespace dmas;

namespace {

std::vector<CorpusRecord> sample_records() {
    std::vector<CorpusRecord> records;
    CorpusRecord a;
    a.id = "r1";
    a.question = "is there a dog ?";
    a.kind = QuestionKind::discriminative;
    a.answer = "yes .";
    a.visual = {{0.5, -1.25, 3.0}, {0.0, 2.0, -0.5}};
    a.objects = {"dog", "tree"};
    records.push_back(a);
    CorpusRecord b;
    b.id = "r2";
    b.question = "the image depicts ?";
    b.kind = QuestionKind::multiple_choice;
    b.answer = "cat";
    b.options = {"cat", "dog", "horse"};
    records.push_back(b);
    return records;
}

}  // namespace

TEST_CASE("corpus survives a save and load round trip") {
    testutil::TempDir dir;
    std::string path = dir.file("corpus.jsonl");
    std::vector<CorpusRecord> records = sample_records();
    save_corpus(records, path);
    std::vector<CorpusRecord> loaded = load_corpus(path);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].id == records[i].id);
        CHECK(loaded[i].question == records[i].question);
        CHECK(loaded[i].kind == records[i].kind);
        CHECK(loaded[i].answer == records[i].answer);
        CHECK(loaded[i].options == records[i].options);
        CHECK(loaded[i].visual == records[i].visual);
        CHECK(loaded[i].objects == records[i].objects);
    }

    // The writer is deterministic byte for byte.
    std::string again = dir.file("corpus2.jsonl");
    save_corpus(loaded, again);
    CHECK(testutil::read_bytes(path) == testutil::read_bytes(again));
}

TEST_CASE("corpus errors carry the offending line number") {
    testutil::TempDir dir;
    std::string path = dir.file("bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","question":"is there a dog ?","question_kind":"discriminative",)"
            << R"("answer":"yes .","visual":[],"objects":[]})" << "\n";
        out << "this is not json\n";
    }
    try {
        (void)load_corpus(path);
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    std::string missing = dir.file("missing.jsonl");
    {
        std::ofstream out(missing);
        out << R"({"id":"a","question_kind":"discriminative","answer":"yes ."})" << "\n";
    }
    try {
        (void)load_corpus(missing);
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }

    CHECK_THROWS_AS((void)load_corpus(dir.file("does_not_exist.jsonl")), io_error);
}

TEST_CASE("visual width is enforced when a dimension is expected") {
    testutil::TempDir dir;
    std::string path = dir.file("vis.jsonl");
    std::vector<CorpusRecord> records = sample_records();
    save_corpus(records, path);
    CHECK_THROWS_AS((void)load_corpus(path, 4), io_error);
    CHECK(load_corpus(path, 3).size() == 2);
}

TEST_CASE("make_contrastive tokenizes and derives the negative answer") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    std::vector<CorpusRecord> records = sample_records();

    ContrastiveSample s = make_contrastive(records[0], tok, 42);
    CHECK(s.id == "r1");
    CHECK(s.question == records[0].question);
    CHECK(s.prompt == tok.encode(records[0].question));
    CHECK(s.y_pos == tok.encode("yes ."));
    CHECK(s.y_neg == tok.encode("no ."));
    REQUIRE(s.visual.size() == 2);
    CHECK(s.visual.vectors[0] == records[0].visual[0]);

    ContrastiveSample mc1 = make_contrastive(records[1], tok, 42);
    ContrastiveSample mc2 = make_contrastive(records[1], tok, 42);
    CHECK(mc1.y_neg == mc2.y_neg);  // seeded per record id
    CHECK(mc1.y_neg != mc1.y_pos);
}

TEST_CASE("object library loads categories in stable order") {
    testutil::TempDir dir;
    std::string path = dir.file("lib.json");
    {
        std::ofstream out(path);
        out << R"({"vehicles":["car","bus"],"animals":["dog","cat"]})";
    }
    ObjectLibrary lib = load_object_library(path);
    REQUIRE(lib.size() == 2);
    CHECK(lib.begin()->first == "animals");  // std::map sorts keys
    CHECK(lib.at("vehicles") == std::vector<std::string>{"car", "bus"});

    std::string bad = dir.file("bad.json");
    {
        std::ofstream out(bad);
        out << R"(["not","an","object"])";
    }
    CHECK_THROWS_AS((void)load_object_library(bad), io_error);
}
