#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/errors.hpp"
#include "dmas/numkit.hpp"
#include "dmas/rng.hpp"
#include "dmas/steerdb.hpp"
#include "testutil.hpp"

using namespace dmas;

namespace {

// Tiny hand-built database: 1 layer, 2 heads, head_dim 2, embedding dim 4.
SteeringDatabase tiny_db(std::size_t n_entries, Rng& rng) {
    SteeringDatabase db;
    db.embedder_id = ToyEmbedder(4).id();
    db.model_fingerprint = 0xfeedbeefull;
    db.d_emb = 4;
    db.n_layers = 1;
    db.n_heads = 2;
    db.head_dim = 2;
    for (std::size_t c = 0; c < n_entries; ++c) {
        SteeringDatabase::Entry e;
        e.cluster_id = static_cast<std::uint32_t>(c);
        e.question_count = static_cast<std::uint32_t>(1 + rng.next_below(5));
        e.key.resize(4);
        double norm = 0.0;
        for (double& x : e.key) {
            x = rng.next_gaussian();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : e.key) x /= norm;
        e.value = testutil::random_tensor(1, 2, 2, rng);
        db.entries.push_back(std::move(e));
    }
    return db;
}

}  // namespace

TEST_CASE("toy embedder is unit norm, deterministic and word-order blind") {
    ToyEmbedder emb(32);
    std::vector<double> a = emb.embed("is there a dog ?");
    std::vector<double> b = emb.embed("is there a dog ?");
    CHECK(a == b);
    double norm = 0.0;
    for (double x : a) norm += x * x;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));

    CHECK(emb.embed("dog there is a") == emb.embed("is there a dog"));
    CHECK(emb.embed("dog") != emb.embed("cat"));

    std::vector<double> empty = emb.embed("?!.");
    norm = 0.0;
    for (double x : empty) norm += x * x;
    CHECK(norm == doctest::Approx(1.0));
    CHECK(emb.id() == "toy-bow-v1:32");
    CHECK_THROWS_AS(ToyEmbedder(0), param_error);
}

TEST_CASE("retrieval equals the exhaustive similarity argmax") {
    Rng rng(21);
    ToyEmbedder emb(4);
    std::vector<std::string> questions = {
        "is there a dog ?",  "is there a cat ?",   "can you spot any car nearby ?",
        "is there a piano ?", "does this picture contain some bread ?",
        "is there a river ?", "is there a hat ?",  "is there a tree ?",
    };
    for (int trial = 0; trial < 50; ++trial) {
        SteeringDatabase db = tiny_db(1 + rng.next_below(6), rng);
        const std::string& q = questions[static_cast<std::size_t>(rng.next_below(questions.size()))];
        RetrievalResult got = retrieve(db, q, emb);

        std::vector<double> qe = emb.embed(q);
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t c = 0; c < db.entries.size(); ++c) {
            double sim = cosine_similarity(qe, db.entries[c].key);
            if (sim > best_sim) {  // strict: first index wins ties
                best_sim = sim;
                best = c;
            }
        }
        CHECK(got.cluster_id == db.entries[best].cluster_id);
        CHECK(got.similarity == doctest::Approx(best_sim));
        CHECK(testutil::bitwise_equal(got.vector.values.data, db.entries[best].value.data));
    }
}

TEST_CASE("retrieval ties resolve to the smallest cluster id") {
    Rng rng(22);
    SteeringDatabase db = tiny_db(3, rng);
    // Make entries 1 and 2 identical keys; any question ties between them.
    db.entries[2].key = db.entries[1].key;
    ToyEmbedder emb(4);
    for (const char* q : {"is there a dog ?", "is there a cat ?", "yes no"}) {
        RetrievalResult r = retrieve(db, q, emb);
        std::vector<double> qe = emb.embed(q);
        double sim1 = cosine_similarity(qe, db.entries[1].key);
        double sim0 = cosine_similarity(qe, db.entries[0].key);
        if (sim1 > sim0) CHECK(r.cluster_id == 1);  // never 2
        CHECK(r.cluster_id != 2);
    }

    ToyEmbedder other(8);
    CHECK_THROWS_AS((void)retrieve(db, "is there a dog ?", other), param_error);
    SteeringDatabase empty;
    empty.embedder_id = emb.id();
    CHECK_THROWS_AS((void)retrieve(empty, "is there a dog ?", emb), param_error);
}

TEST_CASE("merge_fixed is the question-count weighted mean") {
    Rng rng(23);
    SteeringDatabase db = tiny_db(4, rng);
    SteeringVector merged = merge_fixed(db);

    std::vector<double> want(db.entries[0].value.data.size(), 0.0);
    double total = 0.0;
    for (const auto& e : db.entries) {
        total += e.question_count;
        for (std::size_t i = 0; i < want.size(); ++i)
            want[i] += static_cast<double>(e.question_count) * e.value.data[i];
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        want[i] /= total;
        CHECK(merged.values.data[i] == doctest::Approx(want[i]).epsilon(1e-14));
    }
    CHECK(merged.sample_count == static_cast<int>(total));
}

TEST_CASE("database persistence round-trips bit for bit") {
    testutil::TempDir dir;
    Rng rng(24);
    SteeringDatabase db = tiny_db(3, rng);
    std::string path = dir.file("steer.db");
    save_database(db, path);

    SteeringDatabase loaded = load_database(path);
    CHECK(loaded == db);

    // Saving the loaded copy reproduces the file byte for byte.
    std::string path2 = dir.file("steer2.db");
    save_database(loaded, path2);
    CHECK(testutil::read_bytes(path) == testutil::read_bytes(path2));
}

TEST_CASE("load distinguishes corruption, stale version, bad magic and truncation") {
    testutil::TempDir dir;
    Rng rng(25);
    SteeringDatabase db = tiny_db(2, rng);
    std::string path = dir.file("steer.db");
    save_database(db, path);
    std::vector<std::uint8_t> good = testutil::read_bytes(path);

    // Flipped payload byte: the checksum must catch it.
    {
        std::vector<std::uint8_t> bad = good;
        bad[bad.size() / 2] ^= 0xFF;
        std::string p = dir.file("corrupt.db");
        testutil::write_bytes(p, bad);
        try {
            (void)load_database(p);
            FAIL("expected db_format_error");
        } catch (const db_format_error& e) {
            CHECK(e.cause == db_format_error::Cause::bad_checksum);
        }
    }

    // Patched version field with a re-sealed checksum: a distinct error.
    {
        std::vector<std::uint8_t> bad = good;
        bad[4] = 0x63;  // version field sits right after the magic
        testutil::reseal_crc(bad);
        std::string p = dir.file("version.db");
        testutil::write_bytes(p, bad);
        try {
            (void)load_database(p);
            FAIL("expected db_format_error");
        } catch (const db_format_error& e) {
            CHECK(e.cause == db_format_error::Cause::bad_version);
        }
    }

    // Wrong magic.
    {
        std::vector<std::uint8_t> bad = good;
        bad[0] = 'X';
        std::string p = dir.file("magic.db");
        testutil::write_bytes(p, bad);
        try {
            (void)load_database(p);
            FAIL("expected db_format_error");
        } catch (const db_format_error& e) {
            CHECK(e.cause == db_format_error::Cause::bad_magic);
        }
    }

    // Valid magic but nothing behind it.
    {
        std::vector<std::uint8_t> bad = {'D', 'M', 'A', 'S', 1};
        std::string p = dir.file("stub.db");
        testutil::write_bytes(p, bad);
        try {
            (void)load_database(p);
            FAIL("expected db_format_error");
        } catch (const db_format_error& e) {
            CHECK(e.cause == db_format_error::Cause::truncated);
        }
    }

    // Entry count inflated past the payload, checksum re-sealed: the reader
    // must run out of bytes, not misread the tail.
    {
        std::vector<std::uint8_t> bad = good;
        bad[24] = 5;  // n_entries field (magic 4 + five u32 fields in front)
        testutil::reseal_crc(bad);
        std::string p = dir.file("count.db");
        testutil::write_bytes(p, bad);
        try {
            (void)load_database(p);
            FAIL("expected db_format_error");
        } catch (const db_format_error& e) {
            CHECK(e.cause == db_format_error::Cause::truncated);
        }
    }

    CHECK_THROWS_AS((void)load_database(dir.file("absent.db")), io_error);
}

TEST_CASE("build_database clusters by vocabulary and fills every cluster") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 32;
    cfg.max_seq = 32;
    cfg.vocab_size = tok.size();
    ModelWeights weights = init_model(cfg);
    ToyEmbedder emb(32);

    // Two word-disjoint question families.
    std::vector<ContrastiveSample> samples;
    std::vector<std::string> animals = {"dog", "cat", "horse", "sheep"};
    std::vector<std::string> food = {"apple", "banana", "pizza", "bread"};
    for (std::size_t i = 0; i < 4; ++i) {
        ContrastiveSample s;
        s.id = "a" + std::to_string(i);
        s.question = "is there a " + animals[i] + " ?";
        s.prompt = tok.encode(s.question);
        s.y_pos = tok.encode("yes .");
        s.y_neg = tok.encode("no .");
        samples.push_back(s);
        ContrastiveSample f;
        f.id = "f" + std::to_string(i);
        f.question = "does this picture contain some " + food[i] + " ?";
        f.prompt = tok.encode(f.question);
        f.y_pos = tok.encode("yes .");
        f.y_neg = tok.encode("no .");
        samples.push_back(f);
    }

    SteeringDatabase db = build_database(samples, 2, emb, weights, 0, 2024);
    REQUIRE(db.entries.size() == 2);
    CHECK(db.entries[0].cluster_id == 0);
    CHECK(db.entries[1].cluster_id == 1);
    CHECK(db.entries[0].question_count + db.entries[1].question_count == samples.size());
    CHECK(db.embedder_id == emb.id());
    CHECK(db.model_fingerprint == config_fingerprint(cfg));

    // Determinism, and the guard rails.
    SteeringDatabase again = build_database(samples, 2, emb, weights, 0, 2024);
    CHECK(again == db);
    CHECK_THROWS_AS((void)build_database(samples, 0, emb, weights, 0, 1), param_error);
    CHECK_THROWS_AS(
        (void)build_database(std::vector<ContrastiveSample>{samples[0]}, 2, emb, weights, 0, 1),
        param_error);
}
