// Spawns the installed binary and checks exit codes, wiring, and artifact
// round trips. The library logic behind each subcommand has its own tests;
// here the concern is argument plumbing and the exit-code contract.

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>
#include <sys/wait.h>

#include "dmas/corpus.hpp"
#include "dmas/steerdb.hpp"
#include "dmas/tokenizer.hpp"
#include "dmas/toymodel.hpp"
#include "doctest.h"
#include "testutil.hpp"

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const testutil::TempDir& dir, const std::string& args,
                  const std::string& env_prefix = {}) {
    std::string log = dir.file("cli-log.txt");
    std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + DMAS_CLI_PATH + " " + args +
                      " > " + log + " 2>&1";
    int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    r.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("synth generate writes a reproducible corpus") {
    testutil::TempDir dir;
    CliResult r = run_cli(dir, "synth generate --scenes 8 --seed 5 --out " + dir.file("a.jsonl"));
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(contains(r.output, "wrote"));

    auto records = dmas::load_corpus(dir.file("a.jsonl"), 64);
    CHECK(records.size() == 8);

    run_cli(dir, "synth generate --scenes 8 --seed 5 --out " + dir.file("b.jsonl"));
    CHECK(testutil::read_bytes(dir.file("a.jsonl")) == testutil::read_bytes(dir.file("b.jsonl")));

    run_cli(dir, "synth generate --scenes 8 --seed 6 --out " + dir.file("c.jsonl"));
    CHECK(testutil::read_bytes(dir.file("a.jsonl")) != testutil::read_bytes(dir.file("c.jsonl")));
}

TEST_CASE("usage errors exit 1") {
    testutil::TempDir dir;
    CHECK(run_cli(dir, "").exit_code == 1);
    CHECK(run_cli(dir, "frobnicate").exit_code == 1);
    CHECK(run_cli(dir, "synth generate --scenes 4 --no-such-flag 3 --out x").exit_code == 1);

    CliResult r = run_cli(dir, "build-db --out " + dir.file("db.bin"));
    CHECK(r.exit_code == 1);
    CHECK(contains(r.output, "--corpus"));
}

TEST_CASE("absent input files exit 2") {
    testutil::TempDir dir;
    CHECK(run_cli(dir, "eval pope --predictions " + dir.file("absent.jsonl")).exit_code == 2);
    CHECK(run_cli(dir, "build-db --corpus " + dir.file("absent.jsonl") + " --out " +
                           dir.file("db.bin"))
              .exit_code == 2);
}

TEST_CASE("seed comes from flag, config file, or environment, in that order") {
    testutil::TempDir dir;
    std::string gen = "synth generate --scenes 6 --out ";
    run_cli(dir, gen + dir.file("flag.jsonl") + " --seed 5");
    auto want = testutil::read_bytes(dir.file("flag.jsonl"));

    CliResult env = run_cli(dir, gen + dir.file("env.jsonl"), "DMAS_SEED=5");
    CHECK(env.exit_code == 0);
    CHECK(testutil::read_bytes(dir.file("env.jsonl")) == want);

    // The flag wins over the environment.
    run_cli(dir, gen + dir.file("both.jsonl") + " --seed 5", "DMAS_SEED=99");
    CHECK(testutil::read_bytes(dir.file("both.jsonl")) == want);

    std::ofstream(dir.file("cfg.json")) << "{\"seed\": 5}\n";
    run_cli(dir, gen + dir.file("cfg.jsonl") + " --config " + dir.file("cfg.json"));
    CHECK(testutil::read_bytes(dir.file("cfg.jsonl")) == want);

    CliResult bad = run_cli(dir, gen + dir.file("x.jsonl"), "DMAS_SEED=banana");
    CHECK(bad.exit_code == 1);
    CHECK(contains(bad.output, "DMAS_SEED"));
}

TEST_CASE("unknown config keys are rejected") {
    testutil::TempDir dir;
    std::ofstream(dir.file("cfg.json")) << "{\"zzz\": 1}\n";
    CliResult r = run_cli(dir, "synth generate --scenes 4 --out " + dir.file("g.jsonl") +
                                   " --config " + dir.file("cfg.json"));
    CHECK(r.exit_code == 1);
    CHECK(contains(r.output, "zzz"));
}

TEST_CASE("build-db then infer round trip") {
    testutil::TempDir dir;
    run_cli(dir, "synth generate --scenes 8 --seed 5 --out " + dir.file("corpus.jsonl"));

    CliResult built = run_cli(dir, "build-db --corpus " + dir.file("corpus.jsonl") + " --out " +
                                       dir.file("db.bin") +
                                       " --clusters 2 --pca-components 0 --seed 5");
    CAPTURE(built.output);
    REQUIRE(built.exit_code == 0);

    dmas::SteeringDatabase db = dmas::load_database(dir.file("db.bin"));
    CHECK(db.entries.size() == 2);
    CHECK(db.d_emb == 64);

    // A visual vector file is the same container with a marker id and a
    // single entry; write a zero tensor so the test stays about plumbing.
    dmas::Tokenizer tok = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc;
    mc.vocab_size = static_cast<int>(tok.size());
    dmas::SteeringDatabase vv;
    vv.embedder_id = "visual-vector";
    vv.model_fingerprint = dmas::config_fingerprint(mc);
    vv.d_emb = 0;
    vv.n_layers = mc.n_layers;
    vv.n_heads = mc.n_heads;
    vv.head_dim = mc.head_dim();
    dmas::SteeringDatabase::Entry entry;
    entry.cluster_id = 0;
    entry.question_count = 1;
    entry.value = dmas::HeadTensor(mc.n_layers, mc.n_heads, mc.head_dim());
    vv.entries.push_back(std::move(entry));
    dmas::save_database(vv, dir.file("vv.bin"));

    std::ofstream scene(dir.file("scene.json"));
    scene << "{\"visual\": [[";
    for (int i = 0; i < 64; ++i) scene << (i ? "," : "") << "0.25";
    scene << "]]}\n";
    scene.close();

    std::string infer = "infer --db " + dir.file("db.bin") + " --visual-vector " +
                        dir.file("vv.bin") + " --question \"is there a dog ?\" --scene " +
                        dir.file("scene.json") + " --seed 5";
    CliResult answered = run_cli(dir, infer + " --alpha 1 --beta 1");
    CAPTURE(answered.output);
    CHECK(answered.exit_code == 0);
    CHECK(contains(answered.output, "answer: "));
    CHECK(contains(answered.output, "cluster: "));

    // A database built for one model must not steer another.
    CliResult mismatched = run_cli(dir, infer + " --layers 2");
    CHECK(mismatched.exit_code == 1);
    CHECK(contains(mismatched.output, "model config"));
}

TEST_CASE("eval subcommands report metrics") {
    testutil::TempDir dir;
    std::ofstream preds(dir.file("preds.jsonl"));
    preds << "{\"id\":\"a\",\"predicted_yes\":true,\"gold_yes\":true}\n";
    preds << "{\"id\":\"b\",\"predicted\":\"no\",\"gold\":\"yes\"}\n";
    preds << "{\"id\":\"c\",\"predicted\":\"no\",\"gold\":\"no\"}\n";
    preds << "{\"id\":\"d\",\"predicted_yes\":true,\"gold_yes\":false}\n";
    preds.close();
    CliResult pope = run_cli(dir, "eval pope --predictions " + dir.file("preds.jsonl") +
                                      " --out " + dir.file("pope.json"));
    CAPTURE(pope.output);
    CHECK(pope.exit_code == 0);
    CHECK(contains(pope.output, "accuracy  0.5"));
    CHECK(contains(std::string(reinterpret_cast<const char*>(
                                   testutil::read_bytes(dir.file("pope.json")).data()),
                               testutil::read_bytes(dir.file("pope.json")).size()),
                   "\"accuracy\""));

    std::ofstream caps(dir.file("caps.jsonl"));
    caps << "{\"image_id\":\"img0\",\"caption\":\"A dog is sleeping. A cat watches it.\","
            "\"gold_objects\":[\"dog\"]}\n";
    caps.close();
    std::ofstream lex(dir.file("lex.json"));
    lex << "{\"dog\": [], \"cat\": []}\n";
    lex.close();
    CliResult chair = run_cli(dir, "eval chair --captions " + dir.file("caps.jsonl") +
                                       " --lexicon " + dir.file("lex.json"));
    CAPTURE(chair.output);
    CHECK(chair.exit_code == 0);
    CHECK(contains(chair.output, "CHAIR_S 0.5"));
    CHECK(contains(chair.output, "CHAIR_I 0.5"));

    std::ofstream mme(dir.file("mme.jsonl"));
    mme << "{\"image_id\":\"img0\",\"correct\":true}\n";
    mme << "{\"image_id\":\"img0\",\"correct\":true}\n";
    mme << "{\"image_id\":\"img1\",\"correct\":true}\n";
    mme << "{\"image_id\":\"img1\",\"correct\":false}\n";
    mme.close();
    CliResult scored = run_cli(dir, "eval mme --predictions " + dir.file("mme.jsonl"));
    CAPTURE(scored.output);
    CHECK(scored.exit_code == 0);
    CHECK(contains(scored.output, "accuracy  75"));
    CHECK(contains(scored.output, "accuracy+ 50"));
}

TEST_CASE("analyze heatmap writes csv and svg") {
    testutil::TempDir dir;
    run_cli(dir, "synth generate --scenes 8 --seed 5 --out " + dir.file("corpus.jsonl"));
    CliResult r = run_cli(dir, "analyze heatmap --corpus " + dir.file("corpus.jsonl") +
                                   " --out " + dir.file("hm") + " --seed 5");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    auto csv = testutil::read_bytes(dir.file("hm.csv"));
    std::string csv_text(reinterpret_cast<const char*>(csv.data()), csv.size());
    CHECK(csv_text.rfind("layer,head,score", 0) == 0);
    auto svg = testutil::read_bytes(dir.file("hm.svg"));
    std::string svg_text(reinterpret_cast<const char*>(svg.data()), svg.size());
    CHECK(svg_text.rfind("<svg", 0) == 0);
}
