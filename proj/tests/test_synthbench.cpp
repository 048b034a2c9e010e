#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/errors.hpp"
#include "dmas/synthbench.hpp"
#include "testutil.hpp"

using namespace dmas;
using namespace dmas::synth;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n_scenes = 32;
    cfg.probe_scenes = 16;
    cfg.seed = 424242;
    return cfg;
}

// The world build is the expensive part; share one across cases.
const PlantedWorld& shared_world() {
    static PlantedWorld world = build_world(small_config());
    return world;
}

const SteeringAssets& shared_assets() {
    static SteeringAssets assets = build_assets(shared_world());
    return assets;
}

}  // namespace

TEST_CASE("generated corpus is balanced, grouped and deterministic") {
    ModelConfig model;
    std::vector<CorpusRecord> records = generate_corpus(64, 7, model);
    REQUIRE(records.size() == 64);

    int yes = 0;
    for (const CorpusRecord& r : records) {
        CHECK(r.kind == QuestionKind::discriminative);
        CHECK((r.answer == "yes ." || r.answer == "no ."));
        if (r.answer == "yes .") yes++;
        CHECK_FALSE(r.visual.empty());
        CHECK_FALSE(r.objects.empty());
    }
    CHECK(std::abs(yes - 32) <= 1);

    // Template families cycle by index and never share a first word.
    const char* prefixes[4] = {"Is there a ", "Does this picture contain some ",
                               "Can you spot any ", "Might one notice the "};
    for (std::size_t i = 0; i < records.size(); ++i)
        CHECK(records[i].question.rfind(prefixes[i % 4], 0) == 0);

    std::vector<CorpusRecord> again = generate_corpus(64, 7, model);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(again[i].question == records[i].question);
        CHECK(again[i].answer == records[i].answer);
        CHECK(again[i].visual == records[i].visual);
    }
    std::vector<CorpusRecord> other = generate_corpus(64, 8, model);
    bool any_difference = false;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (other[i].question != records[i].question || other[i].visual != records[i].visual)
            any_difference = true;
    CHECK(any_difference);
}

TEST_CASE("scene objects come from the library and questions stay in vocabulary") {
    ModelConfig model;
    std::vector<SyntheticScene> scenes = generate_scenes(24, 3, model);
    REQUIRE(scenes.size() == 24);
    const auto& names = synth_object_names();
    std::set<std::string> known(names.begin(), names.end());
    for (const SyntheticScene& s : scenes) {
        CHECK_FALSE(s.objects.empty());
        for (const std::string& o : s.objects) CHECK(known.count(o) == 1);
        std::set<std::string> dedup(s.objects.begin(), s.objects.end());
        CHECK(dedup.size() == s.objects.size());
    }

    Tokenizer tok = Tokenizer::with_default_vocabulary();
    for (const CorpusRecord& r : generate_corpus(24, 3, model))
        for (int id : tok.encode(r.question)) CHECK(id != 0);
}

TEST_CASE("built world carries consistent metadata and calibration") {
    const PlantedWorld& w = shared_world();
    CHECK(w.records.size() == 32);
    CHECK(w.meta.size() == 32);
    CHECK(w.split == 16);
    CHECK(w.capability.size() == 6);
    CHECK(w.bias_channel.size() == 6);
    CHECK(w.visual_channel.size() == 6);

    // The three planted head sets never overlap.
    std::set<std::pair<int, int>> seen;
    for (const auto* channel : {&w.capability, &w.bias_channel, &w.visual_channel})
        for (const HeadChannel& hc : *channel) {
            CHECK(seen.insert({hc.head.layer, hc.head.head}).second);
            CHECK(hc.response > 0.0);
        }

    CHECK(w.capability_margin > 0.0);
    CHECK(w.margin_noise > 0.0);
    CHECK(w.plant.strength > 0.0);
    CHECK(w.bias_margin == doctest::Approx(w.plant.strength * w.bias_response));
    CHECK(w.tau_f >= w.config.tracer_norm_min);
    CHECK(w.tau_v >= w.config.tracer_norm_min);
    CHECK(w.junk_truth_response.size() == 4);
    CHECK(w.cluster_group.size() == 4);
    for (int g : w.cluster_group) CHECK((g >= 0 && g < 4));
    for (double e : w.eps_f) CHECK(std::isfinite(e));

    for (std::size_t i = 0; i < w.meta.size(); ++i) {
        CHECK(w.meta[i].group == static_cast<int>(i % 4));
        CHECK(w.index_by_id.at(w.records[i].id) == i);
    }
}

TEST_CASE("world build is reproducible") {
    const PlantedWorld& w = shared_world();
    PlantedWorld again = build_world(small_config());
    CHECK(again.plant.strength == w.plant.strength);
    CHECK(again.tau_f == w.tau_f);
    CHECK(again.tau_v == w.tau_v);
    CHECK(again.eps_f == w.eps_f);
    CHECK(again.eps_v == w.eps_v);
    CHECK(testutil::bitwise_equal(again.weights.embedding.data, w.weights.embedding.data));
    for (std::size_t i = 0; i < w.records.size(); ++i)
        CHECK(again.records[i].question == w.records[i].question);
}

TEST_CASE("capability channel moves the answer margin the right way") {
    const PlantedWorld& w = shared_world();
    double present_sum = 0.0, absent_sum = 0.0;
    int present_n = 0, absent_n = 0;
    for (std::size_t i = w.split; i < w.records.size(); ++i) {
        double m = answer_margin(w, i, nullptr);
        if (w.meta[i].present) {
            present_sum += m;
            present_n++;
        } else {
            absent_sum += m;
            absent_n++;
        }
    }
    REQUIRE(present_n > 0);
    REQUIRE(absent_n > 0);
    CHECK(present_sum / present_n > absent_sum / absent_n);
}

TEST_CASE("steering assets cover the extraction half") {
    const SteeringAssets& assets = shared_assets();
    REQUIRE(assets.db.entries.size() == 4);
    std::size_t total = 0;
    for (const auto& e : assets.db.entries) total += e.question_count;
    CHECK(total == shared_world().split);
    CHECK(assets.db.embedder_id == assets.embedder.id());
    CHECK(assets.visual_vector.kind == SteeringVector::Kind::visual);
    CHECK(assets.visual_vector.sample_count == static_cast<int>(shared_world().split));
}

TEST_CASE("zero-strength steering scores exactly like the vanilla arm") {
    const PlantedWorld& w = shared_world();
    const SteeringAssets& assets = shared_assets();
    ArmResult a = evaluate_arm(w, assets, 0.0, 0.0, 32);
    ArmResult b = evaluate_arm(w, assets, 0.0, 0.0, 1024);
    CHECK(a.f1 == b.f1);
    CHECK(a.tp == b.tp);
    CHECK(a.fp == b.fp);
    CHECK(a.tn == b.tn);
    CHECK(a.fn == b.fn);

    PipelineReport rep = run_pipeline(w, assets, Hyper{2.0, 2.0, 32});
    CHECK(rep.none.f1 == a.f1);
    CHECK(rep.f1_vanilla == a.f1);
    CHECK(rep.f1_steered == rep.both.f1);
}

TEST_CASE("grid search covers the cross product in row-major order") {
    const PlantedWorld& w = shared_world();
    const SteeringAssets& assets = shared_assets();
    std::vector<double> alphas{0.0, 2.0};
    std::vector<double> betas{0.0, 1.0};
    std::vector<int> ks{8, 32};
    GridReport rep = grid_search(w, assets, alphas, betas, ks);
    REQUIRE(rep.rows.size() == 8);
    std::size_t r = 0;
    for (double a : alphas)
        for (double b : betas)
            for (int k : ks) {
                CHECK(rep.rows[r].alpha == a);
                CHECK(rep.rows[r].beta == b);
                CHECK(rep.rows[r].k == k);
                ++r;
            }
    double best = -1.0;
    for (const GridRow& row : rep.rows) best = std::max(best, row.f1);
    CHECK(rep.rows[rep.best_index].f1 == best);
    // Earliest row wins ties.
    for (std::size_t i = 0; i < rep.best_index; ++i) CHECK(rep.rows[i].f1 < best);

    // Every cell matches a direct evaluation.
    for (const GridRow& row : rep.rows)
        CHECK(evaluate_arm(w, assets, row.alpha, row.beta, row.k).f1 == row.f1);

    CHECK(rep.csv.rfind("alpha,beta,k,f1\n", 0) == 0);
}

TEST_CASE("dynamic-vs-fixed comparison needs at least two clusters") {
    const SteeringAssets& assets = shared_assets();
    SteeringAssets crippled{assets.db, assets.visual_vector, assets.embedder};
    crippled.db.entries.resize(1);
    CHECK_THROWS_AS(
        (void)compare_dynamic_vs_fixed(shared_world(), crippled, Hyper{1.0, 1.0, 32}),
        param_error);
}

TEST_CASE("labeled differences belong to the extraction half with valid clusters") {
    const PlantedWorld& w = shared_world();
    const SteeringAssets& assets = shared_assets();
    std::vector<LabeledDifference> diffs = labeled_differences(w, assets);
    REQUIRE(diffs.size() == w.split);
    for (const LabeledDifference& d : diffs) {
        CHECK(d.difference.size() == static_cast<std::size_t>(w.weights.config.n_layers) *
                                         w.weights.config.n_heads * w.weights.config.head_dim());
        CHECK((d.cluster_id >= 0 && d.cluster_id < 4));
        CHECK(w.index_by_id.at(d.sample_id) < w.split);
    }
}

TEST_CASE("config validation rejects bad planted setups") {
    SynthConfig overlap = small_config();
    overlap.capability_heads = {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}, {2, 1}};
    overlap.bias_heads = {{0, 0}, {3, 1}, {3, 2}, {3, 3}, {4, 0}, {4, 1}};
    overlap.visual_heads = {{5, 0}, {5, 1}, {5, 2}, {5, 3}, {5, 4}, {5, 5}};
    CHECK_THROWS_AS((void)build_world(overlap), param_error);

    SynthConfig negative = small_config();
    negative.group_bias_multipliers = {1.0, -0.5, 1.0, 1.0};
    CHECK_THROWS_AS((void)build_world(negative), param_error);
}

TEST_CASE("preset configurations keep their distinguishing fields") {
    SynthConfig grouped = SynthConfig::for_group_bias();
    CHECK(grouped.truth_share == 1.0);
    CHECK(grouped.nominal_beta == 0.0);
    bool varied = false;
    for (double m : grouped.group_bias_multipliers)
        if (m != grouped.group_bias_multipliers[0]) varied = true;
    CHECK(varied);

    SynthConfig proj = SynthConfig::for_projection();
    CHECK(proj.n_scenes < SynthConfig{}.n_scenes);
    CHECK(proj.tracer_norm_min > SynthConfig{}.tracer_norm_min);
}
