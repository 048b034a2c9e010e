// dmas command-line tool. Every subcommand reads an optional flat JSON
// config file; explicit flags override config keys; DMAS_SEED is the seed
// of last resort. Exit codes: 0 ok, 1 bad usage or parameters, 2 I/O or
// format problems, 3 internal invariant breach.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dmas/analyze.hpp"
#include "dmas/corpus.hpp"
#include "dmas/errors.hpp"
#include "dmas/evalkit.hpp"
#include "dmas/extraction.hpp"
#include "dmas/intervene.hpp"
#include "dmas/rng.hpp"
#include "dmas/steerdb.hpp"
#include "dmas/svg.hpp"
#include "dmas/synthbench.hpp"
#include "dmas/tokenizer.hpp"
#include "dmas/toymodel.hpp"

namespace {

using dmas::internal_error;
using dmas::io_error;
using dmas::param_error;
using nlohmann::json;

struct RunConfig {
    int n_layers = 6;
    int n_heads = 8;
    int d_model = 64;
    int max_seq = 48;
    std::uint64_t model_seed = 7;
    std::uint64_t seed = 2026;

    int pca_components = 8;
    int diffusion_t = 400;
    int clusters = 4;

    double alpha = 0.0;
    double beta = 0.0;
    int k_f = 32;
    int k_v = 32;
    std::string importance = "l2";

    std::string corpus;
    std::string db;
    std::string visual_vector;
    std::string object_library;
    std::string embedder;  // empty: built-in bag-of-words; else embedding file
    std::string out;
};

json parse_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw io_error(std::string(what) + ": cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw io_error(std::string(what) + ": " + path + ": " + e.what());
    }
}

void load_config_file(RunConfig& rc, const std::string& path) {
    json j = parse_json_file(path, "config");
    if (!j.is_object()) throw io_error("config: " + path + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "n_layers") rc.n_layers = value.get<int>();
            else if (key == "n_heads") rc.n_heads = value.get<int>();
            else if (key == "d_model") rc.d_model = value.get<int>();
            else if (key == "max_seq") rc.max_seq = value.get<int>();
            else if (key == "model_seed") rc.model_seed = value.get<std::uint64_t>();
            else if (key == "seed") rc.seed = value.get<std::uint64_t>();
            else if (key == "pca_components") rc.pca_components = value.get<int>();
            else if (key == "diffusion_t") rc.diffusion_t = value.get<int>();
            else if (key == "clusters") rc.clusters = value.get<int>();
            else if (key == "alpha") rc.alpha = value.get<double>();
            else if (key == "beta") rc.beta = value.get<double>();
            else if (key == "k_f") rc.k_f = value.get<int>();
            else if (key == "k_v") rc.k_v = value.get<int>();
            else if (key == "importance") rc.importance = value.get<std::string>();
            else if (key == "corpus") rc.corpus = value.get<std::string>();
            else if (key == "db") rc.db = value.get<std::string>();
            else if (key == "visual_vector") rc.visual_vector = value.get<std::string>();
            else if (key == "object_library") rc.object_library = value.get<std::string>();
            else if (key == "embedder") rc.embedder = value.get<std::string>();
            else if (key == "out") rc.out = value.get<std::string>();
            else throw param_error("config: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw io_error("config: " + path + ": key '" + key + "': " + e.what());
        }
    }
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw param_error(std::string("missing required ") + flag);
}

dmas::ModelConfig model_config(const RunConfig& rc, const dmas::Tokenizer& tokenizer) {
    dmas::ModelConfig mc;
    mc.n_layers = rc.n_layers;
    mc.n_heads = rc.n_heads;
    mc.d_model = rc.d_model;
    mc.max_seq = rc.max_seq;
    mc.seed = rc.model_seed;
    mc.vocab_size = tokenizer.size();
    mc.validate();
    return mc;
}

std::unique_ptr<dmas::Embedder> make_embedder(const RunConfig& rc) {
    if (rc.embedder.empty()) return std::make_unique<dmas::ToyEmbedder>(64);
    return std::make_unique<dmas::FileEmbedder>(rc.embedder);
}

std::vector<dmas::ContrastiveSample> contrastive_corpus(const std::vector<dmas::CorpusRecord>& records,
                                                        const dmas::Tokenizer& tokenizer,
                                                        std::uint64_t seed) {
    std::vector<dmas::ContrastiveSample> samples;
    samples.reserve(records.size());
    std::uint64_t s = dmas::derive_seed(seed, "contrastive");
    for (const auto& r : records) samples.push_back(dmas::make_contrastive(r, tokenizer, s));
    return samples;
}

std::vector<dmas::VisualSample> visual_corpus(const std::vector<dmas::CorpusRecord>& records) {
    std::vector<dmas::VisualSample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        dmas::VisualSample s;
        s.id = r.id;
        s.visual.vectors = r.visual;
        s.objects = r.objects;
        out.push_back(std::move(s));
    }
    return out;
}

// Visual vectors ride in the database container as a single entry with this
// marker in the embedder slot, so the two file kinds cannot be mixed up.
constexpr const char* kVisualMarker = "visual-vector";

void check_fingerprint(std::uint64_t stored, const dmas::ModelConfig& mc, const char* what) {
    if (stored != dmas::config_fingerprint(mc))
        throw param_error(std::string(what) +
                          " was built against a different model config; refusing to apply it");
}

dmas::SteeringVector load_visual_vector(const std::string& path, const dmas::ModelConfig& mc) {
    dmas::SteeringDatabase db = dmas::load_database(path);
    if (db.embedder_id != kVisualMarker || db.entries.size() != 1)
        throw param_error("'" + path + "' is not a visual vector file");
    check_fingerprint(db.model_fingerprint, mc, "visual vector");
    dmas::SteeringVector v;
    v.values = db.entries[0].value;
    v.kind = dmas::SteeringVector::Kind::visual;
    v.sample_count = static_cast<int>(db.entries[0].question_count);
    return v;
}

double vector_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void write_file_or_stdout(const std::string& path, const std::string& content) {
    if (path.empty()) {
        std::cout << content;
        return;
    }
    dmas::write_text_file(path, content);
    std::cout << "wrote " << path << "\n";
}

int cmd_build_db(const RunConfig& rc) {
    require(rc.corpus, "--corpus");
    require(rc.out, "--out");
    dmas::Tokenizer tokenizer = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc = model_config(rc, tokenizer);
    dmas::ModelWeights weights = dmas::init_model(mc);
    auto records = dmas::load_corpus(rc.corpus, mc.d_model);
    auto samples = contrastive_corpus(records, tokenizer, rc.seed);
    auto embedder = make_embedder(rc);
    dmas::SteeringDatabase db =
        dmas::build_database(samples, rc.clusters, *embedder, weights, rc.pca_components,
                             dmas::derive_seed(rc.seed, "db"), {});
    dmas::save_database(db, rc.out);
    for (const auto& e : db.entries)
        std::cout << "cluster " << e.cluster_id << ": " << e.question_count
                  << " questions, key norm " << vector_norm(e.key) << "\n";
    std::cout << "wrote " << rc.out << "\n";
    return 0;
}

int cmd_visual_vector(const RunConfig& rc) {
    require(rc.corpus, "--corpus");
    require(rc.object_library, "--object-library");
    require(rc.out, "--out");
    dmas::Tokenizer tokenizer = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc = model_config(rc, tokenizer);
    dmas::ModelWeights weights = dmas::init_model(mc);
    auto records = dmas::load_corpus(rc.corpus, mc.d_model);
    dmas::ObjectLibrary library = dmas::load_object_library(rc.object_library);
    dmas::DiffusionSchedule schedule;
    dmas::SteeringVector v = dmas::visual_perception_vector(
        visual_corpus(records), library, weights, tokenizer, schedule, rc.diffusion_t,
        rc.pca_components, dmas::derive_seed(rc.seed, "visual"), {});

    dmas::SteeringDatabase container;
    container.embedder_id = kVisualMarker;
    container.model_fingerprint = dmas::config_fingerprint(mc);
    container.d_emb = 0;
    container.n_layers = v.values.n_layers;
    container.n_heads = v.values.n_heads;
    container.head_dim = v.values.head_dim;
    dmas::SteeringDatabase::Entry entry;
    entry.cluster_id = 0;
    entry.question_count = static_cast<std::uint32_t>(v.sample_count);
    entry.value = v.values;
    container.entries.push_back(std::move(entry));
    dmas::save_database(container, rc.out);

    std::cout << "samples " << v.sample_count << ", tensor norm " << vector_norm(v.values.data)
              << "\n";
    std::cout << "wrote " << rc.out << "\n";
    return 0;
}

dmas::VisualPrefix load_scene(const std::string& path, int d_model) {
    json j = parse_json_file(path, "scene");
    if (!j.is_object() || !j.contains("visual") || !j["visual"].is_array())
        throw io_error("scene: " + path + ": expected {\"visual\": [[...], ...]}");
    dmas::VisualPrefix vis;
    for (const auto& row : j["visual"]) {
        if (!row.is_array()) throw io_error("scene: " + path + ": visual rows must be arrays");
        std::vector<double> v;
        for (const auto& x : row) {
            if (!x.is_number()) throw io_error("scene: " + path + ": visual entries must be numbers");
            v.push_back(x.get<double>());
        }
        if (static_cast<int>(v.size()) != d_model)
            throw param_error("scene: visual vector width " + std::to_string(v.size()) +
                              " does not match d_model " + std::to_string(d_model));
        vis.vectors.push_back(std::move(v));
    }
    return vis;
}

int cmd_infer(const RunConfig& rc, const std::string& question, const std::string& scene_path,
              bool last_position_only) {
    require(rc.db, "--db");
    require(rc.visual_vector, "--visual-vector");
    if (question.empty()) throw param_error("missing required --question");
    require(scene_path, "--scene");
    if (!std::isfinite(rc.alpha) || !std::isfinite(rc.beta))
        throw param_error("alpha and beta must be finite");
    if (rc.k_f < 0 || rc.k_v < 0) throw param_error("K must be nonnegative");

    dmas::Tokenizer tokenizer = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc = model_config(rc, tokenizer);
    dmas::ModelWeights weights = dmas::init_model(mc);

    dmas::SteeringDatabase db = dmas::load_database(rc.db);
    auto embedder = make_embedder(rc);
    if (db.embedder_id != embedder->id())
        throw param_error("database was built with embedder '" + db.embedder_id +
                          "', not '" + embedder->id() + "'");
    check_fingerprint(db.model_fingerprint, mc, "database");
    dmas::SteeringVector visual = load_visual_vector(rc.visual_vector, mc);
    dmas::VisualPrefix scene = load_scene(scene_path, mc.d_model);

    dmas::RetrievalResult rr = dmas::retrieve(db, question, *embedder);
    dmas::InterventionPlan plan =
        dmas::make_plan(rr.vector, visual, rc.alpha, rc.beta, rc.k_f, rc.k_v,
                        dmas::importance_mode_from_string(rc.importance));
    plan.last_position_only = last_position_only;

    std::vector<int> tokens = tokenizer.encode(question);
    dmas::ForwardOptions opts;
    opts.plan = &plan;
    dmas::ForwardResult res = dmas::forward(weights, scene, tokens, opts);
    int yes_id = tokenizer.token_id("yes");
    int no_id = tokenizer.token_id("no");
    bool yes = res.logits[static_cast<std::size_t>(yes_id)] >
               res.logits[static_cast<std::size_t>(no_id)];

    std::cout << "answer: " << (yes ? "yes" : "no") << "\n";
    std::cout << "cluster: " << rr.cluster_id << "\n";
    std::cout << "similarity: " << rr.similarity << "\n";
    return 0;
}

int cmd_analyze_heatmap(const RunConfig& rc, const std::string& kind) {
    require(rc.corpus, "--corpus");
    require(rc.out, "--out");
    dmas::Tokenizer tokenizer = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc = model_config(rc, tokenizer);
    dmas::ModelWeights weights = dmas::init_model(mc);
    auto records = dmas::load_corpus(rc.corpus, mc.d_model);

    dmas::HeadTensor mean;
    if (kind == "truthfulness") {
        mean = dmas::mean_truthfulness_difference(contrastive_corpus(records, tokenizer, rc.seed),
                                                  weights);
    } else if (kind == "visual") {
        require(rc.object_library, "--object-library");
        dmas::ObjectLibrary library = dmas::load_object_library(rc.object_library);
        dmas::DiffusionSchedule schedule;
        // m = 0 keeps the raw mean, which is exactly what the heatmap shows.
        mean = dmas::visual_perception_vector(visual_corpus(records), library, weights, tokenizer,
                                              schedule, rc.diffusion_t, 0,
                                              dmas::derive_seed(rc.seed, "visual"), {})
                   .values;
    } else {
        throw param_error("--kind must be truthfulness or visual");
    }

    dmas::HeatmapReport rep =
        dmas::head_difference_heatmap(mean, dmas::importance_mode_from_string(rc.importance));
    dmas::write_text_file(rc.out + ".csv", rep.csv);
    dmas::write_text_file(rc.out + ".svg", dmas::heatmap_svg(rep.grid, "head", "layer"));
    std::cout << "wrote " << rc.out << ".csv\n";
    std::cout << "wrote " << rc.out << ".svg\n";
    return 0;
}

int cmd_analyze_projection(const RunConfig& rc) {
    require(rc.corpus, "--corpus");
    require(rc.db, "--db");
    require(rc.out, "--out");
    dmas::Tokenizer tokenizer = dmas::Tokenizer::with_default_vocabulary();
    dmas::ModelConfig mc = model_config(rc, tokenizer);
    dmas::ModelWeights weights = dmas::init_model(mc);
    auto records = dmas::load_corpus(rc.corpus, mc.d_model);
    auto samples = contrastive_corpus(records, tokenizer, rc.seed);

    dmas::SteeringDatabase db = dmas::load_database(rc.db);
    auto embedder = make_embedder(rc);
    if (db.embedder_id != embedder->id())
        throw param_error("database was built with embedder '" + db.embedder_id +
                          "', not '" + embedder->id() + "'");
    check_fingerprint(db.model_fingerprint, mc, "database");

    std::vector<dmas::LabeledDifference> diffs;
    diffs.reserve(samples.size());
    for (const auto& s : samples) {
        std::vector<int> pos_seq = s.prompt;
        pos_seq.insert(pos_seq.end(), s.y_pos.begin(), s.y_pos.end());
        std::vector<int> neg_seq = s.prompt;
        neg_seq.insert(neg_seq.end(), s.y_neg.begin(), s.y_neg.end());
        dmas::HeadTensor diff =
            dmas::capture_last_token_activations(weights, s.visual, pos_seq) -
            dmas::capture_last_token_activations(weights, s.visual, neg_seq);
        dmas::LabeledDifference d;
        d.sample_id = s.id;
        d.cluster_id = static_cast<int>(dmas::retrieve(db, s.question, *embedder).cluster_id);
        d.difference = std::move(diff.data);
        diffs.push_back(std::move(d));
    }

    dmas::ProjectionReport rep = dmas::cluster_projection(diffs);
    dmas::write_text_file(rc.out + ".csv", rep.csv);
    dmas::write_text_file(rc.out + ".svg", dmas::scatter_svg(rep.points, rep.labels));
    std::cout << diffs.size() << " samples projected\n";
    std::cout << "wrote " << rc.out << ".csv\n";
    std::cout << "wrote " << rc.out << ".svg\n";
    return 0;
}

json arm_json(const dmas::synth::ArmResult& a) {
    return {{"f1", a.f1},         {"accuracy", a.accuracy}, {"fpr", a.fpr}, {"tp", a.tp},
            {"fp", a.fp},         {"tn", a.tn},             {"fn", a.fn}};
}

int cmd_grid(std::size_t scenes, std::uint64_t seed, std::size_t threads,
             std::vector<double> alphas, std::vector<double> betas, std::vector<int> ks,
             const std::string& out, const std::string& charts) {
    require(out, "--out");
    dmas::synth::SynthConfig cfg;
    cfg.n_scenes = scenes;
    cfg.seed = seed;
    cfg.threads = threads;
    dmas::synth::PlantedWorld world = dmas::synth::build_world(cfg);
    dmas::synth::SteeringAssets assets = dmas::synth::build_assets(world);
    if (alphas.empty()) alphas = dmas::synth::default_alpha_grid();
    if (betas.empty()) betas = dmas::synth::default_beta_grid();
    if (ks.empty()) ks = dmas::synth::default_k_grid();
    dmas::synth::GridReport rep =
        dmas::synth::grid_search(world, assets, alphas, betas, ks, threads);
    dmas::write_text_file(out, rep.csv);
    std::cout << "wrote " << out << " (" << rep.rows.size() << " rows)\n";
    const auto& best = rep.rows[rep.best_index];
    std::cout << "best: alpha " << best.alpha << ", beta " << best.beta << ", K " << best.k
              << ", F1 " << best.f1 << "\n";
    if (!charts.empty()) {
        dmas::synth::SweepCharts sc = dmas::synth::sweep_charts(rep);
        dmas::write_text_file(charts + ".alpha.svg", sc.alpha_svg);
        dmas::write_text_file(charts + ".beta.svg", sc.beta_svg);
        std::cout << "wrote " << charts << ".alpha.svg\n";
        std::cout << "wrote " << charts << ".beta.svg\n";
    }
    return 0;
}

bool json_yes(const json& j, const std::string& bool_key, const std::string& word_key,
              const std::string& path, std::size_t line) {
    if (j.contains(bool_key)) {
        if (!j[bool_key].is_boolean())
            throw io_error(path + ":" + std::to_string(line) + ": " + bool_key +
                           " must be a boolean");
        return j[bool_key].get<bool>();
    }
    if (j.contains(word_key)) {
        std::string w = j[word_key].get<std::string>();
        if (w == "yes") return true;
        if (w == "no") return false;
        throw io_error(path + ":" + std::to_string(line) + ": " + word_key +
                       " must be yes or no");
    }
    throw io_error(path + ":" + std::to_string(line) + ": missing " + bool_key + " or " +
                   word_key);
}

std::vector<json> load_jsonl(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw io_error(std::string(what) + ": cannot open " + path);
    std::vector<json> lines;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            lines.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw io_error(std::string(what) + ": " + path + ":" + std::to_string(n) + ": " +
                           e.what());
        }
        if (!lines.back().is_object())
            throw io_error(std::string(what) + ": " + path + ":" + std::to_string(n) +
                           ": expected a JSON object");
    }
    return lines;
}

int cmd_eval_chair(const std::string& captions_path, const std::string& lexicon_path,
                   const std::string& out) {
    require(captions_path, "--captions");
    require(lexicon_path, "--lexicon");
    dmas::ObjectLexicon lexicon = dmas::ObjectLexicon::from_json_file(lexicon_path);
    std::vector<dmas::CaptionRecord> records;
    std::size_t line = 0;
    for (const json& j : load_jsonl(captions_path, "captions")) {
        ++line;
        dmas::CaptionRecord r;
        try {
            r.image_id = j.at("image_id").get<std::string>();
            r.caption = j.at("caption").get<std::string>();
            for (const auto& g : j.at("gold_objects")) r.gold_objects.insert(g.get<std::string>());
        } catch (const json::exception& e) {
            throw io_error("captions: " + captions_path + ":" + std::to_string(line) + ": " +
                           e.what());
        }
        records.push_back(std::move(r));
    }
    dmas::ChairScores s = dmas::chair_scores(records, lexicon);
    json rep = {{"chair_s", s.chair_s},
                {"chair_i", s.chair_i},
                {"total_sentences", s.total_sentences},
                {"hallucinated_sentences", s.hallucinated_sentences},
                {"total_mentions", s.total_mentions},
                {"hallucinated_mentions", s.hallucinated_mentions}};
    write_file_or_stdout(out, rep.dump(2) + "\n");
    std::cout << "CHAIR_S " << s.chair_s << "  (" << s.hallucinated_sentences << "/"
              << s.total_sentences << " sentences)\n";
    std::cout << "CHAIR_I " << s.chair_i << "  (" << s.hallucinated_mentions << "/"
              << s.total_mentions << " mentions)\n";
    return 0;
}

int cmd_eval_pope(const std::string& predictions_path, const std::string& out) {
    require(predictions_path, "--predictions");
    std::vector<dmas::BinaryPrediction> preds;
    std::size_t line = 0;
    for (const json& j : load_jsonl(predictions_path, "predictions")) {
        ++line;
        dmas::BinaryPrediction p;
        p.id = j.value("id", std::string("line-") + std::to_string(line));
        p.predicted_yes = json_yes(j, "predicted_yes", "predicted", predictions_path, line);
        p.gold_yes = json_yes(j, "gold_yes", "gold", predictions_path, line);
        preds.push_back(std::move(p));
    }
    dmas::PopeMetrics m = dmas::pope_metrics(preds);
    json rep = {{"accuracy", m.accuracy}, {"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
    rep["precision"] = m.precision ? json(*m.precision) : json(nullptr);
    rep["recall"] = m.recall ? json(*m.recall) : json(nullptr);
    rep["f1"] = m.f1 ? json(*m.f1) : json(nullptr);
    write_file_or_stdout(out, rep.dump(2) + "\n");
    auto show = [](const std::optional<double>& v) {
        return v ? std::to_string(*v) : std::string("undefined");
    };
    std::cout << "accuracy  " << m.accuracy << "\n";
    std::cout << "precision " << show(m.precision) << "\n";
    std::cout << "recall    " << show(m.recall) << "\n";
    std::cout << "f1        " << show(m.f1) << "\n";
    std::cout << "tp " << m.tp << " fp " << m.fp << " tn " << m.tn << " fn " << m.fn << "\n";
    return 0;
}

int cmd_eval_mme(const std::string& predictions_path, const std::string& out) {
    require(predictions_path, "--predictions");
    std::vector<dmas::MmeQuestion> questions;
    std::size_t line = 0;
    for (const json& j : load_jsonl(predictions_path, "predictions")) {
        ++line;
        dmas::MmeQuestion q;
        try {
            q.image_id = j.at("image_id").get<std::string>();
        } catch (const json::exception& e) {
            throw io_error("predictions: " + predictions_path + ":" + std::to_string(line) +
                           ": " + e.what());
        }
        if (j.contains("correct")) {
            if (!j["correct"].is_boolean())
                throw io_error("predictions: " + predictions_path + ":" + std::to_string(line) +
                               ": correct must be a boolean");
            q.correct = j["correct"].get<bool>();
        } else {
            q.correct = json_yes(j, "predicted_yes", "predicted", predictions_path, line) ==
                        json_yes(j, "gold_yes", "gold", predictions_path, line);
        }
        questions.push_back(std::move(q));
    }
    dmas::MmeScore s = dmas::mme_score(questions);
    json rep = {{"accuracy", s.accuracy},
                {"accuracy_plus", s.accuracy_plus},
                {"total", s.total},
                {"n_images", s.n_images},
                {"n_questions", s.n_questions}};
    write_file_or_stdout(out, rep.dump(2) + "\n");
    std::cout << "accuracy  " << s.accuracy << "\n";
    std::cout << "accuracy+ " << s.accuracy_plus << "\n";
    std::cout << "total     " << s.total << "\n";
    return 0;
}

int cmd_synth_generate(std::size_t scenes, std::uint64_t seed, const std::string& out) {
    require(out, "--out");
    dmas::ModelConfig mc;
    auto records = dmas::synth::generate_corpus(scenes, seed, mc);
    dmas::save_corpus(records, out);
    std::cout << "wrote " << out << " (" << records.size() << " records)\n";
    return 0;
}

int cmd_synth_run(std::size_t scenes, std::uint64_t seed, std::size_t threads,
                  const std::string& out_prefix) {
    dmas::synth::SynthConfig cfg;
    cfg.n_scenes = scenes;
    cfg.seed = seed;
    cfg.threads = threads;
    dmas::synth::SynthRunReport rep = dmas::synth::run_full(cfg);

    json heads = json::array();
    for (const auto& h : rep.plant.heads) heads.push_back({h.layer, h.head});
    json j = {{"f1_vanilla", rep.f1_vanilla},
              {"f1_unbiased", rep.f1_unbiased},
              {"f1_steered", rep.pipeline.f1_steered},
              {"flip_rate_reduction", rep.pipeline.flip_rate_reduction},
              {"arms",
               {{"both", arm_json(rep.pipeline.both)},
                {"truth_only", arm_json(rep.pipeline.truth_only)},
                {"visual_only", arm_json(rep.pipeline.visual_only)},
                {"none", arm_json(rep.pipeline.none)}}},
              {"best",
               {{"alpha", rep.best.alpha},
                {"beta", rep.best.beta},
                {"k", rep.best.k},
                {"f1", rep.best.f1}}},
              {"best_improvement", rep.best_improvement},
              {"f1_negated", rep.f1_negated},
              {"bias", {{"strength", rep.plant.strength}, {"margin", rep.bias_margin},
                        {"heads", heads}}},
              {"capability_margin", rep.capability_margin},
              {"margin_noise", rep.margin_noise},
              {"base_margin_std", rep.base_margin_std},
              {"tau_f", rep.tau_f},
              {"tau_v", rep.tau_v}};

    if (!out_prefix.empty()) {
        dmas::write_text_file(out_prefix + ".json", j.dump(2) + "\n");
        dmas::write_text_file(out_prefix + ".grid.csv", rep.grid.csv);
        dmas::synth::SweepCharts sc = dmas::synth::sweep_charts(rep.grid);
        dmas::write_text_file(out_prefix + ".alpha.svg", sc.alpha_svg);
        dmas::write_text_file(out_prefix + ".beta.svg", sc.beta_svg);
        std::cout << "wrote " << out_prefix << ".json, .grid.csv, .alpha.svg, .beta.svg\n";
    }
    std::cout << "vanilla F1      " << rep.f1_vanilla << "\n";
    std::cout << "steered F1      " << rep.pipeline.f1_steered << " (both arms)\n";
    std::cout << "truth-only F1   " << rep.pipeline.truth_only.f1 << "\n";
    std::cout << "visual-only F1  " << rep.pipeline.visual_only.f1 << "\n";
    std::cout << "flip reduction  " << rep.pipeline.flip_rate_reduction << "\n";
    std::cout << "best grid cell  alpha " << rep.best.alpha << ", beta " << rep.best.beta
              << ", K " << rep.best.k << ", F1 " << rep.best.f1 << "\n";
    std::cout << "negated best F1 " << rep.f1_negated << "\n";
    return 0;
}

int cmd_synth_compare(std::size_t scenes, std::uint64_t seed, std::size_t threads,
                      const std::string& out) {
    dmas::synth::SynthConfig cfg = dmas::synth::SynthConfig::for_group_bias();
    cfg.n_scenes = scenes;
    cfg.seed = seed;
    cfg.threads = threads;
    dmas::synth::PlantedWorld world = dmas::synth::build_world(cfg);
    dmas::synth::SteeringAssets assets = dmas::synth::build_assets(world);
    dmas::synth::Hyper hyper{cfg.nominal_alpha, cfg.nominal_beta, cfg.nominal_k};
    dmas::synth::CompareReport rep = dmas::synth::compare_dynamic_vs_fixed(world, assets, hyper);
    if (!out.empty()) {
        json j = {{"f1_dynamic", rep.f1_dynamic},
                  {"f1_fixed", rep.f1_fixed},
                  {"f1_vanilla", rep.f1_vanilla}};
        dmas::write_text_file(out, j.dump(2) + "\n");
        std::cout << "wrote " << out << "\n";
    }
    std::cout << "dynamic F1 " << rep.f1_dynamic << "\n";
    std::cout << "fixed F1   " << rep.f1_fixed << "\n";
    std::cout << "vanilla F1 " << rep.f1_vanilla << "\n";
    return 0;
}

// The config file must take effect before CLI11 binds flag values on top,
// so --config is found by a manual scan first and registered with the
// parser purely for help text and validation.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--config") {
            if (i + 1 >= argc) throw param_error("--config needs a path");
            return argv[i + 1];
        }
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

int run(int argc, char** argv) {
    RunConfig rc;
    if (const char* env = std::getenv("DMAS_SEED")) {
        try {
            rc.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw param_error(std::string("DMAS_SEED is not a number: ") + env);
        }
    }
    std::string config_path = find_config_arg(argc, argv);
    if (!config_path.empty()) load_config_file(rc, config_path);

    CLI::App app{"activation steering toolkit"};
    app.require_subcommand(1);
    std::string config_sink;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_sink, "flat JSON config file; flags override");
        cmd->add_option("--seed", rc.seed, "root seed (DMAS_SEED env as fallback)");
    };
    auto add_model = [&](CLI::App* cmd) {
        cmd->add_option("--layers", rc.n_layers, "transformer layers");
        cmd->add_option("--heads", rc.n_heads, "attention heads per layer");
        cmd->add_option("--d-model", rc.d_model, "model width");
        cmd->add_option("--max-seq", rc.max_seq, "maximum sequence length");
        cmd->add_option("--model-seed", rc.model_seed, "weight init seed");
    };

    CLI::App* build = app.add_subcommand("build-db", "cluster a corpus and extract steering vectors");
    add_common(build);
    add_model(build);
    build->add_option("--corpus", rc.corpus, "JSONL question corpus");
    build->add_option("--out", rc.out, "output database path");
    build->add_option("--clusters", rc.clusters, "number of semantic clusters");
    build->add_option("--pca-components", rc.pca_components, "denoising components, 0 to skip");
    build->add_option("--embedder", rc.embedder, "embedding file (default: built-in bag of words)");

    CLI::App* vis = app.add_subcommand("visual-vector", "extract the visual perception vector");
    add_common(vis);
    add_model(vis);
    vis->add_option("--corpus", rc.corpus, "JSONL corpus with visual prefixes and objects");
    vis->add_option("--object-library", rc.object_library, "JSON {category: [names]}");
    vis->add_option("--out", rc.out, "output vector path");
    vis->add_option("--diffusion-t", rc.diffusion_t, "corruption step");
    vis->add_option("--pca-components", rc.pca_components, "denoising components, 0 to skip");

    CLI::App* infer = app.add_subcommand("infer", "answer one question with steering applied");
    add_common(infer);
    add_model(infer);
    std::string question, scene_path;
    bool last_position_only = false;
    infer->add_option("--db", rc.db, "steering database");
    infer->add_option("--visual-vector", rc.visual_vector, "visual vector file");
    infer->add_option("--question", question, "question text");
    infer->add_option("--scene", scene_path, "scene JSON with visual prefix vectors");
    infer->add_option("--alpha", rc.alpha, "truthfulness steering strength");
    infer->add_option("--beta", rc.beta, "visual steering strength");
    infer->add_option("--k-f", rc.k_f, "top-K heads for the truthfulness vector");
    infer->add_option("--k-v", rc.k_v, "top-K heads for the visual vector");
    infer->add_option("--importance", rc.importance, "head scoring rule: l2, l1, signed-sum");
    infer->add_option("--embedder", rc.embedder, "embedding file (default: built-in bag of words)");
    infer->add_flag("--last-position-only", last_position_only,
                    "steer only the final sequence position");

    CLI::App* analyze = app.add_subcommand("analyze", "heatmaps and cluster projections");
    analyze->require_subcommand(1);
    CLI::App* heatmap = analyze->add_subcommand("heatmap", "per-head mean difference heatmap");
    add_common(heatmap);
    add_model(heatmap);
    std::string kind = "truthfulness";
    heatmap->add_option("--corpus", rc.corpus, "JSONL corpus");
    heatmap->add_option("--kind", kind, "truthfulness or visual");
    heatmap->add_option("--object-library", rc.object_library, "needed for --kind visual");
    heatmap->add_option("--diffusion-t", rc.diffusion_t, "corruption step for --kind visual");
    heatmap->add_option("--importance", rc.importance, "head scoring rule");
    heatmap->add_option("--out", rc.out, "output prefix (.csv and .svg added)");
    CLI::App* projection = analyze->add_subcommand("projection", "2-D view of per-sample differences");
    add_common(projection);
    add_model(projection);
    projection->add_option("--corpus", rc.corpus, "JSONL corpus");
    projection->add_option("--db", rc.db, "steering database for cluster labels");
    projection->add_option("--embedder", rc.embedder, "embedding file");
    projection->add_option("--out", rc.out, "output prefix (.csv and .svg added)");

    CLI::App* grid = app.add_subcommand("grid", "hyperparameter grid search on the planted benchmark");
    add_common(grid);
    std::size_t scenes = 512, threads = 0;
    std::vector<double> alphas, betas;
    std::vector<int> ks;
    std::string charts;
    grid->add_option("--scenes", scenes, "benchmark scenes");
    grid->add_option("--threads", threads, "worker threads, 0 = all cores");
    grid->add_option("--alphas", alphas, "alpha grid (default 0.5 1 2 ... 10)");
    grid->add_option("--betas", betas, "beta grid (default 0.5 1 2 ... 10)");
    grid->add_option("--ks", ks, "K grid (default 32 64 128 256 512 1024)");
    grid->add_option("--out", rc.out, "output CSV path");
    grid->add_option("--charts", charts, "chart prefix (.alpha.svg, .beta.svg)");

    CLI::App* eval = app.add_subcommand("eval", "hallucination metrics");
    eval->require_subcommand(1);
    std::string captions, lexicon, predictions;
    CLI::App* chair = eval->add_subcommand("chair", "caption hallucination rates");
    chair->add_option("--captions", captions, "JSONL {image_id, caption, gold_objects}");
    chair->add_option("--lexicon", lexicon, "JSON {canonical: [aliases]}");
    chair->add_option("--out", rc.out, "write the JSON report here instead of stdout");
    CLI::App* pope = eval->add_subcommand("pope", "yes/no probing metrics");
    pope->add_option("--predictions", predictions,
                     "JSONL {id, predicted_yes|predicted, gold_yes|gold}");
    pope->add_option("--out", rc.out, "write the JSON report here instead of stdout");
    CLI::App* mme = eval->add_subcommand("mme", "two-questions-per-image score");
    mme->add_option("--predictions", predictions,
                    "JSONL {image_id, correct} or prediction/gold pairs");
    mme->add_option("--out", rc.out, "write the JSON report here instead of stdout");

    CLI::App* synth = app.add_subcommand("synth", "planted-bias benchmark");
    synth->require_subcommand(1);
    CLI::App* sgen = synth->add_subcommand("generate", "write the synthetic corpus");
    add_common(sgen);
    sgen->add_option("--scenes", scenes, "scene count");
    sgen->add_option("--out", rc.out, "output JSONL path");
    CLI::App* srun = synth->add_subcommand("run", "full benchmark: ablations, grid, negation");
    add_common(srun);
    srun->add_option("--scenes", scenes, "scene count");
    srun->add_option("--threads", threads, "worker threads, 0 = all cores");
    srun->add_option("--out", rc.out, "output prefix (.json, .grid.csv, charts)");
    CLI::App* scmp = synth->add_subcommand("compare-fixed", "retrieval vs merged fixed vector");
    add_common(scmp);
    scmp->add_option("--scenes", scenes, "scene count");
    scmp->add_option("--threads", threads, "worker threads, 0 = all cores");
    scmp->add_option("--out", rc.out, "optional JSON report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (build->parsed()) return cmd_build_db(rc);
    if (vis->parsed()) return cmd_visual_vector(rc);
    if (infer->parsed()) return cmd_infer(rc, question, scene_path, last_position_only);
    if (analyze->parsed()) {
        if (heatmap->parsed()) return cmd_analyze_heatmap(rc, kind);
        return cmd_analyze_projection(rc);
    }
    if (grid->parsed()) return cmd_grid(scenes, rc.seed, threads, alphas, betas, ks, rc.out, charts);
    if (eval->parsed()) {
        if (chair->parsed()) return cmd_eval_chair(captions, lexicon, rc.out);
        if (pope->parsed()) return cmd_eval_pope(predictions, rc.out);
        return cmd_eval_mme(predictions, rc.out);
    }
    if (synth->parsed()) {
        if (sgen->parsed()) return cmd_synth_generate(scenes, rc.seed, rc.out);
        if (srun->parsed()) return cmd_synth_run(scenes, rc.seed, threads, rc.out);
        return cmd_synth_compare(scenes, rc.seed, threads, rc.out);
    }
    throw internal_error("no subcommand dispatched");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const param_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const internal_error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
