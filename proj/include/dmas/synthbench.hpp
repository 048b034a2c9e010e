#pragma once

// Synthetic end-to-end testbed. A fixed random transformer knows nothing, so
// every task-relevant signal is planted through per-head output additions:
//
//   capability  presence/absence of the asked object moves the yes-no margin
//               by a calibrated amount (plus per-question noise), so the
//               unplanted-bias model is accurate;
//   bias        an unconditional push toward "yes" at a separate head set,
//               strength bisected until vanilla F1 lands near a target
//               inside the acceptance window; this is the hallucination;
//   tracers     small additions at the bias heads (and a third, visual head
//               set) applied only at the capture position of teacher-forced
//               extraction passes, with sign keyed to whether the forced
//               answer agrees with the truth. Capability and bias are equal
//               on both contrast sides and cancel in the activation
//               differences; the tracers survive, so the extracted vectors
//               point against the bias and steering can undo it.
//
// Per-head response directions and magnitudes are measured on the actual
// model by finite differences, so the planted margins hold for whatever the
// seeded weights turn out to be. Everything is a pure function of the seeds.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmas/analyze.hpp"
#include "dmas/corpus.hpp"
#include "dmas/evalkit.hpp"
#include "dmas/extraction.hpp"
#include "dmas/steerdb.hpp"
#include "dmas/tokenizer.hpp"
#include "dmas/toymodel.hpp"

namespace dmas::synth {

struct HeadRef {
    int layer = 0;
    int head = 0;
};

struct SynthConfig {
    std::size_t n_scenes = 512;
    std::uint64_t seed = 2026;
    ModelConfig model;  // vocab_size is overwritten from the tokenizer

    // Head sets for the three planted channels; empty means built-in
    // defaults. The sets must be pairwise disjoint.
    std::vector<HeadRef> capability_heads;
    std::vector<HeadRef> bias_heads;
    std::vector<HeadRef> visual_heads;

    // Margins are in yes-minus-no logit units. 0 = auto: scale from the
    // measured margin noise of the bare model.
    double capability_margin = 0.0;
    double margin_noise = 0.0;
    double vanilla_f1_target = 0.71;
    double f1_tolerance = 0.015;
    std::size_t probe_scenes = 48;
    std::size_t bisection_iters = 16;

    // At (nominal_alpha, nominal_beta) the truth and visual arms together
    // cancel the planted bias, split truth_share : 1 - truth_share.
    double truth_share = 0.55;
    double nominal_alpha = 7.0;
    double nominal_beta = 7.0;
    int nominal_k = 32;

    // Tracer magnitude: factor times the largest junk head norm observed in
    // a tracer-free extraction, clamped to [min, max].
    double tracer_norm_factor = 2.5;
    double tracer_norm_min = 0.35;
    double tracer_norm_max = 1.5;

    // Per-template-group bias multipliers; all-ones gives a uniform bias.
    std::array<double, 4> group_bias_multipliers{1.0, 1.0, 1.0, 1.0};

    int db_clusters = 4;
    int pca_components = 0;  // 0: no denoising; the planted world is clean
    int diffusion_t = 400;
    std::size_t threads = 0;  // 0: hardware concurrency

    // Group-specific biases with proportional tracers and the full bias
    // carried by the truth arm alone: the setup for the dynamic-vs-fixed
    // comparison.
    static SynthConfig for_group_bias();

    // Small world with a raised tracer floor, so the four per-group
    // difference clusters dominate the answer-token junk and separate
    // cleanly under the 2-D projection.
    static SynthConfig for_projection();
};

struct SyntheticScene {
    std::string id;
    std::vector<std::string> objects;  // codebook index order
    VisualPrefix visual;
    std::uint64_t seed = 0;
};

// The user-facing planted hallucination: unconditional per-head additions of
// strength * vectors[i] at heads[i], on every forward pass.
struct PlantedBias {
    std::vector<HeadRef> heads;
    std::vector<std::vector<double>> vectors;  // unit, head_dim each
    double strength = 0.0;
};

// 8 categories x 4 objects, the fixed scene vocabulary.
ObjectLibrary synth_object_library();
const std::vector<std::string>& synth_object_names();  // flattened, index order

std::vector<SyntheticScene> generate_scenes(std::size_t n_scenes, std::uint64_t seed,
                                            const ModelConfig& model);

// One discriminative question per scene, template cycling through 4
// word-disjoint groups, gold answers balanced to 50% +-1 yes.
std::vector<CorpusRecord> generate_corpus(std::size_t n_scenes, std::uint64_t seed,
                                          const ModelConfig& model);

// Measured local response model of one head: the unit direction in head
// space along which additions move the yes-no margin fastest, and the margin
// gained per unit of addition along it.
struct HeadChannel {
    HeadRef head;
    std::vector<double> aligned;
    double response = 0.0;
};

struct RecordMeta {
    int group = 0;
    bool present = false;
    std::string object;
    double noise = 0.0;  // per-question margin jitter, fixed at build
};

struct PlantedWorld {
    PlantedWorld(SynthConfig cfg, Tokenizer tok)
        : config(std::move(cfg)), tokenizer(std::move(tok)) {}

    SynthConfig config;
    Tokenizer tokenizer;
    ModelWeights weights;
    std::vector<CorpusRecord> records;
    std::vector<RecordMeta> meta;
    std::unordered_map<std::string, std::size_t> index_by_id;
    std::size_t split = 0;  // [0, split) extraction, [split, n) evaluation
    int yes_id = 0, no_id = 0;

    std::vector<HeadChannel> capability, bias_channel, visual_channel;
    double base_margin_std = 0.0;
    double capability_margin = 0.0;
    double margin_noise = 0.0;
    double capability_response = 0.0;  // summed over capability heads
    double bias_response = 0.0;
    double visual_response = 0.0;

    PlantedBias plant;            // tuned strength
    double bias_margin = 0.0;     // strength * bias_response

    double tau_f = 0.0, tau_v = 0.0;
    std::array<double, 4> eps_f{};  // aligned mix per template group
    double eps_v = 0.0;
    // Margin response per unit scale of the dry-pass vectors (no aligned
    // tracer component): the residue the aligned mix is sized to cancel.
    std::vector<double> junk_truth_response;  // per database cluster
    double junk_visual_response = 0.0;
    std::vector<int> cluster_group;  // majority template group per cluster
    // truth_dirs[group][i]: unit tracer direction at bias_channel[i]
    std::array<std::vector<std::vector<double>>, 4> truth_dirs;
    std::vector<std::vector<double>> visual_dirs;  // per visual head
};

// Generates the corpus, measures head responses, calibrates the capability
// channel, bisects the bias strength against the evaluation half, measures
// junk norms and sizes the tracers.
PlantedWorld build_world(const SynthConfig& config);

// Channels active on a question forward: capability + noise + planted bias.
HeadAdditions eval_additions(const PlantedWorld& w, std::size_t record_index);

// Extraction-pass hooks: eval channels plus the answer-keyed tracer. The
// world must outlive the returned callable.
CaptureHook truth_capture_hook(const PlantedWorld& w);
// pair index i corresponds to extraction record i, the order
// visual_perception_vector builds its pairs in.
VisualCaptureHook visual_capture_hook(const PlantedWorld& w);

// yes logit minus no logit at the last prompt position, with the world's
// channels planted and an optional steering plan applied.
double answer_margin(const PlantedWorld& w, std::size_t record_index,
                     const InterventionPlan* plan);

struct SteeringAssets {
    SteeringDatabase db;
    SteeringVector visual_vector;
    ToyEmbedder embedder;
};

// Database (k clusters, truth hook) and visual vector, both built on the
// extraction half only.
SteeringAssets build_assets(const PlantedWorld& w);

struct ArmResult {
    double f1 = 0.0;        // 0 when undefined (degenerate predictions)
    double accuracy = 0.0;
    double fpr = 0.0;       // hallucination rate: yes on an absent object
    int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Scores the evaluation half under per-question retrieval steering.
// alpha = beta = 0 reduces to the vanilla forward bitwise.
ArmResult evaluate_arm(const PlantedWorld& w, const SteeringAssets& assets, double alpha,
                       double beta, int k);

struct PipelineReport {
    ArmResult both, truth_only, visual_only, none;
    double f1_vanilla = 0.0;
    double f1_steered = 0.0;            // the both-vectors arm
    double flip_rate_reduction = 0.0;   // relative drop in hallucination rate
};

struct Hyper {
    double alpha = 0.0;
    double beta = 0.0;
    int k = 32;
};

// The four ablation arms at one hyperparameter point.
PipelineReport run_pipeline(const PlantedWorld& w, const SteeringAssets& assets,
                            const Hyper& hyper);

struct GridRow {
    double alpha = 0.0, beta = 0.0;
    int k = 0;
    double f1 = 0.0;
};

struct GridReport {
    std::vector<GridRow> rows;   // alpha-major, then beta, then k
    std::size_t best_index = 0;  // max f1; ties keep the earliest row
    std::string csv;             // alpha,beta,k,f1
};

std::vector<double> default_alpha_grid();
std::vector<double> default_beta_grid();
std::vector<int> default_k_grid();

// Exhaustive cross-product evaluation. Cells are independent and run on a
// thread pool; rows are reduced in grid order so the table is reproducible.
GridReport grid_search(const PlantedWorld& w, const SteeringAssets& assets,
                       std::span<const double> alphas, std::span<const double> betas,
                       std::span<const int> ks, std::size_t threads = 0);

// F1-vs-alpha and F1-vs-beta line charts through the best grid row.
struct SweepCharts {
    std::string alpha_svg;
    std::string beta_svg;
};
SweepCharts sweep_charts(const GridReport& grid);

struct CompareReport {
    double f1_dynamic = 0.0;
    double f1_fixed = 0.0;
    double f1_vanilla = 0.0;
};

// Retrieval-based steering against the merged fixed vector, identical
// alpha/beta/K. Requires a database with at least two clusters.
CompareReport compare_dynamic_vs_fixed(const PlantedWorld& w, const SteeringAssets& assets,
                                       const Hyper& hyper);

// Per-sample truthfulness differences of the extraction half, labeled by
// retrieved cluster; input for the projection analysis.
std::vector<LabeledDifference> labeled_differences(const PlantedWorld& w,
                                                   const SteeringAssets& assets);

struct SynthRunReport {
    double f1_vanilla = 0.0;
    double f1_unbiased = 0.0;  // diagnostic: bias stripped, capability kept
    PipelineReport pipeline;   // ablation arms at the best grid cell
    GridReport grid;
    GridRow best;
    double best_improvement = 0.0;  // best.f1 - f1_vanilla
    double f1_negated = 0.0;        // best cell with both signs flipped
    PlantedBias plant;
    double bias_margin = 0.0;
    double capability_margin = 0.0;
    double margin_noise = 0.0;
    double base_margin_std = 0.0;
    double tau_f = 0.0, tau_v = 0.0;
};

// World build + assets + full default-grid search + ablation and negated
// signs at the best cell: the whole benchmark in one call.
SynthRunReport run_full(const SynthConfig& config);

}  // namespace dmas::synth
