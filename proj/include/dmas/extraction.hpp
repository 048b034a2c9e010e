#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmas/tensor.hpp"
#include "dmas/tokenizer.hpp"
#include "dmas/toymodel.hpp"

namespace dmas {

enum class QuestionKind { discriminative, multiple_choice };

// One question with a truthful and an untruthful answer, ready for the two
// contrastive forward passes. question keeps the raw text because the
// database layer embeds it for clustering and retrieval.
struct ContrastiveSample {
    std::string id;
    std::string question;
    QuestionKind kind = QuestionKind::discriminative;
    VisualPrefix visual;
    std::vector<int> prompt;   // tokenized question
    std::vector<int> y_pos;    // tokenized truthful answer
    std::vector<int> y_neg;    // tokenized untruthful answer
};

struct SteeringVector {
    enum class Kind { truthfulness, visual };
    HeadTensor values;
    Kind kind = Kind::truthfulness;
    int pca_components_kept = 0;  // 0 when denoising was skipped
    int sample_count = 0;
};

// Forward-diffusion schedule with a linear beta ramp. alpha_bar[t] is the
// product of (1 - beta_s) for s <= t, so alpha_bar[0] == 1 exactly and the
// sequence is strictly decreasing.
struct DiffusionSchedule {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<double> alpha_bar;  // steps + 1 entries

    DiffusionSchedule(int steps_ = 1000, double beta_start_ = 1e-4, double beta_end_ = 0.02);
};

// category -> object names. std::map keeps iteration order stable.
using ObjectLibrary = std::map<std::string, std::vector<std::string>>;

// Optional per-pass head additions, used by the synthetic benchmark to keep
// its planted structure active during capture passes. The bool flag marks
// the truthful (resp. clean) side of the contrast.
using CaptureHook = std::function<HeadAdditions(const ContrastiveSample&, bool positive_side)>;
using VisualCaptureHook = std::function<HeadAdditions(std::size_t pair_index, bool clean_side)>;

// Untruthful counterpart of y_pos. Discriminative answers flip polarity;
// multiple-choice picks a uniformly random incorrect option.
std::string make_negative_answer(QuestionKind kind, const std::string& y_pos,
                                 const std::vector<std::string>& options, std::uint64_t seed);

// "The image depicts {objects}", comma-joined, tokenized.
std::vector<int> render_object_prompt(const std::vector<std::string>& objects,
                                      const Tokenizer& tokenizer);

// Tokens of the fixed description request used for visual contrast passes.
std::vector<int> description_prompt(const Tokenizer& tokenizer);

// For each object, an incorrect object drawn from the same category, never
// repeating and never colliding with the true set.
std::vector<std::string> sample_negative_objects(const std::vector<std::string>& objects,
                                                 const ObjectLibrary& library,
                                                 std::uint64_t seed);

// sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps, per coordinate. t == 0
// returns the input unchanged.
VisualPrefix corrupt_visual(const VisualPrefix& visual, int t,
                            const DiffusionSchedule& schedule, std::uint64_t seed);

// Mean of per-sample activation differences between truthful and untruthful
// passes, optionally denoised by projecting the mean onto the top-m
// principal subspace of the per-sample differences. Denoising is skipped
// when the cluster has at most m samples (insufficient rank).
SteeringVector truthfulness_vector(const std::vector<ContrastiveSample>& cluster,
                                   const ModelWeights& weights, int m,
                                   const CaptureHook& hook = {});

struct VisualSample {
    std::string id;
    VisualPrefix visual;
    std::vector<std::string> objects;
};

// Fully materialized contrast pair; visual_perception_vector builds these,
// and tests can construct them directly.
struct VisualContrastPair {
    VisualPrefix clean_visual;
    std::vector<int> clean_tokens;
    VisualPrefix alt_visual;
    std::vector<int> alt_tokens;
};

// Mean activation difference over explicit pairs, same denoising rule as
// truthfulness_vector. kind is marked visual.
SteeringVector visual_pairs_vector(const std::vector<VisualContrastPair>& pairs,
                                   const ModelWeights& weights, int m,
                                   const VisualCaptureHook& hook = {});

// Builds one contrast pair per corpus sample: clean visual with the true
// object sentence against a diffusion-corrupted visual with same-category
// wrong objects, then averages as in visual_pairs_vector.
SteeringVector visual_perception_vector(const std::vector<VisualSample>& corpus,
                                        const ObjectLibrary& library,
                                        const ModelWeights& weights,
                                        const Tokenizer& tokenizer,
                                        const DiffusionSchedule& schedule, int t, int m,
                                        std::uint64_t seed,
                                        const VisualCaptureHook& hook = {});

}  // namespace dmas
