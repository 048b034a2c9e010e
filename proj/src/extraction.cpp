#include "dmas/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dmas/errors.hpp"
#include "dmas/numkit.hpp"
#include "dmas/rng.hpp"

namespace dmas {

namespace {

// Shared tail of both steering extractors: average the per-sample
// differences in index order, then keep only the top-m principal directions
// of the difference population. With n <= m the projection would be
// rank-starved, so the raw mean is returned as-is.
SteeringVector reduce_differences(std::vector<HeadTensor>&& diffs, int m,
                                  SteeringVector::Kind kind) {
    const std::size_t n = diffs.size();
    const HeadTensor& first = diffs.front();
    HeadTensor mean(first.n_layers, first.n_heads, first.head_dim);
    for (const HeadTensor& d : diffs) {
        if (!d.same_shape(mean)) throw internal_error("steering extraction: shape drift");
        for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += d.data[i];
    }
    for (double& x : mean.data) x /= static_cast<double>(n);

    SteeringVector out;
    out.kind = kind;
    out.sample_count = static_cast<int>(n);
    out.values = mean;
    out.pca_components_kept = 0;

    if (m > 0 && n > static_cast<std::size_t>(m)) {
        Matrix pop(n, mean.data.size());
        for (std::size_t i = 0; i < n; ++i)
            std::copy(diffs[i].data.begin(), diffs[i].data.end(), pop.row(i).begin());
        Pca pca = fit_pca(pop, static_cast<std::size_t>(m));
        std::vector<double> denoised = project_span(pca, mean.data);
        out.values.data = std::move(denoised);
        out.pca_components_kept = m;
    }
    return out;
}

}  // namespace

DiffusionSchedule::DiffusionSchedule(int steps_, double beta_start_, double beta_end_)
    : steps(steps_), beta_start(beta_start_), beta_end(beta_end_) {
    if (steps < 1) throw param_error("DiffusionSchedule: steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw param_error("DiffusionSchedule: need 0 < beta_start <= beta_end < 1");
    alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    for (int s = 1; s <= steps; ++s) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(s - 1) / (steps - 1);
        double beta = beta_start + (beta_end - beta_start) * frac;
        alpha_bar[static_cast<std::size_t>(s)] = alpha_bar[static_cast<std::size_t>(s - 1)] * (1.0 - beta);
    }
}

std::string make_negative_answer(QuestionKind kind, const std::string& y_pos,
                                 const std::vector<std::string>& options, std::uint64_t seed) {
    if (kind == QuestionKind::discriminative) {
        // Flip only the leading verdict word; anything after it (for example
        // a trailing period) is kept, so "yes ." becomes "no .".
        std::size_t cut = y_pos.find(' ');
        std::string word = cut == std::string::npos ? y_pos : y_pos.substr(0, cut);
        std::string rest = cut == std::string::npos ? "" : y_pos.substr(cut);
        if (word == "yes") return "no" + rest;
        if (word == "no") return "yes" + rest;
        throw param_error("make_negative_answer: discriminative answer must start with yes or no, got '" +
                          y_pos + "'");
    }
    std::vector<std::string> wrong;
    for (const std::string& o : options)
        if (o != y_pos) wrong.push_back(o);
    if (wrong.empty())
        throw param_error("make_negative_answer: no incorrect option available");
    Rng rng(seed);
    return wrong[static_cast<std::size_t>(rng.next_below(wrong.size()))];
}

std::vector<int> render_object_prompt(const std::vector<std::string>& objects,
                                      const Tokenizer& tokenizer) {
    if (objects.empty()) throw param_error("render_object_prompt: empty object list");
    std::string text = "The image depicts ";
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i > 0) text += ", ";
        text += objects[i];
    }
    return tokenizer.encode(text);
}

std::vector<int> description_prompt(const Tokenizer& tokenizer) {
    return tokenizer.encode("Please describe this image.");
}

std::vector<std::string> sample_negative_objects(const std::vector<std::string>& objects,
                                                 const ObjectLibrary& library,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::string> forbidden(objects.begin(), objects.end());
    std::vector<std::string> out;
    for (const std::string& obj : objects) {
        const std::vector<std::string>* members = nullptr;
        std::string category;
        for (const auto& [cat, names] : library) {
            if (std::find(names.begin(), names.end(), obj) != names.end()) {
                members = &names;
                category = cat;
                break;
            }
        }
        if (!members)
            throw param_error("sample_negative_objects: object '" + obj + "' not in library");
        std::vector<std::string> candidates;
        for (const std::string& name : *members)
            if (!forbidden.count(name)) candidates.push_back(name);
        if (candidates.empty())
            throw param_error("sample_negative_objects: category '" + category +
                              "' exhausted for object '" + obj + "'");
        std::string pick = candidates[static_cast<std::size_t>(rng.next_below(candidates.size()))];
        forbidden.insert(pick);
        out.push_back(pick);
    }
    return out;
}

VisualPrefix corrupt_visual(const VisualPrefix& visual, int t,
                            const DiffusionSchedule& schedule, std::uint64_t seed) {
    if (t < 0 || t > schedule.steps)
        throw param_error("corrupt_visual: t out of schedule range");
    if (t == 0) return visual;
    double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    double keep = std::sqrt(ab);
    double noise = std::sqrt(1.0 - ab);
    Rng rng(seed);
    VisualPrefix out = visual;
    for (auto& vec : out.vectors)
        for (double& x : vec) x = keep * x + noise * rng.next_gaussian();
    return out;
}

SteeringVector truthfulness_vector(const std::vector<ContrastiveSample>& cluster,
                                   const ModelWeights& weights, int m,
                                   const CaptureHook& hook) {
    if (cluster.empty()) throw param_error("truthfulness_vector: empty cluster");
    if (m < 0) throw param_error("truthfulness_vector: negative component count");
    std::vector<HeadTensor> diffs;
    diffs.reserve(cluster.size());
    for (std::size_t i = 0; i < cluster.size(); ++i) {
        const ContrastiveSample& s = cluster[i];
        if (s.y_pos == s.y_neg)
            throw param_error("truthfulness_vector: sample '" + s.id +
                              "' has identical positive and negative answers");
        std::vector<int> pos_seq = s.prompt;
        pos_seq.insert(pos_seq.end(), s.y_pos.begin(), s.y_pos.end());
        std::vector<int> neg_seq = s.prompt;
        neg_seq.insert(neg_seq.end(), s.y_neg.begin(), s.y_neg.end());
        HeadAdditions pos_add, neg_add;
        if (hook) {
            pos_add = hook(s, true);
            neg_add = hook(s, false);
        }
        HeadTensor a_pos = capture_last_token_activations(weights, s.visual, pos_seq,
                                                          hook ? &pos_add : nullptr);
        HeadTensor a_neg = capture_last_token_activations(weights, s.visual, neg_seq,
                                                          hook ? &neg_add : nullptr);
        diffs.push_back(a_pos - a_neg);
    }
    return reduce_differences(std::move(diffs), m, SteeringVector::Kind::truthfulness);
}

SteeringVector visual_pairs_vector(const std::vector<VisualContrastPair>& pairs,
                                   const ModelWeights& weights, int m,
                                   const VisualCaptureHook& hook) {
    if (pairs.empty()) throw param_error("visual_pairs_vector: no pairs");
    if (m < 0) throw param_error("visual_pairs_vector: negative component count");
    std::vector<HeadTensor> diffs;
    diffs.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const VisualContrastPair& p = pairs[i];
        HeadAdditions clean_add, alt_add;
        if (hook) {
            clean_add = hook(i, true);
            alt_add = hook(i, false);
        }
        HeadTensor a_clean = capture_last_token_activations(weights, p.clean_visual,
                                                            p.clean_tokens,
                                                            hook ? &clean_add : nullptr);
        HeadTensor a_alt = capture_last_token_activations(weights, p.alt_visual, p.alt_tokens,
                                                          hook ? &alt_add : nullptr);
        diffs.push_back(a_clean - a_alt);
    }
    return reduce_differences(std::move(diffs), m, SteeringVector::Kind::visual);
}

SteeringVector visual_perception_vector(const std::vector<VisualSample>& corpus,
                                        const ObjectLibrary& library,
                                        const ModelWeights& weights,
                                        const Tokenizer& tokenizer,
                                        const DiffusionSchedule& schedule, int t, int m,
                                        std::uint64_t seed, const VisualCaptureHook& hook) {
    if (corpus.empty()) throw param_error("visual_perception_vector: empty corpus");
    std::vector<int> prompt = description_prompt(tokenizer);
    std::vector<VisualContrastPair> pairs;
    pairs.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const VisualSample& s = corpus[i];
        std::vector<std::string> wrong = sample_negative_objects(
            s.objects, library, derive_seed(seed, "negatives/" + std::to_string(i)));
        VisualContrastPair p;
        p.clean_visual = s.visual;
        p.clean_tokens = prompt;
        auto clean_y = render_object_prompt(s.objects, tokenizer);
        p.clean_tokens.insert(p.clean_tokens.end(), clean_y.begin(), clean_y.end());
        p.alt_visual = corrupt_visual(s.visual, t, schedule,
                                      derive_seed(seed, "corrupt/" + std::to_string(i)));
        p.alt_tokens = prompt;
        auto alt_y = render_object_prompt(wrong, tokenizer);
        p.alt_tokens.insert(p.alt_tokens.end(), alt_y.begin(), alt_y.end());
        pairs.push_back(std::move(p));
    }
    return visual_pairs_vector(pairs, weights, m, hook);
}

}  // namespace dmas
