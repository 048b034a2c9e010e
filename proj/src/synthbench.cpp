#include "dmas/synthbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "dmas/errors.hpp"
#include "dmas/intervene.hpp"
#include "dmas/rng.hpp"
#include "dmas/svg.hpp"

namespace dmas::synth {

namespace {

constexpr double kProbeDelta = 0.25;

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    std::size_t t = threads ? threads : std::thread::hardware_concurrency();
    if (t < 1) t = 1;
    t = std::min(t, n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(t - 1);
    for (std::size_t i = 0; i + 1 < t; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string full_precision(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string question_text(int group, const std::string& object) {
    switch (group) {
        case 0: return "Is there a " + object + "?";
        case 1: return "Does this picture contain some " + object + "?";
        case 2: return "Can you spot any " + object + " nearby?";
        default: return "Might one notice the " + object + " within view?";
    }
}

bool gold_yes(const CorpusRecord& r) { return r.answer.rfind("yes", 0) == 0; }

std::vector<ContrastiveSample> extraction_samples(const PlantedWorld& w) {
    std::vector<ContrastiveSample> out;
    out.reserve(w.split);
    std::uint64_t seed = derive_seed(w.config.seed, "contrastive");
    for (std::size_t i = 0; i < w.split; ++i)
        out.push_back(make_contrastive(w.records[i], w.tokenizer, seed));
    return out;
}

std::vector<VisualSample> extraction_visuals(const PlantedWorld& w) {
    std::vector<VisualSample> out;
    out.reserve(w.split);
    for (std::size_t i = 0; i < w.split; ++i) {
        VisualSample s;
        s.id = w.records[i].id;
        s.visual.vectors = w.records[i].visual;
        s.objects = w.records[i].objects;
        out.push_back(std::move(s));
    }
    return out;
}

PopeMetrics vanilla_metrics(const PlantedWorld& w) {
    std::vector<BinaryPrediction> preds;
    preds.reserve(w.records.size() - w.split);
    for (std::size_t i = w.split; i < w.records.size(); ++i) {
        double m = answer_margin(w, i, nullptr);
        preds.push_back({w.records[i].id, m > 0.0, gold_yes(w.records[i])});
    }
    return pope_metrics(preds);
}

ArmResult to_arm(const PopeMetrics& m) {
    ArmResult out;
    out.f1 = m.f1.value_or(0.0);
    out.accuracy = m.accuracy;
    out.tp = m.tp;
    out.fp = m.fp;
    out.tn = m.tn;
    out.fn = m.fn;
    out.fpr = (m.fp + m.tn) > 0 ? static_cast<double>(m.fp) / (m.fp + m.tn) : 0.0;
    return out;
}

double max_head_norm(const HeadTensor& t) {
    double best = 0.0;
    for (int l = 0; l < t.n_layers; ++l)
        for (int h = 0; h < t.n_heads; ++h) {
            double s = 0.0;
            for (double x : t.slice(l, h)) s += x * x;
            best = std::max(best, std::sqrt(s));
        }
    return best;
}

// Unit gaussian vector orthogonal to every vector in basis, redrawing on
// degeneracy. basis vectors must themselves be unit and orthogonal.
std::vector<double> orthonormal_draw(Rng& rng, const std::vector<const std::vector<double>*>& basis,
                                     std::size_t dim) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.next_gaussian();
        for (const auto* b : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += v[i] * (*b)[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * (*b)[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-8) {
            for (double& x : v) x /= norm;
            return v;
        }
    }
    throw internal_error("orthonormal_draw: could not find an orthogonal direction");
}

// eps encodes how much of the measured aligned (maximal-response) direction
// a tracer carries; the perpendicular part gives it norm without margin
// effect so it can dominate the mask selection without overwhelming the
// logits when scaled at apply time.
std::vector<double> mix_direction(const std::vector<double>& perp, const std::vector<double>& aligned,
                                  double eps) {
    std::vector<double> w(perp.size());
    double inv = 1.0 / std::sqrt(1.0 + eps * eps);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (perp[i] + eps * aligned[i]) * inv;
    return w;
}

}  // namespace

SynthConfig SynthConfig::for_group_bias() {
    SynthConfig c;
    c.group_bias_multipliers = {1.5, 1.2, 0.8, 0.5};
    c.truth_share = 1.0;
    c.nominal_alpha = 4.0;
    c.nominal_beta = 0.0;
    return c;
}

SynthConfig SynthConfig::for_projection() {
    SynthConfig c;
    c.n_scenes = 48;
    c.probe_scenes = 24;
    c.tracer_norm_min = 1.2;
    return c;
}

ObjectLibrary synth_object_library() {
    return {
        {"animals", {"dog", "cat", "horse", "sheep"}},
        {"clothing", {"shirt", "hat", "shoe", "glove"}},
        {"food", {"apple", "banana", "pizza", "bread"}},
        {"furniture", {"chair", "table", "sofa", "bed"}},
        {"instruments", {"guitar", "piano", "drum", "violin"}},
        {"nature", {"river", "cloud", "stone", "tree"}},
        {"tools", {"hammer", "ladder", "bucket", "rope"}},
        {"vehicles", {"car", "bus", "train", "bicycle"}},
    };
}

const std::vector<std::string>& synth_object_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [cat, members] : synth_object_library())
            out.insert(out.end(), members.begin(), members.end());
        return out;
    }();
    return names;
}

std::vector<SyntheticScene> generate_scenes(std::size_t n_scenes, std::uint64_t seed,
                                            const ModelConfig& model) {
    if (n_scenes < 1) throw param_error("generate_scenes: need at least one scene");
    if (n_scenes > 99999) throw param_error("generate_scenes: scene count too large for ids");
    const auto& names = synth_object_names();
    const std::size_t d = static_cast<std::size_t>(model.d_model);

    std::vector<std::vector<double>> codebook(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        Rng rng(derive_seed(seed, "codebook/" + names[i]));
        codebook[i].resize(d);
        double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (double& x : codebook[i]) x = rng.next_gaussian() * scale;
    }

    std::vector<SyntheticScene> scenes;
    scenes.reserve(n_scenes);
    for (std::size_t i = 0; i < n_scenes; ++i) {
        std::uint64_t scene_seed = derive_seed(seed, "scene/" + std::to_string(i));
        Rng rng(scene_seed);
        std::size_t count = 1 + static_cast<std::size_t>(rng.next_below(6));

        // At most 2 objects per category, so same-category wrong objects can
        // always be sampled for the visual contrast pairs.
        std::set<std::size_t> picked;
        std::array<int, 8> per_category{};
        int guard = 0;
        while (picked.size() < count) {
            if (++guard > 100000) throw internal_error("generate_scenes: sampling stuck");
            std::size_t idx = static_cast<std::size_t>(rng.next_below(names.size()));
            if (picked.count(idx) || per_category[idx / 4] >= 2) continue;
            picked.insert(idx);
            per_category[idx / 4]++;
        }

        SyntheticScene s;
        char id[32];
        std::snprintf(id, sizeof id, "scene-%05zu", i);
        s.id = id;
        s.seed = scene_seed;
        for (std::size_t idx : picked) {
            s.objects.push_back(names[idx]);
            std::vector<double> vec = codebook[idx];
            for (double& x : vec) x += 0.1 * rng.next_gaussian();
            s.visual.vectors.push_back(std::move(vec));
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

std::vector<CorpusRecord> generate_corpus(std::size_t n_scenes, std::uint64_t seed,
                                          const ModelConfig& model) {
    std::vector<SyntheticScene> scenes = generate_scenes(n_scenes, seed, model);
    const auto& names = synth_object_names();

    std::vector<CorpusRecord> records;
    records.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const SyntheticScene& s = scenes[i];
        Rng rng(derive_seed(seed, "question/" + std::to_string(i)));
        // Balanced within each template group: group is i mod 4, polarity
        // alternates per cycle through the groups.
        int group = static_cast<int>(i % 4);
        bool positive = ((i / 4 + i % 4) % 2) == 0;

        std::string object;
        if (positive) {
            object = s.objects[static_cast<std::size_t>(rng.next_below(s.objects.size()))];
        } else {
            std::set<std::string> present(s.objects.begin(), s.objects.end());
            int guard = 0;
            while (true) {
                if (++guard > 100000) throw internal_error("generate_corpus: sampling stuck");
                const std::string& cand =
                    names[static_cast<std::size_t>(rng.next_below(names.size()))];
                if (!present.count(cand)) {
                    object = cand;
                    break;
                }
            }
        }

        CorpusRecord r;
        r.id = s.id;
        r.question = question_text(group, object);
        r.kind = QuestionKind::discriminative;
        r.answer = positive ? "yes ." : "no .";
        r.visual = s.visual.vectors;
        r.objects = s.objects;
        records.push_back(std::move(r));
    }
    return records;
}

HeadAdditions eval_additions(const PlantedWorld& w, std::size_t record_index) {
    const RecordMeta& m = w.meta[record_index];
    HeadAdditions out;
    out.items.reserve(w.capability.size() + w.bias_channel.size());

    double margin = (m.present ? 1.0 : -1.0) * w.capability_margin + m.noise * w.margin_noise;
    double cap_scale = margin / w.capability_response;
    for (const HeadChannel& ch : w.capability) {
        HeadAddition item;
        item.layer = ch.head.layer;
        item.head = ch.head.head;
        item.vec.resize(ch.aligned.size());
        for (std::size_t i = 0; i < ch.aligned.size(); ++i) item.vec[i] = cap_scale * ch.aligned[i];
        out.items.push_back(std::move(item));
    }

    double b = w.plant.strength * w.config.group_bias_multipliers[static_cast<std::size_t>(m.group)];
    if (b != 0.0) {
        for (std::size_t i = 0; i < w.plant.heads.size(); ++i) {
            HeadAddition item;
            item.layer = w.plant.heads[i].layer;
            item.head = w.plant.heads[i].head;
            item.vec.resize(w.plant.vectors[i].size());
            for (std::size_t j = 0; j < item.vec.size(); ++j)
                item.vec[j] = b * w.plant.vectors[i][j];
            out.items.push_back(std::move(item));
        }
    }
    return out;
}

CaptureHook truth_capture_hook(const PlantedWorld& w) {
    return [&w](const ContrastiveSample& s, bool positive_side) {
        auto it = w.index_by_id.find(s.id);
        if (it == w.index_by_id.end())
            throw param_error("truth_capture_hook: unknown sample id '" + s.id + "'");
        std::size_t idx = it->second;
        HeadAdditions out = eval_additions(w, idx);
        int g = w.meta[idx].group;
        double mult = w.config.group_bias_multipliers[static_cast<std::size_t>(g)];
        // The truthful side leans against the bias, the lying side with it;
        // their difference is what extraction recovers.
        double sgn = positive_side ? -1.0 : 1.0;
        for (std::size_t i = 0; i < w.bias_channel.size(); ++i) {
            HeadAddition item;
            item.layer = w.bias_channel[i].head.layer;
            item.head = w.bias_channel[i].head.head;
            item.all_positions = false;
            const auto& dir = w.truth_dirs[static_cast<std::size_t>(g)][i];
            item.vec.resize(dir.size());
            for (std::size_t j = 0; j < dir.size(); ++j)
                item.vec[j] = sgn * w.tau_f * mult * dir[j];
            out.items.push_back(std::move(item));
        }
        return out;
    };
}

VisualCaptureHook visual_capture_hook(const PlantedWorld& w) {
    return [&w](std::size_t pair_index, bool clean_side) {
        if (pair_index >= w.split)
            throw internal_error("visual_capture_hook: pair index outside the extraction half");
        const RecordMeta& m = w.meta[pair_index];
        double mult = w.config.group_bias_multipliers[static_cast<std::size_t>(m.group)];
        HeadAdditions out;
        double b = w.plant.strength * mult;
        if (b != 0.0) {
            for (std::size_t i = 0; i < w.plant.heads.size(); ++i) {
                HeadAddition item;
                item.layer = w.plant.heads[i].layer;
                item.head = w.plant.heads[i].head;
                item.vec.resize(w.plant.vectors[i].size());
                for (std::size_t j = 0; j < item.vec.size(); ++j)
                    item.vec[j] = b * w.plant.vectors[i][j];
                out.items.push_back(std::move(item));
            }
        }
        double sgn = clean_side ? -1.0 : 1.0;
        for (std::size_t i = 0; i < w.visual_channel.size(); ++i) {
            HeadAddition item;
            item.layer = w.visual_channel[i].head.layer;
            item.head = w.visual_channel[i].head.head;
            item.all_positions = false;
            const auto& dir = w.visual_dirs[i];
            item.vec.resize(dir.size());
            for (std::size_t j = 0; j < dir.size(); ++j) item.vec[j] = sgn * w.tau_v * dir[j];
            out.items.push_back(std::move(item));
        }
        return out;
    };
}

double answer_margin(const PlantedWorld& w, std::size_t record_index,
                     const InterventionPlan* plan) {
    const CorpusRecord& r = w.records[record_index];
    std::vector<int> tokens = w.tokenizer.encode(r.question);
    VisualPrefix vis;
    vis.vectors = r.visual;
    HeadAdditions adds = eval_additions(w, record_index);
    ForwardOptions opts;
    opts.additions = &adds;
    opts.plan = plan;
    ForwardResult res = forward(w.weights, vis, tokens, opts);
    return res.logits[static_cast<std::size_t>(w.yes_id)] -
           res.logits[static_cast<std::size_t>(w.no_id)];
}

namespace {

// Margin of one probe forward with optional extra additions on top of
// nothing: calibration runs against the bare model so directions do not
// depend on what is being calibrated.
double probe_margin(const PlantedWorld& w, const std::vector<int>& tokens,
                    const VisualPrefix& vis, const HeadAdditions* adds) {
    ForwardOptions opts;
    opts.additions = adds;
    ForwardResult res = forward(w.weights, vis, tokens, opts);
    return res.logits[static_cast<std::size_t>(w.yes_id)] -
           res.logits[static_cast<std::size_t>(w.no_id)];
}

struct ProbeSet {
    std::vector<std::vector<int>> tokens;
    std::vector<VisualPrefix> visuals;
    std::vector<double> base;  // bare margins
};

std::vector<HeadChannel> measure_channels(const PlantedWorld& w, const std::vector<HeadRef>& heads,
                                          const ProbeSet& probes, std::size_t threads) {
    const std::size_t hd = static_cast<std::size_t>(w.config.model.head_dim());
    std::vector<HeadChannel> out(heads.size());
    parallel_for(heads.size(), threads, [&](std::size_t hi) {
        HeadChannel ch;
        ch.head = heads[hi];
        std::vector<double> grad(hd, 0.0);
        for (std::size_t dim = 0; dim < hd; ++dim) {
            HeadAdditions adds;
            HeadAddition item;
            item.layer = heads[hi].layer;
            item.head = heads[hi].head;
            item.vec.assign(hd, 0.0);
            item.vec[dim] = kProbeDelta;
            adds.items.push_back(std::move(item));
            double acc = 0.0;
            for (std::size_t p = 0; p < probes.tokens.size(); ++p)
                acc += probe_margin(w, probes.tokens[p], probes.visuals[p], &adds) -
                       probes.base[p];
            grad[dim] = acc / (kProbeDelta * static_cast<double>(probes.tokens.size()));
        }
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm < 1e-9)
            throw internal_error("measure_channels: head has no margin response");
        ch.response = norm;
        ch.aligned.resize(hd);
        for (std::size_t i = 0; i < hd; ++i) ch.aligned[i] = grad[i] / norm;
        out[hi] = std::move(ch);
    });
    return out;
}

double summed_response(const std::vector<HeadChannel>& channels) {
    double s = 0.0;
    for (const HeadChannel& ch : channels) s += ch.response;
    return s;
}

void validate_head_sets(const SynthConfig& config) {
    std::set<int> seen;
    auto check = [&](const std::vector<HeadRef>& heads, const char* name) {
        if (heads.empty()) throw param_error(std::string("build_world: empty head set ") + name);
        for (const HeadRef& h : heads) {
            if (h.layer < 0 || h.layer >= config.model.n_layers || h.head < 0 ||
                h.head >= config.model.n_heads)
                throw param_error(std::string("build_world: head out of range in set ") + name);
            int key = h.layer * config.model.n_heads + h.head;
            if (!seen.insert(key).second)
                throw param_error("build_world: planted head sets must be disjoint");
        }
    };
    check(config.capability_heads, "capability");
    check(config.bias_heads, "bias");
    check(config.visual_heads, "visual");
}

}  // namespace

PlantedWorld build_world(const SynthConfig& config_in) {
    SynthConfig config = config_in;
    if (config.n_scenes < 16) throw param_error("build_world: need at least 16 scenes");
    if (config.db_clusters < 1) throw param_error("build_world: need at least one cluster");
    if (!(config.truth_share >= 0.0 && config.truth_share <= 1.0))
        throw param_error("build_world: truth_share must be in [0, 1]");
    for (double m : config.group_bias_multipliers)
        if (!(m > 0.0)) throw param_error("build_world: group bias multipliers must be positive");

    Tokenizer tokenizer = Tokenizer::with_default_vocabulary();
    config.model.vocab_size = tokenizer.size();
    config.model.validate();

    if (config.capability_heads.empty() && config.bias_heads.empty() &&
        config.visual_heads.empty()) {
        if (config.model.n_layers < 6 || config.model.n_heads < 8)
            throw param_error("build_world: default head sets need >= 6 layers and >= 8 heads");
        config.capability_heads = {{1, 1}, {1, 5}, {2, 3}, {3, 6}, {4, 2}, {5, 7}};
        config.bias_heads = {{2, 1}, {2, 6}, {3, 2}, {4, 5}, {5, 1}, {5, 4}};
        config.visual_heads = {{1, 3}, {2, 4}, {3, 0}, {3, 5}, {4, 7}, {5, 6}};
    }
    validate_head_sets(config);

    PlantedWorld w{std::move(config), std::move(tokenizer)};
    w.weights = init_model(w.config.model);
    w.records = generate_corpus(w.config.n_scenes, w.config.seed, w.config.model);
    w.split = w.records.size() / 2;
    w.yes_id = w.tokenizer.token_id("yes");
    w.no_id = w.tokenizer.token_id("no");

    // Per-record metadata: template group, gold polarity, asked object, and
    // the unit draw behind the planted margin noise.
    std::map<int, int> first_word_group = {
        {w.tokenizer.token_id("is"), 0},
        {w.tokenizer.token_id("does"), 1},
        {w.tokenizer.token_id("can"), 2},
        {w.tokenizer.token_id("might"), 3},
    };
    std::map<int, std::string> object_of_token;
    for (const std::string& name : synth_object_names())
        object_of_token[w.tokenizer.token_id(name)] = name;

    w.meta.resize(w.records.size());
    for (std::size_t i = 0; i < w.records.size(); ++i) {
        const CorpusRecord& r = w.records[i];
        if (!w.index_by_id.emplace(r.id, i).second)
            throw internal_error("build_world: duplicate scene id " + r.id);
        std::vector<int> q = w.tokenizer.encode(r.question);
        if (q.empty()) throw internal_error("build_world: empty question");
        auto git = first_word_group.find(q[0]);
        if (git == first_word_group.end())
            throw internal_error("build_world: unrecognized question template");
        RecordMeta m;
        m.group = git->second;
        m.present = gold_yes(r);
        for (int id : q) {
            auto oit = object_of_token.find(id);
            if (oit != object_of_token.end()) {
                m.object = oit->second;
                break;
            }
        }
        if (m.object.empty()) throw internal_error("build_world: question names no object");
        m.noise = Rng(derive_seed(w.config.seed, "noise/" + r.id)).next_gaussian();
        w.meta[i] = std::move(m);
    }

    // Bare-model margin statistics and per-head response directions.
    std::size_t n_base = std::min<std::size_t>(64, w.split);
    ProbeSet probes;
    {
        ProbeSet all;
        for (std::size_t i = 0; i < n_base; ++i) {
            all.tokens.push_back(w.tokenizer.encode(w.records[i].question));
            VisualPrefix vis;
            vis.vectors = w.records[i].visual;
            all.visuals.push_back(std::move(vis));
        }
        all.base.resize(n_base);
        parallel_for(n_base, w.config.threads, [&](std::size_t i) {
            all.base[i] = probe_margin(w, all.tokens[i], all.visuals[i], nullptr);
        });
        double mean = 0.0;
        for (double b : all.base) mean += b;
        mean /= static_cast<double>(n_base);
        double var = 0.0;
        for (double b : all.base) var += (b - mean) * (b - mean);
        var /= static_cast<double>(n_base > 1 ? n_base - 1 : 1);
        w.base_margin_std = std::sqrt(var);

        std::size_t n_probe = std::min(w.config.probe_scenes, n_base);
        if (n_probe < 4) throw param_error("build_world: too few probe scenes");
        probes.tokens.assign(all.tokens.begin(), all.tokens.begin() + n_probe);
        probes.visuals.assign(all.visuals.begin(), all.visuals.begin() + n_probe);
        probes.base.assign(all.base.begin(), all.base.begin() + n_probe);
    }

    double sigma0 = std::max(w.base_margin_std, 1e-6);
    w.margin_noise = w.config.margin_noise > 0.0 ? w.config.margin_noise : 0.5 * sigma0;
    double sigma_t = std::sqrt(sigma0 * sigma0 + w.margin_noise * w.margin_noise);
    w.capability_margin =
        w.config.capability_margin > 0.0 ? w.config.capability_margin : 1.9 * sigma_t;

    w.capability = measure_channels(w, w.config.capability_heads, probes, w.config.threads);
    w.bias_channel = measure_channels(w, w.config.bias_heads, probes, w.config.threads);
    w.visual_channel = measure_channels(w, w.config.visual_heads, probes, w.config.threads);
    w.capability_response = summed_response(w.capability);
    w.bias_response = summed_response(w.bias_channel);
    w.visual_response = summed_response(w.visual_channel);

    w.plant.heads = w.config.bias_heads;
    w.plant.vectors.clear();
    for (const HeadChannel& ch : w.bias_channel) w.plant.vectors.push_back(ch.aligned);
    w.plant.strength = 0.0;

    // Bias strength: bisect on the evaluation half until vanilla F1 sits at
    // the target. F1 is monotone decreasing in the strength once recall
    // saturates, and the added margin noise keeps the curve smooth enough.
    double unbiased_f1 = vanilla_metrics(w).f1.value_or(0.0);
    if (unbiased_f1 < w.config.vanilla_f1_target + 0.08)
        throw internal_error("build_world: capability channel too weak (unbiased F1 " +
                             std::to_string(unbiased_f1) + ") to open a recovery gap");
    {
        double target = w.config.vanilla_f1_target;
        auto f1_at = [&](double strength) {
            w.plant.strength = strength;
            return vanilla_metrics(w).f1.value_or(0.0);
        };
        double lo = 0.0;
        double hi = (w.capability_margin + 2.0 * sigma_t) / w.bias_response;
        int guard = 0;
        while (f1_at(hi) > target) {
            hi *= 2.0;
            if (++guard > 12)
                throw internal_error("build_world: bias cannot push F1 down to the target");
        }
        double best_strength = hi;
        double best_gap = std::abs(f1_at(hi) - target);
        for (std::size_t i = 0; i < w.config.bisection_iters; ++i) {
            double mid = 0.5 * (lo + hi);
            double f1 = f1_at(mid);
            double gap = std::abs(f1 - target);
            if (gap < best_gap) {
                best_gap = gap;
                best_strength = mid;
            }
            if (gap <= w.config.f1_tolerance) break;
            (f1 > target ? lo : hi) = mid;
        }
        w.plant.strength = best_strength;
    }
    w.bias_margin = w.plant.strength * w.bias_response;

    // Tracer sizing against the junk floor: the mean difference of a
    // tracer-free extraction shows how large the answer-token context
    // residue is per head; tracers must dominate it so the masks select the
    // planted heads.
    std::vector<ContrastiveSample> samples = extraction_samples(w);
    CaptureHook no_tracer = [&w](const ContrastiveSample& s, bool) {
        auto it = w.index_by_id.find(s.id);
        if (it == w.index_by_id.end())
            throw param_error("junk probe: unknown sample id '" + s.id + "'");
        return eval_additions(w, it->second);
    };
    double junk_f = max_head_norm(truthfulness_vector(samples, w.weights, 0, no_tracer).values);

    DiffusionSchedule schedule;
    VisualCaptureHook no_tracer_visual = [&w](std::size_t pair_index, bool) {
        if (pair_index >= w.split) throw internal_error("junk probe: bad pair index");
        const RecordMeta& m = w.meta[pair_index];
        HeadAdditions out;
        double b = w.plant.strength *
                   w.config.group_bias_multipliers[static_cast<std::size_t>(m.group)];
        for (std::size_t i = 0; i < w.plant.heads.size(); ++i) {
            HeadAddition item;
            item.layer = w.plant.heads[i].layer;
            item.head = w.plant.heads[i].head;
            item.vec.resize(w.plant.vectors[i].size());
            for (std::size_t j = 0; j < item.vec.size(); ++j)
                item.vec[j] = b * w.plant.vectors[i][j];
            out.items.push_back(std::move(item));
        }
        return out;
    };
    double junk_v = max_head_norm(
        visual_perception_vector(extraction_visuals(w), synth_object_library(), w.weights,
                                 w.tokenizer, schedule, w.config.diffusion_t, 0,
                                 derive_seed(w.config.seed, "visual"), no_tracer_visual)
            .values);

    w.tau_f = std::clamp(w.config.tracer_norm_factor * junk_f, w.config.tracer_norm_min,
                         w.config.tracer_norm_max);
    w.tau_v = std::clamp(w.config.tracer_norm_factor * junk_v, w.config.tracer_norm_min,
                         w.config.tracer_norm_max);

    double rho_f = w.config.nominal_alpha > 0.0
                       ? w.config.truth_share * w.bias_margin / w.config.nominal_alpha
                       : 0.0;
    double rho_v = w.config.nominal_beta > 0.0
                       ? (1.0 - w.config.truth_share) * w.bias_margin / w.config.nominal_beta
                       : 0.0;
    // If the mostly-perpendicular mix cannot reach the required response,
    // grow the tracer until it can (|q| capped at 0.95 in solve_eps).
    if (rho_f > 0.0) w.tau_f = std::max(w.tau_f, rho_f / (2.0 * 0.95 * w.bias_response));
    if (rho_v > 0.0) w.tau_v = std::max(w.tau_v, rho_v / (2.0 * 0.95 * w.visual_response));

    // Fixed orthonormal tracer bases per head. The aligned component is mixed
    // in afterwards, so the bases never depend on the sizing below.
    const std::size_t hd = static_cast<std::size_t>(w.config.model.head_dim());
    std::vector<std::array<std::vector<double>, 4>> truth_perps(w.bias_channel.size());
    for (std::size_t i = 0; i < w.bias_channel.size(); ++i) {
        const HeadChannel& ch = w.bias_channel[i];
        std::vector<const std::vector<double>*> basis = {&ch.aligned};
        Rng rng(derive_seed(w.config.seed, "truthdir/" + std::to_string(ch.head.layer) + "." +
                                               std::to_string(ch.head.head)));
        for (std::size_t g = 0; g < 4; ++g) {
            truth_perps[i][g] = orthonormal_draw(rng, basis, hd);
            basis.push_back(&truth_perps[i][g]);
        }
    }
    std::vector<std::vector<double>> visual_perps(w.visual_channel.size());
    for (std::size_t i = 0; i < w.visual_channel.size(); ++i) {
        const HeadChannel& ch = w.visual_channel[i];
        Rng rng(derive_seed(w.config.seed, "visualdir/" + std::to_string(ch.head.layer) + "." +
                                               std::to_string(ch.head.head)));
        std::vector<const std::vector<double>*> basis = {&ch.aligned};
        visual_perps[i] = orthonormal_draw(rng, basis, hd);
    }

    auto set_dirs = [&](const std::array<double, 4>& eps_f, double eps_v) {
        for (std::size_t g = 0; g < 4; ++g) {
            w.truth_dirs[g].clear();
            for (std::size_t i = 0; i < w.bias_channel.size(); ++i)
                w.truth_dirs[g].push_back(
                    mix_direction(truth_perps[i][g], w.bias_channel[i].aligned, eps_f[g]));
        }
        w.visual_dirs.clear();
        for (std::size_t i = 0; i < w.visual_channel.size(); ++i)
            w.visual_dirs.push_back(
                mix_direction(visual_perps[i], w.visual_channel[i].aligned, eps_v));
    };

    // Margin moved per unit scale by the currently built steering vectors,
    // measured by applying real plans to extraction records at the true
    // operating point. per-cluster for the truth side, one number for the
    // visual side.
    struct Measured {
        std::vector<double> cluster;
        std::vector<int> group_of;         // majority template group
        std::array<double, 4> of_group{};  // member-weighted over clusters
        std::array<bool, 4> seen{};
        double visual = 0.0;
    };
    const double probe_scale = 1.0;  // inside the near-linear range
    auto measure_responses = [&]() {
        Measured m;
        SteeringAssets pass = build_assets(w);
        const std::size_t n_clusters = pass.db.entries.size();
        std::vector<std::vector<std::size_t>> members(n_clusters);
        for (std::size_t i = 0; i < w.split; ++i) {
            RetrievalResult rr = retrieve(pass.db, w.records[i].question, pass.embedder);
            members[rr.cluster_id].push_back(i);
        }
        auto plan_response = [&](const InterventionPlan& plan,
                                 const std::vector<std::size_t>& recs) {
            std::vector<double> deltas(recs.size());
            parallel_for(recs.size(), w.config.threads, [&](std::size_t j) {
                deltas[j] = (answer_margin(w, recs[j], &plan) -
                             answer_margin(w, recs[j], nullptr)) /
                            probe_scale;
            });
            double mean = 0.0;
            for (double d : deltas) mean += d;
            return recs.empty() ? 0.0 : mean / static_cast<double>(recs.size());
        };
        auto cluster_plan = [&](std::size_t c, double alpha, double beta) {
            SteeringVector sv;
            sv.values = pass.db.entries[c].value;
            sv.kind = SteeringVector::Kind::truthfulness;
            sv.sample_count = static_cast<int>(pass.db.entries[c].question_count);
            return make_plan(sv, pass.visual_vector, alpha, beta, w.config.nominal_k,
                             w.config.nominal_k);
        };

        m.cluster.assign(n_clusters, 0.0);
        m.group_of.assign(n_clusters, 0);
        std::array<double, 4> weight{};
        const std::size_t per_cluster = 16;
        for (std::size_t c = 0; c < n_clusters; ++c) {
            std::array<std::size_t, 4> counts{};
            for (std::size_t idx : members[c])
                counts[static_cast<std::size_t>(w.meta[idx].group)]++;
            std::size_t g = 0;
            for (std::size_t cand = 1; cand < 4; ++cand)
                if (counts[cand] > counts[g]) g = cand;
            m.group_of[c] = static_cast<int>(g);
            if (members[c].empty()) continue;
            InterventionPlan plan = cluster_plan(c, probe_scale, 0.0);
            std::vector<std::size_t> recs(
                members[c].begin(),
                members[c].begin() +
                    static_cast<std::ptrdiff_t>(std::min(per_cluster, members[c].size())));
            m.cluster[c] = plan_response(plan, recs);
            double n_mem = static_cast<double>(members[c].size());
            m.of_group[g] += n_mem * m.cluster[c];
            weight[g] += n_mem;
        }
        for (std::size_t g = 0; g < 4; ++g) {
            if (weight[g] > 0.0) {
                m.of_group[g] /= weight[g];
                m.seen[g] = true;
            }
        }
        InterventionPlan vplan = cluster_plan(0, 0.0, probe_scale);
        std::vector<std::size_t> vrecs;
        for (std::size_t i = 0; i < std::min<std::size_t>(32, w.split); ++i) vrecs.push_back(i);
        m.visual = plan_response(vplan, vrecs);
        return m;
    };

    // Dry pass: tracers with no aligned part mark the heads but barely move
    // the margin, so the dry vectors measure the response of the junk the
    // extraction drags along, through the same masks apply time will use.
    set_dirs({0.0, 0.0, 0.0, 0.0}, 0.0);
    Measured junk = measure_responses();
    w.junk_truth_response = junk.cluster;
    w.cluster_group = junk.group_of;
    w.junk_visual_response = junk.visual;

    // The aligned mix q (in [-1, 1], negative when junk alone overshoots)
    // must add whatever margin drop the junk does not already deliver.
    // First cut uses the probe response; one secant round then corrects it
    // with the slope actually measured at the operating point, where the
    // planted channels inflate the residual stream and shrink the response.
    auto q_clamped = [](double target, double denom) {
        if (denom <= 0.0) throw internal_error("tracer sizing: nonpositive response");
        return std::clamp(target / denom, -0.95, 0.95);
    };
    std::array<double, 4> drop_f{};
    std::array<double, 4> q_f{};
    for (std::size_t g = 0; g < 4; ++g) {
        double mult = w.config.group_bias_multipliers[g];
        drop_f[g] = junk.seen[g] ? rho_f + junk.of_group[g] / mult : rho_f;
        w.tau_f = std::max(w.tau_f, std::abs(drop_f[g]) / (2.0 * 0.95 * w.bias_response));
    }
    for (std::size_t g = 0; g < 4; ++g)
        q_f[g] = q_clamped(drop_f[g], 2.0 * w.tau_f * w.bias_response);
    double drop_v = rho_v + junk.visual;
    w.tau_v = std::max(w.tau_v, std::abs(drop_v) / (2.0 * 0.95 * w.visual_response));
    double q_v = q_clamped(drop_v, 2.0 * w.tau_v * w.visual_response);

    auto to_eps = [](double q) { return q / std::sqrt(1.0 - q * q); };
    auto apply_q = [&](const std::array<double, 4>& qf, double qv) {
        for (std::size_t g = 0; g < 4; ++g) w.eps_f[g] = to_eps(qf[g]);
        w.eps_v = to_eps(qv);
        set_dirs(w.eps_f, w.eps_v);
    };
    apply_q(q_f, q_v);
    Measured first = measure_responses();
    for (std::size_t g = 0; g < 4; ++g) {
        if (!(junk.seen[g] && first.seen[g]) || std::abs(q_f[g]) < 1e-9) continue;
        double mult = w.config.group_bias_multipliers[g];
        double slope = (first.of_group[g] - junk.of_group[g]) / q_f[g];
        if (!(slope < 0.0)) continue;  // degenerate measurement, keep the first cut
        double target = -(rho_f * mult + junk.of_group[g]);
        q_f[g] = std::clamp(target / slope, -0.95, 0.95);
    }
    if (std::abs(q_v) >= 1e-9) {
        double slope = (first.visual - junk.visual) / q_v;
        if (slope < 0.0) {
            double target = -(rho_v + junk.visual);
            q_v = std::clamp(target / slope, -0.95, 0.95);
        }
    }
    apply_q(q_f, q_v);
    return w;
}

SteeringAssets build_assets(const PlantedWorld& w) {
    std::vector<ContrastiveSample> samples = extraction_samples(w);
    SteeringAssets assets;
    assets.db = build_database(samples, w.config.db_clusters, assets.embedder, w.weights,
                               w.config.pca_components, derive_seed(w.config.seed, "db"),
                               truth_capture_hook(w));
    DiffusionSchedule schedule;
    assets.visual_vector = visual_perception_vector(
        extraction_visuals(w), synth_object_library(), w.weights, w.tokenizer, schedule,
        w.config.diffusion_t, w.config.pca_components, derive_seed(w.config.seed, "visual"),
        visual_capture_hook(w));
    return assets;
}

namespace {

ArmResult score_with_plans(const PlantedWorld& w,
                           const std::function<const InterventionPlan*(std::size_t)>& plan_of) {
    std::vector<BinaryPrediction> preds;
    preds.reserve(w.records.size() - w.split);
    for (std::size_t i = w.split; i < w.records.size(); ++i) {
        double m = answer_margin(w, i, plan_of(i));
        preds.push_back({w.records[i].id, m > 0.0, gold_yes(w.records[i])});
    }
    return to_arm(pope_metrics(preds));
}

}  // namespace

ArmResult evaluate_arm(const PlantedWorld& w, const SteeringAssets& assets, double alpha,
                       double beta, int k) {
    if (alpha == 0.0 && beta == 0.0)
        return score_with_plans(w, [](std::size_t) { return nullptr; });

    std::vector<InterventionPlan> plans;
    plans.reserve(assets.db.entries.size());
    for (const auto& e : assets.db.entries) {
        SteeringVector sv;
        sv.values = e.value;
        sv.kind = SteeringVector::Kind::truthfulness;
        sv.sample_count = static_cast<int>(e.question_count);
        plans.push_back(make_plan(sv, assets.visual_vector, alpha, beta, k, k));
    }
    return score_with_plans(w, [&](std::size_t i) -> const InterventionPlan* {
        RetrievalResult rr = retrieve(assets.db, w.records[i].question, assets.embedder);
        return &plans[rr.cluster_id];
    });
}

PipelineReport run_pipeline(const PlantedWorld& w, const SteeringAssets& assets,
                            const Hyper& hyper) {
    PipelineReport rep;
    rep.both = evaluate_arm(w, assets, hyper.alpha, hyper.beta, hyper.k);
    rep.truth_only = evaluate_arm(w, assets, hyper.alpha, 0.0, hyper.k);
    rep.visual_only = evaluate_arm(w, assets, 0.0, hyper.beta, hyper.k);
    rep.none = evaluate_arm(w, assets, 0.0, 0.0, hyper.k);
    rep.f1_vanilla = rep.none.f1;
    rep.f1_steered = rep.both.f1;
    rep.flip_rate_reduction =
        rep.none.fpr > 0.0 ? (rep.none.fpr - rep.both.fpr) / rep.none.fpr : 0.0;
    return rep;
}

std::vector<double> default_alpha_grid() {
    return {0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0};
}

std::vector<double> default_beta_grid() { return default_alpha_grid(); }

std::vector<int> default_k_grid() { return {32, 64, 128, 256, 512, 1024}; }

GridReport grid_search(const PlantedWorld& w, const SteeringAssets& assets,
                       std::span<const double> alphas, std::span<const double> betas,
                       std::span<const int> ks, std::size_t threads) {
    if (alphas.empty() || betas.empty() || ks.empty())
        throw param_error("grid_search: empty grid");

    // K clamps at the head count, so cells differing only in an oversized K
    // run identical plans; evaluate each distinct (alpha, beta, clamped K)
    // once and share the score.
    const int head_count = w.config.model.n_layers * w.config.model.n_heads;
    std::map<std::tuple<double, double, int>, std::size_t> distinct;
    std::vector<std::tuple<double, double, int>> cells;
    GridReport rep;
    for (double a : alphas)
        for (double b : betas)
            for (int k : ks) {
                int keff = std::min(k, head_count);
                auto key = std::make_tuple(a, b, keff);
                if (!distinct.count(key)) {
                    distinct.emplace(key, cells.size());
                    cells.push_back(key);
                }
                rep.rows.push_back({a, b, k, 0.0});
            }

    std::vector<double> f1(cells.size(), 0.0);
    parallel_for(cells.size(), threads ? threads : w.config.threads, [&](std::size_t i) {
        auto [a, b, keff] = cells[i];
        f1[i] = evaluate_arm(w, assets, a, b, keff).f1;
    });

    std::size_t row = 0;
    for (double a : alphas)
        for (double b : betas)
            for (int k : ks) {
                int keff = std::min(k, head_count);
                rep.rows[row].f1 = f1[distinct.at(std::make_tuple(a, b, keff))];
                ++row;
            }

    rep.best_index = 0;
    for (std::size_t i = 1; i < rep.rows.size(); ++i)
        if (rep.rows[i].f1 > rep.rows[rep.best_index].f1) rep.best_index = i;

    rep.csv = "alpha,beta,k,f1\n";
    for (const GridRow& r : rep.rows)
        rep.csv += full_precision(r.alpha) + "," + full_precision(r.beta) + "," +
                   std::to_string(r.k) + "," + full_precision(r.f1) + "\n";
    return rep;
}

SweepCharts sweep_charts(const GridReport& grid) {
    if (grid.rows.empty()) throw param_error("sweep_charts: empty grid");
    const GridRow& best = grid.rows[grid.best_index];
    LineSeries alpha_series, beta_series;
    alpha_series.name = "f1, beta and K at best";
    beta_series.name = "f1, alpha and K at best";
    for (const GridRow& r : grid.rows) {
        if (r.beta == best.beta && r.k == best.k) {
            alpha_series.x.push_back(r.alpha);
            alpha_series.y.push_back(r.f1);
        }
        if (r.alpha == best.alpha && r.k == best.k) {
            beta_series.x.push_back(r.beta);
            beta_series.y.push_back(r.f1);
        }
    }
    SweepCharts out;
    out.alpha_svg = line_chart_svg({alpha_series}, "alpha", "f1");
    out.beta_svg = line_chart_svg({beta_series}, "beta", "f1");
    return out;
}

CompareReport compare_dynamic_vs_fixed(const PlantedWorld& w, const SteeringAssets& assets,
                                       const Hyper& hyper) {
    if (assets.db.entries.size() < 2)
        throw param_error("compare_dynamic_vs_fixed: need at least two clusters");
    CompareReport rep;
    rep.f1_dynamic = evaluate_arm(w, assets, hyper.alpha, hyper.beta, hyper.k).f1;
    InterventionPlan fixed_plan = make_plan(merge_fixed(assets.db), assets.visual_vector,
                                            hyper.alpha, hyper.beta, hyper.k, hyper.k);
    rep.f1_fixed =
        score_with_plans(w, [&](std::size_t) { return &fixed_plan; }).f1;
    rep.f1_vanilla = evaluate_arm(w, assets, 0.0, 0.0, hyper.k).f1;
    return rep;
}

std::vector<LabeledDifference> labeled_differences(const PlantedWorld& w,
                                                   const SteeringAssets& assets) {
    std::vector<ContrastiveSample> samples = extraction_samples(w);
    CaptureHook hook = truth_capture_hook(w);
    std::vector<LabeledDifference> out;
    out.reserve(samples.size());
    for (const ContrastiveSample& s : samples) {
        std::vector<int> pos_seq = s.prompt;
        pos_seq.insert(pos_seq.end(), s.y_pos.begin(), s.y_pos.end());
        std::vector<int> neg_seq = s.prompt;
        neg_seq.insert(neg_seq.end(), s.y_neg.begin(), s.y_neg.end());
        HeadAdditions pos_add = hook(s, true);
        HeadAdditions neg_add = hook(s, false);
        HeadTensor a = capture_last_token_activations(w.weights, s.visual, pos_seq, &pos_add);
        HeadTensor b = capture_last_token_activations(w.weights, s.visual, neg_seq, &neg_add);
        HeadTensor diff = a - b;
        LabeledDifference d;
        d.sample_id = s.id;
        d.cluster_id = static_cast<int>(retrieve(assets.db, s.question, assets.embedder).cluster_id);
        d.difference = std::move(diff.data);
        out.push_back(std::move(d));
    }
    return out;
}

SynthRunReport run_full(const SynthConfig& config) {
    PlantedWorld w = build_world(config);
    SteeringAssets assets = build_assets(w);

    SynthRunReport rep;
    rep.plant = w.plant;
    rep.bias_margin = w.bias_margin;
    rep.capability_margin = w.capability_margin;
    rep.margin_noise = w.margin_noise;
    rep.base_margin_std = w.base_margin_std;
    rep.tau_f = w.tau_f;
    rep.tau_v = w.tau_v;

    rep.f1_vanilla = vanilla_metrics(w).f1.value_or(0.0);
    {
        PlantedWorld unbiased = w;
        unbiased.plant.strength = 0.0;
        rep.f1_unbiased = vanilla_metrics(unbiased).f1.value_or(0.0);
    }

    auto alphas = default_alpha_grid();
    auto betas = default_beta_grid();
    auto ks = default_k_grid();
    rep.grid = grid_search(w, assets, alphas, betas, ks, w.config.threads);
    rep.best = rep.grid.rows[rep.grid.best_index];
    rep.best_improvement = rep.best.f1 - rep.f1_vanilla;

    Hyper best_point{rep.best.alpha, rep.best.beta, rep.best.k};
    rep.pipeline = run_pipeline(w, assets, best_point);
    rep.f1_negated = evaluate_arm(w, assets, -rep.best.alpha, -rep.best.beta, rep.best.k).f1;
    return rep;
}

}  // namespace dmas::synth
