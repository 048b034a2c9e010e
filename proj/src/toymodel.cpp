#include "dmas/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dmas/errors.hpp"
#include "dmas/rng.hpp"

namespace dmas {

namespace {

constexpr double kLnEps = 1e-5;

void layernorm(std::span<const double> x, std::span<double> out) {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) {
        double c = v - mean;
        var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed) {
    Matrix m(rows, cols);
    Rng rng(seed);
    for (double& v : m.data) v = rng.next_gaussian() * scale;
    return m;
}

// Sinusoidal position encoding, scaled to the same magnitude as the token
// embeddings so neither source drowns the other.
void add_position_encoding(Matrix& x, int d_model) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (std::size_t pos = 0; pos < x.rows; ++pos) {
        for (int i = 0; i < d_model; i += 2) {
            double rate = std::pow(10000.0, -static_cast<double>(i) / d_model);
            double angle = static_cast<double>(pos) * rate;
            x.at(pos, static_cast<std::size_t>(i)) += std::sin(angle) * scale;
            if (i + 1 < d_model) x.at(pos, static_cast<std::size_t>(i + 1)) += std::cos(angle) * scale;
        }
    }
}

void validate_plan(const InterventionPlan& plan, const ModelConfig& cfg) {
    auto shape_ok = [&](const HeadTensor& t) {
        return t.n_layers == cfg.n_layers && t.n_heads == cfg.n_heads &&
               t.head_dim == cfg.head_dim();
    };
    auto mask_ok = [&](const HeadMask& m) {
        return m.n_layers == cfg.n_layers && m.n_heads == cfg.n_heads;
    };
    if (!shape_ok(plan.d_f) || !shape_ok(plan.d_v) || !mask_ok(plan.mask_f) ||
        !mask_ok(plan.mask_v))
        throw param_error("forward: intervention plan shape does not match model config");
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || vocab_size < 1 || max_seq < 1)
        throw param_error("ModelConfig: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
        throw param_error("ModelConfig: d_model must be divisible by n_heads");
}

std::uint64_t config_fingerprint(const ModelConfig& config) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<std::uint64_t>(config.n_layers));
    mix(static_cast<std::uint64_t>(config.n_heads));
    mix(static_cast<std::uint64_t>(config.d_model));
    mix(static_cast<std::uint64_t>(config.vocab_size));
    mix(static_cast<std::uint64_t>(config.max_seq));
    mix(config.seed);
    return h;
}

ModelWeights init_model(const ModelConfig& config) {
    config.validate();
    const std::size_t d = static_cast<std::size_t>(config.d_model);
    const std::size_t ff = 4 * d;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));

    ModelWeights w;
    w.config = config;
    w.embedding = gaussian_matrix(static_cast<std::size_t>(config.vocab_size), d, scale,
                                  derive_seed(config.seed, "embedding"));
    w.unembedding = gaussian_matrix(static_cast<std::size_t>(config.vocab_size), d, scale,
                                    derive_seed(config.seed, "unembedding"));
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + "/";
        LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        lw.w_q = gaussian_matrix(d, d, scale, derive_seed(config.seed, p + "w_q"));
        lw.w_k = gaussian_matrix(d, d, scale, derive_seed(config.seed, p + "w_k"));
        lw.w_v = gaussian_matrix(d, d, scale, derive_seed(config.seed, p + "w_v"));
        lw.w_o = gaussian_matrix(d, d, scale, derive_seed(config.seed, p + "w_o"));
        lw.w_ff1 = gaussian_matrix(ff, d, scale, derive_seed(config.seed, p + "w_ff1"));
        lw.w_ff2 = gaussian_matrix(d, ff, scale, derive_seed(config.seed, p + "w_ff2"));
    }
    return w;
}

ForwardResult forward(const ModelWeights& weights, const VisualPrefix& visual,
                      std::span<const int> tokens, const ForwardOptions& opts) {
    const ModelConfig& cfg = weights.config;
    cfg.validate();
    const int dm = cfg.d_model;
    const int dh = cfg.head_dim();
    const std::size_t seq = visual.size() + tokens.size();
    if (seq < 1) throw param_error("forward: empty input");
    if (seq > static_cast<std::size_t>(cfg.max_seq))
        throw param_error("forward: sequence length " + std::to_string(seq) +
                          " exceeds max_seq " + std::to_string(cfg.max_seq));
    for (const auto& v : visual.vectors)
        if (v.size() != static_cast<std::size_t>(dm))
            throw param_error("forward: visual vector width does not match d_model");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size) throw param_error("forward: token id out of range");

    const InterventionPlan* plan = opts.plan;
    if (plan) {
        validate_plan(*plan, cfg);
        // A plan with nothing to add must be indistinguishable from no plan.
        if ((plan->alpha == 0.0 && plan->beta == 0.0) ||
            (plan->mask_f.popcount() == 0 && plan->mask_v.popcount() == 0))
            plan = nullptr;
    }

    // Input embeddings: visual prefix first, then token rows.
    Matrix x(seq, static_cast<std::size_t>(dm));
    for (std::size_t p = 0; p < visual.size(); ++p)
        for (int i = 0; i < dm; ++i) x.at(p, static_cast<std::size_t>(i)) = visual.vectors[p][static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto row = weights.embedding.row(static_cast<std::size_t>(tokens[t]));
        for (int i = 0; i < dm; ++i)
            x.at(visual.size() + t, static_cast<std::size_t>(i)) = row[static_cast<std::size_t>(i)];
    }
    add_position_encoding(x, dm);

    ForwardResult res;
    res.trace = ActivationTensor(cfg.n_layers, cfg.n_heads, dh);
    if (opts.record_attn_residuals) res.attn_residuals.reserve(static_cast<std::size_t>(cfg.n_layers));

    Matrix xn(seq, static_cast<std::size_t>(dm));
    Matrix heads(seq, static_cast<std::size_t>(dm));  // concat of per-head outputs
    std::vector<double> q(static_cast<std::size_t>(dm)), k(static_cast<std::size_t>(dm)),
        v(static_cast<std::size_t>(dm));
    Matrix qs(seq, static_cast<std::size_t>(dm)), ks(seq, static_cast<std::size_t>(dm)),
        vs(seq, static_cast<std::size_t>(dm));
    std::vector<double> scores;

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = weights.layers[static_cast<std::size_t>(l)];

        for (std::size_t p = 0; p < seq; ++p) layernorm(x.row(p), xn.row(p));
        for (std::size_t p = 0; p < seq; ++p) {
            auto qq = matvec(lw.w_q, xn.row(p));
            auto kk = matvec(lw.w_k, xn.row(p));
            auto vv = matvec(lw.w_v, xn.row(p));
            std::copy(qq.begin(), qq.end(), qs.row(p).begin());
            std::copy(kk.begin(), kk.end(), ks.row(p).begin());
            std::copy(vv.begin(), vv.end(), vs.row(p).begin());
        }

        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < cfg.n_heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            for (std::size_t p = 0; p < seq; ++p) {
                // Causal attention: position p sees positions 0..p.
                scores.assign(p + 1, 0.0);
                double max_s = -1e300;
                for (std::size_t j = 0; j <= p; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < dh; ++i)
                        s += qs.at(p, off + i) * ks.at(j, off + i);
                    s *= inv_sqrt_dh;
                    scores[j] = s;
                    max_s = std::max(max_s, s);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j <= p; ++j) {
                    scores[j] = std::exp(scores[j] - max_s);
                    denom += scores[j];
                }
                for (int i = 0; i < dh; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= p; ++j) acc += scores[j] * vs.at(j, off + i);
                    heads.at(p, off + i) = acc / denom;
                }
            }
        }

        // Planted structure first, steering second; the trace then reflects
        // what the output projection actually consumes.
        if (opts.additions) {
            for (const HeadAddition& add : opts.additions->items) {
                if (add.layer != l) continue;
                if (add.head < 0 || add.head >= cfg.n_heads)
                    throw param_error("forward: head addition out of range");
                if (add.vec.size() != static_cast<std::size_t>(dh))
                    throw param_error("forward: head addition width mismatch");
                const std::size_t off = static_cast<std::size_t>(add.head) * dh;
                std::size_t first = add.all_positions ? 0 : seq - 1;
                for (std::size_t p = first; p < seq; ++p)
                    for (int i = 0; i < dh; ++i) heads.at(p, off + i) += add.vec[static_cast<std::size_t>(i)];
            }
        }
        if (plan) {
            for (int h = 0; h < cfg.n_heads; ++h) {
                const bool use_f = plan->mask_f.at(l, h) && plan->alpha != 0.0;
                const bool use_v = plan->mask_v.at(l, h) && plan->beta != 0.0;
                if (!use_f && !use_v) continue;
                auto df = plan->d_f.slice(l, h);
                auto dv = plan->d_v.slice(l, h);
                const std::size_t off = static_cast<std::size_t>(h) * dh;
                std::size_t first = plan->last_position_only ? seq - 1 : 0;
                for (std::size_t p = first; p < seq; ++p) {
                    for (int i = 0; i < dh; ++i) {
                        double add = 0.0;
                        if (use_f) add += plan->alpha * df[static_cast<std::size_t>(i)];
                        if (use_v) add += plan->beta * dv[static_cast<std::size_t>(i)];
                        heads.at(p, off + i) += add;
                    }
                }
            }
        }

        for (int h = 0; h < cfg.n_heads; ++h) {
            auto tr = res.trace.slice(l, h);
            const std::size_t off = static_cast<std::size_t>(h) * dh;
            for (int i = 0; i < dh; ++i) tr[static_cast<std::size_t>(i)] = heads.at(seq - 1, off + i);
        }

        for (std::size_t p = 0; p < seq; ++p) {
            auto proj = matvec(lw.w_o, heads.row(p));
            auto xr = x.row(p);
            for (int i = 0; i < dm; ++i) xr[static_cast<std::size_t>(i)] += proj[static_cast<std::size_t>(i)];
        }
        if (opts.record_attn_residuals) res.attn_residuals.push_back(x);

        for (std::size_t p = 0; p < seq; ++p) {
            layernorm(x.row(p), xn.row(p));
            auto h1 = matvec(lw.w_ff1, xn.row(p));
            for (double& val : h1) val = gelu(val);
            auto h2 = matvec(lw.w_ff2, h1);
            auto xr = x.row(p);
            for (int i = 0; i < dm; ++i) xr[static_cast<std::size_t>(i)] += h2[static_cast<std::size_t>(i)];
        }
    }

    std::vector<double> hn(static_cast<std::size_t>(dm));
    if (opts.record_position_logits)
        res.position_logits = Matrix(seq, static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t p = 0; p < seq; ++p) {
        if (!opts.record_position_logits && p + 1 < seq) continue;
        layernorm(x.row(p), hn);
        for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
            double s = 0.0;
            auto row = weights.unembedding.row(static_cast<std::size_t>(vtok));
            for (int i = 0; i < dm; ++i) s += row[static_cast<std::size_t>(i)] * hn[static_cast<std::size_t>(i)];
            if (opts.record_position_logits) res.position_logits.at(p, static_cast<std::size_t>(vtok)) = s;
            if (p + 1 == seq) {
                if (res.logits.empty()) res.logits.resize(static_cast<std::size_t>(cfg.vocab_size));
                res.logits[static_cast<std::size_t>(vtok)] = s;
            }
        }
    }
    return res;
}

ActivationTensor capture_last_token_activations(const ModelWeights& weights,
                                                const VisualPrefix& visual,
                                                std::span<const int> tokens,
                                                const HeadAdditions* additions) {
    ForwardOptions opts;
    opts.additions = additions;
    return forward(weights, visual, tokens, opts).trace;
}

std::vector<int> greedy_generate(const ModelWeights& weights, const VisualPrefix& visual,
                                 std::span<const int> prompt, int max_new_tokens,
                                 const ForwardOptions& opts) {
    if (max_new_tokens < 0) throw param_error("greedy_generate: negative token budget");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (visual.size() + seq.size() + 1 > static_cast<std::size_t>(weights.config.max_seq)) break;
        ForwardResult res = forward(weights, visual, seq, opts);
        int best = 0;
        for (int v = 1; v < weights.config.vocab_size; ++v)
            if (res.logits[static_cast<std::size_t>(v)] > res.logits[static_cast<std::size_t>(best)]) best = v;
        seq.push_back(best);
        out.push_back(best);
    }
    return out;
}

}  // namespace dmas
