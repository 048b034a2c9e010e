#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dmas/numkit.hpp"
#include "dmas/tensor.hpp"

namespace dmas {

struct ModelConfig {
    int n_layers = 6;
    int n_heads = 8;
    int d_model = 64;
    int vocab_size = 64;
    int max_seq = 48;
    std::uint64_t seed = 7;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// 8-byte digest of the config; persisted artifacts carry it so a database
// built against one model cannot silently steer another.
std::uint64_t config_fingerprint(const ModelConfig& config);

struct LayerWeights {
    Matrix w_q, w_k, w_v;   // d_model x d_model
    Matrix w_o;             // d_model x d_model, consumes the head concat
    Matrix w_ff1;           // 4*d_model x d_model
    Matrix w_ff2;           // d_model x 4*d_model
};

struct ModelWeights {
    ModelConfig config;
    Matrix embedding;       // vocab_size x d_model
    Matrix unembedding;     // vocab_size x d_model, logit v = row(v) . h
    std::vector<LayerWeights> layers;
};

// All weights are Gaussian with scale 1/sqrt(d_model), drawn from streams
// derived off config.seed. Same config, same weights, bit for bit.
ModelWeights init_model(const ModelConfig& config);

// Continuous vectors prepended to the token embeddings, standing in for
// projected image features. May be empty.
struct VisualPrefix {
    std::vector<std::vector<double>> vectors;  // each d_model wide

    std::size_t size() const { return vectors.size(); }
};

using ActivationTensor = HeadTensor;

// Steering directive consumed by forward: per-head masked additions applied
// to attention head outputs before the output projection. alpha scales d_f,
// beta scales d_v. By default the addition lands at every sequence
// position; last_position_only restricts it to the final one.
struct InterventionPlan {
    double alpha = 0.0;
    double beta = 0.0;
    HeadMask mask_f;
    HeadMask mask_v;
    HeadTensor d_f;
    HeadTensor d_v;
    bool last_position_only = false;
};

// Unconditional per-head output additions. This is the hook the synthetic
// benchmark uses to plant structure into an otherwise random model; it is
// applied before any InterventionPlan so steering acts on the planted model.
struct HeadAddition {
    int layer = 0;
    int head = 0;
    std::vector<double> vec;        // head_dim wide
    bool all_positions = true;      // false: last position only
};

struct HeadAdditions {
    std::vector<HeadAddition> items;
};

struct ForwardOptions {
    const InterventionPlan* plan = nullptr;
    const HeadAdditions* additions = nullptr;
    bool record_attn_residuals = false;  // residual stream after each attention block
    bool record_position_logits = false; // logits at every position, not just the last
};

struct ForwardResult {
    std::vector<double> logits;          // vocab_size, last position
    ActivationTensor trace;              // last position pre-W_o head outputs,
                                         // post-addition when intervening
    std::vector<Matrix> attn_residuals;  // per layer: seq_len x d_model
    Matrix position_logits;              // seq_len x vocab_size when requested
};

ForwardResult forward(const ModelWeights& weights, const VisualPrefix& visual,
                      std::span<const int> tokens, const ForwardOptions& opts = {});

ActivationTensor capture_last_token_activations(const ModelWeights& weights,
                                                const VisualPrefix& visual,
                                                std::span<const int> tokens,
                                                const HeadAdditions* additions = nullptr);

// Greedy decoding, re-running the full forward per step (no KV cache; the
// model is small enough that it does not matter). Ties pick the smaller id.
std::vector<int> greedy_generate(const ModelWeights& weights, const VisualPrefix& visual,
                                 std::span<const int> prompt, int max_new_tokens,
                                 const ForwardOptions& opts = {});

}  // namespace dmas
