#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dmas/errors.hpp"

namespace dmas {

// Per-layer, per-head activation block: layers x heads x head_dim doubles,
// flattened in (layer, head, dim) order. Both captured activations and
// steering directions use this layout, including on disk.
struct HeadTensor {
    int n_layers = 0;
    int n_heads = 0;
    int head_dim = 0;
    std::vector<double> data;

    HeadTensor() = default;
    HeadTensor(int layers, int heads, int dim, double fill = 0.0)
        : n_layers(layers), n_heads(heads), head_dim(dim),
          data(static_cast<std::size_t>(layers) * heads * dim, fill) {}

    std::size_t size() const { return data.size(); }

    std::size_t offset(int l, int h) const {
        return (static_cast<std::size_t>(l) * n_heads + h) * head_dim;
    }

    std::span<double> slice(int l, int h) {
        return {data.data() + offset(l, h), static_cast<std::size_t>(head_dim)};
    }
    std::span<const double> slice(int l, int h) const {
        return {data.data() + offset(l, h), static_cast<std::size_t>(head_dim)};
    }

    bool same_shape(const HeadTensor& o) const {
        return n_layers == o.n_layers && n_heads == o.n_heads && head_dim == o.head_dim;
    }
};

inline HeadTensor operator-(const HeadTensor& a, const HeadTensor& b) {
    if (!a.same_shape(b)) throw param_error("HeadTensor: shape mismatch");
    HeadTensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline HeadTensor operator+(const HeadTensor& a, const HeadTensor& b) {
    if (!a.same_shape(b)) throw param_error("HeadTensor: shape mismatch");
    HeadTensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline HeadTensor scaled(const HeadTensor& a, double c) {
    HeadTensor out = a;
    for (double& x : out.data) x *= c;
    return out;
}

// One bit per (layer, head). Used to gate which heads receive steering.
struct HeadMask {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<std::uint8_t> bits;

    HeadMask() = default;
    HeadMask(int layers, int heads)
        : n_layers(layers), n_heads(heads),
          bits(static_cast<std::size_t>(layers) * heads, 0) {}

    bool at(int l, int h) const { return bits[static_cast<std::size_t>(l) * n_heads + h] != 0; }
    void set(int l, int h, bool v) {
        bits[static_cast<std::size_t>(l) * n_heads + h] = v ? 1 : 0;
    }

    int popcount() const {
        int c = 0;
        for (auto b : bits) c += b ? 1 : 0;
        return c;
    }
};

}  // namespace dmas
