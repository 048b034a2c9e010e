#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmas/errors.hpp"
#include "dmas/extraction.hpp"

namespace dmas {

// Question-text embedding used for clustering and retrieval keys. Outputs
// are always unit-norm.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Hashed bag-of-words: each lowercased word lands on a hashed coordinate
// with a hashed sign. Crude, but deterministic and dependency-free, and it
// separates questions with distinct vocabularies well enough to cluster.
class ToyEmbedder : public Embedder {
public:
    explicit ToyEmbedder(int dim = 64);
    std::string id() const override;
    int dim() const override { return dim_; }
    std::vector<double> embed(const std::string& text) const override;

private:
    int dim_;
};

// Precomputed embeddings read from a JSON file keyed by text hash:
//   {"id": "...", "dim": N, "entries": {"<16-hex fnv1a64>": [floats...]}}
// Lets real sentence embeddings be plugged in without linking anything.
class FileEmbedder : public Embedder {
public:
    explicit FileEmbedder(const std::string& path);
    std::string id() const override { return id_; }
    int dim() const override { return dim_; }
    std::vector<double> embed(const std::string& text) const override;

    static std::string text_hash_hex(const std::string& text);

private:
    std::string id_;
    int dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> entries_;
};

// Clustered store of truthfulness steering vectors. Keys are unit-norm
// cluster centroids in embedding space; values are steering tensors shaped
// like the model's per-head activations.
struct SteeringDatabase {
    struct Entry {
        std::uint32_t cluster_id = 0;
        std::uint32_t question_count = 0;
        std::vector<double> key;
        HeadTensor value;
    };

    std::vector<Entry> entries;  // cluster_id ascending, dense from 0
    std::string embedder_id;
    std::uint64_t model_fingerprint = 0;
    int d_emb = 0;
    int n_layers = 0;
    int n_heads = 0;
    int head_dim = 0;
};

bool operator==(const SteeringDatabase::Entry& a, const SteeringDatabase::Entry& b);
bool operator==(const SteeringDatabase& a, const SteeringDatabase& b);

struct RetrievalResult {
    SteeringVector vector;
    std::uint32_t cluster_id = 0;
    double similarity = 0.0;
};

// Embeds every question, clusters the embeddings with k-means, and runs the
// contrastive extraction per cluster. Requires at least k samples.
SteeringDatabase build_database(const std::vector<ContrastiveSample>& samples, int k,
                                const Embedder& embedder, const ModelWeights& weights,
                                int m, std::uint64_t seed, const CaptureHook& hook = {});

// Nearest key by cosine similarity; ties resolve to the smallest
// cluster_id. The embedder must be the one the database was built with.
RetrievalResult retrieve(const SteeringDatabase& db, const std::string& question,
                         const Embedder& embedder);

// question_count-weighted mean of all stored vectors; the static baseline
// the retrieval path is compared against.
SteeringVector merge_fixed(const SteeringDatabase& db);

// Binary container, little-endian, CRC32 at the tail:
//   "DMAS" | version u32 | d_emb u32 | layers u32 | heads u32 | head_dim u32
//   | n_entries u32 | embedder_id (u32 length + bytes) | fingerprint u64
//   | entries (cluster_id u32, question_count u32, key f64[d_emb],
//              value f64[layers*heads*head_dim]) | crc32 u32
void save_database(const SteeringDatabase& db, const std::string& path);
SteeringDatabase load_database(const std::string& path);

// Load failure cause, inspectable so callers can distinguish a stale format
// from plain corruption.
struct db_format_error : io_error {
    enum class Cause { bad_magic, bad_version, truncated, bad_checksum };
    Cause cause;
    db_format_error(Cause c, const std::string& msg) : io_error(msg), cause(c) {}
};

}  // namespace dmas
