#include "dmas/steerdb.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dmas/numkit.hpp"
#include "dmas/rng.hpp"

namespace dmas {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'A', 'S'};
constexpr std::uint32_t kVersion = 1;

// CRC32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw db_format_error(db_format_error::Cause::truncated,
                                  "steering database: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(buf[pos + b]) << (8 * b);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(buf[pos + b]) << (8 * b);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string word;
    for (char raw : text) {
        unsigned char u = static_cast<unsigned char>(raw);
        if (std::isalnum(u)) {
            word.push_back(static_cast<char>(std::tolower(u)));
        } else if (!word.empty()) {
            words.push_back(word);
            word.clear();
        }
    }
    if (!word.empty()) words.push_back(word);
    return words;
}

}  // namespace

ToyEmbedder::ToyEmbedder(int dim) : dim_(dim) {
    if (dim < 1) throw param_error("ToyEmbedder: dim must be >= 1");
}

std::string ToyEmbedder::id() const { return "toy-bow-v1:" + std::to_string(dim_); }

std::vector<double> ToyEmbedder::embed(const std::string& text) const {
    std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
    for (const std::string& w : split_words(text)) {
        std::uint64_t h = fnv1a64(w);
        std::size_t idx = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
        double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
        v[idx] += sign;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        v[0] = 1.0;  // degenerate text still embeds to a unit vector
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

FileEmbedder::FileEmbedder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open embedding file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error(std::string("embedding file: ") + e.what());
    }
    try {
        id_ = j.at("id").get<std::string>();
        dim_ = j.at("dim").get<int>();
        if (dim_ < 1) throw io_error("embedding file: dim must be >= 1");
        for (auto it = j.at("entries").begin(); it != j.at("entries").end(); ++it) {
            std::vector<double> v = it.value().get<std::vector<double>>();
            if (v.size() != static_cast<std::size_t>(dim_))
                throw io_error("embedding file: entry '" + it.key() + "' has width " +
                               std::to_string(v.size()) + ", expected " + std::to_string(dim_));
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) throw io_error("embedding file: entry '" + it.key() + "' is zero");
            for (double& x : v) x /= norm;
            entries_.emplace(it.key(), std::move(v));
        }
    } catch (const io_error&) {
        throw;
    } catch (const std::exception& e) {
        throw io_error(std::string("embedding file: ") + e.what());
    }
}

std::vector<double> FileEmbedder::embed(const std::string& text) const {
    auto it = entries_.find(text_hash_hex(text));
    if (it == entries_.end())
        throw param_error("FileEmbedder: no precomputed embedding for: " + text);
    return it->second;
}

std::string FileEmbedder::text_hash_hex(const std::string& text) {
    std::uint64_t h = fnv1a64(text);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

bool operator==(const SteeringDatabase::Entry& a, const SteeringDatabase::Entry& b) {
    // Bit-level comparison on purpose: persistence must round-trip exactly.
    return a.cluster_id == b.cluster_id && a.question_count == b.question_count &&
           a.key.size() == b.key.size() && a.value.same_shape(b.value) &&
           std::memcmp(a.key.data(), b.key.data(), a.key.size() * sizeof(double)) == 0 &&
           std::memcmp(a.value.data.data(), b.value.data.data(),
                       a.value.data.size() * sizeof(double)) == 0;
}

bool operator==(const SteeringDatabase& a, const SteeringDatabase& b) {
    return a.entries == b.entries && a.embedder_id == b.embedder_id &&
           a.model_fingerprint == b.model_fingerprint && a.d_emb == b.d_emb &&
           a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.head_dim == b.head_dim;
}

SteeringDatabase build_database(const std::vector<ContrastiveSample>& samples, int k,
                                const Embedder& embedder, const ModelWeights& weights,
                                int m, std::uint64_t seed, const CaptureHook& hook) {
    if (k < 1) throw param_error("build_database: k must be >= 1");
    if (samples.size() < static_cast<std::size_t>(k))
        throw param_error("build_database: need at least k samples");

    const std::size_t n = samples.size();
    const int d_emb = embedder.dim();
    Matrix embeddings(n, static_cast<std::size_t>(d_emb));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> e = embedder.embed(samples[i].question);
        if (e.size() != static_cast<std::size_t>(d_emb))
            throw internal_error("build_database: embedder dim drift");
        std::copy(e.begin(), e.end(), embeddings.row(i).begin());
    }

    KMeansResult km = kmeans(embeddings, static_cast<std::size_t>(k),
                             derive_seed(seed, "db-clustering"));

    SteeringDatabase db;
    db.embedder_id = embedder.id();
    db.model_fingerprint = config_fingerprint(weights.config);
    db.d_emb = d_emb;
    db.n_layers = weights.config.n_layers;
    db.n_heads = weights.config.n_heads;
    db.head_dim = weights.config.head_dim();

    for (int c = 0; c < k; ++c) {
        std::vector<ContrastiveSample> members;
        std::vector<double> key(static_cast<std::size_t>(d_emb), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (km.assignments[i] != c) continue;
            members.push_back(samples[i]);
            auto row = embeddings.row(i);
            for (int j = 0; j < d_emb; ++j) key[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)];
        }
        if (members.empty())
            throw internal_error("build_database: empty cluster survived k-means");
        double norm = 0.0;
        for (double x : key) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0)
            throw param_error("build_database: cluster " + std::to_string(c) +
                              " has a zero-norm key (degenerate embeddings)");
        for (double& x : key) x /= norm;

        SteeringVector vec = truthfulness_vector(members, weights, m, hook);
        SteeringDatabase::Entry entry;
        entry.cluster_id = static_cast<std::uint32_t>(c);
        entry.question_count = static_cast<std::uint32_t>(members.size());
        entry.key = std::move(key);
        entry.value = std::move(vec.values);
        db.entries.push_back(std::move(entry));
    }
    return db;
}

RetrievalResult retrieve(const SteeringDatabase& db, const std::string& question,
                         const Embedder& embedder) {
    if (db.entries.empty()) throw param_error("retrieve: empty database");
    if (embedder.id() != db.embedder_id)
        throw param_error("retrieve: embedder '" + embedder.id() +
                          "' does not match database embedder '" + db.embedder_id + "'");
    std::vector<double> q = embedder.embed(question);

    bool have = false;
    double best_sim = 0.0;
    const SteeringDatabase::Entry* best = nullptr;
    for (const auto& entry : db.entries) {
        double sim = cosine_similarity(q, entry.key);
        if (!have || sim > best_sim ||
            (sim == best_sim && best && entry.cluster_id < best->cluster_id)) {
            have = true;
            best_sim = sim;
            best = &entry;
        }
    }

    RetrievalResult res;
    res.vector.values = best->value;
    res.vector.kind = SteeringVector::Kind::truthfulness;
    res.vector.sample_count = static_cast<int>(best->question_count);
    res.cluster_id = best->cluster_id;
    res.similarity = best_sim;
    return res;
}

SteeringVector merge_fixed(const SteeringDatabase& db) {
    if (db.entries.empty()) throw param_error("merge_fixed: empty database");
    HeadTensor acc(db.n_layers, db.n_heads, db.head_dim);
    std::uint64_t total = 0;
    for (const auto& entry : db.entries) {
        total += entry.question_count;
        for (std::size_t i = 0; i < acc.data.size(); ++i)
            acc.data[i] += static_cast<double>(entry.question_count) * entry.value.data[i];
    }
    if (total == 0) throw param_error("merge_fixed: no questions behind database entries");
    for (double& x : acc.data) x /= static_cast<double>(total);

    SteeringVector out;
    out.values = std::move(acc);
    out.kind = SteeringVector::Kind::truthfulness;
    out.sample_count = static_cast<int>(total);
    out.pca_components_kept = 0;
    return out;
}

void save_database(const SteeringDatabase& db, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(db.d_emb));
    put_u32(buf, static_cast<std::uint32_t>(db.n_layers));
    put_u32(buf, static_cast<std::uint32_t>(db.n_heads));
    put_u32(buf, static_cast<std::uint32_t>(db.head_dim));
    put_u32(buf, static_cast<std::uint32_t>(db.entries.size()));
    put_u32(buf, static_cast<std::uint32_t>(db.embedder_id.size()));
    buf.insert(buf.end(), db.embedder_id.begin(), db.embedder_id.end());
    put_u64(buf, db.model_fingerprint);

    const std::size_t value_len = static_cast<std::size_t>(db.n_layers) * db.n_heads * db.head_dim;
    for (const auto& entry : db.entries) {
        if (entry.key.size() != static_cast<std::size_t>(db.d_emb) ||
            entry.value.data.size() != value_len)
            throw internal_error("save_database: entry shape mismatch");
        put_u32(buf, entry.cluster_id);
        put_u32(buf, entry.question_count);
        for (double x : entry.key) put_f64(buf, x);
        for (double x : entry.value.data) put_f64(buf, x);
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write steering database: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("short write to steering database: " + path);
}

SteeringDatabase load_database(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open steering database: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw db_format_error(db_format_error::Cause::bad_magic,
                              "steering database: bad magic, not a DMAS file");

    // Checksum first: a corrupt file should not be interpreted further.
    if (buf.size() < 8)
        throw db_format_error(db_format_error::Cause::truncated,
                              "steering database: truncated file");
    std::uint32_t stored_crc = 0;
    for (int b = 0; b < 4; ++b)
        stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(b)]) << (8 * b);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw db_format_error(db_format_error::Cause::bad_checksum,
                              "steering database: checksum mismatch");

    Reader r{buf, 4};
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw db_format_error(db_format_error::Cause::bad_version,
                              "steering database: version " + std::to_string(version) +
                                  " unsupported, expected " + std::to_string(kVersion));

    SteeringDatabase db;
    db.d_emb = static_cast<int>(r.u32());
    db.n_layers = static_cast<int>(r.u32());
    db.n_heads = static_cast<int>(r.u32());
    db.head_dim = static_cast<int>(r.u32());
    std::uint32_t n_entries = r.u32();
    std::uint32_t id_len = r.u32();
    r.need(id_len);
    db.embedder_id.assign(reinterpret_cast<const char*>(buf.data()) + r.pos, id_len);
    r.pos += id_len;
    db.model_fingerprint = r.u64();

    for (std::uint32_t e = 0; e < n_entries; ++e) {
        SteeringDatabase::Entry entry;
        entry.cluster_id = r.u32();
        entry.question_count = r.u32();
        entry.key.resize(static_cast<std::size_t>(db.d_emb));
        for (double& x : entry.key) x = r.f64();
        entry.value = HeadTensor(db.n_layers, db.n_heads, db.head_dim);
        for (double& x : entry.value.data) x = r.f64();
        db.entries.push_back(std::move(entry));
    }
    if (r.pos != buf.size() - 4)
        throw db_format_error(db_format_error::Cause::truncated,
                              "steering database: trailing or missing bytes");
    return db;
}

}  // namespace dmas
