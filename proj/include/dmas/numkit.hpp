#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dmas {

// Dense row-major matrix of doubles. Deliberately minimal; everything the
// project needs is a handful of kernels below, all deterministic.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
};

// Principal component model fitted by fit_pca. components is m x d with
// orthonormal rows; explained_variance is non-negative and non-increasing.
struct Pca {
    std::vector<double> mean;        // d
    Matrix components;               // m x d
    std::vector<double> explained_variance;  // m
};

struct KMeansResult {
    std::vector<int> assignments;    // n, values in [0, k)
    Matrix centroids;                // k x d
    double inertia = 0.0;
    int iterations = 0;
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

// y = M x. x must have M.cols entries.
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

// Cosine similarity in [-1, 1]. A zero-norm operand yields 0.0 and a warning
// on stderr; downstream tie-breaking then falls back to index order.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Indices of the k largest scores. Ties prefer the smaller index. The result
// is sorted ascending by index. k larger than scores.size() clamps.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

// Principal components of mean-centered samples (n x d), via a deterministic
// Jacobi eigensolver. Requires 1 <= m <= min(n, d). Each component's
// largest-magnitude entry is made positive so signs are reproducible.
Pca fit_pca(const Matrix& samples, std::size_t m);

// mean + C^T C (x - mean): reconstruction of x from its coordinates in the
// fitted affine subspace.
std::vector<double> pca_project_reconstruct(const Pca& pca, std::span<const double> x);

// C^T C x: orthogonal projection of x onto the span of the components,
// ignoring the fitted mean.
std::vector<double> project_span(const Pca& pca, std::span<const double> x);

// Lloyd's algorithm with k-means++ seeding. Deterministic for a given
// (points, k, seed). Empty clusters are re-seeded to the point farthest from
// its assigned centroid. Requires n >= k >= 1.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    int max_iters = 100);

// n x 2 coordinates of each sample in the top-2 principal subspace.
// Requires n >= 2.
Matrix project_2d(const Matrix& points);

}  // namespace dmas
