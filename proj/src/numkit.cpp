#include "dmas/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "dmas/errors.hpp"
#include "dmas/rng.hpp"

namespace dmas {

namespace {

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw param_error(std::string(what) + ": non-finite entry");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Rotations are
// applied in a fixed order, so the result is bit-stable for a given input.
// Eigenpairs come back sorted by eigenvalue descending, index ascending on
// ties.
void jacobi_eigen(const Matrix& a_in, std::vector<double>& values, Matrix& vectors) {
    const std::size_t n = a_in.rows;
    Matrix a = a_in;
    vectors = Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vectors.at(i, i) = 1.0;

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off <= 1e-28 * (n * n)) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (apq == 0.0) continue;
                double app = a.at(p, p);
                double aqq = a.at(q, q);
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    double aip = a.at(i, p);
                    double aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double api = a.at(p, i);
                    double aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = vectors.at(i, p);
                    double viq = vectors.at(i, q);
                    vectors.at(i, p) = c * vip - s * viq;
                    vectors.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a.at(i, i);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return values[i] > values[j];
    });

    std::vector<double> sorted_values(n);
    Matrix sorted_vectors(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        sorted_values[k] = values[order[k]];
        for (std::size_t i = 0; i < n; ++i) sorted_vectors.at(i, k) = vectors.at(i, order[k]);
    }
    values = std::move(sorted_values);
    vectors = std::move(sorted_vectors);
}

// Flip each row so its largest-magnitude entry is positive. Ties on
// magnitude resolve to the smallest index.
void fix_component_signs(Matrix& components) {
    for (std::size_t r = 0; r < components.rows; ++r) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t c = 0; c < components.cols; ++c) {
            double mag = std::abs(components.at(r, c));
            if (mag > best) {
                best = mag;
                arg = c;
            }
        }
        if (components.at(r, arg) < 0.0) {
            for (std::size_t c = 0; c < components.cols; ++c) components.at(r, c) = -components.at(r, c);
        }
    }
}

// Deterministic orthonormal completion for rank-deficient data: walk the
// standard basis and keep whatever survives Gram-Schmidt against the rows
// already present.
void complete_basis(Matrix& components, std::size_t filled) {
    const std::size_t d = components.cols;
    std::size_t next_axis = 0;
    for (std::size_t r = filled; r < components.rows; ++r) {
        std::vector<double> cand(d, 0.0);
        for (; next_axis < d; ++next_axis) {
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[next_axis] = 1.0;
            for (std::size_t p = 0; p < r; ++p) {
                double proj = dot(cand, components.row(p));
                auto prev = components.row(p);
                for (std::size_t i = 0; i < d; ++i) cand[i] -= proj * prev[i];
            }
            double norm = std::sqrt(dot(cand, cand));
            if (norm > 0.5) {
                for (std::size_t i = 0; i < d; ++i) components.at(r, i) = cand[i] / norm;
                ++next_axis;
                break;
            }
        }
        if (next_axis > d) throw internal_error("fit_pca: basis completion exhausted");
    }
}

}  // namespace

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols) throw param_error("matvec: dimension mismatch");
    std::vector<double> y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) y[r] = dot(m.row(r), x);
    return y;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw param_error("cosine_similarity: length mismatch");
    check_finite(a, "cosine_similarity");
    check_finite(b, "cosine_similarity");
    double na = std::sqrt(dot(a, a));
    double nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) {
        std::cerr << "dmas: warning: cosine_similarity on zero-norm input, returning 0\n";
        return 0.0;
    }
    double sim = dot(a, b) / (na * nb);
    return std::clamp(sim, -1.0, 1.0);
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
    check_finite(scores, "top_k_indices");
    k = std::min(k, scores.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Value descending, index ascending on ties; stable_sort keeps the index
    // order without an explicit tiebreak.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return scores[i] > scores[j];
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

Pca fit_pca(const Matrix& samples, std::size_t m) {
    const std::size_t n = samples.rows;
    const std::size_t d = samples.cols;
    if (n < 1) throw param_error("fit_pca: need at least one sample");
    if (m < 1 || m > std::min(n, d)) throw param_error("fit_pca: m out of range");
    check_finite(samples.data, "fit_pca");

    Pca pca;
    pca.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) pca.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) pca.mean[j] /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            centered.at(i, j) = samples.at(i, j) - pca.mean[j];

    pca.components = Matrix(m, d, 0.0);
    pca.explained_variance.assign(m, 0.0);

    std::vector<double> values;
    Matrix vectors;

    if (d <= n) {
        // Covariance route: eigendecompose (1/n) X^T X, d x d.
        Matrix cov(d, d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = centered.row(i);
            for (std::size_t p = 0; p < d; ++p)
                for (std::size_t q = p; q < d; ++q) cov.at(p, q) += row[p] * row[q];
        }
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p; q < d; ++q) {
                double v = cov.at(p, q) / static_cast<double>(n);
                cov.at(p, q) = v;
                cov.at(q, p) = v;
            }
        jacobi_eigen(cov, values, vectors);
        for (std::size_t r = 0; r < m; ++r) {
            pca.explained_variance[r] = std::max(0.0, values[r]);
            for (std::size_t j = 0; j < d; ++j) pca.components.at(r, j) = vectors.at(j, r);
        }
    } else {
        // Gram route for wide data: eigendecompose (1/n) X X^T, n x n, then
        // map eigenvectors back through X^T.
        Matrix gram(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double v = dot(centered.row(i), centered.row(j)) / static_cast<double>(n);
                gram.at(i, j) = v;
                gram.at(j, i) = v;
            }
        jacobi_eigen(gram, values, vectors);
        double top = values.empty() ? 0.0 : std::max(0.0, values[0]);
        std::size_t filled = 0;
        for (std::size_t r = 0; r < m; ++r) {
            double lambda = std::max(0.0, values[r]);
            pca.explained_variance[r] = lambda;
            if (lambda <= top * 1e-12 || lambda == 0.0) break;
            std::vector<double> comp(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double u = vectors.at(i, r);
                auto row = centered.row(i);
                for (std::size_t j = 0; j < d; ++j) comp[j] += u * row[j];
            }
            double norm = std::sqrt(dot(comp, comp));
            if (norm == 0.0) break;
            for (std::size_t j = 0; j < d; ++j) pca.components.at(r, j) = comp[j] / norm;
            filled = r + 1;
        }
        complete_basis(pca.components, filled);
    }

    fix_component_signs(pca.components);
    return pca;
}

std::vector<double> pca_project_reconstruct(const Pca& pca, std::span<const double> x) {
    const std::size_t d = pca.mean.size();
    if (x.size() != d) throw param_error("pca_project_reconstruct: dimension mismatch");
    std::vector<double> centered(d);
    for (std::size_t j = 0; j < d; ++j) centered[j] = x[j] - pca.mean[j];
    std::vector<double> coords = matvec(pca.components, centered);
    std::vector<double> out = pca.mean;
    for (std::size_t r = 0; r < pca.components.rows; ++r) {
        auto comp = pca.components.row(r);
        for (std::size_t j = 0; j < d; ++j) out[j] += coords[r] * comp[j];
    }
    return out;
}

std::vector<double> project_span(const Pca& pca, std::span<const double> x) {
    const std::size_t d = pca.mean.size();
    if (x.size() != d) throw param_error("project_span: dimension mismatch");
    std::vector<double> coords = matvec(pca.components, x);
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < pca.components.rows; ++r) {
        auto comp = pca.components.row(r);
        for (std::size_t j = 0; j < d; ++j) out[j] += coords[r] * comp[j];
    }
    return out;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, int max_iters) {
    const std::size_t n = points.rows;
    const std::size_t d = points.cols;
    if (k < 1) throw param_error("kmeans: k must be >= 1");
    if (n < k) throw param_error("kmeans: need at least k points");
    check_finite(points.data, "kmeans");

    Rng rng(seed);

    // Greedy k-means++ seeding: each step draws a few D^2-weighted candidates
    // and keeps the one that shrinks the total potential most, which avoids
    // the classic failure of two seeds landing in one tight cluster.
    auto seed_centroids = [&](Matrix& centroids) {
        std::size_t first = static_cast<std::size_t>(rng.next_below(n));
        for (std::size_t j = 0; j < d; ++j) centroids.at(0, j) = points.at(first, j);
        const std::size_t n_cand = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
        std::vector<double> d2(n);
        for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), centroids.row(0));
        std::vector<double> cand_d2(n);
        for (std::size_t c = 1; c < k; ++c) {
            double total = std::accumulate(d2.begin(), d2.end(), 0.0);
            std::size_t chosen = 0;
            if (total > 0.0) {
                double best_potential = std::numeric_limits<double>::infinity();
                std::vector<double> best_d2 = d2;
                for (std::size_t t = 0; t < n_cand; ++t) {
                    double r = rng.next_double() * total;
                    double acc = 0.0;
                    std::size_t cand = n - 1;
                    for (std::size_t i = 0; i < n; ++i) {
                        acc += d2[i];
                        if (acc > r) {
                            cand = i;
                            break;
                        }
                    }
                    double potential = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        cand_d2[i] = std::min(d2[i], sq_dist(points.row(i), points.row(cand)));
                        potential += cand_d2[i];
                    }
                    if (potential < best_potential) {
                        best_potential = potential;
                        best_d2 = cand_d2;
                        chosen = cand;
                    }
                }
                d2 = best_d2;
            } else {
                chosen = static_cast<std::size_t>(rng.next_below(n));
            }
            for (std::size_t j = 0; j < d; ++j) centroids.at(c, j) = points.at(chosen, j);
        }
    };

    auto lloyd = [&](Matrix centroids) {
        KMeansResult res;
        res.assignments.assign(n, 0);
        double prev_inertia = std::numeric_limits<double>::infinity();

        for (int iter = 0; iter < max_iters; ++iter) {
            // Assignment step; ties go to the smaller centroid index.
            bool changed = false;
            double inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t best_c = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    double dd = sq_dist(points.row(i), centroids.row(c));
                    if (dd < best_d) {
                        best_d = dd;
                        best_c = c;
                    }
                }
                if (res.assignments[i] != static_cast<int>(best_c)) {
                    res.assignments[i] = static_cast<int>(best_c);
                    changed = true;
                }
                inertia += best_d;
            }

            if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12)
                throw internal_error("kmeans: inertia increased");
            prev_inertia = inertia;
            res.inertia = inertia;
            res.inertia_history.push_back(inertia);
            res.iterations = iter + 1;

            // Update step.
            Matrix sums(k, d, 0.0);
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t i = 0; i < n; ++i) {
                auto row = points.row(i);
                std::size_t c = static_cast<std::size_t>(res.assignments[i]);
                counts[c]++;
                for (std::size_t j = 0; j < d; ++j) sums.at(c, j) += row[j];
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (counts[c] == 0) {
                    // Re-seed an empty cluster to the point farthest from its
                    // assigned centroid (smallest index on ties).
                    std::size_t far_i = 0;
                    double far_d = -1.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        std::size_t ci = static_cast<std::size_t>(res.assignments[i]);
                        double dd = sq_dist(points.row(i), centroids.row(ci));
                        if (dd > far_d) {
                            far_d = dd;
                            far_i = i;
                        }
                    }
                    for (std::size_t j = 0; j < d; ++j) centroids.at(c, j) = points.at(far_i, j);
                    res.assignments[far_i] = static_cast<int>(c);
                    changed = true;
                } else {
                    for (std::size_t j = 0; j < d; ++j)
                        centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
                }
            }

            if (!changed && iter > 0) break;
        }

        res.centroids = std::move(centroids);
        return res;
    };

    // Restarts drawn from the same seeded stream; lowest final inertia wins,
    // earliest run on ties, so the result is still a pure function of the
    // inputs while the odd bad local optimum gets discarded.
    const int restarts = 10;
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Matrix centroids(k, d);
        seed_centroids(centroids);
        KMeansResult res = lloyd(std::move(centroids));
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

Matrix project_2d(const Matrix& points) {
    if (points.rows < 2) throw param_error("project_2d: need at least two points");
    std::size_t m = std::min<std::size_t>(2, points.cols);
    Pca pca = fit_pca(points, m);
    Matrix out(points.rows, 2, 0.0);
    for (std::size_t i = 0; i < points.rows; ++i) {
        std::vector<double> centered(points.cols);
        for (std::size_t j = 0; j < points.cols; ++j)
            centered[j] = points.at(i, j) - pca.mean[j];
        std::vector<double> coords = matvec(pca.components, centered);
        out.at(i, 0) = coords[0];
        if (coords.size() > 1) out.at(i, 1) = coords[1];
    }
    return out;
}

}  // namespace dmas
