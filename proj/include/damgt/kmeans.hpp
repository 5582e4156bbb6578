#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "damgt/error.hpp"
#include "damgt/matrix.hpp"
#include "damgt/parallel.hpp"
#include "damgt/rng.hpp"

namespace damgt {

struct Clustering {
    std::size_t k = 0;
    std::vector<std::size_t> assignment;  // size n, values in [0, k)
    RowMatrix centroids;                  // k x d
    std::size_t iterations_run = 0;
    double objective = 0.0;                  // sum of squared point-to-centroid distances
    std::vector<double> objective_history;   // one entry per assignment pass
};

struct KmeansConfig {
    std::size_t max_iter = 100;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

}  // namespace detail

// Lloyd iterations from k-means++ seeding. Stops at an assignment fixed point
// or after max_iter passes. Nearest-centroid ties break toward the lowest
// cluster id; an emptied cluster is reseeded to the point farthest from its
// currently assigned centroid.
inline Clustering kmeans(const RowMatrix& x, std::size_t k, const KmeansConfig& cfg = {}) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    if (k < 1 || k > n) {
        throw ConfigError("kmeans: k must be in [1, n]; got k=" + std::to_string(k) +
                          ", n=" + std::to_string(n));
    }
    if (cfg.max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");

    Clustering out;
    out.k = k;
    out.centroids = RowMatrix(k, d);
    out.assignment.assign(n, 0);

    Rng rng(derive_seed(cfg.seed, 0x6b6du));  // "km"

    // k-means++ seeding: first centroid uniform, then proportional to the
    // squared distance to the nearest chosen centroid.
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    {
        const std::size_t first = uniform_index(rng, n);
        for (std::size_t j = 0; j < d; ++j) out.centroids.at(0, j) = x.at(first, j);
        for (std::size_t i = 0; i < n; ++i) min_d2[i] = detail::sq_dist(x.row(i), out.centroids.row(0), d);
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) total += min_d2[i];
            std::size_t pick = 0;
            if (total > 0.0) {
                const double r = uniform_double(rng) * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += min_d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = uniform_index(rng, n);  // all points already coincide with centroids
            }
            for (std::size_t j = 0; j < d; ++j) out.centroids.at(c, j) = x.at(pick, j);
            for (std::size_t i = 0; i < n; ++i) {
                min_d2[i] = std::min(min_d2[i], detail::sq_dist(x.row(i), out.centroids.row(c), d));
            }
        }
    }

    std::vector<std::size_t> prev(n, k);  // sentinel: differs from any valid assignment
    std::vector<double> point_d2(n, 0.0);
    std::vector<std::size_t> counts(k, 0);

    for (std::size_t iter = 1; iter <= cfg.max_iter; ++iter) {
        // Assignment pass (per-point, parallel-safe).
        parallel_for(n, cfg.workers, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                double best = std::numeric_limits<double>::infinity();
                std::size_t best_c = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    const double d2 = detail::sq_dist(x.row(i), out.centroids.row(c), d);
                    if (d2 < best) {
                        best = d2;
                        best_c = c;
                    }
                }
                out.assignment[i] = best_c;
                point_d2[i] = best;
            }
        });
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i) obj += point_d2[i];
        out.objective = obj;
        out.objective_history.push_back(obj);
        out.iterations_run = iter;

        if (out.assignment == prev) break;
        prev = out.assignment;
        if (iter == cfg.max_iter) break;

        // Update pass: centroids become member means.
        out.centroids.data.assign(k * d, 0.0);
        counts.assign(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = out.assignment[i];
            ++counts[c];
            double* cc = out.centroids.row(c);
            const double* xi = x.row(i);
            for (std::size_t j = 0; j < d; ++j) cc[j] += xi[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            double* cc = out.centroids.row(c);
            for (std::size_t j = 0; j < d; ++j) cc[j] /= static_cast<double>(counts[c]);
        }
        // Empty-cluster repair: reseed to the point farthest from its own
        // centroid (ties to the lowest point id), one point per empty cluster.
        std::vector<std::uint8_t> used(n, 0);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            double worst = -1.0;
            std::size_t worst_i = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (used[i]) continue;
                const double d2 = detail::sq_dist(x.row(i), out.centroids.row(out.assignment[i]), d);
                if (d2 > worst) {
                    worst = d2;
                    worst_i = i;
                }
            }
            used[worst_i] = 1;
            for (std::size_t j = 0; j < d; ++j) out.centroids.at(c, j) = x.at(worst_i, j);
        }
    }
    return out;
}

}  // namespace damgt
