#include <catch2/catch_amalgamated.hpp>

#include "damgt/kmeans.hpp"
#include "damgt/rng.hpp"

using namespace damgt;

namespace {

RowMatrix points(std::initializer_list<std::initializer_list<double>> rows) {
    RowMatrix m(rows.size(), rows.begin()->size());
    std::size_t i = 0;
    for (const auto& row : rows) {
        std::size_t j = 0;
        for (double v : row) m.at(i, j++) = v;
        ++i;
    }
    return m;
}

}  // namespace

TEST_CASE("kmeans: k=1 centroid is the mean") {
    const auto x = points({{0, 0}, {0, 1}});
    const auto c = kmeans(x, 1);
    CHECK(c.centroids.at(0, 0) == 0.0);
    CHECK(c.centroids.at(0, 1) == 0.5);
    CHECK(c.assignment == std::vector<std::size_t>{0, 0});
}

TEST_CASE("kmeans: exact fit has objective zero") {
    const auto x = points({{0, 0}, {10, 10}});
    const auto c = kmeans(x, 2);
    CHECK(c.objective == 0.0);
    CHECK(c.assignment[0] != c.assignment[1]);
    // Both input points appear as centroids.
    const bool a = c.centroids.at(0, 0) == 0.0 || c.centroids.at(0, 0) == 10.0;
    CHECK(a);
}

TEST_CASE("kmeans: recovers three tight Gaussian blobs") {
    const double centers[3][2] = {{0, 0}, {20, 0}, {0, 20}};
    Rng rng(42);
    RowMatrix x(30, 2);
    std::vector<std::size_t> truth(30);
    for (std::size_t i = 0; i < 30; ++i) {
        const std::size_t blob = i % 3;
        truth[i] = blob;
        x.at(i, 0) = centers[blob][0] + 0.2 * normal_double(rng);
        x.at(i, 1) = centers[blob][1] + 0.2 * normal_double(rng);
    }
    const auto c = kmeans(x, 3, {.max_iter = 100, .seed = 5});
    // Brute-force oracle: nearest true center per point; cluster ids may be
    // permuted, so check co-membership instead of raw ids.
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t j = 0; j < 30; ++j) {
            CHECK((truth[i] == truth[j]) == (c.assignment[i] == c.assignment[j]));
        }
    }
}

TEST_CASE("kmeans: k > n is a configuration error") {
    const auto x = points({{0, 0}, {1, 1}});
    CHECK_THROWS_AS(kmeans(x, 3), ConfigError);
}

TEST_CASE("kmeans: objective history is non-increasing") {
    Rng rng(7);
    RowMatrix x(60, 4);
    for (auto& v : x.data) v = normal_double(rng);
    const auto c = kmeans(x, 5, {.max_iter = 50, .seed = 3});
    REQUIRE(!c.objective_history.empty());
    for (std::size_t i = 1; i < c.objective_history.size(); ++i) {
        CHECK(c.objective_history[i] <= c.objective_history[i - 1] + 1e-12);
    }
    CHECK(c.objective == c.objective_history.back());
}

TEST_CASE("kmeans: centroids are member means at convergence") {
    Rng rng(11);
    RowMatrix x(50, 3);
    for (auto& v : x.data) v = normal_double(rng);
    const auto c = kmeans(x, 4, {.max_iter = 200, .seed = 9});
    std::vector<std::vector<double>> mean(4, std::vector<double>(3, 0.0));
    std::vector<std::size_t> count(4, 0);
    for (std::size_t i = 0; i < 50; ++i) {
        ++count[c.assignment[i]];
        for (std::size_t j = 0; j < 3; ++j) mean[c.assignment[i]][j] += x.at(i, j);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        if (count[k] == 0) continue;
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(std::abs(mean[k][j] / count[k] - c.centroids.at(k, j)) < 1e-12);
        }
    }
}

TEST_CASE("kmeans: nodes sit with their nearest centroid at convergence") {
    Rng rng(13);
    RowMatrix x(40, 2);
    for (auto& v : x.data) v = normal_double(rng);
    const auto c = kmeans(x, 3, {.max_iter = 200, .seed = 1});
    for (std::size_t i = 0; i < 40; ++i) {
        double best = 1e300;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < 2; ++j) {
                const double t = x.at(i, j) - c.centroids.at(k, j);
                d2 += t * t;
            }
            if (d2 < best) {
                best = d2;
                best_k = k;
            }
        }
        CHECK(c.assignment[i] == best_k);
    }
}

TEST_CASE("kmeans: deterministic for a fixed seed") {
    Rng rng(21);
    RowMatrix x(80, 5);
    for (auto& v : x.data) v = normal_double(rng);
    const auto a = kmeans(x, 6, {.max_iter = 100, .seed = 77});
    const auto b = kmeans(x, 6, {.max_iter = 100, .seed = 77});
    CHECK(a.assignment == b.assignment);
    CHECK(a.centroids.data == b.centroids.data);
    CHECK(a.objective == b.objective);
}

TEST_CASE("kmeans: worker count does not change the result") {
    Rng rng(23);
    RowMatrix x(90, 4);
    for (auto& v : x.data) v = normal_double(rng);
    const auto a = kmeans(x, 4, {.max_iter = 60, .seed = 5, .workers = 1});
    const auto b = kmeans(x, 4, {.max_iter = 60, .seed = 5, .workers = 4});
    CHECK(a.assignment == b.assignment);
    CHECK(a.centroids.data == b.centroids.data);
}

TEST_CASE("kmeans: more clusters than distinct points converges via repair") {
    // 20 points at two distinct locations, k=3: one cluster must go empty and
    // be reseeded; the run must still converge with valid assignments.
    RowMatrix x(20, 2);
    for (std::size_t i = 0; i < 20; ++i) {
        x.at(i, 0) = i < 10 ? 0.0 : 5.0;
        x.at(i, 1) = 0.0;
    }
    const auto c = kmeans(x, 3, {.max_iter = 50, .seed = 2});
    CHECK(c.k == 3);
    for (std::size_t i = 0; i < 20; ++i) CHECK(c.assignment[i] < 3);
    // Every point is at distance 0 from its centroid in the end state.
    CHECK(c.objective == 0.0);
}
