#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "damgt/encoding.hpp"
#include "damgt/graph.hpp"
#include "damgt/tokenizer.hpp"
#include "support/reference.hpp"

namespace fs = std::filesystem;
using namespace damgt;

namespace {

std::string temp_file(const std::string& name) {
    static int counter = 0;
    return (fs::temp_directory_path() /
            ("damgt_tok_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + name))
        .string();
}

// Dense oracle for A_hat^s * X.
ref::Mat dense_power_product(const NormalizedAdjacency& adj, const RowMatrix& x, std::size_t s) {
    const auto a = ref::dense_from(adj);
    auto out = ref::dense_from(x);
    for (std::size_t i = 0; i < s; ++i) out = ref::matmul(a, out);
    return out;
}

}  // namespace

TEST_CASE("propagate: edgeless graph leaves every level equal to the input") {
    RowMatrix x(3, 2);
    x.at(0, 0) = 1.5;
    x.at(1, 1) = -2.0;
    x.at(2, 0) = 0.25;
    auto g = build_graph({}, x, {0, 1, 0});
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 3);
    REQUIRE(levels.levels.size() == 4);
    for (const auto& lv : levels.levels) CHECK(lv.data == g.features.data);
}

TEST_CASE("propagate: two-node graph averages features at hop 1") {
    RowMatrix x(2, 2);
    x.at(0, 0) = 1.0;
    x.at(1, 1) = 1.0;
    auto g = build_graph({{0, 1}}, std::move(x), {0, 1});
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 1);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(levels.levels[1].at(i, j) - 0.5) < 1e-15);
    }
}

TEST_CASE("propagate: random graph matches the dense matrix-power oracle") {
    const auto g = ref::random_graph(20, 5, 2, 0.2, 12);
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 4);
    for (std::size_t s = 0; s <= 4; ++s) {
        const auto expected = dense_power_product(adj, g.features, s);
        for (std::size_t i = 0; i < g.n; ++i) {
            for (std::size_t j = 0; j < g.d; ++j) {
                CHECK(std::abs(levels.levels[s].at(i, j) - expected[i][j]) < 1e-10);
            }
        }
    }
}

TEST_CASE("propagate: prefix property") {
    const auto g = ref::random_graph(15, 3, 2, 0.25, 3);
    const auto adj = normalized_adjacency(g);
    const auto big = propagate_all(adj, g.features, 5);
    const auto small = propagate_all(adj, g.features, 2);
    for (std::size_t s = 0; s <= 2; ++s) CHECK(big.levels[s].data == small.levels[s].data);
}

TEST_CASE("propagate: permutation equivariance") {
    const std::size_t n = 12;
    const auto g = ref::random_graph(n, 3, 2, 0.3, 9);
    // Permute node ids with a fixed cycle shift.
    auto perm = [n](std::size_t v) { return (v + 5) % n; };
    std::vector<std::pair<std::size_t, std::size_t>> pedges;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t e = g.adj.row_ptr[u]; e < g.adj.row_ptr[u + 1]; ++e) {
            const std::size_t v = g.adj.col[e];
            if (u < v) pedges.emplace_back(perm(u), perm(v));
        }
    }
    RowMatrix px(n, g.d);
    std::vector<int> py(n);
    for (std::size_t i = 0; i < n; ++i) {
        py[perm(i)] = g.labels[i];
        for (std::size_t j = 0; j < g.d; ++j) px.at(perm(i), j) = g.features.at(i, j);
    }
    auto pg = build_graph(std::move(pedges), std::move(px), std::move(py));

    const auto lv = propagate_all(normalized_adjacency(g), g.features, 3);
    const auto plv = propagate_all(normalized_adjacency(pg), pg.features, 3);
    for (std::size_t s = 0; s <= 3; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < g.d; ++j) {
                CHECK(std::abs(lv.levels[s].at(i, j) - plv.levels[s].at(perm(i), j)) < 1e-12);
            }
        }
    }
}

TEST_CASE("propagate: infinity-norm growth bound") {
    const auto g = ref::random_graph(25, 4, 2, 0.15, 44);
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 6);
    std::size_t min_deg1 = g.n + 1;
    for (std::size_t i = 0; i < g.n; ++i) {
        min_deg1 = std::min(min_deg1, g.adj.row_ptr[i + 1] - g.adj.row_ptr[i] + 1);
    }
    double x_inf = 0.0;
    for (double v : g.features.data) x_inf = std::max(x_inf, std::abs(v));
    for (std::size_t s = 0; s <= 6; ++s) {
        for (std::size_t i = 0; i < g.n; ++i) {
            const double deg1 = static_cast<double>(g.adj.row_ptr[i + 1] - g.adj.row_ptr[i] + 1);
            const double bound = std::sqrt(deg1 / static_cast<double>(min_deg1)) * x_inf + 1e-12;
            for (std::size_t j = 0; j < g.d; ++j) {
                CHECK(std::abs(levels.levels[s].at(i, j)) <= bound);
            }
        }
    }
}

TEST_CASE("enhanced features: raw columns preserved bit-for-bit") {
    const auto g = ref::random_graph(18, 4, 2, 0.2, 61);
    const auto adj = normalized_adjacency(g);
    DualEncodingConfig cfg;
    cfg.m = 2;
    const auto enc = dual_encoding(g, adj, cfg);
    const auto xp = enhanced_features(g, enc);
    REQUIRE(xp.cols == 2 * g.d + 2);
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = 0; j < g.d; ++j) CHECK(xp.at(i, j) == g.features.at(i, j));
    }
}

TEST_CASE("build_sequence: layout and isolated nodes") {
    RowMatrix x(3, 2);
    x.at(0, 0) = 1.0;
    x.at(1, 0) = 2.0;
    x.at(2, 0) = 3.0;
    auto g = build_graph({{0, 1}}, std::move(x), {0, 1, 0});  // node 2 isolated
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 3);

    const auto seq = build_sequence(levels, 2);
    REQUIRE(seq.rows == 4);
    for (std::size_t s = 0; s < 4; ++s) {
        CHECK(seq.at(s, 0) == 3.0);  // isolated: every hop equals the node row
        CHECK(seq.at(s, 1) == 0.0);
    }
    const auto seq0 = build_sequence(levels, 0);
    CHECK(seq0.at(0, 0) == 1.0);  // hop 0 is the enhanced feature row itself
    CHECK_THROWS_AS(build_sequence(levels, 9), IndexError);
}

TEST_CASE("build_sequence: path center row matches the dense oracle") {
    RowMatrix x(3, 1);
    x.at(0, 0) = 1.0;
    x.at(1, 0) = 2.0;
    x.at(2, 0) = 4.0;
    auto g = build_graph({{0, 1}, {1, 2}}, std::move(x), {0, 0, 0});
    const auto adj = normalized_adjacency(g);
    const auto levels = propagate_all(adj, g.features, 2);
    const auto seq = build_sequence(levels, 1);
    const auto expected = dense_power_product(adj, g.features, 2);
    CHECK(std::abs(seq.at(2, 0) - expected[1][0]) < 1e-12);
}

TEST_CASE("token cache: round-trip is bit-identical") {
    const auto g = ref::random_graph(14, 3, 2, 0.25, 19);
    const auto adj = normalized_adjacency(g);
    auto levels = propagate_all(adj, g.features, 3);
    levels.source_hash = sha256_of_string("fixture");
    const auto path = temp_file(".h2tk");
    write_token_cache(path, levels);

    const auto expected = sha256_of_string("fixture");
    const auto back = read_token_cache(path, &expected);
    REQUIRE(back.levels.size() == levels.levels.size());
    CHECK(back.width == levels.width);
    CHECK(back.max_hop == levels.max_hop);
    for (std::size_t s = 0; s < levels.levels.size(); ++s) {
        CHECK(back.levels[s].data == levels.levels[s].data);
    }
    fs::remove(path);
}

TEST_CASE("token cache: stale hash raises a stale-cache error") {
    const auto g = ref::random_graph(10, 2, 2, 0.3, 23);
    const auto adj = normalized_adjacency(g);
    auto levels = propagate_all(adj, g.features, 2);
    levels.source_hash = sha256_of_string("one");
    const auto path = temp_file(".h2tk");
    write_token_cache(path, levels);
    const auto other = sha256_of_string("two");
    CHECK_THROWS_AS(read_token_cache(path, &other), StaleCacheError);
    fs::remove(path);
}

TEST_CASE("token cache: zero-byte file raises a corrupt-cache error") {
    const auto path = temp_file(".h2tk");
    std::ofstream(path, std::ios::binary).close();
    CHECK_THROWS_AS(read_token_cache(path, nullptr), CorruptCacheError);
    fs::remove(path);
}

TEST_CASE("token cache: truncated body raises a corrupt-cache error") {
    const auto g = ref::random_graph(10, 2, 2, 0.3, 29);
    const auto adj = normalized_adjacency(g);
    auto levels = propagate_all(adj, g.features, 2);
    const auto path = temp_file(".h2tk");
    write_token_cache(path, levels);
    fs::resize_file(path, fs::file_size(path) / 2);
    CHECK_THROWS_AS(read_token_cache(path, nullptr), CorruptCacheError);
    fs::remove(path);
}

TEST_CASE("sha256 known-answer vectors") {
    CHECK(hex_digest(sha256_of_string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(hex_digest(sha256_of_string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("propagate: S=0 rejected") {
    const auto g = ref::random_graph(6, 2, 2, 0.4, 2);
    const auto adj = normalized_adjacency(g);
    CHECK_THROWS_AS(propagate_all(adj, g.features, 0), ConfigError);
}
