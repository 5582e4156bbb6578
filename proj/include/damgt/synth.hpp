#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/matrix.hpp"
#include "damgt/rng.hpp"

namespace damgt {

enum class SynthKind { sbm, blobs };

inline SynthKind parse_synth_kind(const std::string& s) {
    if (s == "sbm") return SynthKind::sbm;
    if (s == "blobs") return SynthKind::blobs;
    throw ConfigError("unknown synthetic dataset kind \"" + s + "\" (expected sbm|blobs)");
}

struct SynthConfig {
    SynthKind kind = SynthKind::sbm;
    std::size_t nodes = 1000;
    std::size_t classes = 4;
    double homophily = 0.8;   // target fraction of intra-class edges
    double avg_degree = 10.0;
    std::size_t feat_dim = 32;
    double feat_sep = 1.0;    // class centroid scale
    double feat_noise = 1.0;  // per-coordinate feature noise
    std::uint64_t seed = 1;
};

// Stochastic block model with a direct homophily mixture: each edge is drawn
// intra-class with probability `homophily`, else between two distinct
// classes, so the measured edge homophily concentrates on the target.
// Features are class-aligned Gaussian blobs. Labels are balanced round-robin
// (node i gets class i mod c).
inline Graph generate_synthetic(const SynthConfig& cfg) {
    if (cfg.nodes < 2) throw ConfigError("synth: need at least 2 nodes");
    if (cfg.classes < 1 || cfg.classes > cfg.nodes) throw ConfigError("synth: classes must be in [1, nodes]");
    if (cfg.homophily < 0.0 || cfg.homophily > 1.0) throw ConfigError("synth: homophily must be in [0, 1]");
    if (cfg.classes == 1 && cfg.homophily < 1.0 && cfg.kind == SynthKind::sbm) {
        throw ConfigError("synth: inter-class edges are infeasible with a single class");
    }

    const std::size_t n = cfg.nodes, c = cfg.classes;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % c);

    Rng rng(derive_seed(cfg.seed, 0x73796eu));  // "syn"

    // Class member lookup: class z holds nodes {z, z+c, z+2c, ...}.
    auto class_size = [&](std::size_t z) { return n / c + (z < n % c ? 1 : 0); };
    auto class_member = [&](std::size_t z, std::size_t idx) { return z + idx * c; };

    std::vector<std::pair<std::size_t, std::size_t>> edges;
    if (cfg.kind == SynthKind::sbm) {
        const auto target = static_cast<std::size_t>(cfg.avg_degree * static_cast<double>(n) / 2.0 + 0.5);
        if (cfg.homophily > 0.0) {
            bool any_pair = false;
            for (std::size_t z = 0; z < c; ++z) any_pair = any_pair || class_size(z) >= 2;
            if (!any_pair) throw ConfigError("synth: intra-class edges are infeasible; every class has a single node");
        }
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(target * 2);
        std::size_t attempts = 0;
        const std::size_t max_attempts = 200 * target + 1000;
        while (edges.size() < target) {
            if (++attempts > max_attempts) {
                throw ConfigError("synth: infeasible homophily/degree combination (could not place " +
                                  std::to_string(target) + " distinct edges)");
            }
            std::size_t u, v;
            if (uniform_double(rng) < cfg.homophily) {
                std::size_t z = uniform_index(rng, c);
                while (class_size(z) < 2) z = uniform_index(rng, c);
                const std::size_t i = uniform_index(rng, class_size(z));
                std::size_t j = uniform_index(rng, class_size(z));
                while (j == i) j = uniform_index(rng, class_size(z));
                u = class_member(z, i);
                v = class_member(z, j);
            } else {
                const std::size_t z1 = uniform_index(rng, c);
                std::size_t z2 = uniform_index(rng, c);
                while (z2 == z1) z2 = uniform_index(rng, c);
                u = class_member(z1, uniform_index(rng, class_size(z1)));
                v = class_member(z2, uniform_index(rng, class_size(z2)));
            }
            const std::uint64_t key = static_cast<std::uint64_t>(std::min(u, v)) * n + std::max(u, v);
            if (seen.insert(key).second) edges.emplace_back(u, v);
        }
    }

    RowMatrix centroids(c, cfg.feat_dim);
    for (std::size_t z = 0; z < c; ++z) {
        for (std::size_t j = 0; j < cfg.feat_dim; ++j) centroids.at(z, j) = cfg.feat_sep * normal_double(rng);
    }
    RowMatrix features(n, cfg.feat_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* cz = centroids.row(static_cast<std::size_t>(labels[i]));
        double* xi = features.row(i);
        for (std::size_t j = 0; j < cfg.feat_dim; ++j) xi[j] = cz[j] + cfg.feat_noise * normal_double(rng);
    }
    return build_graph(std::move(edges), std::move(features), std::move(labels));
}

}  // namespace damgt
