#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "damgt/binio.hpp"
#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/kmeans.hpp"
#include "damgt/lanczos.hpp"
#include "damgt/matrix.hpp"

namespace damgt {

enum class PeVariant { dup, ap_only, tp_only, none };

inline std::string to_string(PeVariant v) {
    switch (v) {
        case PeVariant::dup: return "dup";
        case PeVariant::ap_only: return "ap";
        case PeVariant::tp_only: return "tp";
        case PeVariant::none: return "none";
    }
    return "dup";
}

inline PeVariant parse_pe_variant(const std::string& s) {
    if (s == "dup") return PeVariant::dup;
    if (s == "ap") return PeVariant::ap_only;
    if (s == "tp") return PeVariant::tp_only;
    if (s == "none") return PeVariant::none;
    throw ConfigError("unknown positional-encoding variant \"" + s + "\" (expected dup|ap|tp|none)");
}

struct DualPositionalEncoding {
    RowMatrix ap;               // n x d   (empty for tp/none)
    RowMatrix tp;               // n x m   (empty for ap/none)
    RowMatrix dup;              // n x (ap.cols + tp.cols), exact concatenation
    std::vector<double> delta;  // cosine score per node (empty for tp/none)
    std::size_t m = 0;
    PeVariant variant = PeVariant::dup;
    std::uint64_t kmeans_seed = 0;
    std::size_t kmeans_iterations = 0;
};

// Row j = cosine(X_j, centroid of j's cluster) * that centroid. A zero-norm
// feature row or centroid gets cosine 0, so the encoding row is zero.
inline RowMatrix attribute_encoding(const RowMatrix& x, const Clustering& clustering,
                                    std::vector<double>* delta_out = nullptr) {
    if (clustering.assignment.size() != x.rows) {
        throw DimensionError("attribute_encoding: clustering does not cover all nodes");
    }
    RowMatrix ap(x.rows, x.cols);
    if (delta_out) delta_out->assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const std::size_t c = clustering.assignment[i];
        const double* xi = x.row(i);
        const double* cc = clustering.centroids.row(c);
        double dotp = 0.0, nx = 0.0, nc = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            dotp += xi[j] * cc[j];
            nx += xi[j] * xi[j];
            nc += cc[j] * cc[j];
        }
        double delta = 0.0;
        if (nx > 0.0 && nc > 0.0) delta = dotp / (std::sqrt(nx) * std::sqrt(nc));
        if (delta_out) (*delta_out)[i] = delta;
        double* out = ap.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) out[j] = delta * cc[j];
    }
    return ap;
}

// Laplacian eigenvector encoding: columns are the eigenvectors for the m
// smallest non-trivial eigenvalues of L = I - A_hat.
inline RowMatrix topology_encoding(const NormalizedAdjacency& adj, std::size_t m) {
    return topology_eigenvectors(adj, m).vectors;
}

struct DualEncodingConfig {
    std::size_t m = 10;
    KmeansConfig kmeans;
    PeVariant variant = PeVariant::dup;
};

inline DualPositionalEncoding dual_encoding(const Graph& g, const NormalizedAdjacency& adj,
                                            const DualEncodingConfig& cfg) {
    DualPositionalEncoding enc;
    enc.variant = cfg.variant;
    enc.kmeans_seed = cfg.kmeans.seed;
    const bool want_ap = cfg.variant == PeVariant::dup || cfg.variant == PeVariant::ap_only;
    const bool want_tp = cfg.variant == PeVariant::dup || cfg.variant == PeVariant::tp_only;
    if (want_ap) {
        if (g.c < 1) throw ConfigError("attribute encoding needs at least one class");
        const auto clustering = kmeans(g.features, g.c, cfg.kmeans);
        enc.kmeans_iterations = clustering.iterations_run;
        enc.ap = attribute_encoding(g.features, clustering, &enc.delta);
    } else {
        enc.ap = RowMatrix(g.n, 0);
    }
    if (want_tp) {
        enc.m = cfg.m;
        enc.tp = topology_encoding(adj, cfg.m);
    } else {
        enc.tp = RowMatrix(g.n, 0);
    }
    enc.dup = hconcat(enc.ap, enc.tp);
    if (enc.dup.rows == 0) enc.dup = RowMatrix(g.n, 0);
    return enc;
}

// --- DPEC cache file ---------------------------------------------------------
// magic "DPEC", n:u64, d:u64, m:u64, ap (n*d f64-LE), tp (n*m f64-LE), then a
// trailing JSON footer with the k-means seed and iteration count.

inline void write_encoding_cache(const std::string& path, const DualPositionalEncoding& enc) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os.write("DPEC", 4);
    write_u64le(os, enc.ap.rows ? enc.ap.rows : enc.tp.rows);
    write_u64le(os, enc.ap.cols);
    write_u64le(os, enc.tp.cols);
    write_f64_block(os, enc.ap.data);
    write_f64_block(os, enc.tp.data);
    nlohmann::json footer{{"kmeans_seed", enc.kmeans_seed},
                          {"kmeans_iterations", enc.kmeans_iterations},
                          {"pe", to_string(enc.variant)}};
    os << footer.dump();
    w.commit();
}

inline DualPositionalEncoding read_encoding_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open encoding cache: " + path);
    expect_magic(is, "DPEC", "encoding cache");
    const std::size_t n = static_cast<std::size_t>(read_u64le(is));
    const std::size_t d = static_cast<std::size_t>(read_u64le(is));
    const std::size_t m = static_cast<std::size_t>(read_u64le(is));
    DualPositionalEncoding enc;
    enc.ap = RowMatrix(n, d);
    enc.tp = RowMatrix(n, m);
    enc.m = m;
    read_f64_block(is, enc.ap.data);
    read_f64_block(is, enc.tp.data);
    std::string footer((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (footer.empty()) throw CorruptCacheError(path + ": missing JSON footer");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(footer);
    } catch (const std::exception& e) {
        throw CorruptCacheError(path + ": bad JSON footer: " + e.what());
    }
    enc.kmeans_seed = j.value("kmeans_seed", std::uint64_t{0});
    enc.kmeans_iterations = j.value("kmeans_iterations", std::size_t{0});
    enc.variant = parse_pe_variant(j.value("pe", std::string("dup")));
    enc.dup = hconcat(enc.ap, enc.tp);
    return enc;
}

}  // namespace damgt
