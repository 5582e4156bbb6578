#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "damgt/binio.hpp"
#include "damgt/encoding.hpp"
#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/matrix.hpp"
#include "damgt/sha256.hpp"

namespace damgt {

// X' = X || X^dup; columns [0, d) are the raw features bit-for-bit.
inline RowMatrix enhanced_features(const Graph& g, const DualPositionalEncoding& enc) {
    return hconcat(g.features, enc.dup);
}

// Multi-hop neighborhood aggregates, level-major: levels[s] row v is the s-hop
// token of node v. Level 0 is X' itself.
struct TokenLevels {
    std::size_t max_hop = 0;  // S
    std::size_t width = 0;    // 2d + m for the full dual encoding
    std::vector<RowMatrix> levels;  // size S+1
    Digest256 source_hash{};

    std::size_t n() const { return levels.empty() ? 0 : levels.front().rows; }
};

// levels[s] = A_hat * levels[s-1]; A_hat^s is never materialized. Raises a
// numeric error naming the hop and node if a non-finite value appears.
inline TokenLevels propagate_all(const NormalizedAdjacency& adj, const RowMatrix& xp, std::size_t s_max,
                                 unsigned workers = 1) {
    if (s_max < 1) throw ConfigError("propagation depth S must be >= 1");
    TokenLevels out;
    out.max_hop = s_max;
    out.width = xp.cols;
    out.levels.resize(s_max + 1);
    out.levels[0] = xp;
    for (std::size_t s = 1; s <= s_max; ++s) {
        spmm(adj, out.levels[s - 1], out.levels[s], workers);
        const RowMatrix& lv = out.levels[s];
        for (std::size_t i = 0; i < lv.rows; ++i) {
            const double* row = lv.row(i);
            for (std::size_t j = 0; j < lv.cols; ++j) {
                if (!std::isfinite(row[j])) {
                    throw NumericError("non-finite token value at hop " + std::to_string(s) +
                                       ", node " + std::to_string(i));
                }
            }
        }
    }
    return out;
}

// The (S+1) x width token sequence of one node, hop 0 first.
inline RowMatrix build_sequence(const TokenLevels& levels, std::size_t v) {
    if (v >= levels.n()) {
        throw IndexError("node id " + std::to_string(v) + " outside [0, " +
                         std::to_string(levels.n()) + ")");
    }
    RowMatrix seq(levels.max_hop + 1, levels.width);
    for (std::size_t s = 0; s <= levels.max_hop; ++s) {
        const double* src = levels.levels[s].row(v);
        double* dst = seq.row(s);
        for (std::size_t j = 0; j < levels.width; ++j) dst[j] = src[j];
    }
    return seq;
}

// Content hash binding a token cache to its source files and preprocessing
// configuration; any change to either invalidates the cache.
inline Digest256 token_source_hash(const std::string& edge_path, const std::string& feature_path,
                                   const std::string& label_path, const DualEncodingConfig& ecfg,
                                   std::size_t s_max) {
    Sha256 h;
    sha256_update_file(h, edge_path);
    sha256_update_file(h, feature_path);
    sha256_update_file(h, label_path);
    const std::string cfg = "pe=" + to_string(ecfg.variant) + ";m=" + std::to_string(ecfg.m) +
                            ";S=" + std::to_string(s_max) +
                            ";kseed=" + std::to_string(ecfg.kmeans.seed) +
                            ";kiters=" + std::to_string(ecfg.kmeans.max_iter);
    h.update(cfg);
    return h.finish();
}

// --- H2TK cache --------------------------------------------------------------
// magic "H2TK", header {n:u64, width:u64, S:u64, source_hash: 32 bytes}, then
// S+1 matrices f64-LE row-major, level-major so batch assembly is a gather.

inline void write_token_cache(const std::string& path, const TokenLevels& levels) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os.write("H2TK", 4);
    write_u64le(os, levels.n());
    write_u64le(os, levels.width);
    write_u64le(os, levels.max_hop);
    os.write(reinterpret_cast<const char*>(levels.source_hash.data()), 32);
    for (const auto& lv : levels.levels) write_f64_block(os, lv.data);
    w.commit();
}

struct TokenCacheHeader {
    std::size_t n = 0;
    std::size_t width = 0;
    std::size_t max_hop = 0;
    Digest256 source_hash{};
};

inline TokenCacheHeader read_token_cache_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open token cache: " + path);
    expect_magic(is, "H2TK", "token cache");
    TokenCacheHeader h;
    h.n = static_cast<std::size_t>(read_u64le(is));
    h.width = static_cast<std::size_t>(read_u64le(is));
    h.max_hop = static_cast<std::size_t>(read_u64le(is));
    is.read(reinterpret_cast<char*>(h.source_hash.data()), 32);
    if (!is) throw CorruptCacheError(path + ": truncated header");
    return h;
}

// expected_hash null skips the staleness check (used by tooling that has no
// way to recompute it).
inline TokenLevels read_token_cache(const std::string& path, const Digest256* expected_hash) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open token cache: " + path);
    expect_magic(is, "H2TK", "token cache");
    TokenLevels out;
    const std::size_t n = static_cast<std::size_t>(read_u64le(is));
    out.width = static_cast<std::size_t>(read_u64le(is));
    out.max_hop = static_cast<std::size_t>(read_u64le(is));
    is.read(reinterpret_cast<char*>(out.source_hash.data()), 32);
    if (!is) throw CorruptCacheError(path + ": truncated header");
    if (expected_hash && out.source_hash != *expected_hash) {
        throw StaleCacheError(path + ": source hash mismatch; inputs changed since this cache was built");
    }
    out.levels.resize(out.max_hop + 1);
    for (auto& lv : out.levels) {
        lv = RowMatrix(n, out.width);
        read_f64_block(is, lv.data);
    }
    return out;
}

}  // namespace damgt
