#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "damgt/binio.hpp"
#include "damgt/error.hpp"
#include "damgt/matrix.hpp"
#include "damgt/parallel.hpp"
#include "damgt/rng.hpp"

namespace damgt {

// Adjacency structure in CSR form: column indices per row are strictly
// increasing. Undirected edges are stored once per direction.
struct Csr {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;  // size n+1
    std::vector<std::size_t> col;
};

struct LoadReport {
    std::size_t duplicate_edges_dropped = 0;
    std::size_t self_loops_dropped = 0;
};

// Immutable attributed graph. Construction validates all invariants;
// afterwards the structure is safe to share across worker threads.
struct Graph {
    std::size_t n = 0;
    std::size_t d = 0;  // feature dimension
    std::size_t c = 0;  // class count (max label + 1)
    Csr adj;
    RowMatrix features;       // n x d
    std::vector<int> labels;  // size n, values in [0, c)
    LoadReport load_report;

    std::size_t directed_edge_count() const { return adj.col.size(); }
    std::size_t undirected_edge_count() const { return adj.col.size() / 2; }
};

// Symmetric normalized adjacency with implicit self-loops:
// entry (i, j) = 1 / sqrt((deg_i + 1) * (deg_j + 1)) for j adjacent or j == i.
struct NormalizedAdjacency {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<std::size_t> col;
    std::vector<double> val;
};

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

namespace detail {

inline bool parse_two_uints(const std::string& line, std::uint64_t& a, std::uint64_t& b) {
    const char* p = line.data();
    const char* end = p + line.size();
    auto skip_ws = [&] {
        while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    skip_ws();
    auto r1 = std::from_chars(p, end, a);
    if (r1.ec != std::errc{}) return false;
    p = r1.ptr;
    skip_ws();
    auto r2 = std::from_chars(p, end, b);
    if (r2.ec != std::errc{}) return false;
    p = r2.ptr;
    skip_ws();
    return p == end;
}

inline bool blank_line(const std::string& line) {
    for (char ch : line) {
        if (!std::isspace(static_cast<unsigned char>(ch))) return false;
    }
    return true;
}

}  // namespace detail

// Build a validated Graph from an undirected edge list (either orientation,
// duplicates allowed), dense features and labels. Self-loops are dropped with
// a count in the load report; duplicates are deduplicated silently.
inline Graph build_graph(std::vector<std::pair<std::size_t, std::size_t>> edges, RowMatrix features,
                         std::vector<int> labels) {
    Graph g;
    g.n = features.rows;
    g.d = features.cols;
    if (labels.size() != g.n) {
        throw DimensionError("feature row count (" + std::to_string(g.n) +
                             ") does not match label count (" + std::to_string(labels.size()) + ")");
    }
    int max_label = -1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) {
            throw DataError("negative class id at node " + std::to_string(i));
        }
        max_label = std::max(max_label, labels[i]);
    }
    g.c = g.n == 0 ? 0 : static_cast<std::size_t>(max_label + 1);
    g.features = std::move(features);
    g.labels = std::move(labels);

    // Normalize, drop self-loops, dedupe.
    std::vector<std::pair<std::size_t, std::size_t>> norm;
    norm.reserve(edges.size());
    for (auto [u, v] : edges) {
        if (u >= g.n || v >= g.n) {
            throw IndexError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                             ") references a node id outside [0, " + std::to_string(g.n) + ")");
        }
        if (u == v) {
            ++g.load_report.self_loops_dropped;
            continue;
        }
        norm.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(norm.begin(), norm.end());
    const auto last = std::unique(norm.begin(), norm.end());
    g.load_report.duplicate_edges_dropped = static_cast<std::size_t>(norm.end() - last);
    norm.erase(last, norm.end());

    // CSR, both directions.
    std::vector<std::size_t> degree(g.n, 0);
    for (auto [u, v] : norm) {
        ++degree[u];
        ++degree[v];
    }
    g.adj.n = g.n;
    g.adj.row_ptr.assign(g.n + 1, 0);
    for (std::size_t i = 0; i < g.n; ++i) g.adj.row_ptr[i + 1] = g.adj.row_ptr[i] + degree[i];
    g.adj.col.resize(g.adj.row_ptr[g.n]);
    std::vector<std::size_t> cursor(g.adj.row_ptr.begin(), g.adj.row_ptr.end() - 1);
    for (auto [u, v] : norm) {
        g.adj.col[cursor[u]++] = v;
        g.adj.col[cursor[v]++] = u;
    }
    for (std::size_t i = 0; i < g.n; ++i) {
        std::sort(g.adj.col.begin() + static_cast<std::ptrdiff_t>(g.adj.row_ptr[i]),
                  g.adj.col.begin() + static_cast<std::ptrdiff_t>(g.adj.row_ptr[i + 1]));
    }
    return g;
}

// --- file formats -----------------------------------------------------------
//
// Edge file:    text, "u v" per line, 0-indexed, undirected, one line per pair.
// Feature file: binary "DMAT" magic, rows:u64-LE, cols:u64-LE, f64-LE row-major;
//               or CSV (one node per row) selected by a .csv extension.
// Label file:   text, one decimal class id per line, line i = node i.

inline std::vector<std::pair<std::size_t, std::size_t>> read_edge_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open edge file: " + path);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::blank_line(line)) continue;
        std::uint64_t a = 0, b = 0;
        if (!detail::parse_two_uints(line, a, b)) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected \"u v\" with two decimal node ids");
        }
        edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    }
    return edges;
}

inline RowMatrix read_feature_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open feature file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::blank_line(line)) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad numeric cell \"" +
                                 cell + "\"");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row (got " +
                             std::to_string(row.size()) + " columns, expected " +
                             std::to_string(rows.front().size()) + ")");
        }
        rows.push_back(std::move(row));
    }
    RowMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
    }
    return m;
}

inline RowMatrix read_feature_file(const std::string& path) {
    if (std::filesystem::path(path).extension() == ".csv") return read_feature_csv(path);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DMAT", 4) != 0) {
        throw ParseError(path + ": not a DMAT feature file (bad magic)");
    }
    const std::uint64_t rows = read_u64le(is);
    const std::uint64_t cols = read_u64le(is);
    RowMatrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    read_f64_block(is, m.data);
    return m;
}

inline void write_feature_file(const std::string& path, const RowMatrix& m) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os.write("DMAT", 4);
    write_u64le(os, m.rows);
    write_u64le(os, m.cols);
    write_f64_block(os, m.data);
    w.commit();
}

inline std::vector<int> read_label_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open label file: " + path);
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::blank_line(line)) continue;
        std::int64_t v = 0;
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end && (*p == ' ' || *p == '\t')) ++p;
        auto r = std::from_chars(p, end, v);
        if (r.ec != std::errc{}) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected a decimal class id");
        }
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

inline void write_label_file(const std::string& path, const std::vector<int>& labels) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    for (int y : labels) os << y << "\n";
    w.commit();
}

inline void write_edge_file(const std::string& path, const Graph& g) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    for (std::size_t u = 0; u < g.n; ++u) {
        for (std::size_t e = g.adj.row_ptr[u]; e < g.adj.row_ptr[u + 1]; ++e) {
            const std::size_t v = g.adj.col[e];
            if (u < v) os << u << " " << v << "\n";
        }
    }
    w.commit();
}

inline Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                        const std::string& label_path) {
    auto features = read_feature_file(feature_path);
    auto labels = read_label_file(label_path);
    auto edges = read_edge_file(edge_path);
    return build_graph(std::move(edges), std::move(features), std::move(labels));
}

inline void save_graph(const Graph& g, const std::string& edge_path,
                       const std::string& feature_path, const std::string& label_path) {
    write_edge_file(edge_path, g);
    write_feature_file(feature_path, g.features);
    write_label_file(label_path, g.labels);
}

// --- operators ---------------------------------------------------------------

inline NormalizedAdjacency normalized_adjacency(const Graph& g) {
    NormalizedAdjacency a;
    a.n = g.n;
    a.row_ptr.assign(g.n + 1, 0);
    std::vector<std::size_t> deg1(g.n);  // deg + 1
    for (std::size_t i = 0; i < g.n; ++i) {
        deg1[i] = g.adj.row_ptr[i + 1] - g.adj.row_ptr[i] + 1;
        a.row_ptr[i + 1] = a.row_ptr[i] + deg1[i];  // neighbors plus the self-loop
    }
    // Entry (i, j) = 1 / sqrt((deg_i + 1) * (deg_j + 1)); the integer product
    // makes the value identical for (i, j) and (j, i) and exact for the
    // trivial cases (isolated node -> 1, single edge -> 1/2).
    auto entry = [&](std::size_t i, std::size_t j) {
        return 1.0 / std::sqrt(static_cast<double>(deg1[i] * deg1[j]));
    };
    a.col.resize(a.row_ptr[g.n]);
    a.val.resize(a.row_ptr[g.n]);
    for (std::size_t i = 0; i < g.n; ++i) {
        std::size_t out = a.row_ptr[i];
        bool placed_diag = false;
        for (std::size_t e = g.adj.row_ptr[i]; e < g.adj.row_ptr[i + 1]; ++e) {
            const std::size_t j = g.adj.col[e];
            if (!placed_diag && j > i) {
                a.col[out] = i;
                a.val[out] = entry(i, i);
                ++out;
                placed_diag = true;
            }
            a.col[out] = j;
            a.val[out] = entry(i, j);
            ++out;
        }
        if (!placed_diag) {
            a.col[out] = i;
            a.val[out] = entry(i, i);
            ++out;
        }
    }
    return a;
}

// Y = A_hat * X (row-major X, one output row per node). Rows are independent,
// so the row split across workers does not change any result bit.
inline void spmm(const NormalizedAdjacency& a, const RowMatrix& x, RowMatrix& y,
                 unsigned workers = 1) {
    if (x.rows != a.n) throw DimensionError("spmm: matrix has wrong row count");
    y.rows = a.n;
    y.cols = x.cols;
    y.data.assign(a.n * x.cols, 0.0);
    parallel_for(a.n, workers, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double* yi = y.row(i);
            for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
                const double w = a.val[e];
                const double* xj = x.row(a.col[e]);
                for (std::size_t k = 0; k < x.cols; ++k) yi[k] += w * xj[k];
            }
        }
    });
}

// Fraction of undirected edges whose endpoints share a label.
inline double edge_homophily(const Graph& g) {
    const std::size_t edges = g.undirected_edge_count();
    if (edges == 0) throw UndefinedMetricError("edge homophily is undefined on an edgeless graph");
    std::size_t same = 0;
    for (std::size_t u = 0; u < g.n; ++u) {
        for (std::size_t e = g.adj.row_ptr[u]; e < g.adj.row_ptr[u + 1]; ++e) {
            const std::size_t v = g.adj.col[e];
            if (u < v && g.labels[u] == g.labels[v]) ++same;
        }
    }
    return static_cast<double>(same) / static_cast<double>(edges);
}

// Deterministic train/val/test split: sizes are floor(fraction * n) with the
// remainder assigned to train.
inline DataSplit random_split(std::size_t n, double train_frac, double val_frac, double test_frac,
                              std::uint64_t seed) {
    if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(test_frac > 0.0) ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be positive and sum to 1");
    }
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    Rng rng(derive_seed(seed, 0x5354u));  // "ST"
    shuffle_vec(ids, rng);
    const std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
    const std::size_t n_train = n - n_val - n_test;  // floor(train * n) plus the remainder
    DataSplit s;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

inline std::size_t connected_components(const Csr& adj) {
    std::vector<std::uint8_t> seen(adj.n, 0);
    std::vector<std::size_t> stack;
    std::size_t comps = 0;
    for (std::size_t s = 0; s < adj.n; ++s) {
        if (seen[s]) continue;
        ++comps;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t e = adj.row_ptr[u]; e < adj.row_ptr[u + 1]; ++e) {
                const std::size_t v = adj.col[e];
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
    }
    return comps;
}

}  // namespace damgt
