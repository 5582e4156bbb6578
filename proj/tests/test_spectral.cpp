#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "damgt/encoding.hpp"
#include "damgt/graph.hpp"
#include "damgt/lanczos.hpp"
#include "support/reference.hpp"

using namespace damgt;

namespace {

Eigen::MatrixXd dense_laplacian(const NormalizedAdjacency& adj) {
    Eigen::MatrixXd l = Eigen::MatrixXd::Identity(static_cast<long>(adj.n), static_cast<long>(adj.n));
    for (std::size_t i = 0; i < adj.n; ++i) {
        for (std::size_t e = adj.row_ptr[i]; e < adj.row_ptr[i + 1]; ++e) {
            l(static_cast<long>(i), static_cast<long>(adj.col[e])) -= adj.val[e];
        }
    }
    return l;
}

struct OracleSpectrum {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXd vectors;  // columns
};

OracleSpectrum oracle_eig(const NormalizedAdjacency& adj) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_laplacian(adj));
    return {es.eigenvalues(), es.eigenvectors()};
}

double laplacian_residual(const NormalizedAdjacency& adj, const RowMatrix& vecs, std::size_t col,
                          double lambda) {
    const std::size_t n = adj.n;
    std::vector<double> v(n), lv(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i] = vecs.at(i, col);
    for (std::size_t i = 0; i < n; ++i) {
        double s = v[i];
        for (std::size_t e = adj.row_ptr[i]; e < adj.row_ptr[i + 1]; ++e) s -= adj.val[e] * v[adj.col[e]];
        lv[i] = s - lambda * v[i];
    }
    double r = 0.0;
    for (double x : lv) r += x * x;
    return std::sqrt(r);
}

// sin of the largest principal angle between our basis and the oracle basis.
double max_principal_angle_sin(const RowMatrix& ours, const Eigen::MatrixXd& oracle_cols) {
    const long n = static_cast<long>(ours.rows), m = static_cast<long>(ours.cols);
    Eigen::MatrixXd v1(n, m);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j < m; ++j) v1(i, j) = ours.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
    const Eigen::MatrixXd residual = v1 - oracle_cols * (oracle_cols.transpose() * v1);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

// Columns of the oracle eigenbasis whose eigenvalue cluster intersects
// [lo - tol, hi + tol]; trivial eigenvalues (<= 1e-8) excluded.
Eigen::MatrixXd oracle_span(const OracleSpectrum& sp, double lo, double hi, double tol = 1e-7) {
    std::vector<long> cols;
    for (long i = 0; i < sp.values.size(); ++i) {
        if (sp.values(i) > 1e-8 && sp.values(i) >= lo - tol && sp.values(i) <= hi + tol) {
            cols.push_back(i);
        }
    }
    Eigen::MatrixXd out(sp.vectors.rows(), static_cast<long>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<long>(j)) = sp.vectors.col(cols[j]);
    return out;
}

}  // namespace

TEST_CASE("spectral: path graph P3 second eigenvector matches the dense oracle") {
    RowMatrix x(3, 1);
    auto g = build_graph({{0, 1}, {1, 2}}, std::move(x), {0, 0, 0});
    const auto adj = normalized_adjacency(g);
    const auto basis = topology_eigenvectors(adj, 1);
    REQUIRE(basis.vectors.cols == 1);

    CHECK(laplacian_residual(adj, basis.vectors, 0, basis.eigenvalues[0]) < 1e-8);

    const auto sp = oracle_eig(adj);
    // First non-trivial oracle eigenvalue and eigenvector.
    long idx = -1;
    for (long i = 0; i < sp.values.size(); ++i) {
        if (sp.values(i) > 1e-8) {
            idx = i;
            break;
        }
    }
    REQUIRE(idx >= 0);
    CHECK(std::abs(basis.eigenvalues[0] - sp.values(idx)) < 1e-10);
    double dot = 0.0;
    for (std::size_t i = 0; i < 3; ++i) dot += basis.vectors.at(i, 0) * sp.vectors(static_cast<long>(i), idx);
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-10);  // equal up to sign
}

TEST_CASE("spectral: complete graph K4 degenerate pair matches the oracle projector") {
    RowMatrix x(4, 1);
    auto g = build_graph({{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}, std::move(x), {0, 0, 0, 0});
    const auto adj = normalized_adjacency(g);
    const auto basis = topology_eigenvectors(adj, 2);
    REQUIRE(basis.eigenvalues.size() == 2);
    CHECK(std::abs(basis.eigenvalues[0] - basis.eigenvalues[1]) < 1e-10);  // degenerate pair
    CHECK(std::abs(basis.eigenvalues[0] - 1.0) < 1e-10);

    // Orthonormal columns.
    for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 4; ++i) dot += basis.vectors.at(i, a) * basis.vectors.at(i, b);
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
        }
    }

    const auto sp = oracle_eig(adj);
    const auto span = oracle_span(sp, basis.eigenvalues[0], basis.eigenvalues[1]);
    REQUIRE(span.cols() == 3);  // eigenvalue 1 has multiplicity 3 in K4
    CHECK(max_principal_angle_sin(basis.vectors, span) < 1e-8);
}

TEST_CASE("spectral: over-requesting m on a disconnected graph names the component count") {
    RowMatrix x(6, 1);
    auto g = build_graph({{0, 1}, {1, 2}, {3, 4}, {4, 5}}, std::move(x), {0, 0, 0, 1, 1, 1});
    const auto adj = normalized_adjacency(g);
    try {
        topology_eigenvectors(adj, 5);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("2 connected component") != std::string::npos);
    }
}

TEST_CASE("spectral: random graphs match the dense oracle") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const std::size_t n = 20 + 7 * seed;
        const auto g = ref::random_graph(n, 3, 2, 0.12, seed + 40);
        const auto adj = normalized_adjacency(g);
        const auto sp = oracle_eig(adj);
        const std::size_t comps = connected_components(g.adj);

        // Pick m at a genuine spectral gap so the m-dimensional invariant
        // subspace is well-defined.
        std::vector<double> nontrivial;
        for (long i = 0; i < sp.values.size(); ++i) {
            if (sp.values(i) > 1e-8) nontrivial.push_back(sp.values(i));
        }
        std::size_t m = 0;
        double best_gap = 1e-5;
        const std::size_t m_cap = std::min<std::size_t>(8, nontrivial.size() - 1);
        for (std::size_t cand = 1; cand <= m_cap; ++cand) {
            const double gap = nontrivial[cand] - nontrivial[cand - 1];
            if (gap > best_gap) {
                best_gap = gap;
                m = cand;
            }
        }
        if (m == 0) continue;  // no usable gap in this draw
        REQUIRE(m <= n - comps);

        const auto basis = topology_eigenvectors(adj, m);
        for (std::size_t i = 0; i < m; ++i) {
            CHECK(laplacian_residual(adj, basis.vectors, i, basis.eigenvalues[i]) < 1e-8);
            if (i > 0) CHECK(basis.eigenvalues[i] >= basis.eigenvalues[i - 1] - 1e-12);
            CHECK(std::abs(basis.eigenvalues[i] - nontrivial[i]) < 1e-8);
        }
        // Column orthonormality within 1e-8.
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = a; b < m; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += basis.vectors.at(i, a) * basis.vectors.at(i, b);
                CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
            }
        }
        const auto span = oracle_span(sp, nontrivial[0], nontrivial[m - 1]);
        CHECK(max_principal_angle_sin(basis.vectors, span) < 1e-6);
    }
}

TEST_CASE("spectral: deterministic output, sign convention") {
    const auto g = ref::random_graph(30, 3, 2, 0.15, 99);
    const auto adj = normalized_adjacency(g);
    const auto a = topology_eigenvectors(adj, 4);
    const auto b = topology_eigenvectors(adj, 4);
    CHECK(a.vectors.data == b.vectors.data);  // bit-identical
    CHECK(a.eigenvalues == b.eigenvalues);

    // Largest-magnitude entry of each column is positive.
    for (std::size_t c = 0; c < 4; ++c) {
        double best = -1.0;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < adj.n; ++i) {
            if (std::abs(a.vectors.at(i, c)) > best) {
                best = std::abs(a.vectors.at(i, c));
                arg = i;
            }
        }
        CHECK(a.vectors.at(arg, c) > 0.0);
    }
}

TEST_CASE("topology_encoding wrapper returns n x m") {
    const auto g = ref::random_graph(18, 2, 2, 0.2, 5);
    const auto adj = normalized_adjacency(g);
    const auto tp = topology_encoding(adj, 3);
    CHECK(tp.rows == 18);
    CHECK(tp.cols == 3);
}
