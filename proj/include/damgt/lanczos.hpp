#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/matrix.hpp"

namespace damgt {

namespace detail {

// Eigen-decomposition of a symmetric tridiagonal matrix by the implicit QL
// method with Wilkinson shifts (classic tql2). diag/sub are overwritten;
// on return diag holds eigenvalues and z columns the matching eigenvectors.
// z must come in as the identity (or an orthogonal basis to rotate).
inline void tridiag_ql(std::vector<double>& diag, std::vector<double>& sub, RowMatrix& z) {
    const std::size_t n = diag.size();
    if (n == 0) return;
    std::vector<double> e(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) e[i] = sub[i];
    const double eps = std::numeric_limits<double>::epsilon();

    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        std::size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(diag[m]) + std::abs(diag[m + 1]);
                if (std::abs(e[m]) <= eps * dd) break;
            }
            if (m != l) {
                if (iter++ == 64) throw NumericError("tridiagonal QL failed to converge");
                double g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = diag[m] - diag[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                std::size_t i = m;
                bool underflow = false;
                while (i-- > l) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        diag[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = diag[i + 1] - p;
                    r = (diag[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    diag[i + 1] = g + p;
                    g = c * r - b;
                    for (std::size_t k = 0; k < z.rows; ++k) {
                        f = z.at(k, i + 1);
                        z.at(k, i + 1) = s * z.at(k, i) + c * f;
                        z.at(k, i) = c * z.at(k, i) - s * f;
                    }
                }
                if (underflow) continue;
                diag[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) sub[i] = 0.0;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void matvec(const NormalizedAdjacency& m, const std::vector<double>& x,
                   std::vector<double>& y) {
    for (std::size_t i = 0; i < m.n; ++i) {
        double s = 0.0;
        for (std::size_t e = m.row_ptr[i]; e < m.row_ptr[i + 1]; ++e) s += m.val[e] * x[m.col[e]];
        y[i] = s;
    }
}

inline std::size_t components_of(const NormalizedAdjacency& a) {
    std::vector<std::uint8_t> seen(a.n, 0);
    std::vector<std::size_t> stack;
    std::size_t comps = 0;
    for (std::size_t s = 0; s < a.n; ++s) {
        if (seen[s]) continue;
        ++comps;
        seen[s] = 1;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
                const std::size_t v = a.col[e];
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
    }
    return comps;
}

// Make the entry of largest magnitude positive (ties to the lowest index).
inline void fix_sign(std::vector<double>& v) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > best) {
            best = a;
            arg = i;
        }
    }
    if (v[arg] < 0.0) {
        for (double& x : v) x = -x;
    }
}

}  // namespace detail

struct SpectralBasis {
    std::vector<double> eigenvalues;  // Laplacian eigenvalues, ascending
    RowMatrix vectors;                // n x m, column i pairs with eigenvalues[i]
};

namespace detail {

struct RitzPair {
    double theta = 0.0;  // eigenvalue of A_hat
    std::vector<double> vec;
};

// Lanczos with full reorthogonalization on A_hat, returning the k largest
// eigenpairs. Breakdown (invariant subspace exhausted) restarts with a fresh
// random direction, so degenerate eigenvalues are recovered with their full
// multiplicity. The start vector seed is a fixed constant: the basis is a
// pure function of the operator.
inline std::vector<RitzPair> lanczos_topk(const NormalizedAdjacency& a, std::size_t k,
                                          std::size_t j_max) {
    const std::size_t n = a.n;
    j_max = std::min(j_max, n);
    Rng rng(derive_seed(0x746f706f6c6f6779ULL));  // fixed stream

    std::vector<std::vector<double>> basis;
    std::vector<double> alpha, beta;
    basis.reserve(j_max);

    auto fresh_direction = [&]() -> std::vector<double> {
        for (int attempt = 0; attempt < 64; ++attempt) {
            std::vector<double> v(n);
            for (double& x : v) x = normal_double(rng);
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& u : basis) detail::axpy(v, -detail::dot(v, u), u);
            }
            const double nv = detail::norm2(v);
            if (nv > 1e-8) {
                for (double& x : v) x /= nv;
                return v;
            }
        }
        return {};
    };

    std::vector<double> v = fresh_direction();
    std::vector<double> w(n);
    while (basis.size() < j_max && !v.empty()) {
        basis.push_back(v);
        const std::size_t j = basis.size() - 1;
        detail::matvec(a, basis[j], w);
        if (j > 0) detail::axpy(w, -beta[j - 1], basis[j - 1]);
        const double aj = detail::dot(w, basis[j]);
        alpha.push_back(aj);
        detail::axpy(w, -aj, basis[j]);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : basis) detail::axpy(w, -detail::dot(w, u), u);
        }
        if (basis.size() == j_max) break;
        const double b = detail::norm2(w);
        if (b < 1e-12) {
            beta.push_back(0.0);
            v = fresh_direction();  // empty when the whole space is spanned
        } else {
            beta.push_back(b);
            v = w;
            for (double& x : v) x /= b;
        }
    }

    const std::size_t steps = basis.size();
    std::vector<double> diag = alpha;
    std::vector<double> sub(steps, 0.0);
    for (std::size_t i = 0; i + 1 < steps; ++i) sub[i] = beta[i];
    RowMatrix z(steps, steps);
    for (std::size_t i = 0; i < steps; ++i) z.at(i, i) = 1.0;
    detail::tridiag_ql(diag, sub, z);

    std::vector<std::size_t> order(steps);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

    std::vector<RitzPair> out;
    const std::size_t take = std::min(k, steps);
    out.reserve(take);
    for (std::size_t r = 0; r < take; ++r) {
        const std::size_t idx = order[r];
        RitzPair p;
        p.theta = diag[idx];
        p.vec.assign(n, 0.0);
        for (std::size_t l = 0; l < steps; ++l) detail::axpy(p.vec, z.at(l, idx), basis[l]);
        const double nv = detail::norm2(p.vec);
        if (nv > 0.0) {
            for (double& x : p.vec) x /= nv;
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace detail

// Eigenvectors of the normalized Laplacian L = I - A_hat for the m smallest
// eigenvalues above the trivial threshold 1e-8 (one zero eigenvalue per
// connected component is trivial). Solved as a largest-eigenvalue Lanczos on
// A_hat with the map lambda_L = 1 - lambda_Ahat. Columns are unit-norm with a
// deterministic sign; degenerate clusters are ordered by sign-fixed
// lexicographic comparison.
inline SpectralBasis topology_eigenvectors(const NormalizedAdjacency& adj, std::size_t m) {
    const std::size_t n = adj.n;
    if (m < 1) throw ConfigError("spectral dimension m must be >= 1");
    const std::size_t comps = detail::components_of(adj);
    if (m > n - comps) {
        throw ConfigError("requested m=" + std::to_string(m) + " non-trivial eigenvectors but the graph has " +
                          std::to_string(comps) + " connected component(s), leaving only " +
                          std::to_string(n - comps) + " available");
    }
    constexpr double kTrivialThreshold = 1e-8;
    constexpr double kResidualTol = 1e-9;

    const std::size_t k = m + comps;
    std::size_t j_max = std::min(n, std::max<std::size_t>(4 * k + 40, 100));

    std::vector<detail::RitzPair> kept;
    for (;;) {
        auto pairs = detail::lanczos_topk(adj, k, j_max);
        kept.clear();
        bool all_good = true;
        std::vector<double> av(n);
        for (auto& p : pairs) {
            detail::matvec(adj, p.vec, av);
            double res = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = av[i] - p.theta * p.vec[i];
                res += r * r;
            }
            if (std::sqrt(res) > kResidualTol) {
                all_good = false;
                break;
            }
            const double lam = 1.0 - p.theta;
            if (lam > kTrivialThreshold) kept.push_back(std::move(p));
        }
        if (all_good && kept.size() >= m) break;
        if (j_max >= n) {
            if (!all_good) throw NumericError("Lanczos failed to reach the residual tolerance");
            throw ConfigError("only " + std::to_string(kept.size()) +
                              " non-trivial eigenpairs available below the requested m=" +
                              std::to_string(m) + " (graph has " + std::to_string(comps) +
                              " connected component(s))");
        }
        j_max = std::min(n, j_max * 2);
    }

    // Ascending Laplacian eigenvalue; degenerate clusters ordered by the
    // sign-fixed vectors themselves so the output is deterministic.
    for (auto& p : kept) detail::fix_sign(p.vec);
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double lx = 1.0 - kept[x].theta;
        const double ly = 1.0 - kept[y].theta;
        if (std::abs(lx - ly) > 1e-10) return lx < ly;
        return kept[x].vec < kept[y].vec;
    });

    SpectralBasis out;
    out.vectors = RowMatrix(n, m);
    out.eigenvalues.resize(m);
    for (std::size_t cidx = 0; cidx < m; ++cidx) {
        const auto& p = kept[order[cidx]];
        out.eigenvalues[cidx] = 1.0 - p.theta;
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, cidx) = p.vec[i];
    }
    return out;
}

}  // namespace damgt
