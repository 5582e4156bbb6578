#pragma once

#include <cstddef>
#include <vector>

namespace damgt {

// Dense row-major double matrix used throughout preprocessing. The autodiff
// engine has its own tensor type; this one is for plain numeric data.
struct RowMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    RowMatrix() = default;
    RowMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool operator==(const RowMatrix& o) const = default;
};

// C = A * B, all row-major.
inline RowMatrix matmul_dense(const RowMatrix& a, const RowMatrix& b) {
    RowMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double v = ai[k];
            if (v == 0.0) continue;
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) ci[j] += v * bk[j];
        }
    }
    return c;
}

// Horizontal concatenation [A | B]; either side may be empty (0 cols).
inline RowMatrix hconcat(const RowMatrix& a, const RowMatrix& b) {
    const std::size_t rows = a.rows ? a.rows : b.rows;
    RowMatrix out(rows, a.cols + b.cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double* oi = out.row(i);
        if (a.cols) {
            const double* ai = a.row(i);
            for (std::size_t j = 0; j < a.cols; ++j) oi[j] = ai[j];
        }
        if (b.cols) {
            const double* bi = b.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) oi[a.cols + j] = bi[j];
        }
    }
    return out;
}

}  // namespace damgt
