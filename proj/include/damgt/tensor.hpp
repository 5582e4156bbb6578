#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "damgt/error.hpp"
#include "damgt/rng.hpp"

namespace damgt {

// Reverse-mode engine over dense row-major tensors, sized for the fixed
// architecture this library trains: rank <= 3, a static op set, double
// precision by default with a float instantiation for the 32-bit mode.

template <class Real>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Real> values;
    std::vector<Real> grad;  // allocated on demand; same length as values
    bool requires_grad = false;

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t c = 1;
        for (std::size_t d : shape) c *= d;
        return c;
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
    // All leading dimensions collapsed: the tensor viewed as rows() x last_dim().
    std::size_t rows() const { return shape.empty() ? 1 : size() / shape.back(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    }
    void zero_grad() { grad.assign(values.size(), Real(0)); }
};

template <class Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

template <class Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<Real>>();
    t->shape = std::move(shape);
    t->values.assign(Tensor<Real>::count(t->shape), Real(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <class Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, const std::vector<double>& vals,
                            bool requires_grad = false) {
    auto t = make_tensor<Real>(std::move(shape), requires_grad);
    if (vals.size() != t->values.size()) throw ShapeError("tensor literal has wrong element count");
    for (std::size_t i = 0; i < vals.size(); ++i) t->values[i] = static_cast<Real>(vals[i]);
    return t;
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Boolean pattern over the last two dimensions of a tensor; broadcast over
// any leading batch dimension. allowed[r * cols + c] != 0 keeps the entry.
struct Mask2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> allowed;

    bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

namespace detail {

// C (+)= A (M x K) * B (K x N), all row-major.
template <class Real>
void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        Real* ci = c + i * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) ci[j] = Real(0);
        }
        const Real* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real v = ai[p];
            if (v == Real(0)) continue;
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += v * bp[j];
        }
    }
}

// C (K x N) += A^T * B where A is (M x K), B is (M x N).
template <class Real>
void gemm_at_b(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * k;
        const Real* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real v = ai[p];
            if (v == Real(0)) continue;
            Real* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += v * bi[j];
        }
    }
}

// C (M x K) += A * B^T where A is (M x N), B is (K x N).
template <class Real>
void gemm_a_bt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * n;
        Real* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real* bp = b + p * n;
            Real s = Real(0);
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

}  // namespace detail

template <class Real>
class Tape {
  public:
    explicit Tape(std::uint64_t dropout_seed = 0) : rng_(derive_seed(dropout_seed, 0x64726fu)) {}

    std::size_t node_count() const { return nodes_.size(); }

    // ---- creation helpers ----

    TensorPtr<Real> leaf(std::vector<std::size_t> shape, bool requires_grad = false) {
        return make_tensor<Real>(std::move(shape), requires_grad);
    }

    // ---- primitives ----

    TensorPtr<Real> matmul(const TensorPtr<Real>& a, const TensorPtr<Real>& w) {
        if (w->rank() != 2 || a->rank() < 1 || a->last_dim() != w->shape[0]) {
            throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(w->shape));
        }
        const std::size_t m = a->rows(), k = a->last_dim(), n = w->shape[1];
        auto out_shape = a->shape;
        out_shape.back() = n;
        auto out = result(out_shape, {a, w});
        detail::gemm(a->values.data(), w->values.data(), out->values.data(), m, k, n, false);
        if (out->requires_grad) {
            record([a, w, out, m, k, n] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::gemm_a_bt(out->grad.data(), w->values.data(), a->grad.data(), m, n, k);
                }
                if (w->requires_grad) {
                    w->ensure_grad();
                    detail::gemm_at_b(a->values.data(), out->grad.data(), w->grad.data(), m, k, n);
                }
            });
        }
        return out;
    }

    // Batched matmul over rank-3 operands. trans_b reads b as (B, C, K).
    TensorPtr<Real> bmm(const TensorPtr<Real>& a, const TensorPtr<Real>& b, bool trans_b) {
        if (a->rank() != 3 || b->rank() != 3 || a->shape[0] != b->shape[0]) {
            throw ShapeError("bmm: need rank-3 operands with equal batch; got " +
                             shape_str(a->shape) + " and " + shape_str(b->shape));
        }
        const std::size_t nb = a->shape[0], r = a->shape[1], k = a->shape[2];
        const std::size_t c = trans_b ? b->shape[1] : b->shape[2];
        const std::size_t bk = trans_b ? b->shape[2] : b->shape[1];
        if (bk != k) {
            throw ShapeError("bmm: inner dimensions disagree: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
        }
        auto out = result({nb, r, c}, {a, b});
        for (std::size_t i = 0; i < nb; ++i) {
            const Real* ab = a->values.data() + i * r * k;
            const Real* bb = b->values.data() + i * (trans_b ? c * k : k * c);
            Real* ob = out->values.data() + i * r * c;
            if (trans_b) {
                for (std::size_t rr = 0; rr < r * c; ++rr) ob[rr] = Real(0);
                detail::gemm_a_bt(ab, bb, ob, r, k, c);
            } else {
                detail::gemm(ab, bb, ob, r, k, c, false);
            }
        }
        if (out->requires_grad) {
            record([a, b, out, nb, r, k, c, trans_b] {
                for (std::size_t i = 0; i < nb; ++i) {
                    const Real* ab = a->values.data() + i * r * k;
                    const Real* bb = b->values.data() + i * (trans_b ? c * k : k * c);
                    const Real* gb = out->grad.data() + i * r * c;
                    if (a->requires_grad) {
                        a->ensure_grad();
                        Real* gab = a->grad.data() + i * r * k;
                        if (trans_b) {
                            detail::gemm(gb, bb, gab, r, c, k, true);
                        } else {
                            detail::gemm_a_bt(gb, bb, gab, r, c, k);
                        }
                    }
                    if (b->requires_grad) {
                        b->ensure_grad();
                        Real* gbb = b->grad.data() + i * (trans_b ? c * k : k * c);
                        if (trans_b) {
                            detail::gemm_at_b(gb, ab, gbb, r, c, k);
                        } else {
                            detail::gemm_at_b(ab, gb, gbb, r, k, c);
                        }
                    }
                }
            });
        }
        return out;
    }

    TensorPtr<Real> add(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        if (a->shape != b->shape) {
            throw ShapeError("add: shapes differ: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
        }
        auto out = result(a->shape, {a, b});
        for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] + b->values[i];
        if (out->requires_grad) {
            record([a, b, out] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
                }
            });
        }
        return out;
    }

    // Broadcast a rank-1 bias over all rows.
    TensorPtr<Real> add_rowvec(const TensorPtr<Real>& a, const TensorPtr<Real>& v) {
        if (v->rank() != 1 || v->shape[0] != a->last_dim()) {
            throw ShapeError("add_rowvec: bias " + shape_str(v->shape) + " does not match " +
                             shape_str(a->shape));
        }
        const std::size_t rows = a->rows(), d = a->last_dim();
        auto out = result(a->shape, {a, v});
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* ar = a->values.data() + r * d;
            Real* orow = out->values.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) orow[j] = ar[j] + v->values[j];
        }
        if (out->requires_grad) {
            record([a, v, out, rows, d] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
                }
                if (v->requires_grad) {
                    v->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        const Real* gr = out->grad.data() + r * d;
                        for (std::size_t j = 0; j < d; ++j) v->grad[j] += gr[j];
                    }
                }
            });
        }
        return out;
    }

    TensorPtr<Real> mul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        if (a->shape != b->shape) {
            throw ShapeError("mul: shapes differ: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
        }
        auto out = result(a->shape, {a, b});
        for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] * b->values[i];
        if (out->requires_grad) {
            record([a, b, out] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < out->size(); ++i)
                        a->grad[i] += out->grad[i] * b->values[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < out->size(); ++i)
                        b->grad[i] += out->grad[i] * a->values[i];
                }
            });
        }
        return out;
    }

    TensorPtr<Real> scale(const TensorPtr<Real>& a, Real s) {
        auto out = result(a->shape, {a});
        for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] * s;
        if (out->requires_grad) {
            record([a, out, s] {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * s;
            });
        }
        return out;
    }

    TensorPtr<Real> concat_last(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
        if (a->rank() != b->rank() || a->rank() < 1) {
            throw ShapeError("concat_last: rank mismatch: " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
        }
        for (std::size_t i = 0; i + 1 < a->rank(); ++i) {
            if (a->shape[i] != b->shape[i]) {
                throw ShapeError("concat_last: leading dims differ: " + shape_str(a->shape) +
                                 " vs " + shape_str(b->shape));
            }
        }
        const std::size_t rows = a->rows(), da = a->last_dim(), db = b->last_dim();
        auto out_shape = a->shape;
        out_shape.back() = da + db;
        auto out = result(out_shape, {a, b});
        for (std::size_t r = 0; r < rows; ++r) {
            Real* orow = out->values.data() + r * (da + db);
            const Real* ar = a->values.data() + r * da;
            const Real* br = b->values.data() + r * db;
            for (std::size_t j = 0; j < da; ++j) orow[j] = ar[j];
            for (std::size_t j = 0; j < db; ++j) orow[da + j] = br[j];
        }
        if (out->requires_grad) {
            record([a, b, out, rows, da, db] {
                for (std::size_t r = 0; r < rows; ++r) {
                    const Real* gr = out->grad.data() + r * (da + db);
                    if (a->requires_grad) {
                        a->ensure_grad();
                        Real* ga = a->grad.data() + r * da;
                        for (std::size_t j = 0; j < da; ++j) ga[j] += gr[j];
                    }
                    if (b->requires_grad) {
                        b->ensure_grad();
                        Real* gb = b->grad.data() + r * db;
                        for (std::size_t j = 0; j < db; ++j) gb[j] += gr[da + j];
                    }
                }
            });
        }
        return out;
    }

    // Gathers rows of the collapsed rows() x last_dim() view; output is rank 2.
    TensorPtr<Real> row_gather(const TensorPtr<Real>& a, std::vector<std::size_t> idx) {
        if (a->rank() < 2) throw ShapeError("row_gather: need rank >= 2 input, got " + shape_str(a->shape));
        const std::size_t d = a->last_dim();
        for (std::size_t r : idx) {
            if (r >= a->rows()) throw IndexError("row_gather: index " + std::to_string(r) + " out of range");
        }
        auto out = result({idx.size(), d}, {a});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const Real* src = a->values.data() + idx[r] * d;
            Real* dst = out->values.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
        }
        if (out->requires_grad) {
            auto indices = std::make_shared<std::vector<std::size_t>>(std::move(idx));
            record([a, out, indices, d] {
                a->ensure_grad();
                for (std::size_t r = 0; r < indices->size(); ++r) {
                    Real* dst = a->grad.data() + (*indices)[r] * d;
                    const Real* src = out->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            });
        }
        return out;
    }

    TensorPtr<Real> transpose(const TensorPtr<Real>& a) {
        if (a->rank() != 2) throw ShapeError("transpose: need rank-2 input, got " + shape_str(a->shape));
        const std::size_t r = a->shape[0], c = a->shape[1];
        auto out = result({c, r}, {a});
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) out->values[j * r + i] = a->values[i * c + j];
        }
        if (out->requires_grad) {
            record([a, out, r, c] {
                a->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) a->grad[i * c + j] += out->grad[j * r + i];
                }
            });
        }
        return out;
    }

    TensorPtr<Real> softmax_last(const TensorPtr<Real>& a) {
        const std::size_t rows = a->rows(), d = a->last_dim();
        auto out = result(a->shape, {a});
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* x = a->values.data() + r * d;
            Real* y = out->values.data() + r * d;
            Real mx = x[0];
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
            Real sum = Real(0);
            for (std::size_t j = 0; j < d; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
        }
        if (out->requires_grad) record(softmax_backward(a, out, rows, d));
        return out;
    }

    // Softmax over permitted positions only; masked positions are exactly 0
    // in the output, and a fully masked row yields all zeros. The negative
    // infinity of the masking operator exists only implicitly here: masked
    // logits are skipped, never materialized, so backward stays NaN-free.
    TensorPtr<Real> masked_softmax_last(const TensorPtr<Real>& a, const Mask2D& mask) {
        check_mask(a, mask);
        const std::size_t rows = a->rows(), d = a->last_dim();
        auto out = result(a->shape, {a});
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t mrow = (r % mask.rows) * mask.cols;
            const Real* x = a->values.data() + r * d;
            Real* y = out->values.data() + r * d;
            Real mx = -std::numeric_limits<Real>::infinity();
            bool any = false;
            for (std::size_t j = 0; j < d; ++j) {
                if (mask.allowed[mrow + j]) {
                    mx = std::max(mx, x[j]);
                    any = true;
                }
            }
            if (!any) {
                for (std::size_t j = 0; j < d; ++j) y[j] = Real(0);
                continue;
            }
            Real sum = Real(0);
            for (std::size_t j = 0; j < d; ++j) {
                if (mask.allowed[mrow + j]) {
                    y[j] = std::exp(x[j] - mx);
                    sum += y[j];
                } else {
                    y[j] = Real(0);
                }
            }
            for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
        }
        if (out->requires_grad) record(softmax_backward(a, out, rows, d));
        return out;
    }

    TensorPtr<Real> masked_fill(const TensorPtr<Real>& a, const Mask2D& mask, Real value) {
        check_mask(a, mask);
        const std::size_t rows = a->rows(), d = a->last_dim();
        auto out = result(a->shape, {a});
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t mrow = (r % mask.rows) * mask.cols;
            const Real* x = a->values.data() + r * d;
            Real* y = out->values.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) y[j] = mask.allowed[mrow + j] ? x[j] : value;
        }
        if (out->requires_grad) {
            auto m = std::make_shared<Mask2D>(mask);
            record([a, out, m, rows, d] {
                a->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t mrow = (r % m->rows) * m->cols;
                    const Real* g = out->grad.data() + r * d;
                    Real* ga = a->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        if (m->allowed[mrow + j]) ga[j] += g[j];
                    }
                }
            });
        }
        return out;
    }

    TensorPtr<Real> layer_norm(const TensorPtr<Real>& a, const TensorPtr<Real>& gain,
                               const TensorPtr<Real>& bias, Real eps = Real(1e-5)) {
        const std::size_t d = a->last_dim(), rows = a->rows();
        if (gain->rank() != 1 || gain->shape[0] != d || bias->rank() != 1 || bias->shape[0] != d) {
            throw ShapeError("layer_norm: gain/bias " + shape_str(gain->shape) + "/" +
                             shape_str(bias->shape) + " do not match " + shape_str(a->shape));
        }
        auto out = result(a->shape, {a, gain, bias});
        auto xhat = std::make_shared<std::vector<Real>>(rows * d);
        auto inv_std = std::make_shared<std::vector<Real>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* x = a->values.data() + r * d;
            Real* y = out->values.data() + r * d;
            Real mean = Real(0);
            for (std::size_t j = 0; j < d; ++j) mean += x[j];
            mean /= Real(d);
            Real var = Real(0);
            for (std::size_t j = 0; j < d; ++j) {
                const Real t = x[j] - mean;
                var += t * t;
            }
            var /= Real(d);
            const Real inv = Real(1) / std::sqrt(var + eps);
            (*inv_std)[r] = inv;
            for (std::size_t j = 0; j < d; ++j) {
                const Real xh = (x[j] - mean) * inv;
                (*xhat)[r * d + j] = xh;
                y[j] = gain->values[j] * xh + bias->values[j];
            }
        }
        if (out->requires_grad) {
            record([a, gain, bias, out, xhat, inv_std, rows, d] {
                for (std::size_t r = 0; r < rows; ++r) {
                    const Real* g = out->grad.data() + r * d;
                    const Real* xh = xhat->data() + r * d;
                    if (gain->requires_grad) {
                        gain->ensure_grad();
                        for (std::size_t j = 0; j < d; ++j) gain->grad[j] += g[j] * xh[j];
                    }
                    if (bias->requires_grad) {
                        bias->ensure_grad();
                        for (std::size_t j = 0; j < d; ++j) bias->grad[j] += g[j];
                    }
                    if (a->requires_grad) {
                        a->ensure_grad();
                        Real sum_dxh = Real(0), sum_dxh_xh = Real(0);
                        for (std::size_t j = 0; j < d; ++j) {
                            const Real dxh = g[j] * gain->values[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        Real* ga = a->grad.data() + r * d;
                        const Real inv = (*inv_std)[r];
                        for (std::size_t j = 0; j < d; ++j) {
                            const Real dxh = g[j] * gain->values[j];
                            ga[j] += inv * (dxh - sum_dxh / Real(d) - xh[j] * sum_dxh_xh / Real(d));
                        }
                    }
                }
            });
        }
        return out;
    }

    // tanh-approximation GELU.
    TensorPtr<Real> gelu(const TensorPtr<Real>& a) {
        static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        static constexpr double kA = 0.044715;
        auto out = result(a->shape, {a});
        for (std::size_t i = 0; i < out->size(); ++i) {
            const double x = static_cast<double>(a->values[i]);
            const double t = std::tanh(kC * (x + kA * x * x * x));
            out->values[i] = static_cast<Real>(0.5 * x * (1.0 + t));
        }
        if (out->requires_grad) {
            record([a, out] {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) {
                    const double x = static_cast<double>(a->values[i]);
                    const double t = std::tanh(kC * (x + kA * x * x * x));
                    const double du = kC * (1.0 + 3.0 * kA * x * x);
                    const double dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    a->grad[i] += out->grad[i] * static_cast<Real>(dydx);
                }
            });
        }
        return out;
    }

    TensorPtr<Real> relu(const TensorPtr<Real>& a) {
        auto out = result(a->shape, {a});
        for (std::size_t i = 0; i < out->size(); ++i)
            out->values[i] = a->values[i] > Real(0) ? a->values[i] : Real(0);
        if (out->requires_grad) {
            record([a, out] {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) {
                    if (a->values[i] > Real(0)) a->grad[i] += out->grad[i];
                }
            });
        }
        return out;
    }

    // Inverted dropout on the tape's seeded stream. keep >= 1 is the identity
    // and consumes no randomness, so keep=1 matches the op being absent.
    TensorPtr<Real> dropout(const TensorPtr<Real>& a, double keep) {
        if (keep >= 1.0) return a;
        if (keep <= 0.0) throw ConfigError("dropout keep probability must be in (0, 1]");
        auto out = result(a->shape, {a});
        auto mask = std::make_shared<std::vector<Real>>(a->size());
        const Real inv = static_cast<Real>(1.0 / keep);
        for (std::size_t i = 0; i < a->size(); ++i) {
            (*mask)[i] = uniform_double(rng_) < keep ? inv : Real(0);
            out->values[i] = a->values[i] * (*mask)[i];
        }
        if (out->requires_grad) {
            record([a, out, mask] {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * (*mask)[i];
            });
        }
        return out;
    }

    TensorPtr<Real> mean_reduce(const TensorPtr<Real>& a) {
        auto out = result({1}, {a});
        Real sum = Real(0);
        for (Real v : a->values) sum += v;
        out->values[0] = sum / static_cast<Real>(a->size());
        if (out->requires_grad) {
            record([a, out] {
                a->ensure_grad();
                const Real g = out->grad[0] / static_cast<Real>(a->size());
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += g;
            });
        }
        return out;
    }

    // Mean cross-entropy over rows of logits against integer targets.
    TensorPtr<Real> cross_entropy_logits(const TensorPtr<Real>& logits,
                                         const std::vector<int>& targets) {
        if (logits->rank() != 2 || logits->shape[0] != targets.size()) {
            throw ShapeError("cross_entropy_logits: logits " + shape_str(logits->shape) +
                             " do not match " + std::to_string(targets.size()) + " targets");
        }
        const std::size_t b = logits->shape[0], c = logits->shape[1];
        for (int t : targets) {
            if (t < 0 || static_cast<std::size_t>(t) >= c) {
                throw IndexError("cross_entropy_logits: target class " + std::to_string(t) +
                                 " outside [0, " + std::to_string(c) + ")");
            }
        }
        auto out = result({1}, {logits});
        auto probs = std::make_shared<std::vector<Real>>(b * c);
        double loss = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const Real* z = logits->values.data() + i * c;
            Real mx = z[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
            const double lse = std::log(sum) + static_cast<double>(mx);
            loss += lse - static_cast<double>(z[targets[i]]);
            for (std::size_t j = 0; j < c; ++j) {
                (*probs)[i * c + j] =
                    static_cast<Real>(std::exp(static_cast<double>(z[j]) - lse));
            }
        }
        out->values[0] = static_cast<Real>(loss / static_cast<double>(b));
        if (out->requires_grad) {
            auto tgt = std::make_shared<std::vector<int>>(targets);
            record([logits, out, probs, tgt, b, c] {
                logits->ensure_grad();
                const Real g = out->grad[0] / static_cast<Real>(b);
                for (std::size_t i = 0; i < b; ++i) {
                    Real* gl = logits->grad.data() + i * c;
                    const Real* p = probs->data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) gl[j] += g * p[j];
                    gl[(*tgt)[i]] -= g;
                }
            });
        }
        return out;
    }

    // Fused star+diagonal masked attention: computes only the 3S+1 permitted
    // logits per (S+1)-token block. q, k, v are (B, S+1, d_a); output matches
    // the dense masked path bit-for-bit in structure (row 0 attends to all,
    // row i > 0 to columns {0, i}). capture, when given, receives the dense
    // (S+1)x(S+1) attention probabilities per block.
    TensorPtr<Real> star_attention(const TensorPtr<Real>& q, const TensorPtr<Real>& k,
                                   const TensorPtr<Real>& v,
                                   std::vector<Real>* capture = nullptr) {
        if (q->rank() != 3 || q->shape != k->shape || q->shape != v->shape) {
            throw ShapeError("star_attention: q/k/v must share a rank-3 shape; got " +
                             shape_str(q->shape) + ", " + shape_str(k->shape) + ", " +
                             shape_str(v->shape));
        }
        const std::size_t nb = q->shape[0], t = q->shape[1], da = q->shape[2];
        if (t < 2) throw ShapeError("star_attention: need at least 2 tokens (S >= 1)");
        const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(da)));
        auto out = result({nb, t, da}, {q, k, v});
        // Saved probabilities: row 0 has t entries, rows 1..t-1 have 2 each.
        auto p0 = std::make_shared<std::vector<Real>>(nb * t);
        auto pd = std::make_shared<std::vector<Real>>(nb * (t - 1) * 2);
        if (capture) capture->assign(nb * t * t, Real(0));
        for (std::size_t bi = 0; bi < nb; ++bi) {
            const Real* qb = q->values.data() + bi * t * da;
            const Real* kb = k->values.data() + bi * t * da;
            const Real* vb = v->values.data() + bi * t * da;
            Real* ob = out->values.data() + bi * t * da;
            Real* p0b = p0->data() + bi * t;
            Real* pdb = pd->data() + bi * (t - 1) * 2;
            // Row 0: softmax over all t logits <q0, kj>.
            {
                Real mx = -std::numeric_limits<Real>::infinity();
                for (std::size_t j = 0; j < t; ++j) {
                    Real s = Real(0);
                    for (std::size_t x = 0; x < da; ++x) s += qb[x] * kb[j * da + x];
                    p0b[j] = s * inv_sqrt;
                    mx = std::max(mx, p0b[j]);
                }
                Real sum = Real(0);
                for (std::size_t j = 0; j < t; ++j) {
                    p0b[j] = std::exp(p0b[j] - mx);
                    sum += p0b[j];
                }
                for (std::size_t x = 0; x < da; ++x) ob[x] = Real(0);
                for (std::size_t j = 0; j < t; ++j) {
                    p0b[j] /= sum;
                    const Real w = p0b[j];
                    const Real* vj = vb + j * da;
                    for (std::size_t x = 0; x < da; ++x) ob[x] += w * vj[x];
                    if (capture) (*capture)[bi * t * t + j] = w;
                }
            }
            // Rows i > 0: two-way softmax over columns {0, i}.
            for (std::size_t i = 1; i < t; ++i) {
                const Real* qi = qb + i * da;
                Real l0 = Real(0), li = Real(0);
                for (std::size_t x = 0; x < da; ++x) {
                    l0 += qi[x] * kb[x];
                    li += qi[x] * kb[i * da + x];
                }
                l0 *= inv_sqrt;
                li *= inv_sqrt;
                const Real mx = std::max(l0, li);
                const Real e0 = std::exp(l0 - mx), ei = std::exp(li - mx);
                const Real sum = e0 + ei;
                const Real a0 = e0 / sum, ai = ei / sum;
                pdb[(i - 1) * 2] = a0;
                pdb[(i - 1) * 2 + 1] = ai;
                Real* oi = ob + i * da;
                const Real* vi = vb + i * da;
                for (std::size_t x = 0; x < da; ++x) oi[x] = a0 * vb[x] + ai * vi[x];
                if (capture) {
                    (*capture)[bi * t * t + i * t] = a0;
                    (*capture)[bi * t * t + i * t + i] = ai;
                }
            }
        }
        if (out->requires_grad) {
            record([q, k, v, out, p0, pd, nb, t, da, inv_sqrt] {
                q->ensure_grad();
                k->ensure_grad();
                v->ensure_grad();
                std::vector<Real> dl(t);
                for (std::size_t bi = 0; bi < nb; ++bi) {
                    const Real* qb = q->values.data() + bi * t * da;
                    const Real* kb = k->values.data() + bi * t * da;
                    const Real* vb = v->values.data() + bi * t * da;
                    const Real* gb = out->grad.data() + bi * t * da;
                    Real* gq = q->grad.data() + bi * t * da;
                    Real* gk = k->grad.data() + bi * t * da;
                    Real* gv = v->grad.data() + bi * t * da;
                    const Real* p0b = p0->data() + bi * t;
                    const Real* pdb = pd->data() + bi * (t - 1) * 2;
                    // Row 0.
                    {
                        Real dot_sum = Real(0);
                        for (std::size_t j = 0; j < t; ++j) {
                            Real dalpha = Real(0);
                            const Real* vj = vb + j * da;
                            for (std::size_t x = 0; x < da; ++x) dalpha += gb[x] * vj[x];
                            dl[j] = dalpha;
                            dot_sum += p0b[j] * dalpha;
                        }
                        for (std::size_t j = 0; j < t; ++j) {
                            const Real w = p0b[j];
                            Real* gvj = gv + j * da;
                            for (std::size_t x = 0; x < da; ++x) gvj[x] += w * gb[x];
                            const Real dlogit = w * (dl[j] - dot_sum) * inv_sqrt;
                            const Real* kj = kb + j * da;
                            Real* gkj = gk + j * da;
                            for (std::size_t x = 0; x < da; ++x) {
                                gq[x] += dlogit * kj[x];
                                gkj[x] += dlogit * qb[x];
                            }
                        }
                    }
                    // Rows i > 0.
                    for (std::size_t i = 1; i < t; ++i) {
                        const Real a0 = pdb[(i - 1) * 2], ai = pdb[(i - 1) * 2 + 1];
                        const Real* gi = gb + i * da;
                        const Real* vi = vb + i * da;
                        const Real* qi = qb + i * da;
                        Real da0 = Real(0), dai = Real(0);
                        for (std::size_t x = 0; x < da; ++x) {
                            da0 += gi[x] * vb[x];
                            dai += gi[x] * vi[x];
                        }
                        const Real mixed = a0 * da0 + ai * dai;
                        const Real dl0 = a0 * (da0 - mixed) * inv_sqrt;
                        const Real dli = ai * (dai - mixed) * inv_sqrt;
                        Real* gqi = gq + i * da;
                        Real* gki = gk + i * da;
                        Real* gvi = gv + i * da;
                        for (std::size_t x = 0; x < da; ++x) {
                            gv[x] += a0 * gi[x];
                            gvi[x] += ai * gi[x];
                            gqi[x] += dl0 * kb[x] + dli * kb[i * da + x];
                            gk[x] += dl0 * qi[x];
                            gki[x] += dli * qi[x];
                        }
                    }
                }
            });
        }
        return out;
    }

    // out[b] = z[b, 0] + sum_{s>=1} omega[b, s-1] * z[b, s]; the readout
    // combination step.
    TensorPtr<Real> hop_weighted_sum(const TensorPtr<Real>& z, const TensorPtr<Real>& omega) {
        if (z->rank() != 3 || omega->rank() != 2 || omega->shape[0] != z->shape[0] ||
            omega->shape[1] + 1 != z->shape[1]) {
            throw ShapeError("hop_weighted_sum: z " + shape_str(z->shape) + " vs omega " +
                             shape_str(omega->shape));
        }
        const std::size_t nb = z->shape[0], t = z->shape[1], d = z->shape[2];
        auto out = result({nb, d}, {z, omega});
        for (std::size_t bi = 0; bi < nb; ++bi) {
            const Real* zb = z->values.data() + bi * t * d;
            const Real* wb = omega->values.data() + bi * (t - 1);
            Real* ob = out->values.data() + bi * d;
            for (std::size_t x = 0; x < d; ++x) ob[x] = zb[x];
            for (std::size_t s = 1; s < t; ++s) {
                const Real w = wb[s - 1];
                const Real* zs = zb + s * d;
                for (std::size_t x = 0; x < d; ++x) ob[x] += w * zs[x];
            }
        }
        if (out->requires_grad) {
            record([z, omega, out, nb, t, d] {
                for (std::size_t bi = 0; bi < nb; ++bi) {
                    const Real* g = out->grad.data() + bi * d;
                    const Real* zb = z->values.data() + bi * t * d;
                    const Real* wb = omega->values.data() + bi * (t - 1);
                    if (z->requires_grad) {
                        z->ensure_grad();
                        Real* gz = z->grad.data() + bi * t * d;
                        for (std::size_t x = 0; x < d; ++x) gz[x] += g[x];
                        for (std::size_t s = 1; s < t; ++s) {
                            Real* gzs = gz + s * d;
                            const Real w = wb[s - 1];
                            for (std::size_t x = 0; x < d; ++x) gzs[x] += w * g[x];
                        }
                    }
                    if (omega->requires_grad) {
                        omega->ensure_grad();
                        Real* gw = omega->grad.data() + bi * (t - 1);
                        for (std::size_t s = 1; s < t; ++s) {
                            const Real* zs = zb + s * d;
                            Real acc = Real(0);
                            for (std::size_t x = 0; x < d; ++x) acc += g[x] * zs[x];
                            gw[s - 1] += acc;
                        }
                    }
                }
            });
        }
        return out;
    }

    // ---- backward ----

    void backward(const TensorPtr<Real>& loss) {
        if (consumed_) throw Error("tape already consumed by a previous backward pass");
        consumed_ = true;
        if (loss->size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
        loss->ensure_grad();
        loss->grad[0] = Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

  private:
    TensorPtr<Real> result(const std::vector<std::size_t>& shape,
                           std::initializer_list<TensorPtr<Real>> inputs) {
        bool rg = false;
        for (const auto& in : inputs) rg = rg || in->requires_grad;
        auto t = std::make_shared<Tensor<Real>>();
        t->shape = shape;
        t->values.assign(Tensor<Real>::count(shape), Real(0));
        t->requires_grad = rg;
        return t;
    }

    void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

    std::function<void()> softmax_backward(TensorPtr<Real> a, TensorPtr<Real> out,
                                           std::size_t rows, std::size_t d) {
        return [a, out, rows, d] {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* y = out->values.data() + r * d;
                const Real* g = out->grad.data() + r * d;
                Real dot = Real(0);
                for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                Real* ga = a->grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        };
    }

    void check_mask(const TensorPtr<Real>& a, const Mask2D& mask) const {
        if (a->rank() < 2 || a->last_dim() != mask.cols ||
            a->shape[a->rank() - 2] != mask.rows) {
            throw ShapeError("mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                             " does not tile tensor " + shape_str(a->shape));
        }
    }

    std::vector<std::function<void()>> nodes_;
    Rng rng_;
    bool consumed_ = false;
};

// Max relative error between the analytic gradient of a scalar program and a
// central finite difference, over every coordinate of x. The program is a
// callable (Tape<double>&) -> TensorPtr<double>; it must be deterministic for
// a fixed tape seed (grad_check always seeds the tape identically).
template <class Program>
double grad_check(Program&& program, const TensorPtr<double>& x, double eps,
                  std::uint64_t tape_seed = 7) {
    if (!x->requires_grad) throw ConfigError("grad_check: x must require gradients");
    x->zero_grad();
    {
        Tape<double> tape(tape_seed);
        auto loss = program(tape);
        tape.backward(loss);
    }
    std::vector<double> analytic = x->grad;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x->values.size(); ++i) {
        const double keep = x->values[i];
        x->values[i] = keep + eps;
        double f_plus;
        {
            Tape<double> tape(tape_seed);
            f_plus = program(tape)->values[0];
        }
        x->values[i] = keep - eps;
        double f_minus;
        {
            Tape<double> tape(tape_seed);
            f_minus = program(tape)->values[0];
        }
        x->values[i] = keep;
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
            throw NumericError("grad_check: non-finite gradient at coordinate " + std::to_string(i));
        }
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace damgt
