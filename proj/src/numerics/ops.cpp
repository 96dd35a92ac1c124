// SPDX-License-Identifier: Apache-2.0
#include "numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "common/error.hpp"
#include "common/random.hpp"

namespace m2a::num {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C[m×n] += A[k×m]^T · B[k×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Shape vector_shape(const Tensor& t) {
    if (t.rank() == 1) return t.shape();
    if (t.rank() == 2 && t.shape()[0] == 1) return {t.shape()[1]};
    throw ShapeError("expected a vector, got shape " + to_string(t.shape()));
}

Tensor softmax_impl(const Tensor& logits, bool causal) {
    require_matrix(logits, "softmax");
    const auto n = logits.rows(), c = logits.cols();
    if (causal && n != c) throw ShapeError("causal softmax needs a square input, got " + to_string(logits.shape()));
    Tensor out = Tensor::zeros(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t width = causal ? r + 1 : c;
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, logits.at(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double e = std::exp(logits.at(r, j) - mx);
            out.at(r, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < width; ++j) out.at(r, j) /= z;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) shape_mismatch("matmul", a.shape(), b.shape());
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    gemm_nn(a.values().data(), b.values().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out = Tensor::zeros({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor kron(const Tensor& c, const Tensor& d) {
    if (c.rank() != 2 || d.rank() != 2) {
        throw ShapeError("kron: both inputs must be matrices, got " + to_string(c.shape()) + " and " +
                         to_string(d.shape()));
    }
    const auto p = c.rows(), q = c.cols(), s = d.rows(), t = d.cols();
    Tensor out = Tensor::zeros({p * s, q * t});
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
            const double cij = c.at(i, j);
            for (std::size_t u = 0; u < s; ++u)
                for (std::size_t v = 0; v < t; ++v) out.at(i * s + u, j * t + v) = cij * d.at(u, v);
        }
    return out;
}

Tensor kron_apply(const Tensor& c, const Tensor& d, const Tensor& x) {
    require_matrix(c, "kron_apply");
    require_matrix(d, "kron_apply");
    require_matrix(x, "kron_apply");
    const auto p = c.rows(), q = c.cols(), s = d.rows(), t = d.cols();
    if (x.cols() != p * s) {
        throw ShapeError("kron_apply: input width " + std::to_string(x.cols()) + " does not factor as " +
                         to_string(c.shape()) + " (x) " + to_string(d.shape()));
    }
    const auto n = x.rows();
    // Each row of x viewed as X[p×s]; the row result is C^T · X · D.
    Tensor xd = Tensor::zeros({n * p, t});
    gemm_nn(x.values().data(), d.values().data(), xd.data().data(), n * p, s, t);
    Tensor out = Tensor::zeros({n, q * t});
    for (std::size_t r = 0; r < n; ++r) {
        gemm_tn(c.values().data(), xd.values().data() + r * p * t, out.data().data() + r * q * t, q, p, t);
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits) { return softmax_impl(logits, false); }

Tensor log_softmax_rows(const Tensor& logits) {
    require_matrix(logits, "log_softmax");
    Tensor out = Tensor::zeros(logits.shape());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = logits.at(r, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(r, j) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < logits.cols(); ++j) out.at(r, j) = logits.at(r, j) - lse;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same("add", a, b);
    Tensor out = a;
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

// ---------------------------------------------------------------------------
// Tape ops

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out = matmul(av, bv);
    const int ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        const auto m = A.rows(), k = A.cols(), n = B.cols();
        if (t.requires_grad(ia)) {
            Tensor da = Tensor::zeros(A.shape());
            gemm_nt(g.values().data(), B.values().data(), da.data().data(), m, n, k);
            t.accumulate(ia, da);
        }
        if (t.requires_grad(ib)) {
            Tensor db = Tensor::zeros(B.shape());
            gemm_tn(A.values().data(), g.values().data(), db.data().data(), k, m, n);
            t.accumulate(ib, db);
        }
    });
}

Var transpose(Var a) {
    const int ia = a.id;
    return a.tape->record(transpose(a.value()), {ia},
                          [ia](Tape& t, const Tensor& g) { t.accumulate(ia, transpose(g)); });
}

Var add(Var a, Var b) {
    const int ia = a.id, ib = b.id;
    return a.tape->record(add(a.value(), b.value()), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    require_same("sub", a.value(), b.value());
    Tensor out = a.value();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= b.value()[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accumulate(ia, g);
        if (t.requires_grad(ib)) t.accumulate(ib, scale(g, -1.0));
    });
}

Var mul(Var a, Var b) {
    require_same("mul", a.value(), b.value());
    Tensor out = a.value();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= b.value()[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor da = g;
            for (std::size_t i = 0; i < da.size(); ++i) da[i] *= B[i];
            t.accumulate(ia, da);
        }
        if (t.requires_grad(ib)) {
            Tensor db = g;
            for (std::size_t i = 0; i < db.size(); ++i) db[i] *= A[i];
            t.accumulate(ib, db);
        }
    });
}

Var scale(Var a, double s) {
    const int ia = a.id;
    return a.tape->record(scale(a.value(), s), {ia},
                          [ia, s](Tape& t, const Tensor& g) { t.accumulate(ia, scale(g, s)); });
}

Var add_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    require_matrix(xv, "add_bias");
    const Shape bshape = vector_shape(bias.value());
    if (bshape[0] != xv.cols()) shape_mismatch("add_bias", xv.shape(), bias.shape());
    Tensor out = xv;
    const auto& bv = bias.value();
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < xv.cols(); ++c) out.at(r, c) += bv[c];
    const int ix = x.id, ib = bias.id;
    return x.tape->record(std::move(out), {ix, ib}, [ix, ib](Tape& t, const Tensor& g) {
        t.accumulate(ix, g);
        if (t.requires_grad(ib)) {
            Tensor db = Tensor::zeros(t.value(ib).shape());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) db[c] += g.at(r, c);
            t.accumulate(ib, db);
        }
    });
}

Var relu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = std::max(v, 0.0);
    const int ix = x.id;
    return x.tape->record(std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
        const Tensor& X = t.value(ix);
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (X[i] <= 0.0) dx[i] = 0.0;
        t.accumulate(ix, dx);
    });
}

Var gelu(Var x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    Tensor out = x.value();
    for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    const int ix = x.id;
    return x.tape->record(std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const Tensor& X = t.value(ix);
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double v = X[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] *= cdf + v * pdf;
        }
        t.accumulate(ix, dx);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& X = x.value();
    require_matrix(X, "layer_norm");
    const auto n = X.rows(), d = X.cols();
    if (vector_shape(gamma.value())[0] != d) shape_mismatch("layer_norm", X.shape(), gamma.shape());
    if (vector_shape(beta.value())[0] != d) shape_mismatch("layer_norm", X.shape(), beta.shape());
    Tensor xhat = Tensor::zeros(X.shape());
    std::vector<double> inv_std(n);
    Tensor out = Tensor::zeros(X.shape());
    const Tensor& G = gamma.value();
    const Tensor& B = beta.value();
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += X.at(r, c);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (X.at(r, c) - mu) * (X.at(r, c) - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            xhat.at(r, c) = (X.at(r, c) - mu) * inv_std[r];
            out.at(r, c) = G[c] * xhat.at(r, c) + B[c];
        }
    }
    const int ix = x.id, ig = gamma.id, ib = beta.id;
    return x.tape->record(
        std::move(out), {ix, ig, ib},
        [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
            const Tensor& G = t.value(ig);
            const auto n = g.rows(), d = g.cols();
            if (t.requires_grad(ix)) {
                Tensor dx = Tensor::zeros(g.shape());
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = g.at(r, c) * G[c];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat.at(r, c);
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = g.at(r, c) * G[c];
                        dx.at(r, c) = inv_std[r] * (dxh - mean_dxhat - xhat.at(r, c) * mean_dxhat_xhat);
                    }
                }
                t.accumulate(ix, dx);
            }
            if (t.requires_grad(ig)) {
                Tensor dg = Tensor::zeros(t.value(ig).shape());
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) dg[c] += g.at(r, c) * xhat.at(r, c);
                t.accumulate(ig, dg);
            }
            if (t.requires_grad(ib)) {
                Tensor db = Tensor::zeros(t.value(ib).shape());
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) db[c] += g.at(r, c);
                t.accumulate(ib, db);
            }
        });
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& T = table.value();
    require_matrix(T, "embedding");
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    const auto d = T.cols();
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= T.rows()) {
            throw InvalidArgument("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                                  std::to_string(T.rows()) + " rows");
        }
        std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    const int it = table.id;
    std::vector<int> idv(ids.begin(), ids.end());
    return table.tape->record(std::move(out), {it}, [it, idv = std::move(idv)](Tape& t, const Tensor& g) {
        Tensor dt = Tensor::zeros(t.value(it).shape());
        const auto d = dt.cols();
        for (std::size_t r = 0; r < idv.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) dt.at(static_cast<std::size_t>(idv[r]), c) += g.at(r, c);
        t.accumulate(it, dt);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const int ia = a.id;
    return a.tape->record(Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor& g) {
        t.accumulate(ia, Tensor::filled(t.value(ia).shape(), g.item()));
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var reshape(Var a, Shape shape) {
    const int ia = a.id;
    Shape original = a.value().shape();
    return a.tape->record(a.value().reshaped(std::move(shape)), {ia},
                          [ia, original = std::move(original)](Tape& t, const Tensor& g) {
                              t.accumulate(ia, g.reshaped(original));
                          });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& A = a.value();
    require_matrix(A, "slice_rows");
    if (count == 0 || begin + count > A.rows()) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + to_string(A.shape()));
    }
    const auto d = A.cols();
    Tensor out = Tensor::zeros({count, d});
    std::copy_n(A.values().begin() + static_cast<std::ptrdiff_t>(begin * d), count * d, out.data().begin());
    const int ia = a.id;
    return a.tape->record(std::move(out), {ia}, [ia, begin](Tape& t, const Tensor& g) {
        Tensor da = Tensor::zeros(t.value(ia).shape());
        std::copy(g.values().begin(), g.values().end(),
                  da.data().begin() + static_cast<std::ptrdiff_t>(begin * g.cols()));
        t.accumulate(ia, da);
    });
}

Var gather_rows(Var a, std::span<const int> rows) {
    const Tensor& A = a.value();
    require_matrix(A, "gather_rows");
    if (rows.empty()) throw ShapeError("gather_rows: empty row list");
    const auto d = A.cols();
    Tensor out = Tensor::zeros({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= A.rows()) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " outside " + to_string(A.shape()));
        }
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = A.at(static_cast<std::size_t>(rows[r]), c);
    }
    const int ia = a.id;
    std::vector<int> rv(rows.begin(), rows.end());
    return a.tape->record(std::move(out), {ia}, [ia, rv = std::move(rv)](Tape& t, const Tensor& g) {
        Tensor da = Tensor::zeros(t.value(ia).shape());
        for (std::size_t r = 0; r < rv.size(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) da.at(static_cast<std::size_t>(rv[r]), c) += g.at(r, c);
        t.accumulate(ia, da);
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& A = a.value();
    require_matrix(A, "slice_cols");
    if (count == 0 || begin + count > A.cols()) {
        throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + to_string(A.shape()));
    }
    Tensor out = Tensor::zeros({A.rows(), count});
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out.at(r, c) = A.at(r, begin + c);
    const int ia = a.id;
    return a.tape->record(std::move(out), {ia}, [ia, begin](Tape& t, const Tensor& g) {
        Tensor da = Tensor::zeros(t.value(ia).shape());
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) da.at(r, begin + c) = g.at(r, c);
        t.accumulate(ia, da);
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const auto d = parts.front().value().cols();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        require_matrix(p.value(), "concat_rows");
        if (p.value().cols() != d) shape_mismatch("concat_rows", parts.front().shape(), p.shape());
        ids.push_back(p.id);
        offsets.push_back(total);
        total += p.value().rows();
    }
    Tensor out = Tensor::zeros({total, d});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value().values();
        std::copy(v.begin(), v.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * d));
    }
    Tape* tape = parts.front().tape;
    return tape->record(std::move(out), ids, [ids, offsets, d](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            Tensor part = Tensor::zeros(t.value(ids[k]).shape());
            std::copy_n(g.values().begin() + static_cast<std::ptrdiff_t>(offsets[k] * d), part.size(),
                        part.data().begin());
            t.accumulate(ids[k], part);
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const auto n = parts.front().value().rows();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != n) shape_mismatch("concat_cols", parts.front().shape(), p.shape());
        ids.push_back(p.id);
        offsets.push_back(total);
        total += p.value().cols();
    }
    Tensor out = Tensor::zeros({n, total});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, offsets[k] + c) = v.at(r, c);
    }
    Tape* tape = parts.front().tape;
    return tape->record(std::move(out), ids, [ids, offsets](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            Tensor part = Tensor::zeros(t.value(ids[k]).shape());
            for (std::size_t r = 0; r < part.rows(); ++r)
                for (std::size_t c = 0; c < part.cols(); ++c) part.at(r, c) = g.at(r, offsets[k] + c);
            t.accumulate(ids[k], part);
        }
    });
}

Var softmax_rows(Var logits, bool causal) {
    Tensor out = softmax_impl(logits.value(), causal);
    const int il = logits.id;
    Tensor probs = out;
    return logits.tape->record(std::move(out), {il}, [il, probs = std::move(probs)](Tape& t, const Tensor& g) {
        Tensor dz = Tensor::zeros(g.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) dot += g.at(r, c) * probs.at(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c) dz.at(r, c) = probs.at(r, c) * (g.at(r, c) - dot);
        }
        t.accumulate(il, dz);
    });
}

Var log_softmax_rows(Var logits) {
    Tensor out = log_softmax_rows(logits.value());
    const int il = logits.id;
    Tensor logp = out;
    return logits.tape->record(std::move(out), {il}, [il, logp = std::move(logp)](Tape& t, const Tensor& g) {
        Tensor dz = Tensor::zeros(g.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double gsum = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) gsum += g.at(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c) dz.at(r, c) = g.at(r, c) - std::exp(logp.at(r, c)) * gsum;
        }
        t.accumulate(il, dz);
    });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& Z = logits.value();
    require_matrix(Z, "cross_entropy");
    if (targets.size() != Z.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         to_string(Z.shape()));
    }
    Tensor logp = log_softmax_rows(Z);
    double loss = 0.0;
    for (std::size_t r = 0; r < Z.rows(); ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= Z.cols()) {
            throw InvalidArgument("cross_entropy: target " + std::to_string(targets[r]) + " outside " +
                                  std::to_string(Z.cols()) + " classes");
        }
        loss -= logp.at(r, static_cast<std::size_t>(targets[r]));
    }
    const double n = static_cast<double>(Z.rows());
    const int il = logits.id;
    std::vector<int> tv(targets.begin(), targets.end());
    return logits.tape->record(Tensor::scalar(loss / n), {il},
                               [il, n, tv = std::move(tv), logp = std::move(logp)](Tape& t, const Tensor& g) {
                                   Tensor dz = Tensor::zeros(logp.shape());
                                   const double s = g.item() / n;
                                   for (std::size_t r = 0; r < logp.rows(); ++r) {
                                       for (std::size_t c = 0; c < logp.cols(); ++c)
                                           dz.at(r, c) = s * std::exp(logp.at(r, c));
                                       dz.at(r, static_cast<std::size_t>(tv[r])) -= s;
                                   }
                                   t.accumulate(il, dz);
                               });
}

Var cross_entropy(Var logits, const Tensor& target_probs) {
    const Tensor& Z = logits.value();
    require_matrix(Z, "cross_entropy");
    if (target_probs.shape() != Z.shape()) shape_mismatch("cross_entropy", Z.shape(), target_probs.shape());
    Tensor logp = log_softmax_rows(Z);
    double loss = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) loss -= target_probs[i] * logp[i];
    const double n = static_cast<double>(Z.rows());
    const int il = logits.id;
    return logits.tape->record(
        Tensor::scalar(loss / n), {il}, [il, n, y = target_probs, logp = std::move(logp)](Tape& t, const Tensor& g) {
            Tensor dz = Tensor::zeros(logp.shape());
            const double s = g.item() / n;
            for (std::size_t r = 0; r < logp.rows(); ++r) {
                double ysum = 0.0;
                for (std::size_t c = 0; c < logp.cols(); ++c) ysum += y.at(r, c);
                for (std::size_t c = 0; c < logp.cols(); ++c)
                    dz.at(r, c) = s * (std::exp(logp.at(r, c)) * ysum - y.at(r, c));
            }
            t.accumulate(il, dz);
        });
}

Var kl_divergence(Var p_logits, Var q_logits) {
    const Tensor& P = p_logits.value();
    const Tensor& Q = q_logits.value();
    require_matrix(P, "kl_divergence");
    require_matrix(Q, "kl_divergence");
    if (P.shape() != Q.shape()) shape_mismatch("kl_divergence", P.shape(), Q.shape());
    Tensor logp = log_softmax_rows(P);
    Tensor logq = log_softmax_rows(Q);
    const auto n = P.rows(), c = P.cols();
    std::vector<double> row_kl(n, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < c; ++k) {
            const double p = std::exp(logp.at(r, k));
            row_kl[r] += p * (logp.at(r, k) - logq.at(r, k));
        }
        total += row_kl[r];
    }
    const double nn = static_cast<double>(n);
    const int ip = p_logits.id, iq = q_logits.id;
    return p_logits.tape->record(
        Tensor::scalar(total / nn), {ip, iq},
        [ip, iq, nn, logp = std::move(logp), logq = std::move(logq), row_kl = std::move(row_kl)](Tape& t,
                                                                                                const Tensor& g) {
            const double s = g.item() / nn;
            const auto rows = logp.rows(), cols = logp.cols();
            if (t.requires_grad(ip)) {
                Tensor dp = Tensor::zeros(logp.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t k = 0; k < cols; ++k) {
                        const double p = std::exp(logp.at(r, k));
                        dp.at(r, k) = s * p * ((logp.at(r, k) - logq.at(r, k)) - row_kl[r]);
                    }
                t.accumulate(ip, dp);
            }
            if (t.requires_grad(iq)) {
                Tensor dq = Tensor::zeros(logq.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t k = 0; k < cols; ++k)
                        dq.at(r, k) = s * (std::exp(logq.at(r, k)) - std::exp(logp.at(r, k)));
                t.accumulate(iq, dq);
            }
        });
}

Var kron(Var c, Var d) {
    const int ic = c.id, id = d.id;
    return c.tape->record(kron(c.value(), d.value()), {ic, id}, [ic, id](Tape& t, const Tensor& g) {
        const Tensor& C = t.value(ic);
        const Tensor& D = t.value(id);
        const auto p = C.rows(), q = C.cols(), s = D.rows(), tt = D.cols();
        Tensor dc = Tensor::zeros(C.shape());
        Tensor dd = Tensor::zeros(D.shape());
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j)
                for (std::size_t u = 0; u < s; ++u)
                    for (std::size_t v = 0; v < tt; ++v) {
                        const double gv = g.at(i * s + u, j * tt + v);
                        dc.at(i, j) += gv * D.at(u, v);
                        dd.at(u, v) += gv * C.at(i, j);
                    }
        t.accumulate(ic, dc);
        t.accumulate(id, dd);
    });
}

Var kron_apply(Var c, Var d, Var x) {
    Tensor out = kron_apply(c.value(), d.value(), x.value());
    const int ic = c.id, id = d.id, ix = x.id;
    return c.tape->record(std::move(out), {ic, id, ix}, [ic, id, ix](Tape& t, const Tensor& g) {
        const Tensor& C = t.value(ic);
        const Tensor& D = t.value(id);
        const Tensor& X = t.value(ix);
        const auto p = C.rows(), q = C.cols(), s = D.rows(), tt = D.cols();
        const auto n = X.rows();
        // Per row r: T = X_r D (p×t), out_r = C^T T, G_r = grad (q×t).
        // dT = C G_r; dC += T G_r^T; dD += X_r^T dT; dX_r = dT D^T.
        Tensor xd = Tensor::zeros({n * p, tt});
        gemm_nn(X.values().data(), D.values().data(), xd.data().data(), n * p, s, tt);
        Tensor dt = Tensor::zeros({n * p, tt});
        for (std::size_t r = 0; r < n; ++r) {
            gemm_nn(C.values().data(), g.values().data() + r * q * tt, dt.data().data() + r * p * tt, p, q, tt);
        }
        if (t.requires_grad(ic)) {
            Tensor dc = Tensor::zeros(C.shape());
            for (std::size_t r = 0; r < n; ++r) {
                gemm_nt(xd.values().data() + r * p * tt, g.values().data() + r * q * tt, dc.data().data(), p, tt, q);
            }
            t.accumulate(ic, dc);
        }
        if (t.requires_grad(id)) {
            Tensor dd = Tensor::zeros(D.shape());
            gemm_tn(X.values().data(), dt.values().data(), dd.data().data(), s, n * p, tt);
            t.accumulate(id, dd);
        }
        if (t.requires_grad(ix)) {
            Tensor dx = Tensor::zeros(X.shape());
            gemm_nt(dt.values().data(), D.values().data(), dx.data().data(), n * p, tt, s);
            t.accumulate(ix, dx);
        }
    });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1)");
    if (rate == 0.0) return x;
    Rng rng(seed);
    Tensor mask = Tensor::zeros(x.shape());
    const double keep = 1.0 / (1.0 - rate);
    for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    const int ix = x.id;
    return x.tape->record(std::move(out), {ix}, [ix, mask = std::move(mask)](Tape& t, const Tensor& g) {
        Tensor dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
        t.accumulate(ix, dx);
    });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

}  // namespace m2a::num
