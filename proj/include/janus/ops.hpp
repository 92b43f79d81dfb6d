#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "janus/tape.hpp"
#include "janus/tensor.hpp"

namespace janus {

constexpr double kRmsEps = 1e-5;

namespace detail {

// C += A(m,k) * B(k,n)
template <class Real>
void mm_nn(const Real* a, const Real* b, Real* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (long l = 0; l < k; ++l) {
            const Real av = arow[l];
            const Real* brow = b + l * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A(m,k) * B(n,k)^T
template <class Real>
void mm_nt(const Real* a, const Real* b, Real* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (long j = 0; j < n; ++j) {
            const Real* brow = b + j * k;
            Real acc = 0;
            for (long l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C += A(m,k)^T * B(m,n)
template <class Real>
void mm_tn(const Real* a, const Real* b, Real* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        const Real* brow = b + i * n;
        for (long l = 0; l < k; ++l) {
            const Real av = arow[l];
            if (av == Real(0)) continue;
            Real* crow = c + l * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class Real>
Real stable_sigmoid(Real x) {
    if (x >= Real(0)) {
        const Real e = std::exp(-x);
        return Real(1) / (Real(1) + e);
    }
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Taped primitives. Each appends one node; the attached closure pushes the
// node's gradient into whichever inputs need it.
// ---------------------------------------------------------------------------

template <class Real>
Var matmul(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
                    "matmul: shape mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape));
    const long m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<Real> C = Tensor<Real>::zeros({m, n});
    detail::mm_nn(A.data.data(), B.data.data(), C.data.data(), m, k, n);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "matmul");
    if (ng)
        t.set_back(out, [out, a, b, m, k, n](Tape<Real>& tp) {
            const Real* g = tp.grad_ref(out).data.data();
            if (tp.needs_grad(a))  // dA += dC * B^T
                detail::mm_nt(g, tp.val(b).data.data(), tp.grad_ref(a).data.data(), m, n, k);
            if (tp.needs_grad(b))  // dB += A^T * dC
                detail::mm_tn(tp.val(a).data.data(), g, tp.grad_ref(b).data.data(), m, k, n);
        });
    return out;
}

/// C = A * B^T with A[m,k], B[n,k].
template <class Real>
Var matmul_nt(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(),
                    "matmul_nt: shape mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape) + "^T");
    const long m = A.rows(), k = A.cols(), n = B.rows();
    Tensor<Real> C = Tensor<Real>::zeros({m, n});
    detail::mm_nt(A.data.data(), B.data.data(), C.data.data(), m, k, n);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "matmul_nt");
    if (ng)
        t.set_back(out, [out, a, b, m, k, n](Tape<Real>& tp) {
            const Real* g = tp.grad_ref(out).data.data();
            if (tp.needs_grad(a))  // dA += dC * B
                detail::mm_nn(g, tp.val(b).data.data(), tp.grad_ref(a).data.data(), m, n, k);
            if (tp.needs_grad(b))  // dB += dC^T * A
                detail::mm_tn(g, tp.val(a).data.data(), tp.grad_ref(b).data.data(), m, n, k);
        });
    return out;
}

template <class Real>
Var add(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.same_shape(B), "add: shape mismatch");
    Tensor<Real> C = A;
    for (long i = 0; i < C.numel(); ++i) C[i] += B[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "add");
    if (ng)
        t.set_back(out, [out, a, b](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            for (Var in : {a, b})
                if (tp.needs_grad(in)) {
                    Tensor<Real>& gi = tp.grad_ref(in);
                    for (long i = 0; i < g.numel(); ++i) gi[i] += g[i];
                }
        });
    return out;
}

/// [m,n] + row vector [n] broadcast over rows (bias add).
template <class Real>
Var add_rowvec(Tape<Real>& t, Var a, Var bias) {
    const Tensor<Real>&A = t.val(a), &B = t.val(bias);
    detail::require(A.rank() == 2 && B.numel() == A.cols(), "add_rowvec: shape mismatch");
    const long m = A.rows(), n = A.cols();
    Tensor<Real> C = A;
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) C.at(i, j) += B[j];
    const bool ng = t.needs_grad(a) || t.needs_grad(bias);
    Var out = t.emplace(std::move(C), ng, nullptr, "add_rowvec");
    if (ng)
        t.set_back(out, [out, a, bias, m, n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (tp.needs_grad(bias)) {
                Tensor<Real>& gb = tp.grad_ref(bias);
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < n; ++j) gb[j] += g.at(i, j);
            }
        });
    return out;
}

template <class Real>
Var mul(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.same_shape(B), "mul: shape mismatch");
    Tensor<Real> C = A;
    for (long i = 0; i < C.numel(); ++i) C[i] *= B[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "mul");
    if (ng)
        t.set_back(out, [out, a, b](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                const Tensor<Real>& B = tp.val(b);
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
            }
            if (tp.needs_grad(b)) {
                Tensor<Real>& gb = tp.grad_ref(b);
                const Tensor<Real>& A = tp.val(a);
                for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * A[i];
            }
        });
    return out;
}

/// [m,n] scaled per row by a column vector [m] or [m,1].
template <class Real>
Var mul_colvec(Tape<Real>& t, Var a, Var c) {
    const Tensor<Real>&A = t.val(a), &C = t.val(c);
    detail::require(A.rank() == 2 && C.numel() == A.rows(), "mul_colvec: shape mismatch");
    const long m = A.rows(), n = A.cols();
    Tensor<Real> Y = A;
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) Y.at(i, j) *= C[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(c);
    Var out = t.emplace(std::move(Y), ng, nullptr, "mul_colvec");
    if (ng)
        t.set_back(out, [out, a, c, m, n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& A = tp.val(a);
            const Tensor<Real>& C = tp.val(c);
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * C[i];
            }
            if (tp.needs_grad(c)) {
                Tensor<Real>& gc = tp.grad_ref(c);
                for (long i = 0; i < m; ++i) {
                    Real acc = 0;
                    for (long j = 0; j < n; ++j) acc += g.at(i, j) * A.at(i, j);
                    gc[i] += acc;
                }
            }
        });
    return out;
}

template <class Real>
Var scale(Tape<Real>& t, Var a, Real s) {
    Tensor<Real> C = t.val(a);
    for (Real& v : C.data) v *= s;
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "scale");
    if (ng)
        t.set_back(out, [out, a, s](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
        });
    return out;
}

template <class Real>
Var sigmoid(Tape<Real>& t, Var a) {
    Tensor<Real> C = t.val(a);
    for (Real& v : C.data) v = detail::stable_sigmoid(v);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "sigmoid");
    if (ng)
        t.set_back(out, [out, a](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& y = tp.val(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
        });
    return out;
}

template <class Real>
Var silu(Tape<Real>& t, Var a) {
    const Tensor<Real>& A = t.val(a);
    Tensor<Real> C = A;
    for (Real& v : C.data) v = v * detail::stable_sigmoid(v);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "silu");
    if (ng)
        t.set_back(out, [out, a](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& x = tp.val(a);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) {
                const Real s = detail::stable_sigmoid(x[i]);
                ga[i] += g[i] * (s + x[i] * s * (Real(1) - s));
            }
        });
    return out;
}

template <class Real>
Var exp_op(Tape<Real>& t, Var a) {
    Tensor<Real> C = t.val(a);
    for (Real& v : C.data) v = std::exp(v);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "exp");
    if (ng)
        t.set_back(out, [out, a](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& y = tp.val(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
        });
    return out;
}

template <class Real>
Var sum_all(Tape<Real>& t, Var a) {
    const Tensor<Real>& A = t.val(a);
    Real acc = 0;
    for (Real v : A.data) acc += v;
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(Tensor<Real>::scalar(acc), ng, nullptr, "sum_all");
    if (ng)
        t.set_back(out, [out, a](Tape<Real>& tp) {
            const Real g = tp.grad_ref(out)[0];
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < ga.numel(); ++i) ga[i] += g;
        });
    return out;
}

template <class Real>
Var mean_all(Tape<Real>& t, Var a) {
    const long n = t.val(a).numel();
    return scale(t, sum_all(t, a), Real(1) / static_cast<Real>(n));
}

/// Reduction over one axis of a 2-D grid. axis=0 collapses rows -> [n];
/// axis=1 collapses cols -> [m].
template <class Real>
Var sum_axis(Tape<Real>& t, Var a, int axis) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2 && (axis == 0 || axis == 1), "sum_axis: rank-2 input, axis 0 or 1");
    const long m = A.rows(), n = A.cols();
    Tensor<Real> C = Tensor<Real>::zeros({axis == 0 ? n : m});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) C[axis == 0 ? j : i] += A.at(i, j);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "sum_axis");
    if (ng)
        t.set_back(out, [out, a, m, n, axis](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < n; ++j) ga.at(i, j) += g[axis == 0 ? j : i];
        });
    return out;
}

template <class Real>
Var mean_axis(Tape<Real>& t, Var a, int axis) {
    const Tensor<Real>& A = t.val(a);
    const long denom = axis == 0 ? A.rows() : A.cols();
    return scale(t, sum_axis(t, a, axis), Real(1) / static_cast<Real>(denom));
}

/// Row gather from an embedding table: out[i,:] = table[ids[i],:].
template <class Real>
Var embedding_rows(Tape<Real>& t, Var table, const std::vector<int>& ids) {
    const Tensor<Real>& E = t.val(table);
    detail::require(E.rank() == 2, "embedding_rows: table must be rank 2");
    const long V = E.rows(), d = E.cols(), T = static_cast<long>(ids.size());
    for (int id : ids)
        detail::require(id >= 0 && id < V, "embedding_rows: token id out of range");
    Tensor<Real> C = Tensor<Real>::zeros({T, d});
    for (long i = 0; i < T; ++i)
        std::copy_n(&E.at(ids[static_cast<size_t>(i)], 0), d, &C.at(i, 0));
    const bool ng = t.needs_grad(table);
    Var out = t.emplace(std::move(C), ng, nullptr, "embedding_rows");
    if (ng)
        t.set_back(out, [out, table, ids, d](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ge = tp.grad_ref(table);
            for (size_t i = 0; i < ids.size(); ++i)
                for (long j = 0; j < d; ++j) ge.at(ids[i], j) += g.at(static_cast<long>(i), j);
        });
    return out;
}

/// Gather rows by index (duplicates allowed); backward scatter-adds.
template <class Real>
Var gather_rows(Tape<Real>& t, Var a, std::vector<long> idx) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2, "gather_rows: rank-2 input");
    const long n = A.cols();
    for (long i : idx) detail::require(i >= 0 && i < A.rows(), "gather_rows: row index out of range");
    Tensor<Real> C = Tensor<Real>::zeros({static_cast<long>(idx.size()), n});
    for (size_t i = 0; i < idx.size(); ++i) std::copy_n(&A.at(idx[i], 0), n, &C.at(static_cast<long>(i), 0));
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "gather_rows");
    if (ng)
        t.set_back(out, [out, a, idx = std::move(idx), n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (size_t i = 0; i < idx.size(); ++i)
                for (long j = 0; j < n; ++j) ga.at(idx[i], j) += g.at(static_cast<long>(i), j);
        });
    return out;
}

/// Scatter rows of a [k,n] grid into a zero [out_rows,n] grid at idx.
template <class Real>
Var scatter_rows(Tape<Real>& t, Var a, std::vector<long> idx, long out_rows) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2 && A.rows() == static_cast<long>(idx.size()), "scatter_rows: shape mismatch");
    const long n = A.cols();
    for (long i : idx) detail::require(i >= 0 && i < out_rows, "scatter_rows: row index out of range");
    Tensor<Real> C = Tensor<Real>::zeros({out_rows, n});
    for (size_t i = 0; i < idx.size(); ++i)
        for (long j = 0; j < n; ++j) C.at(idx[i], j) += A.at(static_cast<long>(i), j);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "scatter_rows");
    if (ng)
        t.set_back(out, [out, a, idx = std::move(idx), n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (size_t i = 0; i < idx.size(); ++i)
                for (long j = 0; j < n; ++j) ga.at(static_cast<long>(i), j) += g.at(idx[i], j);
        });
    return out;
}

/// out[i] = a[i, cols[i]] as an [m,1] column (per-row entry pick).
template <class Real>
Var select_entries(Tape<Real>& t, Var a, std::vector<int> cols) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2 && A.rows() == static_cast<long>(cols.size()), "select_entries: shape mismatch");
    for (size_t i = 0; i < cols.size(); ++i)
        detail::require(cols[i] >= 0 && cols[i] < A.cols(), "select_entries: column out of range");
    Tensor<Real> C = Tensor<Real>::zeros({A.rows(), 1});
    for (long i = 0; i < A.rows(); ++i) C[i] = A.at(i, cols[static_cast<size_t>(i)]);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "select_entries");
    if (ng)
        t.set_back(out, [out, a, cols = std::move(cols)](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) ga.at(i, cols[static_cast<size_t>(i)]) += g[i];
        });
    return out;
}

/// Concatenation along the sequence (row) axis.
template <class Real>
Var concat_rows(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "concat_rows: column mismatch");
    const long ra = A.rows(), rb = B.rows(), n = A.cols();
    Tensor<Real> C = Tensor<Real>::zeros({ra + rb, n});
    std::copy(A.data.begin(), A.data.end(), C.data.begin());
    std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.numel());
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "concat_rows");
    if (ng)
        t.set_back(out, [out, a, b, ra, rb, n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                for (long i = 0; i < ra * n; ++i) ga[i] += g[i];
            }
            if (tp.needs_grad(b)) {
                Tensor<Real>& gb = tp.grad_ref(b);
                for (long i = 0; i < rb * n; ++i) gb[i] += g[ra * n + i];
            }
        });
    return out;
}

template <class Real>
Var concat_cols(Tape<Real>& t, Var a, Var b) {
    const Tensor<Real>&A = t.val(a), &B = t.val(b);
    detail::require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(), "concat_cols: row mismatch");
    const long m = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor<Real> C = Tensor<Real>::zeros({m, ca + cb});
    for (long i = 0; i < m; ++i) {
        std::copy_n(&A.at(i, 0), ca, &C.at(i, 0));
        std::copy_n(&B.at(i, 0), cb, &C.at(i, ca));
    }
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var out = t.emplace(std::move(C), ng, nullptr, "concat_cols");
    if (ng)
        t.set_back(out, [out, a, b, m, ca, cb](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
            }
            if (tp.needs_grad(b)) {
                Tensor<Real>& gb = tp.grad_ref(b);
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < cb; ++j) gb.at(i, j) += g.at(i, ca + j);
            }
        });
    return out;
}

template <class Real>
Var transpose(Tape<Real>& t, Var a) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2, "transpose: rank-2 input");
    const long m = A.rows(), n = A.cols();
    Tensor<Real> C = Tensor<Real>::zeros({n, m});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) C.at(j, i) = A.at(i, j);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "transpose");
    if (ng)
        t.set_back(out, [out, a, m, n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
        });
    return out;
}

template <class Real>
Var reshape(Tape<Real>& t, Var a, std::vector<long> shape) {
    const Tensor<Real>& A = t.val(a);
    detail::require(shape_numel(shape) == A.numel(), "reshape: element count mismatch");
    Tensor<Real> C(std::move(shape), A.data);
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "reshape");
    if (ng)
        t.set_back(out, [out, a](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    return out;
}

/// RMS normalization per row with a learned gain: y = x * gain / rms(x).
template <class Real>
Var rmsnorm_rows(Tape<Real>& t, Var a, Var gain) {
    const Tensor<Real>&A = t.val(a), &G = t.val(gain);
    detail::require(A.rank() == 2 && G.numel() == A.cols(), "rmsnorm_rows: shape mismatch");
    const long m = A.rows(), n = A.cols();
    Tensor<Real> C = Tensor<Real>::zeros({m, n});
    std::vector<Real> inv_rms(static_cast<size_t>(m));
    for (long i = 0; i < m; ++i) {
        Real ss = 0;
        for (long j = 0; j < n; ++j) ss += A.at(i, j) * A.at(i, j);
        const Real r = std::sqrt(ss / static_cast<Real>(n) + static_cast<Real>(kRmsEps));
        inv_rms[static_cast<size_t>(i)] = Real(1) / r;
        for (long j = 0; j < n; ++j) C.at(i, j) = A.at(i, j) * G[j] * inv_rms[static_cast<size_t>(i)];
    }
    const bool ng = t.needs_grad(a) || t.needs_grad(gain);
    Var out = t.emplace(std::move(C), ng, nullptr, "rmsnorm_rows");
    if (ng)
        t.set_back(out, [out, a, gain, m, n, inv_rms = std::move(inv_rms)](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& A = tp.val(a);
            const Tensor<Real>& G = tp.val(gain);
            if (tp.needs_grad(gain)) {
                Tensor<Real>& gg = tp.grad_ref(gain);
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < n; ++j) gg[j] += g.at(i, j) * A.at(i, j) * inv_rms[static_cast<size_t>(i)];
            }
            if (tp.needs_grad(a)) {
                Tensor<Real>& ga = tp.grad_ref(a);
                for (long i = 0; i < m; ++i) {
                    const Real ir = inv_rms[static_cast<size_t>(i)];
                    Real c = 0;  // sum_j g_ij * gain_j * x_ij
                    for (long j = 0; j < n; ++j) c += g.at(i, j) * G[j] * A.at(i, j);
                    const Real k = c * ir * ir * ir / static_cast<Real>(n);
                    for (long j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * G[j] * ir - A.at(i, j) * k;
                }
            }
        });
    return out;
}

/// Row-wise softmax. With a mask, inadmissible entries are excluded before
/// normalization and are exactly zero in the output.
template <class Real>
Var softmax_rows(Tape<Real>& t, Var a, const BoolGrid* mask = nullptr) {
    const Tensor<Real>& A = t.val(a);
    detail::require(A.rank() == 2, "softmax_rows: rank-2 input");
    detail::require(A.all_finite(), "softmax_rows: non-finite input");
    const long m = A.rows(), n = A.cols();
    if (mask) detail::require(mask->n_rows == m && mask->n_cols == n, "softmax_rows: mask shape mismatch");
    Tensor<Real> C = Tensor<Real>::zeros({m, n});
    for (long i = 0; i < m; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (long j = 0; j < n; ++j)
            if (!mask || mask->at(i, j)) mx = std::max(mx, A.at(i, j));
        detail::require(std::isfinite(static_cast<double>(mx)), "empty attention row");
        Real sum = 0;
        for (long j = 0; j < n; ++j)
            if (!mask || mask->at(i, j)) {
                const Real e = std::exp(A.at(i, j) - mx);
                C.at(i, j) = e;
                sum += e;
            }
        for (long j = 0; j < n; ++j) C.at(i, j) /= sum;
    }
    const bool ng = t.needs_grad(a);
    Var out = t.emplace(std::move(C), ng, nullptr, "softmax_rows");
    if (ng)
        t.set_back(out, [out, a, m, n](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& y = tp.val(out);
            Tensor<Real>& ga = tp.grad_ref(a);
            for (long i = 0; i < m; ++i) {
                Real dot = 0;
                for (long j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
                for (long j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
            }
        });
    return out;
}

/// Mean over included instances of -log softmax(logits_i)[target_i].
/// `include` (0/1 per instance) defaults to all-included. `per_instance`, when
/// given, receives every instance's raw loss regardless of inclusion.
template <class Real>
Var cross_entropy_mean(Tape<Real>& t, Var logits, const std::vector<int>& targets,
                       const std::vector<uint8_t>* include = nullptr,
                       std::vector<Real>* per_instance = nullptr) {
    const Tensor<Real>& L = t.val(logits);
    detail::require(L.rank() == 2, "cross_entropy: rank-2 logits");
    const long n = L.rows(), V = L.cols();
    detail::require(static_cast<long>(targets.size()) == n, "cross_entropy: one target per row");
    if (include) detail::require(static_cast<long>(include->size()) == n, "cross_entropy: include flag per row");
    long n_inc = 0;
    for (long i = 0; i < n; ++i) {
        detail::require(targets[static_cast<size_t>(i)] >= 0 && targets[static_cast<size_t>(i)] < V,
                        "cross_entropy: target id out of range");
        if (!include || (*include)[static_cast<size_t>(i)]) ++n_inc;
    }
    detail::require(n_inc > 0, "cross_entropy: no included instances");
    if (per_instance) per_instance->assign(static_cast<size_t>(n), Real(0));
    Real total = 0;
    for (long i = 0; i < n; ++i) {
        Real mx = L.at(i, 0);
        for (long j = 1; j < V; ++j) mx = std::max(mx, L.at(i, j));
        Real sum = 0;
        for (long j = 0; j < V; ++j) sum += std::exp(L.at(i, j) - mx);
        const Real loss = std::log(sum) + mx - L.at(i, targets[static_cast<size_t>(i)]);
        if (per_instance) (*per_instance)[static_cast<size_t>(i)] = loss;
        if (!include || (*include)[static_cast<size_t>(i)]) total += loss;
    }
    const bool ng = t.needs_grad(logits);
    std::vector<uint8_t> inc = include ? *include : std::vector<uint8_t>(static_cast<size_t>(n), 1);
    Var out = t.emplace(Tensor<Real>::scalar(total / static_cast<Real>(n_inc)), ng, nullptr, "cross_entropy");
    if (ng)
        t.set_back(out, [out, logits, targets, inc = std::move(inc), n, V, n_inc](Tape<Real>& tp) {
            const Real g = tp.grad_ref(out)[0] / static_cast<Real>(n_inc);
            const Tensor<Real>& L = tp.val(logits);
            Tensor<Real>& gl = tp.grad_ref(logits);
            for (long i = 0; i < n; ++i) {
                if (!inc[static_cast<size_t>(i)]) continue;
                Real mx = L.at(i, 0);
                for (long j = 1; j < V; ++j) mx = std::max(mx, L.at(i, j));
                Real sum = 0;
                for (long j = 0; j < V; ++j) sum += std::exp(L.at(i, j) - mx);
                for (long j = 0; j < V; ++j) {
                    const Real p = std::exp(L.at(i, j) - mx) / sum;
                    gl.at(i, j) += g * (p - (j == targets[static_cast<size_t>(i)] ? Real(1) : Real(0)));
                }
            }
        });
    return out;
}

/// Input-gated first-order recurrence: s_t = a_t*s_{t-1} + (1-a_t)*x_t with
/// s_{-1} = 0, elementwise over channels. The sequential heart of the gated
/// recurrence block, kept as one primitive so the whole scan backpropagates
/// in two passes.
template <class Real>
Var ema_scan(Tape<Real>& t, Var alpha, Var x) {
    const Tensor<Real>&A = t.val(alpha), &X = t.val(x);
    detail::require(A.rank() == 2 && A.same_shape(X), "ema_scan: alpha/x shape mismatch");
    const long T = A.rows(), e = A.cols();
    Tensor<Real> S = Tensor<Real>::zeros({T, e});
    for (long j = 0; j < e; ++j) {
        Real s = 0;
        for (long i = 0; i < T; ++i) {
            const Real a = A.at(i, j);
            s = a * s + (Real(1) - a) * X.at(i, j);
            S.at(i, j) = s;
        }
    }
    const bool ng = t.needs_grad(alpha) || t.needs_grad(x);
    Var out = t.emplace(std::move(S), ng, nullptr, "ema_scan");
    if (ng)
        t.set_back(out, [out, alpha, x, T, e](Tape<Real>& tp) {
            const Tensor<Real>& g = tp.grad_ref(out);
            const Tensor<Real>& A = tp.val(alpha);
            const Tensor<Real>& X = tp.val(x);
            const Tensor<Real>& S = tp.val(out);
            const bool na = tp.needs_grad(alpha), nx = tp.needs_grad(x);
            Tensor<Real>* ga = na ? &tp.grad_ref(alpha) : nullptr;
            Tensor<Real>* gx = nx ? &tp.grad_ref(x) : nullptr;
            for (long j = 0; j < e; ++j) {
                Real carry = 0;  // d(loss)/d(s_t) flowing from later steps
                for (long i = T - 1; i >= 0; --i) {
                    const Real tot = g.at(i, j) + carry;
                    const Real prev = i > 0 ? S.at(i - 1, j) : Real(0);
                    if (na) ga->at(i, j) += tot * (prev - X.at(i, j));
                    if (nx) gx->at(i, j) += tot * (Real(1) - A.at(i, j));
                    carry = tot * A.at(i, j);
                }
            }
        });
    return out;
}

/// Rows in reverse order; used to realize the right-to-left encoder pass.
template <class Real>
Var reverse_rows(Tape<Real>& t, Var a) {
    const long m = t.val(a).rows();
    std::vector<long> idx(static_cast<size_t>(m));
    for (long i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = m - 1 - i;
    return gather_rows(t, a, std::move(idx));
}

}  // namespace janus
