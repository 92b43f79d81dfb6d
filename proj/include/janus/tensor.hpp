#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace janus {

inline long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw std::runtime_error("tensor: negative extent");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major numeric grid. The model only needs rank 1 and 2, but the
/// container is rank-agnostic so reshape stays cheap.
template <class Real>
struct Tensor {
    std::vector<long> shape;
    std::vector<Real> data;

    Tensor() = default;
    Tensor(std::vector<long> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<long>(data.size()))
            throw std::runtime_error("tensor: shape " + shape_str(shape) + " does not match data length " +
                                     std::to_string(data.size()));
    }

    static Tensor zeros(std::vector<long> s) {
        long n = shape_numel(s);
        return Tensor(std::move(s), std::vector<Real>(static_cast<size_t>(n), Real(0)));
    }
    static Tensor full(std::vector<long> s, Real v) {
        long n = shape_numel(s);
        return Tensor(std::move(s), std::vector<Real>(static_cast<size_t>(n), v));
    }
    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    long numel() const { return static_cast<long>(data.size()); }
    long rank() const { return static_cast<long>(shape.size()); }

    long rows() const {
        if (rank() != 2) throw std::runtime_error("tensor: rows() on rank-" + std::to_string(rank()));
        return shape[0];
    }
    long cols() const {
        if (rank() != 2) throw std::runtime_error("tensor: cols() on rank-" + std::to_string(rank()));
        return shape[1];
    }

    Real& at(long i, long j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const Real& at(long i, long j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    Real& operator[](long i) { return data[static_cast<size_t>(i)]; }
    const Real& operator[](long i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

/// Boolean admissibility grid (attention masks and the like).
struct BoolGrid {
    long n_rows = 0;
    long n_cols = 0;
    std::vector<uint8_t> v;

    BoolGrid() = default;
    BoolGrid(long r, long c, bool fill = false)
        : n_rows(r), n_cols(c), v(static_cast<size_t>(r * c), fill ? 1 : 0) {}

    bool at(long i, long j) const { return v[static_cast<size_t>(i * n_cols + j)] != 0; }
    void set(long i, long j, bool b) { v[static_cast<size_t>(i * n_cols + j)] = b ? 1 : 0; }

    bool operator==(const BoolGrid& o) const { return n_rows == o.n_rows && n_cols == o.n_cols && v == o.v; }
};

}  // namespace janus
