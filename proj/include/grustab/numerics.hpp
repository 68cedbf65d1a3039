#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grustab {

using Vector = std::vector<double>;

// Dense row-major matrix. Sizes here are tiny (network layers, 4-state
// plants), so no BLAS backing is needed.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;  // rows * cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

// y = M x
Vector matvec(const Matrix& m, const Vector& x);

// y = M' x
Vector matvec_transposed(const Matrix& m, const Vector& x);

Matrix matmul(const Matrix& a, const Matrix& b);

// Induced infinity norm: max absolute row sum. Empty matrix -> 0.
double inf_norm(const Matrix& m);

// Infinity norm of a vector (0 for empty).
double inf_norm(const Vector& v);

// Infinity norm of the horizontal concatenation [B0 B1 ... Bn].
// All blocks must share the row count; biases go in as one-column blocks.
double inf_norm_concat(const std::vector<const Matrix*>& blocks);

// Convenience: a vector viewed as a single-column matrix block.
Matrix as_column(const Vector& v);

// Numerically stable logistic sigmoid.
double sigmoid(double x);
double tanh_act(double x);

Vector sigmoid(const Vector& v);
Vector tanh_act(const Vector& v);

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Runs fn(i) for i in [0, n). Thread count is capped by the GRUSTAB_THREADS
// environment variable (default: hardware concurrency). fn must be safe to
// call concurrently for distinct i; results must not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace grustab
