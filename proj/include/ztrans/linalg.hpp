#pragma once

#include <cstddef>
#include <vector>

namespace ztrans::linalg {

// Dense row-major matrix of doubles. Deliberately independent of the
// autodiff tensor type: the analysis pipeline never differentiates.
class Matrix {
  public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(size_t rows, size_t cols, std::vector<double> values);

    static Matrix identity(size_t n);
    static Matrix diag(const std::vector<double>& d);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    double& operator()(size_t i, size_t j) { return data_[i * cols_ + j]; }
    double operator()(size_t i, size_t j) const { return data_[i * cols_ + j]; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::vector<double> row(size_t i) const;
    Matrix transposed() const;
    bool all_finite() const;
    double frobenius_norm() const;

  private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);

struct SvdResult {
    Matrix u;                // m x r, orthonormal columns
    std::vector<double> s;   // r singular values, nonincreasing, >= 0
    Matrix v;                // n x r, orthonormal columns
};

struct EigResult {
    std::vector<double> values;  // nonincreasing
    Matrix vectors;              // columns are eigenvectors
};

struct CcaResult {
    Matrix w_a;                        // d' x d_a
    Matrix w_b;                        // d' x d_b
    std::vector<double> correlations;  // in [0,1], nonincreasing
};

struct SpectralEmbedding {
    Matrix coordinates;  // n x dims
    bool disconnected = false;
    bool degenerate = false;  // zero eigengap (e.g. complete graph)
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Input must be
// symmetric within 1e-10; throws InvalidInput otherwise.
EigResult sym_eig(const Matrix& a);

// Thin SVD computed from sym_eig of the Gram matrix of the smaller side.
SvdResult svd(const Matrix& a);

// Projection (cols x kept) onto the smallest prefix of singular directions
// whose squared-singular-value energy reaches `threshold`.
Matrix truncate_by_variance(const SvdResult& s, double threshold);

// Ridge-regularized CCA on column-centered data. x is n x d_a, y is n x d_b.
CcaResult cca_fit(const Matrix& x, const Matrix& y, double regularization);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct PearsonResult {
    double r;
    double p_value;  // two-sided, t-distribution approximation
};
PearsonResult pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// Laplacian-eigenmap coordinates from the normalized graph Laplacian of a
// symmetric similarity matrix with entries in [0,1].
SpectralEmbedding spectral_embedding(const Matrix& similarity, size_t dims);

}  // namespace ztrans::linalg
