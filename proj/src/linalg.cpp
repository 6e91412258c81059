#include "ztrans/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ztrans/errors.hpp"

namespace ztrans::linalg {

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_)
        throw ShapeError("Matrix: values length does not match rows x cols");
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diag(const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

std::vector<double> Matrix::row(size_t i) const {
    return std::vector<double>(data_.begin() + static_cast<long>(i * cols_),
                               data_.begin() + static_cast<long>((i + 1) * cols_));
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (size_t i = 0; i < rows_; ++i)
        for (size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("operator-: shape mismatch");
    Matrix c(a.rows(), a.cols());
    for (size_t i = 0; i < a.data().size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
    return c;
}

EigResult sym_eig(const Matrix& input) {
    if (input.rows() != input.cols()) throw InvalidInput("sym_eig: matrix not square");
    if (!input.all_finite()) throw InvalidInput("sym_eig: non-finite entries");
    const size_t n = input.rows();
    double scale = 0.0;
    for (double v : input.data()) scale = std::max(scale, std::fabs(v));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j)
            if (std::fabs(input(i, j) - input(j, i)) > 1e-10 * (1.0 + scale))
                throw InvalidInput("sym_eig: matrix not symmetric within 1e-10");

    // work on the symmetrized copy
    Matrix a(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
    Matrix v = Matrix::identity(n);

    const double frob = std::max(1.0, a.frobenius_norm());
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-14 * frob) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t i = 0; i < n; ++i) {
                    double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (size_t i = 0; i < n; ++i) {
                    double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (size_t i = 0; i < n; ++i) {
                    double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return a(i, i) > a(j, j); });

    EigResult r;
    r.values.resize(n);
    r.vectors = Matrix(n, n);
    for (size_t j = 0; j < n; ++j) {
        size_t src = order[j];
        r.values[j] = a(src, src);
        // deterministic sign: largest-magnitude component positive
        size_t imax = 0;
        for (size_t i = 1; i < n; ++i)
            if (std::fabs(v(i, src)) > std::fabs(v(imax, src))) imax = i;
        double sign = v(imax, src) < 0 ? -1.0 : 1.0;
        for (size_t i = 0; i < n; ++i) r.vectors(i, j) = sign * v(i, src);
    }
    return r;
}

namespace {

// Orthonormalize column j of u against columns [0, j) starting from a
// canonical basis vector; used when a singular value is numerically zero.
void complete_column(Matrix& u, size_t j) {
    const size_t m = u.rows();
    for (size_t seed = 0; seed < m; ++seed) {
        std::vector<double> cand(m, 0.0);
        cand[seed] = 1.0;
        for (size_t c = 0; c < j; ++c) {
            double dot = 0.0;
            for (size_t i = 0; i < m; ++i) dot += cand[i] * u(i, c);
            for (size_t i = 0; i < m; ++i) cand[i] -= dot * u(i, c);
        }
        double norm = 0.0;
        for (double x : cand) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
            for (size_t i = 0; i < m; ++i) u(i, j) = cand[i] / norm;
            return;
        }
    }
    throw InvalidInput("svd: failed to complete orthonormal basis");
}

}  // namespace

SvdResult svd(const Matrix& a) {
    if (a.rows() < 1 || a.cols() < 1) throw InvalidInput("svd: empty matrix");
    if (!a.all_finite()) throw InvalidInput("svd: non-finite entries");

    const bool tall = a.rows() >= a.cols();
    const Matrix& side = a;  // gram of the smaller dimension
    Matrix gram = tall ? matmul(side.transposed(), side) : matmul(side, side.transposed());
    EigResult eig = sym_eig(gram);

    const size_t r = gram.rows();
    SvdResult out;
    out.s.resize(r);
    double smax = 0.0;
    for (size_t i = 0; i < r; ++i) {
        out.s[i] = std::sqrt(std::max(0.0, eig.values[i]));
        smax = std::max(smax, out.s[i]);
    }

    if (tall) {
        out.v = eig.vectors;  // cols x r
        out.u = Matrix(a.rows(), r);
        Matrix av = matmul(a, out.v);
        for (size_t j = 0; j < r; ++j) {
            if (out.s[j] > 1e-13 * std::max(1.0, smax)) {
                for (size_t i = 0; i < a.rows(); ++i) out.u(i, j) = av(i, j) / out.s[j];
            } else {
                complete_column(out.u, j);
            }
        }
    } else {
        out.u = eig.vectors;  // rows x r
        out.v = Matrix(a.cols(), r);
        Matrix atu = matmul(a.transposed(), out.u);
        for (size_t j = 0; j < r; ++j) {
            if (out.s[j] > 1e-13 * std::max(1.0, smax)) {
                for (size_t i = 0; i < a.cols(); ++i) out.v(i, j) = atu(i, j) / out.s[j];
            } else {
                complete_column(out.v, j);
            }
        }
    }
    return out;
}

Matrix truncate_by_variance(const SvdResult& s, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw InvalidInput("truncate_by_variance: threshold must be in (0,1]");
    double total = 0.0;
    for (double x : s.s) total += x * x;
    size_t keep = s.s.size();
    if (total > 0.0) {
        double acc = 0.0;
        for (size_t i = 0; i < s.s.size(); ++i) {
            acc += s.s[i] * s.s[i];
            if (acc / total >= threshold - 1e-15) {
                keep = i + 1;
                break;
            }
        }
    }
    keep = std::max<size_t>(1, keep);
    Matrix proj(s.v.rows(), keep);
    for (size_t i = 0; i < s.v.rows(); ++i)
        for (size_t j = 0; j < keep; ++j) proj(i, j) = s.v(i, j);
    return proj;
}

namespace {

Matrix center_columns(const Matrix& x) {
    Matrix c = x;
    for (size_t j = 0; j < x.cols(); ++j) {
        double mean = 0.0;
        for (size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
        mean /= static_cast<double>(x.rows());
        for (size_t i = 0; i < x.rows(); ++i) c(i, j) -= mean;
    }
    return c;
}

// inverse square root of a symmetric PSD matrix; throws SingularityError
// when rank-deficient and no ridge was applied
Matrix inv_sqrt_psd(const Matrix& s, bool regularized) {
    EigResult e = sym_eig(s);
    double lmax = e.values.empty() ? 0.0 : std::max(0.0, e.values.front());
    Matrix d(s.rows(), s.rows());
    for (size_t i = 0; i < e.values.size(); ++i) {
        if (e.values[i] <= 1e-12 * std::max(1.0, lmax)) {
            if (!regularized)
                throw SingularityError(
                    "cca_fit: rank-deficient covariance; pass a nonzero regularization");
            d(i, i) = 0.0;
        } else {
            d(i, i) = 1.0 / std::sqrt(e.values[i]);
        }
    }
    return matmul(matmul(e.vectors, d), e.vectors.transposed());
}

}  // namespace

CcaResult cca_fit(const Matrix& x, const Matrix& y, double regularization) {
    if (x.rows() != y.rows()) throw ShapeError("cca_fit: row counts differ");
    if (x.rows() < 2) throw InvalidInput("cca_fit: need at least 2 samples");
    if (regularization < 0.0) throw InvalidInput("cca_fit: negative regularization");

    const double denom = static_cast<double>(x.rows() - 1);
    Matrix xc = center_columns(x);
    Matrix yc = center_columns(y);

    Matrix sxx = matmul(xc.transposed(), xc);
    Matrix syy = matmul(yc.transposed(), yc);
    Matrix sxy = matmul(xc.transposed(), yc);
    for (auto& v : sxx.data()) v /= denom;
    for (auto& v : syy.data()) v /= denom;
    for (auto& v : sxy.data()) v /= denom;
    for (size_t i = 0; i < sxx.rows(); ++i) sxx(i, i) += regularization;
    for (size_t i = 0; i < syy.rows(); ++i) syy(i, i) += regularization;

    Matrix wx = inv_sqrt_psd(sxx, regularization > 0.0);
    Matrix wy = inv_sqrt_psd(syy, regularization > 0.0);

    Matrix m = matmul(matmul(wx, sxy), wy);
    SvdResult ms = svd(m);

    size_t dprime = std::min(x.cols(), y.cols());
    CcaResult out;
    out.correlations.resize(dprime);
    for (size_t i = 0; i < dprime; ++i)
        out.correlations[i] = std::clamp(ms.s[i], 0.0, 1.0 + 1e-6);

    // W^a = U^T Sxx^{-1/2}, rows are canonical directions
    Matrix ut(dprime, m.rows());
    Matrix vt(dprime, m.cols());
    for (size_t i = 0; i < dprime; ++i) {
        for (size_t j = 0; j < m.rows(); ++j) ut(i, j) = ms.u(j, i);
        for (size_t j = 0; j < m.cols(); ++j) vt(i, j) = ms.v(j, i);
    }
    out.w_a = matmul(ut, wx);
    out.w_b = matmul(vt, wy);
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DegenerateInput("cosine: zero-norm input");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

// regularized incomplete beta I_x(a, b) by continued fraction
double betacf(double a, double b, double x) {
    const int max_iter = 200;
    const double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                b * std::log(1.0 - x);
    double bt = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

PearsonResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ShapeError("pearson: length mismatch");
    if (xs.size() < 2) throw InvalidInput("pearson: need at least 2 points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: zero variance input");
    double r = sxy / std::sqrt(sxx * syy);
    r = std::clamp(r, -1.0, 1.0);

    double p = 0.0;
    double df = n - 2.0;
    if (df > 0.0 && std::fabs(r) < 1.0) {
        double t2 = r * r * df / (1.0 - r * r);
        p = inc_beta(df / 2.0, 0.5, df / (df + t2));
    }
    return {r, p};
}

SpectralEmbedding spectral_embedding(const Matrix& similarity, size_t dims) {
    const size_t n = similarity.rows();
    if (similarity.cols() != n) throw InvalidInput("spectral_embedding: matrix not square");
    if (dims >= n) throw InvalidInput("spectral_embedding: dims must be < n");
    for (double v : similarity.data())
        if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
            throw InvalidInput("spectral_embedding: entries must be in [0,1]");

    SpectralEmbedding out;
    std::vector<double> degree(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) degree[i] += similarity(i, j);

    Matrix lap = Matrix::identity(n);
    for (size_t i = 0; i < n; ++i) {
        if (degree[i] <= 0.0) {
            out.disconnected = true;
            continue;
        }
        for (size_t j = 0; j < n; ++j) {
            if (degree[j] <= 0.0) continue;
            lap(i, j) -= similarity(i, j) / std::sqrt(degree[i] * degree[j]);
        }
    }
    // symmetrize residual rounding
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (lap(i, j) + lap(j, i));
            lap(i, j) = lap(j, i) = v;
        }

    EigResult eig = sym_eig(lap);  // descending; smallest eigenvalues last
    // count near-zero eigenvalues = connected components
    size_t zero_count = 0;
    for (double v : eig.values)
        if (std::fabs(v) < 1e-8) ++zero_count;
    if (zero_count > 1) out.disconnected = true;

    // The trivial eigenvector is D^{1/2}·1 (restricted to nonzero degrees);
    // with a degenerate zero eigenspace the solver may return any basis of
    // it, so each candidate is explicitly orthogonalized against the trivial
    // direction and against already-accepted coordinates.
    std::vector<double> trivial(n, 0.0);
    double tnorm = 0.0;
    for (size_t i = 0; i < n; ++i) {
        trivial[i] = degree[i] > 0.0 ? std::sqrt(degree[i]) : 0.0;
        tnorm += trivial[i] * trivial[i];
    }
    tnorm = std::sqrt(tnorm);
    for (double& v : trivial) v /= std::max(tnorm, 1e-300);

    out.coordinates = Matrix(n, dims);
    std::vector<std::vector<double>> accepted{trivial};
    size_t filled = 0;
    double last_value = 0.0;
    size_t next_index = 0;  // ascending position after the last consumed one
    for (size_t asc = 0; asc < n && filled < dims; ++asc) {
        size_t col = n - 1 - asc;  // ascending eigenvalue order
        std::vector<double> cand(n);
        for (size_t i = 0; i < n; ++i) cand[i] = eig.vectors(i, col);
        for (const auto& prev : accepted) {
            double dot = 0.0;
            for (size_t i = 0; i < n; ++i) dot += cand[i] * prev[i];
            for (size_t i = 0; i < n; ++i) cand[i] -= dot * prev[i];
        }
        double norm = 0.0;
        for (double v : cand) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;  // this direction was the trivial one
        for (double& v : cand) v /= norm;
        for (size_t i = 0; i < n; ++i) out.coordinates(i, filled) = cand[i];
        accepted.push_back(std::move(cand));
        ++filled;
        last_value = eig.values[col];
        next_index = asc + 1;
    }
    if (filled < dims)
        throw DegenerateInput("spectral_embedding: not enough independent directions");
    // zero eigengap at the boundary of the used spectrum: coordinate choice
    // is arbitrary within the multiplet, flag it
    if (next_index < n && eig.values[n - 1 - next_index] - last_value < 1e-10)
        out.degenerate = true;
    return out;
}

}  // namespace ztrans::linalg
