#include "uotalign/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace uotalign {

void require_finite(std::span<const double> values, const char* what)
{
    for (double x : values) {
        if (!std::isfinite(x)) {
            throw Error(std::string("non-finite value in ") + what);
        }
    }
}

Vec::Vec(std::size_t len, double fill) : data_(len, fill)
{
    require_finite(data_, "Vec");
}

Vec::Vec(std::initializer_list<double> values) : data_(values)
{
    require_finite(data_, "Vec");
}

Vec::Vec(std::vector<double> values) : data_(std::move(values))
{
    require_finite(data_, "Vec");
}

double Vec::sum() const
{
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill)
{
    require_finite(data_, "Mat");
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows_ * cols_) {
        throw Error("shape mismatch: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                    " needs " + std::to_string(rows_ * cols_) + " values, got " +
                    std::to_string(data_.size()));
    }
    require_finite(data_, "Mat");
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0)
{
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw Error("ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite(data_, "Mat");
}

Mat Mat::transpose() const
{
    Mat t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Vec Mat::row_sums() const
{
    Vec s(rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) acc += (*this)(i, j);
        s[i] = acc;
    }
    return s;
}

Vec Mat::col_sums() const
{
    Vec s(cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) s[j] += (*this)(i, j);
    return s;
}

double Mat::sum() const
{
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

double logsumexp(std::span<const double> v)
{
    if (v.empty()) throw Error("empty reduction");
    const double c = *std::max_element(v.begin(), v.end());
    if (std::isinf(c)) return c;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - c);
    return c + std::log(acc);
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw Error("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a)
{
    return std::sqrt(dot(a, a));
}

Mat cosine_matrix(const Mat& a, const Mat& b)
{
    if (a.cols() != b.cols()) throw Error("cosine_matrix: embedding dimension mismatch");
    if (a.cols() == 0) throw Error("cosine_matrix: zero embedding dimension");
    std::vector<double> na(a.rows()), nb(b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        na[i] = norm2(a.row(i));
        if (na[i] == 0.0) throw Error("degenerate embedding");
    }
    for (std::size_t j = 0; j < b.rows(); ++j) {
        nb[j] = norm2(b.row(j));
        if (nb[j] == 0.0) throw Error("degenerate embedding");
    }
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double c = dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
            out(i, j) = std::clamp(c, -1.0, 1.0);
        }
    return out;
}

double entropy(const Mat& w)
{
    double h = 0.0;
    for (double x : w.flat()) {
        if (x < 0.0) throw Error("negative mass");
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

double generalized_kl(const Vec& w, const Vec& z)
{
    if (w.size() != z.size()) throw Error("generalized_kl: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (z[i] == 0.0) throw Error("zero reference mass");
        if (z[i] < 0.0 || w[i] < 0.0) throw Error("negative mass");
        if (w[i] > 0.0) acc += w[i] * std::log(w[i] / z[i]);
        acc += z[i] - w[i];
    }
    return acc;
}

double frobenius_dot(const Mat& a, const Mat& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("frobenius_dot: shape mismatch");
    return dot(a.flat(), b.flat());
}

double max_abs_diff(const Mat& a, const Mat& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.flat()[k] - b.flat()[k]));
    return m;
}

Mat matmul(const Mat& a, const Mat& b)
{
    if (a.cols() != b.rows()) throw Error("matmul: shape mismatch");
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Mat matmul_tn(const Mat& a, const Mat& b)
{
    if (a.rows() != b.rows()) throw Error("matmul_tn: shape mismatch");
    Mat out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
        }
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b)
{
    if (a.cols() != b.cols()) throw Error("matmul_nt: shape mismatch");
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

}  // namespace uotalign
