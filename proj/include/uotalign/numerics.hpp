#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uotalign {

// All library failures surface as this type; the message carries a stable
// diagnostic phrase ("empty reduction", "numerical blowup", ...).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense real vector. Entries are finite on construction.
class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t len, double fill = 0.0);
    Vec(std::initializer_list<double> values);
    explicit Vec(std::vector<double> values);

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    double sum() const;
    bool operator==(const Vec&) const = default;

private:
    std::vector<double> data_;
};

// Dense real matrix, row-major. Entries are finite on construction.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
    Mat(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    Mat transpose() const;
    Vec row_sums() const;
    Vec col_sums() const;
    double sum() const;

    bool operator==(const Mat&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Throws Error("non-finite value") if any entry is NaN/Inf.
void require_finite(std::span<const double> values, const char* what);

// log sum_i exp(v_i), max-shifted.
double logsumexp(std::span<const double> v);
inline double logsumexp(const Vec& v) { return logsumexp(v.span()); }

// Entry (i, j) = <A_i, B_j> / (|A_i| |B_j|).
Mat cosine_matrix(const Mat& a, const Mat& b);

// -sum w log w with 0 log 0 = 0.
double entropy(const Mat& w);

// w^T log(w / z) - 1^T w + 1^T z with 0 log 0 = 0.
double generalized_kl(const Vec& w, const Vec& z);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double frobenius_dot(const Mat& a, const Mat& b);
double max_abs_diff(const Mat& a, const Mat& b);

// a (r x k) times b (k x c).
Mat matmul(const Mat& a, const Mat& b);
// a^T (k x r)^T times b (k x c) -> r x c.
Mat matmul_tn(const Mat& a, const Mat& b);
// a (r x k) times b^T (c x k)^T -> r x c.
Mat matmul_nt(const Mat& a, const Mat& b);

}  // namespace uotalign
