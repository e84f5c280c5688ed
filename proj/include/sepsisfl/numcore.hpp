#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "sepsisfl/common.hpp"

namespace sepsisfl::numcore {

// Dense row-major tensor of doubles. Everything model-side runs on these.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor row(std::vector<double> v);  // 1 x n
    static Tensor vec(std::vector<double> v);  // n

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D helpers
    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols() + j]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> span() { return {data_.data(), data_.size()}; }
    std::span<const double> span() const { return {data_.data(), data_.size()}; }

    bool all_finite() const;

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Elementwise / structural ops --------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);   // [m x p | m x q] -> m x (p+q)
Tensor concat_vec(const Tensor& a, const Tensor& b);    // flat concatenation
Tensor softmax_rows(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
// Per-row normalization with learned gain/bias (both length cols()).
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
double squared_l2(const Tensor& x);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);

// Hand-derived backward passes. dY is the upstream gradient of the op output.

void matmul_backward(const Tensor& dY, const Tensor& a, const Tensor& b,
                     Tensor& dA, Tensor& dB);
Tensor softmax_rows_backward(const Tensor& dY, const Tensor& y);
Tensor sigmoid_backward(const Tensor& dY, const Tensor& y);
Tensor tanh_backward(const Tensor& dY, const Tensor& y);
Tensor leaky_relu_backward(const Tensor& dY, const Tensor& x, double slope);
void layer_norm_rows_backward(const Tensor& dY, const Tensor& x, const Tensor& gamma,
                              Tensor& dX, Tensor& dGamma, Tensor& dBeta,
                              double eps = 1e-5);
Tensor squared_l2_backward(double dUp, const Tensor& x);
Tensor gather_rows_backward(const Tensor& dY, const std::vector<int>& idx, int n_rows);

// Raw-buffer kernels used in hot loops.
// C (m x n) += A (m x k) * B (k x n)
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);

// Deterministic counter-based generator. Identical (seed, fork path) gives an
// identical draw sequence on every platform; forks are independent streams.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x5bf0'3635'dcf6'e2acULL)) {}

    Rng fork(std::uint64_t stream) const;
    Rng fork(std::string_view label) const;

    std::uint64_t next_u64() { return mix(key_ + 0x9e37'79b9'7f4a'7c15ULL * ++counter_); }
    double uniform01();                         // [0, 1)
    double uniform(double lo, double hi);
    double normal();                            // standard Gaussian, Box-Muller
    double gamma(double alpha);                 // shape-alpha, unit scale
    std::uint64_t uniform_int(std::uint64_t n); // [0, n)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<double> dirichlet(double alpha, int k);

  private:
    static std::uint64_t mix(std::uint64_t z);
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// Central-difference gradient verification.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// rel err per coordinate = |analytic - central difference| / max(1, |analytic|)
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> theta,
                           std::span<const double> analytic_grad,
                           double h = 1e-5);

}  // namespace sepsisfl::numcore
