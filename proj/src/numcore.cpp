#include "sepsisfl/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

namespace sepsisfl::numcore {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw InputError("Tensor: non-positive dimension " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw InputError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_))
        throw InputError("Tensor: data length does not match shape");
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
}

Tensor Tensor::vec(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw InputError("matmul: incompatible shapes");
    Tensor out({a.rows(), b.cols()});
    matmul_acc(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw InputError("matmul_nt: incompatible shapes");
    Tensor out({a.rows(), b.rows()});
    for (int i = 0; i < a.rows(); ++i) {
        const double* ai = a.data() + static_cast<std::size_t>(i) * a.cols();
        for (int j = 0; j < b.rows(); ++j) {
            const double* bj = b.data() + static_cast<std::size_t>(j) * b.cols();
            double acc = 0.0;
            for (int p = 0; p < a.cols(); ++p) acc += ai[p] * bj[p];
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw InputError("matmul_tn: incompatible shapes");
    Tensor out({a.cols(), b.cols()});
    for (int p = 0; p < a.rows(); ++p) {
        const double* ap = a.data() + static_cast<std::size_t>(p) * a.cols();
        const double* bp = b.data() + static_cast<std::size_t>(p) * b.cols();
        for (int i = 0; i < a.cols(); ++i) {
            double av = ap[i];
            if (av == 0.0) continue;
            double* oi = out.data() + static_cast<std::size_t>(i) * b.cols();
            for (int j = 0; j < b.cols(); ++j) oi[j] += av * bp[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw InputError("transpose: expects 2-D tensor");
    Tensor out({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
        throw InputError("concat_cols: row count mismatch");
    Tensor out({a.rows(), a.cols() + b.cols()});
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
        for (int j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
    }
    return out;
}

Tensor concat_vec(const Tensor& a, const Tensor& b) {
    std::vector<double> v;
    v.reserve(a.size() + b.size());
    v.insert(v.end(), a.data(), a.data() + a.size());
    v.insert(v.end(), b.data(), b.data() + b.size());
    return Tensor::vec(std::move(v));
}

Tensor softmax_rows(const Tensor& x) {
    if (x.ndim() != 2) throw InputError("softmax_rows: expects 2-D tensor");
    Tensor out = x;
    int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i) {
        double mx = out.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, out.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(out.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
    }
    return out;
}

Tensor tanh_t(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0) out[i] *= slope;
    return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() != 2) throw InputError("layer_norm_rows: expects 2-D tensor");
    int n = x.cols();
    if (static_cast<int>(gamma.size()) != n || static_cast<int>(beta.size()) != n)
        throw InputError("layer_norm_rows: gain/bias width mismatch");
    Tensor out = x;
    for (int i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j)
            out.at(i, j) = gamma[static_cast<std::size_t>(j)] * (x.at(i, j) - mean) * inv +
                           beta[static_cast<std::size_t>(j)];
    }
    return out;
}

double squared_l2(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
    return s;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    if (x.ndim() != 2) throw InputError("gather_rows: expects 2-D tensor");
    Tensor out({static_cast<int>(idx.size()), x.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        int r = idx[i];
        if (r < 0 || r >= x.rows()) throw LookupError("gather_rows: row index out of range");
        std::memcpy(out.data() + i * x.cols(), x.data() + static_cast<std::size_t>(r) * x.cols(),
                    sizeof(double) * x.cols());
    }
    return out;
}

void matmul_backward(const Tensor& dY, const Tensor& a, const Tensor& b, Tensor& dA, Tensor& dB) {
    dA = matmul(dY, transpose(b));
    dB = matmul(transpose(a), dY);
}

Tensor softmax_rows_backward(const Tensor& dY, const Tensor& y) {
    require_same_shape(dY, y, "softmax_rows_backward");
    Tensor dX = dY;
    for (int i = 0; i < y.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < y.cols(); ++j) s += dY.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols(); ++j) dX.at(i, j) = y.at(i, j) * (dY.at(i, j) - s);
    }
    return dX;
}

Tensor sigmoid_backward(const Tensor& dY, const Tensor& y) {
    require_same_shape(dY, y, "sigmoid_backward");
    Tensor dX = dY;
    for (std::size_t i = 0; i < y.size(); ++i) dX[i] *= y[i] * (1.0 - y[i]);
    return dX;
}

Tensor tanh_backward(const Tensor& dY, const Tensor& y) {
    require_same_shape(dY, y, "tanh_backward");
    Tensor dX = dY;
    for (std::size_t i = 0; i < y.size(); ++i) dX[i] *= 1.0 - y[i] * y[i];
    return dX;
}

Tensor leaky_relu_backward(const Tensor& dY, const Tensor& x, double slope) {
    require_same_shape(dY, x, "leaky_relu_backward");
    Tensor dX = dY;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < 0) dX[i] *= slope;
    return dX;
}

void layer_norm_rows_backward(const Tensor& dY, const Tensor& x, const Tensor& gamma,
                              Tensor& dX, Tensor& dGamma, Tensor& dBeta, double eps) {
    int n = x.cols();
    dX = Tensor(x.shape());
    dGamma = Tensor({n});
    dBeta = Tensor({n});
    for (int i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double inv = 1.0 / std::sqrt(var + eps);

        double sum_g = 0.0, sum_gx = 0.0;
        for (int j = 0; j < n; ++j) {
            double xhat = (x.at(i, j) - mean) * inv;
            double g = dY.at(i, j) * gamma[static_cast<std::size_t>(j)];
            dGamma[static_cast<std::size_t>(j)] += dY.at(i, j) * xhat;
            dBeta[static_cast<std::size_t>(j)] += dY.at(i, j);
            sum_g += g;
            sum_gx += g * xhat;
        }
        for (int j = 0; j < n; ++j) {
            double xhat = (x.at(i, j) - mean) * inv;
            double g = dY.at(i, j) * gamma[static_cast<std::size_t>(j)];
            dX.at(i, j) = inv * (g - sum_g / n - xhat * sum_gx / n);
        }
    }
}

Tensor squared_l2_backward(double dUp, const Tensor& x) {
    Tensor dX = x;
    for (std::size_t i = 0; i < x.size(); ++i) dX[i] = 2.0 * dUp * x[i];
    return dX;
}

Tensor gather_rows_backward(const Tensor& dY, const std::vector<int>& idx, int n_rows) {
    Tensor dX({n_rows, dY.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < dY.cols(); ++j) dX.at(idx[i], j) += dY.at(static_cast<int>(i), j);
    return dX;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

// Rng ----------------------------------------------------------------------

std::uint64_t Rng::mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58'476d'1ce4'e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d0'49bb'1331'11ebULL;
    z ^= z >> 31;
    return z;
}

Rng Rng::fork(std::uint64_t stream) const {
    Rng r(0);
    r.key_ = mix(key_ ^ mix(stream + 0x7f4a'7c15'9e37'79b9ULL));
    r.counter_ = 0;
    return r;
}

Rng Rng::fork(std::string_view label) const {
    // FNV-1a over the label picks the substream.
    std::uint64_t h = 0xcbf2'9ce4'8422'2325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x0000'0100'0000'01b3ULL;
    }
    return fork(h);
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

double Rng::normal() {
    // Box-Muller; offset keeps u1 strictly inside (0, 1].
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double alpha) {
    if (alpha <= 0.0) throw InputError("Rng::gamma: alpha must be positive");
    if (alpha < 1.0) {
        double u = uniform01();
        while (u <= 0.0) u = uniform01();
        return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw InputError("Rng::uniform_int: n must be positive");
    // rejection sampling removes modulo bias
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

std::vector<double> Rng::dirichlet(double alpha, int k) {
    std::vector<double> v(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& x : v) {
        x = gamma(alpha);
        sum += x;
    }
    if (sum <= 0.0) sum = 1.0;
    for (auto& x : v) x /= sum;
    return v;
}

// grad_check ----------------------------------------------------------------

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> theta,
                           std::span<const double> analytic_grad,
                           double h) {
    if (theta.size() != analytic_grad.size())
        throw InputError("grad_check: gradient length mismatch");
    std::vector<double> work(theta.begin(), theta.end());
    GradCheckReport rep;
    for (std::size_t i = 0; i < work.size(); ++i) {
        double orig = work[i];
        work[i] = orig + h;
        double fp = f(work);
        work[i] = orig - h;
        double fm = f(work);
        work[i] = orig;
        double num = (fp - fm) / (2.0 * h);
        double ana = analytic_grad[i];
        double rel = std::abs(ana - num) / std::max(1.0, std::abs(ana));
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
            rep.analytic_at_worst = ana;
            rep.numeric_at_worst = num;
        }
    }
    return rep;
}

}  // namespace sepsisfl::numcore
