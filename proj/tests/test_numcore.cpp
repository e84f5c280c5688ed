#include <cmath>
#include <vector>

#include "doctest.h"
#include "sepsisfl/numcore.hpp"
#include "support.hpp"

using namespace sepsisfl;
using numcore::Rng;
using numcore::Tensor;
using testsupport::random_tensor;

TEST_SUITE_BEGIN("numcore");

TEST_CASE("softmax symmetric two-way split") {
    Tensor x({1, 2});
    Tensor y = numcore::softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax analytic ln2 case") {
    Tensor x({1, 2});
    x.at(0, 0) = std::log(2.0);
    Tensor y = numcore::softmax_rows(x);
    CHECK(std::abs(y.at(0, 0) - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(y.at(0, 1) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("softmax matches naive exp/sum oracle") {
    Rng rng(11);
    Tensor x = random_tensor({5, 7}, rng, 2.0);
    Tensor y = numcore::softmax_rows(x);
    for (int i = 0; i < 5; ++i) {
        // independent naive route: exp then divide by the row sum
        double denom = 0.0;
        for (int j = 0; j < 7; ++j) denom += std::exp(x.at(i, j));
        for (int j = 0; j < 7; ++j)
            CHECK(std::abs(y.at(i, j) - std::exp(x.at(i, j)) / denom) < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one even at large magnitudes") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, 1e3);
        Tensor y = numcore::softmax_rows(x);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) {
                CHECK(y.at(i, j) >= 0.0);
                s += y.at(i, j);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("grad_check analytic quadratic and constant") {
    std::vector<double> theta = {3.0};
    auto quad = [](std::span<const double> x) { return x[0] * x[0]; };
    std::vector<double> analytic = {6.0};
    auto rep = numcore::grad_check(quad, theta, analytic);
    CHECK(rep.max_rel_err < 1e-6);

    auto constant = [](std::span<const double>) { return 4.2; };
    std::vector<double> zero = {0.0};
    rep = numcore::grad_check(constant, theta, zero);
    CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("rng determinism and fork independence") {
    Rng a(99);
    Rng b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng root(5);
    Rng f1 = root.fork("alpha");
    Rng f2 = root.fork("beta");
    Rng f1b = root.fork("alpha");
    CHECK(f1.next_u64() == f1b.next_u64());
    CHECK(f1.next_u64() != f2.next_u64());

    // draws stay in range and are well spread
    Rng u(7);
    for (int i = 0; i < 1000; ++i) {
        double v = u.uniform01();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

namespace {

// generic finite-difference audit of one op's input gradient: scalar loss
// L = sum(op(X) .* R) with fixed random R
template <typename Fwd, typename Bwd>
void check_unary_grad(Fwd fwd, Bwd bwd, std::vector<int> shape, Rng& rng, double tol = 1e-4) {
    Tensor x = random_tensor(shape, rng);
    Tensor r = random_tensor(shape, rng);
    Tensor y = fwd(x);
    Tensor dY = r;
    Tensor dX = bwd(dY, x, y);

    auto f = [&](std::span<const double> flat) {
        Tensor xx(shape, std::vector<double>(flat.begin(), flat.end()));
        Tensor yy = fwd(xx);
        double s = 0.0;
        for (std::size_t i = 0; i < yy.size(); ++i) s += yy[i] * r[i];
        return s;
    };
    std::vector<double> xv(x.span().begin(), x.span().end());
    std::vector<double> gv(dX.span().begin(), dX.span().end());
    auto rep = numcore::grad_check(f, xv, gv);
    CHECK(rep.max_rel_err < tol);
}

}  // namespace

TEST_CASE("op backward passes agree with finite differences") {
    Rng rng(31);
    int instances = 0;
    for (int trial = 0; trial < 15; ++trial) {
        check_unary_grad([](const Tensor& x) { return numcore::softmax_rows(x); },
                         [](const Tensor& dY, const Tensor&, const Tensor& y) {
                             return numcore::softmax_rows_backward(dY, y);
                         },
                         {3, 4}, rng);
        check_unary_grad([](const Tensor& x) { return numcore::sigmoid(x); },
                         [](const Tensor& dY, const Tensor&, const Tensor& y) {
                             return numcore::sigmoid_backward(dY, y);
                         },
                         {2, 5}, rng);
        check_unary_grad([](const Tensor& x) { return numcore::tanh_t(x); },
                         [](const Tensor& dY, const Tensor&, const Tensor& y) {
                             return numcore::tanh_backward(dY, y);
                         },
                         {2, 5}, rng);
        check_unary_grad([](const Tensor& x) { return numcore::leaky_relu(x, 0.2); },
                         [](const Tensor& dY, const Tensor& x, const Tensor&) {
                             return numcore::leaky_relu_backward(dY, x, 0.2);
                         },
                         {4, 4}, rng);
        instances += 4;

        // matmul: both input gradients
        {
            Tensor a = random_tensor({3, 4}, rng);
            Tensor b = random_tensor({4, 2}, rng);
            Tensor r = random_tensor({3, 2}, rng);
            Tensor dA({3, 4}), dB({4, 2});
            numcore::matmul_backward(r, a, b, dA, dB);
            auto fa = [&](std::span<const double> flat) {
                Tensor aa({3, 4}, std::vector<double>(flat.begin(), flat.end()));
                Tensor y = numcore::matmul(aa, b);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
                return s;
            };
            std::vector<double> av(a.span().begin(), a.span().end());
            std::vector<double> gav(dA.span().begin(), dA.span().end());
            CHECK(numcore::grad_check(fa, av, gav).max_rel_err < 1e-4);
            auto fb = [&](std::span<const double> flat) {
                Tensor bb({4, 2}, std::vector<double>(flat.begin(), flat.end()));
                Tensor y = numcore::matmul(a, bb);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
                return s;
            };
            std::vector<double> bv(b.span().begin(), b.span().end());
            std::vector<double> gbv(dB.span().begin(), dB.span().end());
            CHECK(numcore::grad_check(fb, bv, gbv).max_rel_err < 1e-4);
            instances += 2;
        }

        // layer norm: x, gamma, beta gradients
        {
            Tensor x = random_tensor({3, 6}, rng);
            Tensor gamma = random_tensor({6}, rng);
            Tensor beta = random_tensor({6}, rng);
            Tensor r = random_tensor({3, 6}, rng);
            Tensor dX({3, 6}), dG({6}), dB({6});
            numcore::layer_norm_rows_backward(r, x, gamma, dX, dG, dB);
            auto fx = [&](std::span<const double> flat) {
                Tensor xx({3, 6}, std::vector<double>(flat.begin(), flat.end()));
                Tensor y = numcore::layer_norm_rows(xx, gamma, beta);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
                return s;
            };
            std::vector<double> xv(x.span().begin(), x.span().end());
            std::vector<double> gxv(dX.span().begin(), dX.span().end());
            CHECK(numcore::grad_check(fx, xv, gxv).max_rel_err < 1e-4);
            auto fg = [&](std::span<const double> flat) {
                Tensor gg({6}, std::vector<double>(flat.begin(), flat.end()));
                Tensor y = numcore::layer_norm_rows(x, gg, beta);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
                return s;
            };
            std::vector<double> gv(gamma.span().begin(), gamma.span().end());
            std::vector<double> ggv(dG.span().begin(), dG.span().end());
            CHECK(numcore::grad_check(fg, gv, ggv).max_rel_err < 1e-4);
            instances += 2;
        }

        // squared L2 and gather
        {
            Tensor x = random_tensor({8}, rng);
            Tensor g = numcore::squared_l2_backward(1.0, x);
            auto f = [&](std::span<const double> flat) {
                Tensor xx({8}, std::vector<double>(flat.begin(), flat.end()));
                return numcore::squared_l2(xx);
            };
            std::vector<double> xv(x.span().begin(), x.span().end());
            std::vector<double> gv(g.span().begin(), g.span().end());
            CHECK(numcore::grad_check(f, xv, gv).max_rel_err < 1e-4);

            Tensor m = random_tensor({5, 3}, rng);
            std::vector<int> idx = {4, 0, 2, 2};
            Tensor r = random_tensor({4, 3}, rng);
            Tensor dM = numcore::gather_rows_backward(r, idx, 5);
            auto fm = [&](std::span<const double> flat) {
                Tensor mm({5, 3}, std::vector<double>(flat.begin(), flat.end()));
                Tensor y = numcore::gather_rows(mm, idx);
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
                return s;
            };
            std::vector<double> mv(m.span().begin(), m.span().end());
            std::vector<double> gmv(dM.span().begin(), dM.span().end());
            CHECK(numcore::grad_check(fm, mv, gmv).max_rel_err < 1e-4);
            instances += 2;
        }
    }
    CHECK(instances >= 100);
}

TEST_CASE("tensor invariants and bounds checks") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(numcore::gather_rows(t, {2}), LookupError);

    // transposed-operand products agree with explicit transpose
    Rng rng(41);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor nt = numcore::matmul_nt(a, b);
    Tensor ref = numcore::matmul(a, numcore::transpose(b));
    REQUIRE(nt.size() == ref.size());
    for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt[i] == doctest::Approx(ref[i]).epsilon(1e-14));

    Tensor c = random_tensor({3, 2}, rng);
    Tensor d = random_tensor({3, 5}, rng);
    Tensor tn = numcore::matmul_tn(c, d);
    Tensor ref2 = numcore::matmul(numcore::transpose(c), d);
    REQUIRE(tn.size() == ref2.size());
    for (std::size_t i = 0; i < tn.size(); ++i) CHECK(tn[i] == doctest::Approx(ref2[i]).epsilon(1e-14));
}

TEST_SUITE_END();
