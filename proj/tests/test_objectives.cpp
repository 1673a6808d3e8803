#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geomeld/objectives.hpp"

using namespace geomeld;

namespace {

// row-pair (cos, sin) planar rotations: orthogonal by construction
Tensor rotate_rows(const Tensor& x, double angle) {
    const int64_t r = x.rows(), c = x.cols();
    std::vector<double> out(static_cast<size_t>(r * c));
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j + 1 < c; j += 2) {
            const double a = x.at(i, j), b = x.at(i, j + 1);
            out[static_cast<size_t>(i * c + j)] = cs * a - sn * b;
            out[static_cast<size_t>(i * c + j + 1)] = sn * a + cs * b;
        }
        if (c % 2 == 1) out[static_cast<size_t>(i * c + c - 1)] = x.at(i, c - 1);
    }
    return Tensor::from_data(x.shape(), out);
}

Tensor unit_rows(Tensor x) {
    for (int64_t i = 0; i < x.rows(); ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < x.cols(); ++j) ss += x.at(i, j) * x.at(i, j);
        const double inv = 1.0 / std::sqrt(ss);
        for (int64_t j = 0; j < x.cols(); ++j) {
            x.data()[i * x.cols() + j] *= inv;
        }
    }
    return x;
}

}  // namespace

TEST_CASE("loss_rec_l1 closed forms and flat-loop oracle") {
    Graph g;
    Rng rng(3);
    Tensor pred = Tensor::randn({8, 6}, rng);
    Tensor same = Tensor::from_data(pred.shape(), pred.data_vec());
    std::vector<int64_t> masked = {1, 3, 4, 7};
    CHECK(loss_rec_l1(g, pred, same, masked).value() == 0.0);

    Tensor shifted = Tensor::from_data(pred.shape(), pred.data_vec());
    for (double& v : shifted.data_vec()) v += 0.37;
    CHECK(loss_rec_l1(g, pred, shifted, masked).value() == doctest::Approx(0.37).epsilon(1e-12));

    Tensor target = Tensor::randn({8, 6}, rng);
    double oracle = 0.0;
    for (int64_t i : masked) {
        for (int64_t j = 0; j < 6; ++j) oracle += std::abs(pred.at(i, j) - target.at(i, j));
    }
    oracle /= static_cast<double>(masked.size() * 6);
    CHECK(loss_rec_l1(g, pred, target, masked).value() == doctest::Approx(oracle).epsilon(1e-10));

    CHECK_THROWS_AS(loss_rec_l1(g, pred, target, {}), ConfigError);
}

TEST_CASE("loss_rec_ce closed forms") {
    Graph g;
    Tensor uniform = Tensor::full({4, 5}, 1.3);
    std::vector<int64_t> labels = {0, 1, 2, 3};
    std::vector<int64_t> masked = {0, 2};
    CHECK(loss_rec_ce(g, uniform, labels, masked).value() ==
          doctest::Approx(std::log(5.0)).epsilon(1e-9));

    Tensor sat = Tensor::zeros({4, 5});
    for (int64_t i = 0; i < 4; ++i) sat.data()[i * 5 + labels[static_cast<size_t>(i)]] = 1e5;
    CHECK(loss_rec_ce(g, sat, labels, masked).value() == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(loss_rec_ce(g, uniform, {0, 1, 2, 9}, {3}), IndexError);
}

TEST_CASE("loss_rec_ce ignores logits at visible positions") {
    Rng rng(7);
    Tensor logits = Tensor::randn({6, 4}, rng);
    std::vector<int64_t> labels = {0, 1, 2, 3, 0, 1};
    std::vector<int64_t> masked = {1, 4};
    Graph g;
    const double base = loss_rec_ce(g, logits, labels, masked).value();

    Tensor perturbed = Tensor::from_data(logits.shape(), logits.data_vec());
    for (int64_t i : {0, 2, 3, 5}) {
        for (int64_t j = 0; j < 4; ++j) perturbed.data()[i * 4 + j] += rng.normal() * 10.0;
    }
    CHECK(loss_rec_ce(g, perturbed, labels, masked).value() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("loss_mpmae weighted combination") {
    Graph g;
    std::vector<std::pair<std::string, Tensor>> parts;
    const std::vector<std::string> names = {"s2", "s1", "dem", "canopy", "dw", "esa"};
    const std::vector<double> values = {0.5, 1.25, 2.0, 0.125, 3.0, 0.75};
    const std::vector<double> weights = {1.0, 0.5, 0.25, 2.0, 0.1, 1.5};
    std::map<std::string, double> lambda;
    double oracle = 0.0;
    for (size_t i = 0; i < names.size(); ++i) {
        parts.emplace_back(names[i], Tensor::scalar(values[i]));
        lambda[names[i]] = weights[i];
        oracle += values[i] * weights[i];
    }
    CHECK(loss_mpmae(g, parts, lambda).value() == doctest::Approx(oracle).epsilon(1e-12));

    std::map<std::string, double> zeros;
    for (const auto& n : names) zeros[n] = 0.0;
    CHECK(loss_mpmae(g, parts, zeros).value() == 0.0);

    std::vector<std::pair<std::string, Tensor>> single = {{"s2", Tensor::scalar(0.5)}};
    CHECK(loss_mpmae(g, single, {{"s2", 1.0}}).value() == 0.5);

    std::map<std::string, double> extra = lambda;
    extra["thermal"] = 1.0;
    CHECK_THROWS_AS(loss_mpmae(g, parts, extra), ConfigError);
}

TEST_CASE("loss_jepa closed forms") {
    Graph g;
    Rng rng(11);
    Tensor a = Tensor::randn({4, 8}, rng);
    Tensor same = Tensor::from_data(a.shape(), a.data_vec());
    CHECK(loss_jepa(g, a, same).value() == 0.0);

    // one coordinate off by one: 1/|targets|
    Tensor b = Tensor::from_data(a.shape(), a.data_vec());
    b.data()[13] += 1.0;
    CHECK(loss_jepa(g, b, a).value() == doctest::Approx(1.0 / 4.0).epsilon(1e-12));

    // every coordinate of one token off by one: d/|targets|
    Tensor c = Tensor::from_data(a.shape(), a.data_vec());
    for (int64_t j = 0; j < 8; ++j) c.data()[2 * 8 + j] += 1.0;
    CHECK(loss_jepa(g, c, a).value() == doctest::Approx(8.0 / 4.0).epsilon(1e-12));

    CHECK_THROWS_AS(loss_jepa(g, a, Tensor::zeros({3, 8})), ContractError);
}

TEST_CASE("loss_jepa stops gradients through the target branch") {
    Rng rng(13);
    Tensor pred = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor tgt = Tensor::randn({3, 4}, rng, 1.0, true);
    Graph g;
    Tensor loss = loss_jepa(g, pred, tgt);
    g.backward(loss);
    CHECK(pred.has_grad());
    CHECK_FALSE(tgt.has_grad());
}

TEST_CASE("loss_itc closed forms") {
    Graph g;
    // B=1: single-class cross entropy is exactly zero
    Tensor v1 = Tensor::from_data({1, 4}, {1, 0, 0, 0});
    CHECK(loss_itc(g, v1, v1, 1.0).value() == 0.0);

    // B=2 orthonormal matched pairs at tau=1: ln(1 + e^-1)
    Tensor v2 = Tensor::from_data({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    Tensor t2 = Tensor::from_data({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    const double expect = std::log(1.0 + std::exp(-1.0));
    CHECK(loss_itc(g, v2, t2, 1.0).value() == doctest::Approx(expect).epsilon(1e-9));

    CHECK_THROWS_AS(loss_itc(g, v2, t2, 0.0), ConfigError);
    Tensor bad = Tensor::from_data({2, 4}, {2, 0, 0, 0, 0, 1, 0, 0});
    CHECK_THROWS_AS(loss_itc(g, bad, t2, 1.0), ContractError);
}

TEST_CASE("loss_itc batch permutation symmetry") {
    Rng rng(17);
    Tensor v = unit_rows(Tensor::randn({5, 6}, rng));
    Tensor t = unit_rows(Tensor::randn({5, 6}, rng));
    Graph g;
    const double base = loss_itc(g, v, t, 0.07).value();

    const std::vector<int64_t> perm = {3, 1, 4, 0, 2};
    Tensor vp = Tensor::zeros({5, 6});
    Tensor tp = Tensor::zeros({5, 6});
    for (size_t i = 0; i < perm.size(); ++i) {
        for (int64_t j = 0; j < 6; ++j) {
            vp.data()[static_cast<int64_t>(i) * 6 + j] = v.at(perm[i], j);
            tp.data()[static_cast<int64_t>(i) * 6 + j] = t.at(perm[i], j);
        }
    }
    CHECK(loss_itc(g, vp, tp, 0.07).value() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("loss_itc invariant under a joint rotation and nonnegative") {
    Rng rng(19);
    Tensor v = unit_rows(Tensor::randn({6, 8}, rng));
    Tensor t = unit_rows(Tensor::randn({6, 8}, rng));
    Graph g;
    const double base = loss_itc(g, v, t, 0.5).value();
    CHECK(base >= 0.0);
    const double rotated = loss_itc(g, rotate_rows(v, 0.83), rotate_rows(t, 0.83), 0.5).value();
    CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("temperature rescales similarities without reordering rows") {
    Rng rng(23);
    Tensor v = unit_rows(Tensor::randn({4, 6}, rng));
    Tensor t = unit_rows(Tensor::randn({4, 6}, rng));
    auto argmax_rows = [&](double tau) {
        Graph g;
        Tensor s = scale(g, matmul(g, v, transpose(g, t)), 1.0 / tau);
        std::vector<int64_t> out;
        for (int64_t i = 0; i < 4; ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < 4; ++j) {
                if (s.at(i, j) > s.at(i, best)) best = j;
            }
            out.push_back(best);
        }
        return out;
    };
    CHECK(argmax_rows(0.07) == argmax_rows(1.0));
    CHECK(argmax_rows(0.07) == argmax_rows(13.0));
}

TEST_CASE("loss_total combines parts and preserves the identity") {
    Graph g;
    std::vector<std::pair<std::string, Tensor>> parts = {{"s2", Tensor::scalar(1.0)}};
    std::map<std::string, double> lambda = {{"s2", 1.0}};
    TotalLoss t = loss_total(g, parts, Tensor::scalar(1.0), Tensor::scalar(1.0), 0.5, 0.4, lambda,
                             0.07);
    CHECK(t.value.value() == doctest::Approx(1.9).epsilon(1e-12));
    CHECK(t.report.identity_holds());

    TotalLoss zero = loss_total(g, parts, Tensor::scalar(2.5), Tensor::scalar(7.0), 0.0, 0.0,
                                lambda, 0.07);
    CHECK(zero.value.value() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(zero.report.identity_holds());
}

TEST_CASE("gradient of the total equals the weighted sum of part gradients") {
    Rng rng(29);
    Tensor w = Tensor::randn({3, 3}, rng, 1.0, true);
    Tensor tgt = Tensor::randn({3, 3}, rng);
    // all three parts share w, so d(total)/dw must blend part gradients
    auto total_fn = [&](Graph& g, const Tensor& x) {
        std::vector<int64_t> masked = {0, 2};
        Tensor l1 = loss_rec_l1(g, x, tgt, masked);
        Tensor sq = scale(g, sum_all(g, mul(g, x, x)), 0.1);       // jepa stand-in
        Tensor ce = softmax_cross_entropy(g, x, {0, 1, 2});        // itc stand-in
        std::vector<std::pair<std::string, Tensor>> parts = {{"s2", l1}};
        return loss_total(g, parts, sq, ce, 0.5, 0.4, {{"s2", 1.0}}, 0.07).value;
    };
    CHECK(finite_diff_check(total_fn, w) < 1e-3);
}

TEST_CASE("every objective passes the finite-difference oracle at non-kink points") {
    Rng rng(31);
    Tensor target = Tensor::randn({6, 5}, rng);
    Tensor x = Tensor::randn({6, 5}, rng, 1.0, true);
    // keep residuals away from the L1 kink
    for (int64_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x.at(i) - target.at(i)) < 1e-2) x.data()[i] += 0.05;
    }
    std::vector<int64_t> masked = {0, 2, 3};

    auto f_l1 = [&](Graph& g, const Tensor& t) { return loss_rec_l1(g, t, target, masked); };
    CHECK(finite_diff_check(f_l1, x) < 1e-3);

    auto f_ce = [&](Graph& g, const Tensor& t) {
        return loss_rec_ce(g, t, {0, 1, 2, 3, 4, 0}, masked);
    };
    CHECK(finite_diff_check(f_ce, x) < 1e-3);

    auto f_jepa = [&](Graph& g, const Tensor& t) { return loss_jepa(g, t, target); };
    CHECK(finite_diff_check(f_jepa, x) < 1e-3);

    // itc through an explicit normalization so the input is unconstrained
    Tensor other = unit_rows(Tensor::randn({6, 5}, rng));
    auto f_itc = [&](Graph& g, const Tensor& t) {
        return loss_itc(g, l2_normalize_rows(g, t), other, 0.07);
    };
    CHECK(finite_diff_check(f_itc, x) < 1e-3);
}
