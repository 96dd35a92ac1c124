// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "common/error.hpp"
#include "common/random.hpp"
#include "numerics/ops.hpp"
#include "support/gradcheck.hpp"

using namespace m2a;
using namespace m2a::num;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data()) x = rng.uniform(-scale, scale);
    return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

Tensor naive_kron(const Tensor& c, const Tensor& d) {
    Tensor out = Tensor::zeros({c.rows() * d.rows(), c.cols() * d.cols()});
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.cols(); ++j)
            for (std::size_t k = 0; k < d.rows(); ++k)
                for (std::size_t l = 0; l < d.cols(); ++l)
                    out.at(i * d.rows() + k, j * d.cols() + l) = c.at(i, j) * d.at(k, l);
    return out;
}

double naive_kl(const Tensor& p, const Tensor& q) {
    double total = 0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double zp = 0, zq = 0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            zp += std::exp(p.at(r, c));
            zq += std::exp(q.at(r, c));
        }
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double pp = std::exp(p.at(r, c)) / zp;
            const double qq = std::exp(q.at(r, c)) / zq;
            total += pp * std::log(pp / qq);
        }
    }
    return total / static_cast<double>(p.rows());
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("tensor construction validates shape and values") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
    const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.at(1, 2) == 6);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
    CHECK_THROWS_AS(m.item(), ShapeError);
    CHECK_THROWS_AS(m.reshaped({4}), ShapeError);
    CHECK(m.reshaped({3, 2}).at(2, 1) == 6);
}

TEST_CASE("matmul and transpose agree with the triple loop") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 1 + rng.below(6), k = 1 + rng.below(6), m = 1 + rng.below(6);
        const Tensor a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng);
        CHECK(max_relative_difference(matmul(a, b), naive_matmul(a, b)) < 1e-14);
        const Tensor at = transpose(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) CHECK(at.at(j, i) == a.at(i, j));
    }
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("kron matches the definition and kron_apply avoids materializing it") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const std::size_t p = 1 + rng.below(4), q = 1 + rng.below(4), r = 1 + rng.below(4), s = 1 + rng.below(4);
        const Tensor c = random_tensor({p, q}, rng), d = random_tensor({r, s}, rng);
        const Tensor k = kron(c, d);
        CHECK(k == naive_kron(c, d));
        const Tensor x = random_tensor({1 + rng.below(5), p * r}, rng);
        CHECK(max_relative_difference(kron_apply(c, d, x), naive_matmul(x, k)) < 1e-12);
    }
    CHECK_THROWS_AS(kron_apply(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}), Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    const Tensor z = Tensor::matrix({{1000, 1001, 999}, {-5, 0, 5}});
    const Tensor p = softmax_rows(z);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += p.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    const Tensor lp = log_softmax_rows(z);
    CHECK(std::exp(lp.at(0, 1)) == doctest::Approx(p.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("kl divergence matches the direct formula, is zero on identical inputs and non-negative") {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        const Tensor p = random_tensor({3, 5}, rng, 3.0), q = random_tensor({3, 5}, rng, 3.0);
        Tape tape;
        const double kl = kl_divergence(tape.constant(p), tape.constant(q)).value().item();
        CHECK(kl == doctest::Approx(naive_kl(p, q)).epsilon(1e-12));
        CHECK(kl >= 0.0);
        CHECK(kl_divergence(tape.constant(p), tape.constant(p)).value().item() == 0.0);
    }
}

TEST_CASE("op gradients match central differences") {
    Rng rng(17);
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
    const Tensor bias = random_tensor({4}, rng);

    auto weighted = [&](Var v) {
        Tape& t = *v.tape;
        Tensor proj = Tensor::zeros(v.shape());
        for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = std::sin(1.0 + static_cast<double>(i));
        return sum(mul(v, t.constant(proj)));
    };

    SUBCASE("matmul") {
        auto r = testing::check_inputs([&](Tape&, const std::vector<Var>& v) { return weighted(matmul(v[0], v[1])); },
                                       {a, b});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("elementwise and bias") {
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) {
                return weighted(add_bias(scale(sub(mul(v[0], v[1]), add(v[0], v[1])), 0.7), v[2]));
            },
            {a, c, bias});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("activations") {
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) { return add(weighted(gelu(v[0])), weighted(relu(v[1]))); },
            {a, c});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("layer norm") {
        const Tensor g = random_tensor({4}, rng), be = random_tensor({4}, rng);
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) { return weighted(layer_norm(v[0], v[1], v[2])); }, {a, g, be});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("softmax, causal softmax and log softmax") {
        const Tensor sq = random_tensor({4, 4}, rng, 2.0);
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) {
                Tape& t = *v[0].tape;
                Tensor proj = Tensor::zeros({4, 4});
                for (std::size_t i = 0; i < 16; ++i) proj[i] = std::cos(static_cast<double>(i));
                const Var pc = t.constant(proj);
                return add(add(sum(mul(softmax_rows(v[0]), pc)), sum(mul(softmax_rows(v[0], true), pc))),
                           sum(mul(log_softmax_rows(v[0]), pc)));
            },
            {sq});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("cross entropy with indices and distributions") {
        const std::vector<int> targets{1, 0, 3};
        Tensor y = Tensor::zeros({3, 4});
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t k = 0; k < 4; ++k) y.at(r, k) = 0.25;
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) {
                return add(cross_entropy(v[0], targets), cross_entropy(v[0], y));
            },
            {a});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("kl divergence in both arguments") {
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) { return kl_divergence(v[0], v[1]); }, {a, c});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("kron and kron_apply") {
        const Tensor kc = random_tensor({2, 3}, rng), kd = random_tensor({2, 2}, rng), x = random_tensor({3, 4}, rng);
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) {
                return add(weighted(kron_apply(v[0], v[1], v[2])),
                           sum(mul(kron(v[0], v[1]), kron(v[0], v[1]))));
            },
            {kc, kd, x});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
    SUBCASE("structural ops") {
        const std::vector<int> ids{2, 0, 2};
        auto r = testing::check_inputs(
            [&](Tape&, const std::vector<Var>& v) {
                const Var e = embedding(v[0], ids);
                const Var parts[] = {slice_rows(v[0], 1, 2), gather_rows(v[0], ids)};
                const Var cols[] = {slice_cols(v[0], 0, 2), slice_cols(v[0], 2, 2)};
                return add(add(weighted(e), sum(mul(concat_rows(parts), concat_rows(parts)))),
                           add(mean(concat_cols(cols)), sum(transpose(reshape(v[0], {4, 3})))));
            },
            {a});
        CHECK_MESSAGE(r.max_error < kGradTol, r.worst);
    }
}

TEST_CASE("detach blocks gradients and dropout rescales kept units") {
    Tape tape;
    const Var x = tape.variable(Tensor::matrix({{1, 2}, {3, 4}}));
    tape.backward(sum(mul(detach(x), x)));
    CHECK(tape.grad(x) == Tensor::matrix({{1, 2}, {3, 4}}));

    Tape t2;
    const Var y = t2.variable(Tensor::filled({100, 100}, 1.0));
    const Var d = dropout(y, 0.25, 9);
    double kept = 0;
    for (double v : d.value().values()) {
        if (v != 0.0) {
            CHECK(v == doctest::Approx(1.0 / 0.75));
            kept += 1;
        }
    }
    CHECK(kept / 10000.0 == doctest::Approx(0.75).epsilon(0.03));
    CHECK(dropout(y, 0.0, 1).id == y.id);
}

TEST_CASE("parameters accumulate gradients across sweeps and frozen ones stay constant") {
    Parameter p("w", Tensor::matrix({{2.0}}));
    Parameter q("frozen", Tensor::matrix({{3.0}}));
    q.trainable = false;
    for (int i = 0; i < 2; ++i) {
        Tape tape;
        tape.backward(sum(mul(tape.param(p), tape.param(q))));
    }
    CHECK(p.has_grad);
    CHECK(p.grad[0] == 6.0);
    CHECK_FALSE(q.has_grad);
    p.zero_grad();
    CHECK_FALSE(p.has_grad);
}

TEST_CASE("backward needs a scalar and shape errors name both operands") {
    Tape tape;
    const Var a = tape.variable(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(tape.backward(a), ShapeError);
    try {
        add(a, tape.variable(Tensor::zeros({3, 2})));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("finite checks flag overflow on the tape") {
    set_finite_checks(true);
    Tape tape;
    const Var big = tape.variable(Tensor::matrix({{1e308}}));
    CHECK_THROWS_AS(scale(big, 10.0), NumericError);
    set_finite_checks(false);
}
