#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "kpriors/adapt.hpp"
#include "kpriors/kprior.hpp"
#include "test_helpers.hpp"

using namespace kpriors;

namespace {

struct Setup {
    testutil::LogisticInstance inst;
    GlmModel base;       // arbitrary base weights
    MemorySet full_mem;  // all rows
};

Setup make_setup(Rng& rng, int n, int input_dim, int degree, double delta) {
    Setup s;
    s.inst = testutil::random_logistic(rng, n, input_dim, degree, delta);
    s.base = GlmModel{testutil::random_vec(rng, s.inst.map.output_dim()), s.inst.map,
                      Family::bernoulli_logit};
    s.full_mem = select_memorable(s.base, s.inst.data, n);
    return s;
}

KPriorSpec make_spec(const Setup& s, double tau = 1.0) {
    KPriorSpec spec;
    spec.base_weights = s.base.weights;
    spec.memory = s.full_mem;
    spec.tau = tau;
    spec.weight_div = WeightDivergence::l2_shift(s.inst.delta);
    spec.family = Family::bernoulli_logit;
    spec.feature_map_new = s.inst.map;
    return spec;
}

// Independent scalar oracle: plain loops, log/exp formulas written out.
double naive_kprior_value(const KPriorSpec& spec, const Eigen::VectorXd& w) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < spec.memory.size(); ++i) {
        const Eigen::VectorXd phi =
            features_expand(spec.feature_map_new, spec.memory.inputs.row(i).transpose());
        double f = 0.0;
        for (Eigen::Index j = 0; j < phi.size(); ++j) f += phi[j] * w[j];
        const double fstar = spec.memory.soft_logits[i];
        const double a1 = std::log(1.0 + std::exp(f));
        const double a2 = std::log(1.0 + std::exp(fstar));
        const double h2 = 1.0 / (1.0 + std::exp(-fstar));
        total += a1 - a2 - h2 * (f - fstar);
    }
    const Eigen::VectorXd base = spec.anchor();
    if (spec.weight_div.kind == WeightDivergence::Kind::l2_shift) {
        double sq = 0.0;
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            sq += (w[j] - base[j]) * (w[j] - base[j]);
        }
        total += spec.tau * 0.5 * spec.weight_div.delta * sq;
    }
    return total;
}

}  // namespace

TEST_CASE("kprior_value vanishes at the base point and reduces to the weight term") {
    Rng rng(61);
    const Setup s = make_setup(rng, 20, 2, 2, 1.5);
    const KPriorSpec spec = make_spec(s);
    CHECK(kprior_value(spec, s.base.weights) == doctest::Approx(0.0).epsilon(1e-14));

    // Empty memory, l2_shift(2), ||w - w*|| = 1 -> exactly 1.
    KPriorSpec empty = spec;
    empty.memory = MemorySet{};
    empty.weight_div = WeightDivergence::l2_shift(2.0);
    Eigen::VectorXd w = s.base.weights;
    w[0] += 1.0;
    CHECK(kprior_value(empty, w) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("kprior_value matches the naive per-point oracle") {
    Rng rng(62);
    for (int trial = 0; trial < 8; ++trial) {
        const Setup s = make_setup(rng, 10, 2, 1, 0.7);
        const KPriorSpec spec = make_spec(s, 1.3);
        const Eigen::VectorXd w = testutil::random_vec(rng, s.base.weights.size());
        CHECK(kprior_value(spec, w) == doctest::Approx(naive_kprior_value(spec, w)).epsilon(1e-10));
    }
}

TEST_CASE("kprior_grad is zero at the base point and matches finite differences") {
    Rng rng(63);
    const Setup s = make_setup(rng, 15, 2, 2, 1.0);
    const KPriorSpec spec = make_spec(s);
    CHECK(kprior_grad(spec, s.base.weights).cwiseAbs().maxCoeff() <= 1e-14);

    for (int trial = 0; trial < 6; ++trial) {
        const Eigen::VectorXd w = testutil::random_vec(rng, s.base.weights.size());
        const Eigen::VectorXd fd = testutil::fd_gradient(
            [&](const Eigen::VectorXd& v) { return kprior_value(spec, v); }, w);
        CHECK(testutil::rel_err(kprior_grad(spec, w), fd) <= 1e-6);
    }
}

TEST_CASE("full-memory gradient reconstruction holds for any base point") {
    Rng rng(64);
    for (int trial = 0; trial < 10; ++trial) {
        const Setup s = make_setup(rng, 25, 3, 1, 0.9);
        const KPriorSpec spec = make_spec(s);
        const Eigen::VectorXd grad_at_base =
            glm_gradient(s.base, s.inst.data, s.inst.delta);
        for (int k = 0; k < 5; ++k) {
            const Eigen::VectorXd w = testutil::random_vec(rng, s.base.weights.size());
            const GlmModel at_w{w, s.inst.map, Family::bernoulli_logit};
            const Eigen::VectorXd lhs = kprior_grad(spec, w) + grad_at_base;
            const Eigen::VectorXd rhs = glm_gradient(at_w, s.inst.data, s.inst.delta);
            CHECK(testutil::rel_err(lhs, rhs) <= 1e-10);
        }
    }
}

TEST_CASE("grad_reconstruction_error forms") {
    Rng rng(65);
    const Setup s = make_setup(rng, 30, 2, 2, 1.2);

    SUBCASE("full memory at a tight optimum is negligible") {
        OptimizerConfig cfg;
        cfg.grad_tol = 1e-10;
        const GlmModel opt =
            fit_glm(s.inst.map, Family::bernoulli_logit, s.inst.data, s.inst.delta, cfg);
        Setup tight = s;
        tight.base = opt;
        tight.full_mem = select_memorable(opt, s.inst.data, 30);
        const KPriorSpec spec = make_spec(tight);
        const Eigen::VectorXd w = testutil::random_vec(rng, opt.weights.size());
        const Eigen::VectorXd err =
            grad_reconstruction_error(spec, w, s.inst.data, s.inst.delta);
        CHECK(err.cwiseAbs().maxCoeff() <= 10 * cfg.grad_tol);
    }

    SUBCASE("at the base point the error is exactly the base gradient") {
        KPriorSpec spec = make_spec(s);
        spec.memory = select_memorable(s.base, s.inst.data, 7);
        const Eigen::VectorXd err =
            grad_reconstruction_error(spec, s.base.weights, s.inst.data, s.inst.delta);
        const Eigen::VectorXd base_grad = glm_gradient(s.base, s.inst.data, s.inst.delta);
        CHECK((err - base_grad).cwiseAbs().maxCoeff() <= 1e-14);
    }

    SUBCASE("matches the direct subtraction oracle") {
        for (int mem_size : {0, 5, 17, 30}) {
            KPriorSpec spec = make_spec(s);
            spec.memory = select_memorable(s.base, s.inst.data, mem_size);
            const Eigen::VectorXd w = testutil::random_vec(rng, s.base.weights.size());
            const Eigen::VectorXd err =
                grad_reconstruction_error(spec, w, s.inst.data, s.inst.delta);
            const GlmModel at_w{w, s.inst.map, Family::bernoulli_logit};
            const Eigen::VectorXd direct =
                glm_gradient(at_w, s.inst.data, s.inst.delta) - kprior_grad(spec, w);
            CHECK((err - direct).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }

    SUBCASE("memory rows must come from the data") {
        KPriorSpec spec = make_spec(s);
        spec.memory.inputs(0, 0) += 1.0;
        CHECK_THROWS_AS(grad_reconstruction_error(spec, s.base.weights, s.inst.data, s.inst.delta),
                        std::invalid_argument);
    }
}

TEST_CASE("taylor_error_estimate") {
    Rng rng(66);
    OptimizerConfig cfg;
    cfg.grad_tol = 1e-12;
    const auto inst = testutil::random_logistic(rng, 24, 2, 2, 1.0);
    const GlmModel base = fit_glm(inst.map, Family::bernoulli_logit, inst.data, inst.delta, cfg);

    SUBCASE("zero at the base point") {
        const Eigen::MatrixXd g = ggn_matrix(base, inst.data.inputs);
        CHECK(taylor_error_estimate(g, base.weights, base.weights).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("single leftover point expands by hand") {
        const Eigen::VectorXd phi =
            features_expand(inst.map, inst.data.inputs.row(3).transpose());
        const double f = phi.dot(base.weights);
        const double hp = family_eval(Family::bernoulli_logit, f).hprime;
        const Eigen::MatrixXd g = ggn_matrix(base, inst.data.inputs.row(3));
        const Eigen::VectorXd w = base.weights + testutil::random_vec(rng, phi.size(), 0.1);
        const Eigen::VectorXd expected = phi * (hp * phi.dot(w - base.weights));
        CHECK((taylor_error_estimate(g, w, base.weights) - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }

    SUBCASE("quadratic remainder shrinks at least 3x when the step halves") {
        // Memory = first half; estimate the leftover error along a direction.
        MemorySet mem = select_memorable(base, inst.data, 12);
        KPriorSpec spec;
        spec.base_weights = base.weights;
        spec.memory = mem;
        spec.weight_div = WeightDivergence::l2_shift(inst.delta);
        spec.family = Family::bernoulli_logit;
        spec.feature_map_new = inst.map;

        std::vector<Eigen::Index> leftover;
        std::set<Eigen::Index> chosen(mem.indices.begin(), mem.indices.end());
        for (Eigen::Index i = 0; i < inst.data.size(); ++i) {
            if (!chosen.count(i)) leftover.push_back(i);
        }
        const Eigen::MatrixXd g_left = ggn_matrix(base, take_rows(inst.data, leftover).inputs);

        const Eigen::VectorXd dir = testutil::random_vec(rng, base.weights.size(), 1.0);
        auto remainder = [&](double t) {
            const Eigen::VectorXd w = base.weights + t * dir;
            const Eigen::VectorXd err =
                grad_reconstruction_error(spec, w, inst.data, inst.delta);
            const Eigen::VectorXd est = taylor_error_estimate(g_left, w, base.weights);
            return (err - est).norm();
        };
        const double r1 = remainder(1e-2);
        const double r2 = remainder(5e-3);
        CHECK(r1 / r2 >= 3.0);
    }
}

TEST_CASE("weight_prior_quad") {
    Rng rng(67);
    const auto inst = testutil::random_logistic(rng, 20, 2, 1, 0.8);
    const GlmModel base{testutil::random_vec(rng, inst.map.output_dim()), inst.map,
                        Family::bernoulli_logit};
    const Eigen::MatrixXd g = ggn_matrix(base, inst.data.inputs);

    SUBCASE("zero at the base point") {
        const auto [value, grad] = weight_prior_quad(base.weights, base.weights, g, inst.delta);
        CHECK(value == 0.0);
        CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("gradient equals the taylor estimate plus the shift term") {
        const Eigen::VectorXd w = testutil::random_vec(rng, base.weights.size());
        const auto [value, grad] = weight_prior_quad(w, base.weights, g, inst.delta);
        const Eigen::VectorXd expected =
            taylor_error_estimate(g, w, base.weights) + inst.delta * (w - base.weights);
        CHECK((grad - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }

    SUBCASE("gradient matches finite differences of the value") {
        const Eigen::VectorXd w = testutil::random_vec(rng, base.weights.size());
        const Eigen::VectorXd fd = testutil::fd_gradient(
            [&](const Eigen::VectorXd& v) {
                return weight_prior_quad(v, base.weights, g, inst.delta).first;
            },
            w);
        CHECK(testutil::rel_err(weight_prior_quad(w, base.weights, g, inst.delta).second, fd) <=
              1e-7);
    }
}

TEST_CASE("svd_basis") {
    SUBCASE("diagonal matrix") {
        Eigen::MatrixXd phi(2, 2);
        phi << 3, 0, 0, 2;
        const SvdBasis basis = svd_basis(phi);
        REQUIRE(basis.rank == 2);
        CHECK(basis.S[0] == doctest::Approx(3.0));
        CHECK(basis.S[1] == doctest::Approx(2.0));
    }

    SUBCASE("reconstruction and orthonormality") {
        Rng rng(68);
        const Eigen::MatrixXd phi = testutil::random_mat(rng, 9, 4);
        const SvdBasis basis = svd_basis(phi);
        const Eigen::MatrixXd rebuilt =
            basis.U * basis.S.asDiagonal() * basis.V.transpose();
        CHECK((phi.transpose() - rebuilt).norm() <= 1e-8 * phi.norm());
        CHECK((basis.U.transpose() * basis.U -
               Eigen::MatrixXd::Identity(basis.rank, basis.rank))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-10);
        CHECK((basis.V.transpose() * basis.V -
               Eigen::MatrixXd::Identity(basis.rank, basis.rank))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-10);
    }

    SUBCASE("rank-1 outer product") {
        Rng rng(69);
        const Eigen::VectorXd a = testutil::random_vec(rng, 6);
        const Eigen::VectorXd b = testutil::random_vec(rng, 3);
        const Eigen::MatrixXd phi = a * b.transpose();
        CHECK(svd_basis(phi).rank == 1);
    }
}

TEST_CASE("optimal K-prior gradient and closed-form error") {
    Rng rng(70);
    const int n = 8, p = 4;
    const Eigen::MatrixXd phi = testutil::random_mat(rng, n, p);
    const Eigen::VectorXd w_star = testutil::random_vec(rng, p);
    const Eigen::VectorXd w = testutil::random_vec(rng, p);
    const double delta = 0.6;
    const SvdBasis basis = svd_basis(phi);
    REQUIRE(basis.rank == p);

    // d_x recomputed independently.
    Eigen::VectorXd d_x(n);
    for (int i = 0; i < n; ++i) {
        const double fw = phi.row(i).dot(w);
        const double fs = phi.row(i).dot(w_star);
        d_x[i] = 1.0 / (1.0 + std::exp(-fw)) - 1.0 / (1.0 + std::exp(-fs));
    }

    SUBCASE("m = rank recovers the exact full-memory gradient") {
        const Eigen::VectorXd grad =
            optimal_kprior_grad(basis, basis.rank, w, w_star, delta, phi, Family::bernoulli_logit);
        const Eigen::VectorXd exact = phi.transpose() * d_x + delta * (w - w_star);
        CHECK(testutil::rel_err(grad, exact) <= 1e-10);
    }

    SUBCASE("m = 0 leaves only the weight shift") {
        const Eigen::VectorXd grad =
            optimal_kprior_grad(basis, 0, w, w_star, delta, phi, Family::bernoulli_logit);
        CHECK((grad - delta * (w - w_star)).cwiseAbs().maxCoeff() <= 1e-14);
    }

    SUBCASE("m = 2 matches the dense truncated multiplication oracle") {
        Eigen::MatrixXd u2 = Eigen::MatrixXd::Zero(p, 2);
        Eigen::MatrixXd v2 = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(2, 2);
        for (int j = 0; j < 2; ++j) {
            u2.col(j) = basis.U.col(j);
            v2.col(j) = basis.V.col(j);
            s2(j, j) = basis.S[j];
        }
        const Eigen::VectorXd expected = u2 * s2 * v2.transpose() * d_x + delta * (w - w_star);
        const Eigen::VectorXd grad =
            optimal_kprior_grad(basis, 2, w, w_star, delta, phi, Family::bernoulli_logit);
        CHECK((grad - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }

    SUBCASE("error norm equals the truncated-gradient distance, monotone in m") {
        double prev = std::numeric_limits<double>::infinity();
        for (Eigen::Index m = 0; m <= basis.rank; ++m) {
            const double closed =
                optimal_error_norm(basis, m, w, w_star, phi, Family::bernoulli_logit);
            const Eigen::VectorXd g_full = optimal_kprior_grad(basis, basis.rank, w, w_star, delta,
                                                               phi, Family::bernoulli_logit);
            const Eigen::VectorXd g_m =
                optimal_kprior_grad(basis, m, w, w_star, delta, phi, Family::bernoulli_logit);
            CHECK(closed == doctest::Approx((g_full - g_m).norm()).epsilon(1e-10));
            CHECK(closed <= prev + 1e-12);
            prev = closed;
        }
        CHECK(optimal_error_norm(basis, basis.rank, w, w_star, phi, Family::bernoulli_logit) <=
              1e-12);
    }

    SUBCASE("m beyond the rank is rejected") {
        CHECK_THROWS_AS(
            optimal_kprior_grad(basis, basis.rank + 1, w, w_star, delta, phi,
                                Family::bernoulli_logit),
            std::invalid_argument);
        CHECK_THROWS_AS(
            optimal_error_norm(basis, basis.rank + 1, w, w_star, phi, Family::bernoulli_logit),
            std::invalid_argument);
    }

    SUBCASE("beta diagnostic reproduces the factored gradient when defined") {
        const Eigen::VectorXd beta = optimal_beta(basis, w, w_star, phi, Family::bernoulli_logit);
        Eigen::VectorXd rebuilt = Eigen::VectorXd::Zero(p);
        for (Eigen::Index j = 0; j < basis.rank; ++j) {
            const double du = 1.0 / (1.0 + std::exp(-basis.U.col(j).dot(w))) -
                              1.0 / (1.0 + std::exp(-basis.U.col(j).dot(w_star)));
            rebuilt += beta[j] * basis.U.col(j) * du;
        }
        CHECK((rebuilt - phi.transpose() * d_x).cwiseAbs().maxCoeff() <= 1e-8);

        // Singular D_u: w = w* zeroes every diagonal entry.
        CHECK_THROWS_AS(optimal_beta(basis, w_star, w_star, phi, Family::bernoulli_logit),
                        std::runtime_error);
    }
}

TEST_CASE("two-generator weight divergence") {
    Rng rng(71);
    const Eigen::VectorXd w_star = testutil::random_vec(rng, 5);
    const Eigen::VectorXd w = testutil::random_vec(rng, 5);

    SUBCASE("gamma = delta reduces to the l2 shift exactly") {
        const WeightDivergence two = WeightDivergence::two_generator(1.7, 1.7);
        const WeightDivergence shift = WeightDivergence::l2_shift(1.7);
        CHECK(two.value(w, w_star) == doctest::Approx(shift.value(w, w_star)).epsilon(1e-12));
        CHECK((two.grad(w, w_star) - shift.grad(w, w_star)).cwiseAbs().maxCoeff() <= 1e-12);
    }

    SUBCASE("gradient is grad G(w) - grad R(w*)") {
        const double gamma = 0.4, delta_old = 2.3;
        const WeightDivergence two = WeightDivergence::two_generator(gamma, delta_old);
        const Eigen::VectorXd expected = gamma * w - delta_old * w_star;
        CHECK((two.grad(w, w_star) - expected).cwiseAbs().maxCoeff() <= 1e-14);
        const Eigen::VectorXd fd = testutil::fd_gradient(
            [&](const Eigen::VectorXd& v) { return two.value(v, w_star); }, w);
        CHECK(testutil::rel_err(two.grad(w, w_star), fd) <= 1e-6);
    }

    SUBCASE("negative coefficients are rejected") {
        CHECK_THROWS_AS(WeightDivergence::two_generator(-1.0, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(WeightDivergence::l2_shift(-0.1), std::invalid_argument);
    }
}

TEST_CASE("kprior dimension checks") {
    Rng rng(72);
    const Setup s = make_setup(rng, 10, 2, 1, 1.0);
    const KPriorSpec spec = make_spec(s);
    CHECK_THROWS_AS(kprior_value(spec, Eigen::VectorXd::Zero(spec.feature_map_new.output_dim() + 1)),
                    std::invalid_argument);
}
