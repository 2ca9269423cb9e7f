#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "kpriors/mlp.hpp"
#include "test_helpers.hpp"

using namespace kpriors;

namespace {

MlpSpec small_spec(OutputKind out, Activation act, int classes = 3) {
    return MlpSpec{{4, 6, out == OutputKind::softmax ? classes : 1}, act, out};
}

LabeledData random_batch(Rng& rng, const MlpSpec& spec, int n) {
    LabeledData data;
    data.inputs = testutil::random_mat(rng, n, spec.input_dim());
    data.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        data.labels[i] = spec.output == OutputKind::softmax
                             ? static_cast<double>(rng.below(
                                   static_cast<std::uint64_t>(spec.output_dim())))
                             : static_cast<double>(rng.below(2));
    }
    return data;
}

// Scalar-by-scalar forward oracle: nested loops, no Eigen products.
Eigen::VectorXd naive_forward(const MlpParams& p, const MlpSpec& spec, const Eigen::VectorXd& x) {
    std::vector<double> a(x.data(), x.data() + x.size());
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& w = p.weights[static_cast<std::size_t>(l)];
        const auto& b = p.biases[static_cast<std::size_t>(l)];
        std::vector<double> next(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            double z = b[i];
            for (Eigen::Index j = 0; j < w.cols(); ++j) z += w(i, j) * a[static_cast<std::size_t>(j)];
            if (l + 1 < spec.num_layers()) {
                next[static_cast<std::size_t>(i)] =
                    spec.activation == Activation::relu ? std::max(z, 0.0) : std::tanh(z);
            } else {
                next[static_cast<std::size_t>(i)] = z;
            }
        }
        a = std::move(next);
    }
    return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

// For relu finite differences: reject parameter draws that put any
// pre-activation near a kink.
bool near_kink(const MlpParams& p, const MlpSpec& spec, const Eigen::MatrixXd& inputs) {
    if (spec.activation != Activation::relu) return false;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        Eigen::VectorXd a = inputs.row(i).transpose();
        for (int l = 0; l < spec.num_layers(); ++l) {
            const Eigen::VectorXd z = p.weights[static_cast<std::size_t>(l)] * a +
                                      p.biases[static_cast<std::size_t>(l)];
            if (l + 1 < spec.num_layers()) {
                if (z.cwiseAbs().minCoeff() < 1e-3) return true;
                a = z.cwiseMax(0.0);
            }
        }
    }
    return false;
}

}  // namespace

TEST_CASE("flatten and unflatten are inverse") {
    const MlpSpec spec{{3, 5, 4, 2}, Activation::tanh_act, OutputKind::softmax};
    const MlpParams p = mlp_init(spec, 123);
    const Eigen::VectorXd flat = p.flatten();
    REQUIRE(flat.size() == spec.param_count());
    const MlpParams back = MlpParams::unflatten(spec, flat);
    CHECK(back.flatten() == flat);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        CHECK(back.weights[l] == p.weights[l]);
        CHECK(back.biases[l] == p.biases[l]);
    }
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(MlpSpec({4, 1}, Activation::relu, OutputKind::sigmoid_scalar).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(MlpSpec({4, 5, 2}, Activation::relu, OutputKind::sigmoid_scalar).validate(),
                    std::invalid_argument);
    CHECK_THROWS_AS(MlpSpec({4, 5, 1}, Activation::relu, OutputKind::softmax).validate(),
                    std::invalid_argument);
}

TEST_CASE("zero parameters produce zero logits") {
    const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::relu);
    MlpParams p = mlp_init(spec, 1);
    for (auto& w : p.weights) w.setZero();
    for (auto& b : p.biases) b.setZero();
    Rng rng(2);
    const Eigen::VectorXd x = testutil::random_vec(rng, spec.input_dim());
    CHECK(mlp_forward(p, spec, x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches the per-neuron oracle") {
    Rng rng(81);
    for (Activation act : {Activation::tanh_act, Activation::relu}) {
        const MlpSpec spec{{3, 7, 5, 2}, act, OutputKind::softmax};
        const MlpParams p = mlp_init(spec, rng.next_u64());
        for (int trial = 0; trial < 5; ++trial) {
            const Eigen::VectorXd x = testutil::random_vec(rng, spec.input_dim());
            const Eigen::VectorXd got = mlp_forward(p, spec, x);
            const Eigen::VectorXd expected = naive_forward(p, spec, x);
            CHECK((got - expected).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("bias-free relu stacks are positively homogeneous") {
    Rng rng(82);
    const MlpSpec spec{{3, 6, 4, 1}, Activation::relu, OutputKind::sigmoid_scalar};
    MlpParams p = mlp_init(spec, 7);
    for (auto& b : p.biases) b.setZero();
    const Eigen::VectorXd x = testutil::random_vec(rng, 3);
    const Eigen::VectorXd f1 = mlp_forward(p, spec, x);
    const Eigen::VectorXd f2 = mlp_forward(p, spec, (2.0 * x).eval());
    CHECK((f2 - 2.0 * f1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("softmax rows sum to one for the temperature sweep") {
    Rng rng(83);
    for (double t : {1.0, 5.0, 10.0, 20.0}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Eigen::VectorXd f = testutil::random_vec(rng, 6, 8.0);
            const Eigen::VectorXd p = softmax((f / t).eval());
            CHECK(std::abs(p.sum() - 1.0) <= 1e-10);
            CHECK(p.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("mlp_loss_grad validates its arguments") {
    Rng rng(84);
    const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
    const MlpParams p = mlp_init(spec, 3);
    const LabeledData data = random_batch(rng, spec, 4);
    const Eigen::MatrixXd teacher = mlp_forward_batch(p, spec, data.inputs);
    CHECK_THROWS_AS(mlp_loss_grad(p, spec, data, SoftTargets{teacher, 0.0}, 0.5, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(mlp_loss_grad(p, spec, data, SoftTargets{teacher, 1.0}, 1.5, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(mlp_loss_grad(p, spec, data, std::nullopt, 0.5, 0.0), std::invalid_argument);
}

TEST_CASE("lambda = 1 reduces to the pure data gradient") {
    Rng rng(85);
    const MlpSpec spec = small_spec(OutputKind::softmax, Activation::tanh_act);
    const MlpParams p = mlp_init(spec, 11);
    const MlpParams teacher = mlp_init(spec, 12);
    const LabeledData data = random_batch(rng, spec, 6);
    const Eigen::MatrixXd t_logits = mlp_forward_batch(teacher, spec, data.inputs);
    const Eigen::VectorXd with_soft =
        mlp_loss_grad(p, spec, data, SoftTargets{t_logits, 3.0}, 1.0, 0.0).second;
    const Eigen::VectorXd data_only = mlp_loss_grad(p, spec, data, std::nullopt, 1.0, 0.0).second;
    CHECK((with_soft - data_only).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("teacher equal to student zeroes the soft gradient") {
    Rng rng(86);
    const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
    const MlpParams p = mlp_init(spec, 21);
    const LabeledData data = random_batch(rng, spec, 5);
    const Eigen::MatrixXd self_logits = mlp_forward_batch(p, spec, data.inputs);
    // The soft LOSS keeps its w-independent entropy constant, so only the
    // gradient vanishes at teacher = student.
    const Eigen::VectorXd grad =
        mlp_loss_grad(p, spec, data, SoftTargets{self_logits, 1.0}, 0.0, 0.0).second;
    CHECK(grad.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mlp gradients pass finite-difference checks") {
    Rng rng(87);
    int done = 0;
    while (done < 20) {
        const bool use_softmax = rng.below(2) == 0;
        const bool use_relu = rng.below(2) == 0;
        const MlpSpec spec{{4, static_cast<int>(3 + rng.below(4)), use_softmax ? 3 : 1},
                           use_relu ? Activation::relu : Activation::tanh_act,
                           use_softmax ? OutputKind::softmax : OutputKind::sigmoid_scalar};
        const MlpParams p = mlp_init(spec, rng.next_u64());
        const LabeledData data = random_batch(rng, spec, 5);
        if (near_kink(p, spec, data.inputs)) continue;

        const double lambda = 0.25 * static_cast<double>(rng.below(5));
        const double temperature = 1.0 + static_cast<double>(rng.below(3));
        const double delta = 0.1 * static_cast<double>(rng.below(3));
        const MlpParams teacher = mlp_init(spec, rng.next_u64());
        const SoftTargets targets{mlp_forward_batch(teacher, spec, data.inputs), temperature};

        const Eigen::VectorXd flat = p.flatten();
        const Eigen::VectorXd grad = mlp_loss_grad(p, spec, data, targets, lambda, delta).second;
        const Eigen::VectorXd fd = testutil::fd_gradient(
            [&](const Eigen::VectorXd& v) {
                return mlp_loss_grad(MlpParams::unflatten(spec, v), spec, data, targets, lambda,
                                     delta)
                    .first;
            },
            flat, 1e-5);
        CHECK(testutil::rel_err(grad, fd) <= 1e-5);
        ++done;
    }
}

TEST_CASE("kd leftover identity") {
    Rng rng(88);

    SUBCASE("holds on random instances") {
        for (int trial = 0; trial < 20; ++trial) {
            const bool use_softmax = rng.below(2) == 0;
            const MlpSpec spec{{8, 16, 8, use_softmax ? 3 : 1}, Activation::tanh_act,
                               use_softmax ? OutputKind::softmax : OutputKind::sigmoid_scalar};
            const MlpParams student = mlp_init(spec, rng.next_u64());
            const MlpParams teacher = mlp_init(spec, rng.next_u64());
            const LabeledData data = random_batch(rng, spec, 6);
            const double lambda = rng.uniform();
            CHECK(kd_leftover_identity_check(student, teacher, spec, data, lambda) <= 1e-8);
        }
    }

    SUBCASE("lambda = 1 collapses both routes to the data gradient") {
        const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
        const MlpParams student = mlp_init(spec, 31);
        const MlpParams teacher = mlp_init(spec, 32);
        const LabeledData data = random_batch(rng, spec, 5);
        CHECK(kd_leftover_identity_check(student, teacher, spec, data, 1.0) <= 1e-10);
    }

    SUBCASE("zero teacher residuals remove the leftover term") {
        const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
        const MlpParams net = mlp_init(spec, 41);
        LabeledData data = random_batch(rng, spec, 5);
        // Teacher = student and labels set to the teacher's own means.
        const Eigen::MatrixXd logits = mlp_forward_batch(net, spec, data.inputs);
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            data.labels[i] = family_eval(Family::bernoulli_logit, logits(i, 0)).h;
        }
        // Direct route equals data route exactly since r* = 0 and the soft
        // term's gradient vanishes at teacher = student.
        CHECK(kd_leftover_identity_check(net, net, spec, data, 0.3) <= 1e-12);
    }
}

TEST_CASE("deep-net K-prior gradient") {
    Rng rng(89);
    const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
    const MlpParams base = mlp_init(spec, 51);
    const LabeledData data = random_batch(rng, spec, 8);
    const Eigen::MatrixXd base_logits = mlp_forward_batch(base, spec, data.inputs);
    const Eigen::VectorXd w_star = base.flatten();
    const double delta = 0.7, tau = 1.0;

    SUBCASE("zero at the base parameters") {
        const Eigen::VectorXd g =
            dl_kprior_grad(base, spec, base_logits, data.inputs, w_star, delta, tau);
        CHECK(g.cwiseAbs().maxCoeff() <= 1e-12);
    }

    SUBCASE("matches finite differences of its value") {
        const MlpParams p = mlp_init(spec, 52);
        const Eigen::VectorXd grad =
            dl_kprior_grad(p, spec, base_logits, data.inputs, w_star, delta, tau);
        const Eigen::VectorXd fd = testutil::fd_gradient(
            [&](const Eigen::VectorXd& v) {
                return dl_kprior_value(MlpParams::unflatten(spec, v), spec, base_logits,
                                       data.inputs, w_star, delta, tau);
            },
            p.flatten(), 1e-5);
        CHECK(testutil::rel_err(grad, fd) <= 1e-5);
    }

    SUBCASE("full-memory identity with the leftover term") {
        // grad K(w) = grad l(w) - (sum grad f_w r* + delta w*), both sides
        // via independent assembly.
        const MlpParams p = mlp_init(spec, 53);
        const Eigen::VectorXd lhs =
            dl_kprior_grad(p, spec, base_logits, data.inputs, w_star, delta, tau);

        const Eigen::VectorXd data_grad = mlp_loss_grad(p, spec, data, std::nullopt, 1.0, delta).second;
        Eigen::MatrixXd resid(data.size(), 1);
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            resid(i, 0) = family_eval(Family::bernoulli_logit, base_logits(i, 0)).h - data.labels[i];
        }
        const Eigen::VectorXd leftover = mlp_vjp(p, spec, data.inputs, resid) + delta * w_star;
        CHECK(testutil::rel_err(lhs, data_grad - leftover) <= 1e-8);
    }
}

TEST_CASE("mlp accuracy and memorable selection") {
    Rng rng(90);
    const MlpSpec spec = small_spec(OutputKind::sigmoid_scalar, Activation::tanh_act);
    const MlpParams p = mlp_init(spec, 61);
    const LabeledData data = random_batch(rng, spec, 12);

    const MemorySet mem = select_memorable_mlp(p, spec, data, 4);
    REQUIRE(mem.size() == 4);
    CHECK(std::is_sorted(mem.indices.begin(), mem.indices.end()));
    const Eigen::MatrixXd logits = mlp_forward_batch(p, spec, mem.inputs);
    CHECK((mem.soft_logits - logits.col(0)).cwiseAbs().maxCoeff() <= 1e-12);

    const double acc = mlp_accuracy(p, spec, data);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    const MlpSpec multi = small_spec(OutputKind::softmax, Activation::tanh_act);
    const MlpParams pm = mlp_init(multi, 62);
    const LabeledData md = random_batch(rng, multi, 10);
    const MemorySet mm = select_memorable_mlp(pm, multi, md, 3);
    CHECK(mm.soft_logit_rows.rows() == 3);
    CHECK(mm.soft_logit_rows.cols() == multi.output_dim());
}
