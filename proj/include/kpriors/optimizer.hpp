#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace kpriors {

/// Smooth objective oracle: returns the value at w and fills grad.
using Oracle = std::function<double(const Eigen::VectorXd& w, Eigen::VectorXd& grad)>;

struct OptimizerConfig {
    double grad_tol = 1e-8;  ///< convergence threshold on the gradient inf-norm
    int max_iters = 5000;
    int history = 10;  ///< stored quasi-Newton curvature pairs
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
};

struct OptimResult {
    Eigen::VectorXd weights;
    double objective = 0.0;
    double grad_inf_norm = 0.0;
    int iters = 0;
    long grad_evals = 0;  ///< every oracle call, line-search trials included
    bool converged = false;
};

/// Invoked at w0 and after each accepted iterate; return false to stop
/// early (the result is then flagged not converged unless the gradient
/// test already passed).
using IterateCallback = std::function<bool(const Eigen::VectorXd& w, double value, long grad_evals)>;

/// Limited-memory BFGS with a strong-Wolfe line search (bracket + up to 50
/// zoom bisections). Deterministic: identical oracle, start, and config
/// give a bitwise-identical result. The objective never increases across
/// accepted iterates beyond double rounding resolution (once value
/// differences sink into rounding noise, iterates that strictly shrink the
/// gradient are still accepted). A failed line search on a quasi-Newton
/// direction falls back to steepest descent once; if that also fails the
/// best point so far is returned with converged=false. Non-finite oracle
/// output raises std::runtime_error.
OptimResult minimize(const Oracle& oracle, const Eigen::VectorXd& w0, const OptimizerConfig& cfg,
                     const IterateCallback& callback = nullptr);

/// For each target in `targets`, the cumulative number of oracle gradient
/// evaluations when probe(w) first reached it; targets never reached are
/// omitted. probe must be pure and does not count as an evaluation; a
/// target already met at w0 reports 0.
std::vector<std::pair<double, long>> target_accuracy_run(
    const Oracle& oracle, const Eigen::VectorXd& w0, const OptimizerConfig& cfg,
    const std::function<double(const Eigen::VectorXd&)>& probe, const std::vector<double>& targets,
    OptimResult* result_out = nullptr);

/// Minibatch oracle: value/gradient of the objective restricted to the
/// given row indices. The builder is responsible for scaling so that the
/// batch gradient estimates the full gradient.
using BatchOracle = std::function<double(const Eigen::VectorXd& w, Eigen::VectorXd& grad,
                                         const std::vector<Eigen::Index>& batch)>;

struct SgdConfig {
    int epochs = 100;
    int batch_size = 128;
    double step = 0.01;
    std::uint64_t seed = 0;
    double grad_tol = 1e-8;  ///< only used for the final convergence report
};

/// Constant-step first-order updates over seeded, reshuffled fixed-size
/// batches (remainder rows of each epoch pass are dropped; if fewer than
/// batch_size rows exist the single batch holds them all). After the last
/// epoch one full-batch evaluation fills the result's objective and
/// gradient norm. epoch_callback, when set, runs after each epoch and may
/// stop early by returning false.
OptimResult minibatch_sgd(const BatchOracle& oracle, Eigen::Index n_points,
                          const Eigen::VectorXd& w0, const SgdConfig& cfg,
                          const IterateCallback& epoch_callback = nullptr);

}  // namespace kpriors
