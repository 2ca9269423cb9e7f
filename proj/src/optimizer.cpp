#include "kpriors/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "kpriors/rng.hpp"

namespace kpriors {

namespace {

constexpr int kMaxLineSearchEvals = 50;

struct Evaluation {
    double value = 0.0;
    Eigen::VectorXd grad;
};

class CountingOracle {
public:
    CountingOracle(const Oracle& oracle, Eigen::Index dim) : oracle_(oracle), dim_(dim) {}

    Evaluation operator()(const Eigen::VectorXd& w) {
        Evaluation ev;
        ev.grad.resize(dim_);
        ev.value = oracle_(w, ev.grad);
        ++count_;
        if (!std::isfinite(ev.value) || !ev.grad.allFinite()) {
            throw std::runtime_error("minimize: oracle returned non-finite value or gradient");
        }
        return ev;
    }

    long count() const { return count_; }

private:
    const Oracle& oracle_;
    Eigen::Index dim_;
    long count_ = 0;
};

struct LineSearchResult {
    bool ok = false;
    double alpha = 0.0;
    Evaluation eval;
    Eigen::VectorXd w;
};

// Strong-Wolfe search along d from w: bracketing phase followed by a
// bisection zoom, capped at kMaxLineSearchEvals oracle calls total. A trial
// whose gradient already meets grad_tol is accepted outright; near an
// optimum the value-based tests drown in rounding noise while the gradient
// test stays meaningful.
LineSearchResult wolfe_line_search(CountingOracle& oracle, const Eigen::VectorXd& w,
                                   const Evaluation& at_w, const Eigen::VectorXd& d,
                                   const OptimizerConfig& cfg) {
    LineSearchResult res;
    const double phi0 = at_w.value;
    const double dphi0 = at_w.grad.dot(d);
    if (!(dphi0 < 0.0)) return res;  // not a descent direction

    int evals = 0;
    bool grad_done = false;
    const double g0_inf = at_w.grad.cwiseAbs().maxCoeff();
    // Once objective differences sink below double resolution the Wolfe
    // tests are noise; a trial that does not increase the value and shrinks
    // the gradient materially is then accepted as progress.
    const double noise_eps = 16.0 * std::numeric_limits<double>::epsilon() *
                             std::max(1.0, std::abs(phi0));
    auto probe = [&](double alpha, Evaluation& ev, double& dphi) {
        res.w = w + alpha * d;
        ev = oracle(res.w);
        dphi = ev.grad.dot(d);
        ++evals;
        const double g_inf = ev.grad.cwiseAbs().maxCoeff();
        const bool in_noise = std::abs(ev.value - phi0) <= noise_eps;
        if (g_inf <= cfg.grad_tol || (in_noise && g_inf <= 0.9 * g0_inf)) {
            res.ok = true;
            res.alpha = alpha;
            res.eval = ev;
            grad_done = true;
        }
    };

    auto wolfe_ok = [&](double alpha, double phi, double dphi) {
        return phi <= phi0 + cfg.wolfe_c1 * alpha * dphi0 &&
               std::abs(dphi) <= -cfg.wolfe_c2 * dphi0;
    };

    double alpha_lo = 0.0, phi_lo = phi0, dphi_lo = dphi0;
    Evaluation eval_lo = at_w;
    double alpha_hi = -1.0, phi_hi = 0.0;
    Evaluation eval_hi;

    // Bracketing: expand until the sufficient-decrease test fails or the
    // slope turns nonnegative.
    double alpha_prev = 0.0, phi_prev = phi0;
    double alpha = 1.0;
    bool bracketed = false;
    Evaluation eval_prev = at_w;
    while (evals < kMaxLineSearchEvals) {
        Evaluation ev;
        double dphi = 0.0;
        probe(alpha, ev, dphi);
        if (grad_done) return res;
        if (ev.value > phi0 + cfg.wolfe_c1 * alpha * dphi0 || (evals > 1 && ev.value >= phi_prev)) {
            alpha_lo = alpha_prev;
            eval_lo = eval_prev;
            alpha_hi = alpha;
            eval_hi = ev;
            bracketed = true;
            break;
        }
        if (wolfe_ok(alpha, ev.value, dphi)) {
            res.ok = true;
            res.alpha = alpha;
            res.eval = ev;
            return res;
        }
        if (dphi >= 0.0) {
            alpha_lo = alpha;
            eval_lo = ev;
            alpha_hi = alpha_prev;
            eval_hi = eval_prev;
            bracketed = true;
            break;
        }
        alpha_prev = alpha;
        phi_prev = ev.value;
        eval_prev = ev;
        alpha *= 2.0;
    }
    if (!bracketed) return res;

    // Zoom by bisection.
    (void)phi_lo;
    (void)dphi_lo;
    (void)phi_hi;
    while (evals < kMaxLineSearchEvals) {
        const double mid = 0.5 * (alpha_lo + alpha_hi);
        Evaluation ev;
        double dphi = 0.0;
        probe(mid, ev, dphi);
        if (grad_done) return res;
        if (ev.value > phi0 + cfg.wolfe_c1 * mid * dphi0 || ev.value >= eval_lo.value) {
            alpha_hi = mid;
            eval_hi = ev;
        } else {
            if (wolfe_ok(mid, ev.value, dphi)) {
                res.ok = true;
                res.alpha = mid;
                res.eval = ev;
                return res;
            }
            if (dphi * (alpha_hi - alpha_lo) >= 0.0) {
                alpha_hi = alpha_lo;
                eval_hi = eval_lo;
            }
            alpha_lo = mid;
            eval_lo = ev;
        }
    }
    // Cap reached; accept the best bracket end if it strictly decreases.
    if (eval_lo.value < phi0 && alpha_lo > 0.0) {
        res.ok = true;
        res.alpha = alpha_lo;
        res.eval = eval_lo;
        res.w = w + alpha_lo * d;
    }
    return res;
}

}  // namespace

OptimResult minimize(const Oracle& oracle, const Eigen::VectorXd& w0, const OptimizerConfig& cfg,
                     const IterateCallback& callback) {
    if (!(cfg.wolfe_c1 > 0.0 && cfg.wolfe_c1 < cfg.wolfe_c2 && cfg.wolfe_c2 < 1.0)) {
        throw std::invalid_argument("minimize: need 0 < c1 < c2 < 1");
    }
    if (!(cfg.grad_tol > 0.0)) throw std::invalid_argument("minimize: grad_tol must be positive");

    CountingOracle counted(oracle, w0.size());
    Eigen::VectorXd w = w0;
    Evaluation cur = counted(w);

    OptimResult out;
    auto finish = [&](bool converged, int iters) {
        out.weights = w;
        out.objective = cur.value;
        out.grad_inf_norm = cur.grad.size() == 0 ? 0.0 : cur.grad.cwiseAbs().maxCoeff();
        out.iters = iters;
        out.grad_evals = counted.count();
        out.converged = converged;
        return out;
    };

    double gnorm = cur.grad.size() == 0 ? 0.0 : cur.grad.cwiseAbs().maxCoeff();
    bool stop_requested = false;
    if (callback && !callback(w, cur.value, counted.count())) stop_requested = true;
    if (gnorm <= cfg.grad_tol) return finish(true, 0);
    if (stop_requested || cfg.max_iters <= 0) return finish(false, 0);

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (s, y)
    int iter = 0;
    while (iter < cfg.max_iters) {
        // Two-loop recursion for the quasi-Newton direction.
        Eigen::VectorXd q = cur.grad;
        std::vector<double> alpha_coef(pairs.size());
        for (std::size_t i = pairs.size(); i-- > 0;) {
            const auto& [s, y] = pairs[i];
            const double rho = 1.0 / y.dot(s);
            alpha_coef[i] = rho * s.dot(q);
            q -= alpha_coef[i] * y;
        }
        if (!pairs.empty()) {
            const auto& [s, y] = pairs.back();
            q *= s.dot(y) / y.dot(y);
        }
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& [s, y] = pairs[i];
            const double rho = 1.0 / y.dot(s);
            const double beta = rho * y.dot(q);
            q += (alpha_coef[i] - beta) * s;
        }
        Eigen::VectorXd d = -q;
        if (!(d.dot(cur.grad) < 0.0)) {
            pairs.clear();
            d = -cur.grad;
        }

        LineSearchResult ls = wolfe_line_search(counted, w, cur, d, cfg);
        if (!ls.ok && !pairs.empty()) {
            // Retry once along steepest descent with fresh history.
            pairs.clear();
            d = -cur.grad;
            ls = wolfe_line_search(counted, w, cur, d, cfg);
        }
        if (!ls.ok) return finish(false, iter);

        const Eigen::VectorXd w_new = ls.w;
        Eigen::VectorXd s = w_new - w;
        Eigen::VectorXd y = ls.eval.grad - cur.grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            pairs.emplace_back(std::move(s), std::move(y));
            if (static_cast<int>(pairs.size()) > cfg.history) pairs.pop_front();
        }

        w = w_new;
        cur = ls.eval;
        ++iter;
        gnorm = cur.grad.cwiseAbs().maxCoeff();
        if (callback && !callback(w, cur.value, counted.count())) {
            return finish(gnorm <= cfg.grad_tol, iter);
        }
        if (gnorm <= cfg.grad_tol) return finish(true, iter);
    }
    return finish(false, iter);
}

std::vector<std::pair<double, long>> target_accuracy_run(
    const Oracle& oracle, const Eigen::VectorXd& w0, const OptimizerConfig& cfg,
    const std::function<double(const Eigen::VectorXd&)>& probe, const std::vector<double>& targets,
    OptimResult* result_out) {
    std::vector<double> pending = targets;
    std::sort(pending.begin(), pending.end());
    std::vector<std::pair<double, long>> reached;

    // Probe the start before any oracle work so already-met targets cost 0.
    {
        const double acc0 = probe(w0);
        while (!pending.empty() && pending.front() <= acc0) {
            reached.emplace_back(pending.front(), 0);
            pending.erase(pending.begin());
        }
    }

    auto callback = [&](const Eigen::VectorXd& w, double /*value*/, long grad_evals) {
        if (pending.empty()) return true;
        const double acc = probe(w);
        while (!pending.empty() && pending.front() <= acc) {
            reached.emplace_back(pending.front(), grad_evals);
            pending.erase(pending.begin());
        }
        return true;
    };
    OptimResult res = minimize(oracle, w0, cfg, callback);
    if (result_out) *result_out = res;
    return reached;
}

OptimResult minibatch_sgd(const BatchOracle& oracle, Eigen::Index n_points,
                          const Eigen::VectorXd& w0, const SgdConfig& cfg,
                          const IterateCallback& epoch_callback) {
    if (n_points <= 0) throw std::invalid_argument("minibatch_sgd: need at least one data point");
    Eigen::VectorXd w = w0;
    Eigen::VectorXd grad(w.size());
    Rng rng(cfg.seed);
    long evals = 0;
    const auto n = static_cast<std::size_t>(n_points);
    const auto bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
    std::vector<Eigen::Index> order(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto perm = rng.permutation(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(perm[i]);
        for (std::size_t start = 0; start + bsz <= n; start += bsz) {
            std::vector<Eigen::Index> batch(order.begin() + static_cast<long>(start),
                                            order.begin() + static_cast<long>(start + bsz));
            const double v = oracle(w, grad, batch);
            ++evals;
            if (!std::isfinite(v) || !grad.allFinite()) {
                throw std::runtime_error("minibatch_sgd: non-finite oracle output");
            }
            w -= cfg.step * grad;
        }
        if (epoch_callback && !epoch_callback(w, 0.0, evals)) break;
    }

    std::vector<Eigen::Index> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<Eigen::Index>(i);
    OptimResult out;
    out.objective = oracle(w, grad, all);
    ++evals;
    out.weights = w;
    out.grad_inf_norm = grad.size() == 0 ? 0.0 : grad.cwiseAbs().maxCoeff();
    out.iters = cfg.epochs;
    out.grad_evals = evals;
    out.converged = out.grad_inf_norm <= cfg.grad_tol;
    return out;
}

}  // namespace kpriors
