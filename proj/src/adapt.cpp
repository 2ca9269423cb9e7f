#include "kpriors/adapt.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "kpriors/rng.hpp"

namespace kpriors {

namespace {

Eigen::VectorXd random_start(Eigen::Index dim, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd w(dim);
    for (Eigen::Index i = 0; i < dim; ++i) w[i] = 0.1 * rng.normal();
    return w;
}

/// Shared solve wrapper: runs minimize with the floor guard and target
/// probes from `options`, and times the run.
AdaptOutcome run_solver(const Oracle& oracle, const Eigen::VectorXd& w0,
                        const OptimizerConfig& cfg, const AdaptOptions& options,
                        Eigen::Index points_per_eval, std::string method) {
    AdaptOutcome out;
    out.method = std::move(method);
    out.points_per_eval = points_per_eval;

    std::vector<double> pending = options.accuracy_targets;
    std::sort(pending.begin(), pending.end());
    if (!pending.empty() && !options.accuracy_probe) {
        throw std::invalid_argument("adapt: accuracy targets given without a probe");
    }
    if (!pending.empty()) {
        const double acc0 = options.accuracy_probe(w0);
        while (!pending.empty() && pending.front() <= acc0) {
            out.evals_to_target.emplace_back(pending.front(), 0);
            pending.erase(pending.begin());
        }
    }

    bool floored = false;
    auto callback = [&](const Eigen::VectorXd& w, double value, long grad_evals) {
        if (!pending.empty()) {
            const double acc = options.accuracy_probe(w);
            while (!pending.empty() && pending.front() <= acc) {
                out.evals_to_target.emplace_back(pending.front(), grad_evals);
                pending.erase(pending.begin());
            }
        }
        if (value < options.objective_floor) {
            floored = true;
            return false;
        }
        return true;
    };

    const auto start = std::chrono::steady_clock::now();
    const OptimResult res = minimize(oracle, w0, cfg, callback);
    const auto stop = std::chrono::steady_clock::now();

    out.weights = res.weights;
    out.grad_evals = res.grad_evals;
    out.converged = res.converged && !floored;
    out.final_objective = res.objective;
    out.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    return out;
}

Oracle glm_data_oracle(const FeatureMap& map, Family family, const LabeledData& data, double delta) {
    return [map, family, data, delta](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
        const GlmModel model{w, map, family};
        grad = glm_gradient(model, data, delta);
        return glm_objective(model, data, delta);
    };
}

LabeledData memory_as_data(const MemorySet& memory) {
    return LabeledData{memory.inputs, memory.true_labels};
}

void check_memory_built(const MemorySet& memory) {
    if (memory.size() > 0 && memory.soft_logits.size() != memory.size()) {
        throw std::invalid_argument("adapt_kprior: memory lacks recorded base logits");
    }
}

}  // namespace

GlmModel fit_glm(const FeatureMap& map, Family family, const LabeledData& data, double delta,
                 const OptimizerConfig& cfg, OptimResult* result_out, const Eigen::VectorXd* w0) {
    const Eigen::VectorXd start =
        w0 ? *w0 : Eigen::VectorXd::Zero(map.output_dim()).eval();
    const OptimResult res = minimize(glm_data_oracle(map, family, data, delta), start, cfg);
    if (result_out) *result_out = res;
    return GlmModel{res.weights, map, family};
}

AdaptOutcome solve_batch(const AdaptationTask& task, const FeatureMap& map, Family family,
                         double delta, const LabeledData& old_data, const OptimizerConfig& cfg,
                         const AdaptOptions& options) {
    LabeledData data = old_data;
    FeatureMap use_map = map;
    double use_delta = delta;
    if (const auto* add = std::get_if<AddData>(&task)) {
        data = concat(old_data, add->new_data);
    } else if (const auto* rem = std::get_if<RemoveData>(&task)) {
        data = drop_rows(old_data, rem->indices);
    } else if (const auto* reg = std::get_if<ChangeRegularizer>(&task)) {
        use_delta = reg->delta_new;
    } else if (const auto* cls = std::get_if<ChangeModelClass>(&task)) {
        use_map = cls->new_map;
    }
    const Eigen::VectorXd w0 = options.random_init
                                   ? random_start(use_map.output_dim(), options.init_seed)
                                   : Eigen::VectorXd::Zero(use_map.output_dim()).eval();
    return run_solver(glm_data_oracle(use_map, family, data, use_delta), w0, cfg, options,
                      data.size(), "batch");
}

AdaptOutcome adapt_kprior(const AdaptationTask& task, const GlmModel& base, double delta_old,
                          const MemorySet& memory, const LabeledData& old_data,
                          const OptimizerConfig& cfg, const AdaptOptions& options) {
    check_memory_built(memory);
    KPriorSpec spec;
    spec.base_weights = base.weights;
    spec.memory = memory;
    spec.tau = options.tau;
    spec.weight_div = WeightDivergence::l2_shift(delta_old);
    spec.family = base.family;
    spec.feature_map_new = base.feature_map;

    LabeledData task_data;  // empty when the task has no data term
    double task_sign = 1.0;
    if (const auto* add = std::get_if<AddData>(&task)) {
        task_data = add->new_data;
    } else if (const auto* rem = std::get_if<RemoveData>(&task)) {
        task_data = take_rows(old_data, rem->indices);
        task_sign = -1.0;
    } else if (const auto* reg = std::get_if<ChangeRegularizer>(&task)) {
        spec.weight_div = WeightDivergence::two_generator(reg->delta_new, delta_old);
    } else if (const auto* cls = std::get_if<ChangeModelClass>(&task)) {
        spec.feature_map_new = cls->new_map;
        spec.model_map = prefix_projection(cls->new_map, base.feature_map);
    }

    const Eigen::VectorXd anchor = spec.anchor();
    Oracle oracle = [spec, task_data, task_sign](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
        grad = kprior_grad(spec, w);
        double value = kprior_value(spec, w);
        if (task_data.size() > 0) {
            const GlmModel model{w, spec.feature_map_new, spec.family};
            value += task_sign * glm_objective(model, task_data, 0.0);
            grad += task_sign * glm_gradient(model, task_data, 0.0);
        }
        return value;
    };
    const Eigen::VectorXd w0 =
        options.random_init ? random_start(anchor.size(), options.init_seed) : anchor;
    return run_solver(oracle, w0, cfg, options, task_data.size() + memory.size(), "kprior");
}

AdaptOutcome adapt_replay(const AdaptationTask& task, const GlmModel& base, double delta_old,
                          const MemorySet& memory, const LabeledData& old_data,
                          const OptimizerConfig& cfg, const AdaptOptions& options) {
    const LabeledData replay_data = memory_as_data(memory);
    FeatureMap use_map = base.feature_map;
    double use_delta = delta_old;
    LabeledData task_data;
    double task_sign = 1.0;
    if (const auto* add = std::get_if<AddData>(&task)) {
        task_data = add->new_data;
    } else if (const auto* rem = std::get_if<RemoveData>(&task)) {
        task_data = take_rows(old_data, rem->indices);
        task_sign = -1.0;
    } else if (const auto* reg = std::get_if<ChangeRegularizer>(&task)) {
        use_delta = reg->delta_new;
    } else if (const auto* cls = std::get_if<ChangeModelClass>(&task)) {
        use_map = cls->new_map;
    }

    const Family family = base.family;
    Oracle oracle = [use_map, family, replay_data, use_delta, task_data,
                     task_sign](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
        const GlmModel model{w, use_map, family};
        double value = glm_objective(model, replay_data, use_delta);
        grad = glm_gradient(model, replay_data, use_delta);
        if (task_data.size() > 0) {
            value += task_sign * glm_objective(model, task_data, 0.0);
            grad += task_sign * glm_gradient(model, task_data, 0.0);
        }
        return value;
    };
    Eigen::VectorXd w0;
    if (options.random_init) {
        w0 = random_start(use_map.output_dim(), options.init_seed);
    } else if (use_map == base.feature_map) {
        w0 = base.weights;
    } else {
        w0 = prefix_projection(use_map, base.feature_map) * base.weights;
    }
    return run_solver(oracle, w0, cfg, options, task_data.size() + memory.size(), "replay");
}

AdaptOutcome adapt_weight_prior(const AdaptationTask& task, const GlmModel& base,
                                const Eigen::MatrixXd& ggn_full, double delta,
                                const OptimizerConfig& cfg, const AdaptOptions& options) {
    const auto* add = std::get_if<AddData>(&task);
    if (!add) {
        throw std::invalid_argument("adapt_weight_prior: only the add-data task is supported");
    }
    const LabeledData new_data = add->new_data;
    const FeatureMap map = base.feature_map;
    const Family family = base.family;
    const Eigen::VectorXd w_star = base.weights;
    Oracle oracle = [map, family, new_data, w_star, ggn_full,
                     delta](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
        auto [value, quad_grad] = weight_prior_quad(w, w_star, ggn_full, delta);
        grad = std::move(quad_grad);
        if (new_data.size() > 0) {
            const GlmModel model{w, map, family};
            value += glm_objective(model, new_data, 0.0);
            grad += glm_gradient(model, new_data, 0.0);
        }
        return value;
    };
    const Eigen::VectorXd w0 =
        options.random_init ? random_start(w_star.size(), options.init_seed) : w_star;
    return run_solver(oracle, w0, cfg, options, new_data.size(), "weight-prior");
}

AdaptOutcome adapt_kprior_combined(const LabeledData& added,
                                   const std::vector<Eigen::Index>& removed,
                                   std::optional<double> delta_new, const GlmModel& base,
                                   double delta_old, const MemorySet& memory,
                                   const LabeledData& old_data, const OptimizerConfig& cfg,
                                   const AdaptOptions& options) {
    check_memory_built(memory);
    KPriorSpec spec;
    spec.base_weights = base.weights;
    spec.memory = memory;
    spec.tau = options.tau;
    spec.weight_div = delta_new ? WeightDivergence::two_generator(*delta_new, delta_old)
                                : WeightDivergence::l2_shift(delta_old);
    spec.family = base.family;
    spec.feature_map_new = base.feature_map;

    const LabeledData removed_data = take_rows(old_data, removed);
    Oracle oracle = [spec, added, removed_data](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
        const GlmModel model{w, spec.feature_map_new, spec.family};
        double value = kprior_value(spec, w);
        grad = kprior_grad(spec, w);
        if (added.size() > 0) {
            value += glm_objective(model, added, 0.0);
            grad += glm_gradient(model, added, 0.0);
        }
        if (removed_data.size() > 0) {
            value -= glm_objective(model, removed_data, 0.0);
            grad -= glm_gradient(model, removed_data, 0.0);
        }
        return value;
    };
    const Eigen::VectorXd w0 =
        options.random_init ? random_start(base.weights.size(), options.init_seed) : base.weights;
    return run_solver(oracle, w0, cfg, options,
                      added.size() + removed_data.size() + memory.size(), "kprior-combined");
}

std::vector<std::pair<double, double>> stale_mean_diagnostic(const GlmModel& base,
                                                             const Eigen::VectorXd& candidate_w,
                                                             const LabeledData& data) {
    const GlmModel candidate{candidate_w, base.feature_map, base.family};
    const Eigen::VectorXd f_stale = glm_logits(base, data.inputs);
    const Eigen::VectorXd f_fresh = glm_logits(candidate, data.inputs);
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(static_cast<std::size_t>(data.size()));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        pairs.emplace_back(family_eval(base.family, f_stale[i]).hprime,
                           family_eval(base.family, f_fresh[i]).hprime);
    }
    return pairs;
}

DistanceReport distance_to_batch(const Eigen::VectorXd& w_a, const Eigen::VectorXd& w_b,
                                 const LabeledData& eval_data, const FeatureMap& map,
                                 Family family) {
    if (w_a.size() != w_b.size()) {
        throw std::invalid_argument("distance_to_batch: weight dimensions differ");
    }
    DistanceReport rep;
    rep.linf = (w_a - w_b).cwiseAbs().maxCoeff();
    rep.l2 = (w_a - w_b).norm();
    if (eval_data.size() > 0) {
        const GlmModel ma{w_a, map, family};
        const GlmModel mb{w_b, map, family};
        const Eigen::VectorXd fa = glm_logits(ma, eval_data.inputs);
        const Eigen::VectorXd fb = glm_logits(mb, eval_data.inputs);
        Eigen::Index differ = 0;
        for (Eigen::Index i = 0; i < eval_data.size(); ++i) {
            if ((fa[i] > 0.0) != (fb[i] > 0.0)) ++differ;
        }
        rep.pred_disagreement = static_cast<double>(differ) / static_cast<double>(eval_data.size());
    }
    return rep;
}

}  // namespace kpriors
