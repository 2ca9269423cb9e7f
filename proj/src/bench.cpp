#include "kpriors/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kpriors/mlp.hpp"
#include "kpriors/rng.hpp"

namespace kpriors {

namespace {

// ---------------------------------------------------------------------
// Locale-independent formatting (shortest round-trip, '.' decimal point).
// ---------------------------------------------------------------------

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt(long v) { return std::to_string(v); }

// ---------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------

const std::set<std::string> kTasks = {"add-data", "remove-data", "change-regularizer",
                                      "change-model-class"};
const std::set<std::string> kMethods = {"batch", "replay", "kprior", "weight-prior"};

double resolve_delta(const ExperimentConfig& cfg, const std::string& task) {
    if (cfg.delta) return *cfg.delta;
    if (task == "change-regularizer") return cfg.model == "glm" ? 50.0 : 5.0;
    return 5.0;
}

double resolve_delta_new(const ExperimentConfig& cfg) {
    if (cfg.delta_new) return *cfg.delta_new;
    return cfg.model == "glm" ? 5.0 : 10.0;
}

int resolve_degree_new(const ExperimentConfig& cfg) {
    return cfg.degree_new > 0 ? cfg.degree_new : std::max(1, cfg.degree - 1);
}

// Seed derivation, fixed and documented: every draw in a grid descends
// from the master seed through splitmix64.
std::uint64_t scenario_seed(std::uint64_t master, std::size_t task_idx, long seed_idx) {
    return splitmix64(splitmix64(master + 0x100003ULL * (task_idx + 1)) +
                      static_cast<std::uint64_t>(seed_idx));
}
std::uint64_t test_seed(std::uint64_t scen) { return splitmix64(scen ^ 0x7E57DA7AULL); }
std::uint64_t memory_seed(std::uint64_t scen, std::size_t frac_idx) {
    return splitmix64(scen + 7919ULL * (frac_idx + 1));
}
std::uint64_t cell_seed(std::uint64_t scen, long cell_index) {
    return splitmix64(scen + 104729ULL * (static_cast<std::uint64_t>(cell_index) + 1));
}

// ---------------------------------------------------------------------
// Scenario: data, base model, task, and the shared batch reference for
// one (task, seed) pair.
// ---------------------------------------------------------------------

struct Scenario {
    AdaptationTask task;
    LabeledData old_data;
    LabeledData test_data;
    LabeledData train_eval;  ///< post-change training set, for train_acc
    double delta_old = 5.0;
    double delta_new = 5.0;

    // glm
    GlmModel base;
    FeatureMap map;
    FeatureMap map_new;
    Eigen::MatrixXd ggn_full;  ///< only filled when weight-prior is in the grid

    // mlp
    MlpSpec mspec;
    MlpSpec mspec_new;
    MlpParams mbase;

    AdaptOutcome batch;
};

std::pair<LabeledData, LabeledData> load_splits(const ExperimentConfig& cfg, std::uint64_t scen) {
    if (cfg.data == "moons") {
        LabeledData train = make_moons(cfg.moons.n, cfg.moons.noise, scen);
        LabeledData test = make_moons(cfg.moons.n, cfg.moons.noise, test_seed(scen));
        return {std::move(train), std::move(test)};
    }
    LabeledData all;
    if (cfg.data.size() >= 4 && cfg.data.substr(cfg.data.size() - 4) == ".csv") {
        all = load_dense_csv(cfg.data, cfg.label_column);
    } else {
        all = load_sparse(cfg.data);
    }
    auto [train, test] = split_holdout(all, SplitSpec{cfg.test_fraction, scen, false});
    standardize(train, {&test});
    return {std::move(train), std::move(test)};
}

std::vector<Eigen::Index> top_hprime_rows(const Eigen::VectorXd& scores, Eigen::Index count) {
    std::vector<Eigen::Index> order(scores.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(static_cast<std::size_t>(std::min(count, scores.size())));
    std::sort(order.begin(), order.end());
    return order;
}

Scenario build_scenario(const ExperimentConfig& cfg, const std::string& task_name,
                        std::size_t task_idx, long seed_idx, bool need_ggn,
                        const OptimizerConfig& opt) {
    Scenario sc;
    const std::uint64_t scen = scenario_seed(cfg.master_seed, task_idx, seed_idx);
    auto [train, test] = load_splits(cfg, scen);
    sc.test_data = std::move(test);
    sc.delta_old = resolve_delta(cfg, task_name);
    sc.delta_new = resolve_delta_new(cfg);

    LabeledData new_data;
    if (task_name == "add-data") {
        if (cfg.data == "moons") {
            // The ordered protocol: past = left-most 3 of 5 splits, new =
            // split 4; the right-most split stays unseen.
            auto splits = ordered_splits(train, cfg.moons.splits);
            LabeledData old = splits[0];
            for (int s = 1; s + 2 < static_cast<int>(splits.size()); ++s) {
                old = concat(old, splits[static_cast<std::size_t>(s)]);
            }
            new_data = splits[splits.size() - 2];
            sc.old_data = std::move(old);
        } else {
            auto [old, added] = split_holdout(train, SplitSpec{cfg.add_fraction, splitmix64(scen + 1), false});
            sc.old_data = std::move(old);
            new_data = std::move(added);
        }
    } else {
        sc.old_data = std::move(train);
    }

    sc.map = FeatureMap{cfg.degree, true, static_cast<int>(sc.old_data.dim())};
    sc.map_new = sc.map;

    const bool is_mlp = cfg.model == "mlp";
    if (is_mlp) {
        std::vector<int> sizes;
        sizes.push_back(static_cast<int>(sc.old_data.dim()));
        for (int h : cfg.hidden) sizes.push_back(h);
        sizes.push_back(1);
        sc.mspec = MlpSpec{sizes, Activation::tanh_act, OutputKind::sigmoid_scalar};
        sc.mspec_new = sc.mspec;
    }

    // Base model on the old data.
    OptimResult base_fit;
    if (is_mlp) {
        const MlpParams init = mlp_init(sc.mspec, scen);
        const MlpSpec spec = sc.mspec;
        const LabeledData& data = sc.old_data;
        const double delta = sc.delta_old;
        Oracle oracle = [&spec, &data, delta](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
            auto [v, g] = mlp_loss_grad(MlpParams::unflatten(spec, w), spec, data, std::nullopt,
                                        1.0, delta);
            grad = std::move(g);
            return v;
        };
        base_fit = minimize(oracle, init.flatten(), opt);
        sc.mbase = MlpParams::unflatten(sc.mspec, base_fit.weights);
    } else {
        sc.base = fit_glm(sc.map, Family::bernoulli_logit, sc.old_data, sc.delta_old, opt, &base_fit);
    }

    // Task construction (remove-data needs the base model for its h' sort).
    if (task_name == "add-data") {
        sc.task = AddData{new_data};
        sc.train_eval = concat(sc.old_data, new_data);
    } else if (task_name == "remove-data") {
        const Eigen::Index count = cfg.remove_count > 0
                                       ? cfg.remove_count
                                       : std::max<Eigen::Index>(1, sc.old_data.size() / 10);
        Eigen::VectorXd scores(sc.old_data.size());
        if (is_mlp) {
            const Eigen::MatrixXd logits = mlp_forward_batch(sc.mbase, sc.mspec, sc.old_data.inputs);
            for (Eigen::Index i = 0; i < sc.old_data.size(); ++i) {
                scores[i] = family_eval(Family::bernoulli_logit, logits(i, 0)).hprime;
            }
        } else {
            const Eigen::VectorXd f = glm_logits(sc.base, sc.old_data.inputs);
            for (Eigen::Index i = 0; i < sc.old_data.size(); ++i) {
                scores[i] = family_eval(Family::bernoulli_logit, f[i]).hprime;
            }
        }
        const auto removed = top_hprime_rows(scores, count);
        sc.task = RemoveData{removed};
        sc.train_eval = drop_rows(sc.old_data, removed);
    } else if (task_name == "change-regularizer") {
        sc.task = ChangeRegularizer{sc.delta_new};
        sc.train_eval = sc.old_data;
    } else {
        if (is_mlp) {
            std::vector<int> sizes;
            sizes.push_back(static_cast<int>(sc.old_data.dim()));
            if (!cfg.hidden_new.empty()) {
                for (int h : cfg.hidden_new) sizes.push_back(h);
            } else if (cfg.hidden.size() > 1) {
                for (std::size_t i = 0; i + 1 < cfg.hidden.size(); ++i) sizes.push_back(cfg.hidden[i]);
            } else {
                sizes.push_back(cfg.hidden.front());
            }
            sizes.push_back(1);
            sc.mspec_new = MlpSpec{sizes, Activation::tanh_act, OutputKind::sigmoid_scalar};
            sc.task = ChangeModelClass{sc.map};  // placeholder; mlp path keys off mspec_new
        } else {
            sc.map_new = FeatureMap{resolve_degree_new(cfg), true, sc.map.input_dim};
            sc.task = ChangeModelClass{sc.map_new};
        }
        sc.train_eval = sc.old_data;
    }

    if (need_ggn && !is_mlp) {
        sc.ggn_full = ggn_matrix(sc.base, sc.old_data.inputs);
    }
    return sc;
}

// ---------------------------------------------------------------------
// MLP objectives: a list of per-point terms (hard label, negated hard
// label, or a soft teacher logit) plus one weight-space prior term. A
// batched evaluation scales the data part by N/|batch| so its gradient
// estimates the full one.
// ---------------------------------------------------------------------

struct MlpObjective {
    MlpSpec spec;
    Eigen::MatrixXd inputs;
    std::vector<int> kind;  ///< 0 = hard, 1 = negated hard, 2 = soft
    Eigen::VectorXd labels;
    Eigen::VectorXd teacher_logits;

    enum class Prior { none, l2_zero, l2_shift, two_generator };
    Prior prior = Prior::none;
    double delta = 0.0;
    double tau = 1.0;
    double gamma_new = 0.0;
    Eigen::VectorXd w_star;

    Eigen::Index n_points() const { return inputs.rows(); }

    double eval(const Eigen::VectorXd& w, Eigen::VectorXd& grad,
                const std::vector<Eigen::Index>* batch) const {
        const MlpParams params = MlpParams::unflatten(spec, w);
        std::vector<Eigen::Index> all;
        if (!batch) {
            all.resize(static_cast<std::size_t>(inputs.rows()));
            std::iota(all.begin(), all.end(), Eigen::Index{0});
        }
        const std::vector<Eigen::Index>& rows = batch ? *batch : all;
        const double scale =
            rows.empty() ? 1.0
                         : static_cast<double>(inputs.rows()) / static_cast<double>(rows.size());

        Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), inputs.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = inputs.row(rows[k]);
        const Eigen::MatrixXd logits = mlp_forward_batch(params, spec, sub);

        double value = 0.0;
        Eigen::MatrixXd err(logits.rows(), 1);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const Eigen::Index i = rows[k];
            const double f = logits(static_cast<Eigen::Index>(k), 0);
            const FamilyEval fe = family_eval(Family::bernoulli_logit, f);
            if (kind[static_cast<std::size_t>(i)] == 2) {
                const double fstar = teacher_logits[i];
                value += bregman_log_partition(Family::bernoulli_logit, f, fstar);
                err(static_cast<Eigen::Index>(k), 0) =
                    fe.h - family_eval(Family::bernoulli_logit, fstar).h;
            } else {
                const double sign = kind[static_cast<std::size_t>(i)] == 1 ? -1.0 : 1.0;
                value += sign * (fe.A - labels[i] * f);
                err(static_cast<Eigen::Index>(k), 0) = sign * (fe.h - labels[i]);
            }
        }
        value *= scale;
        grad = scale * mlp_vjp(params, spec, sub, err);

        switch (prior) {
            case Prior::none:
                break;
            case Prior::l2_zero:
                value += 0.5 * delta * w.squaredNorm();
                grad += delta * w;
                break;
            case Prior::l2_shift:
                value += 0.5 * tau * delta * (w - w_star).squaredNorm();
                grad += tau * delta * (w - w_star);
                break;
            case Prior::two_generator:
                value += tau * (0.5 * (gamma_new * w.squaredNorm() +
                                       delta * w_star.squaredNorm()) -
                                delta * w.dot(w_star));
                grad += tau * (gamma_new * w - delta * w_star);
                break;
        }
        return value;
    }
};

AdaptOutcome run_mlp_objective(const MlpObjective& obj, const Eigen::VectorXd& w0,
                               const ExperimentConfig& cfg, const OptimizerConfig& opt,
                               const AdaptOptions& options, const std::string& method) {
    AdaptOutcome out;
    out.method = method;

    std::vector<double> pending = options.accuracy_targets;
    std::sort(pending.begin(), pending.end());
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
    OptimResult res;
    if (cfg.sgd_epochs > 0) {
        SgdConfig sgd;
        sgd.epochs = cfg.sgd_epochs;
        sgd.batch_size = cfg.sgd_batch;
        sgd.step = cfg.sgd_step;
        sgd.seed = options.init_seed;
        sgd.grad_tol = opt.grad_tol;
        BatchOracle oracle = [&obj](const Eigen::VectorXd& w, Eigen::VectorXd& grad,
                                    const std::vector<Eigen::Index>& batch) {
            return obj.eval(w, grad, &batch);
        };
        res = minibatch_sgd(oracle, obj.n_points(), w0, sgd, callback);
        out.points_per_eval = std::min<Eigen::Index>(cfg.sgd_batch, obj.n_points());
    } else {
        Oracle oracle = [&obj](const Eigen::VectorXd& w, Eigen::VectorXd& grad) {
            return obj.eval(w, grad, nullptr);
        };
        res = minimize(oracle, w0, opt, callback);
        out.points_per_eval = obj.n_points();
    }
    const auto stop = std::chrono::steady_clock::now();

    out.weights = res.weights;
    out.grad_evals = res.grad_evals;
    out.converged = res.converged && !floored;
    out.final_objective = res.objective;
    out.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    return out;
}

// Assemble the per-method MLP objective for the scenario's task.
MlpObjective mlp_objective_for(const Scenario& sc, const ExperimentConfig& cfg,
                               const std::string& task_name, const std::string& method,
                               const MemorySet& memory) {
    MlpObjective obj;
    obj.spec = task_name == "change-model-class" ? sc.mspec_new : sc.mspec;
    obj.tau = cfg.tau.value_or(1.0);

    std::vector<Eigen::VectorXd> rows;
    std::vector<int> kinds;
    std::vector<double> labels;
    std::vector<double> teachers;
    auto push = [&](const Eigen::VectorXd& x, int kind, double label, double teacher) {
        rows.push_back(x);
        kinds.push_back(kind);
        labels.push_back(label);
        teachers.push_back(teacher);
    };

    const bool kp = method == "kprior";
    if (task_name == "add-data") {
        const auto& add = std::get<AddData>(sc.task);
        for (Eigen::Index i = 0; i < add.new_data.size(); ++i) {
            push(add.new_data.inputs.row(i).transpose(), 0, add.new_data.labels[i], 0.0);
        }
    } else if (task_name == "remove-data") {
        const auto& rem = std::get<RemoveData>(sc.task);
        const LabeledData removed = take_rows(sc.old_data, rem.indices);
        for (Eigen::Index i = 0; i < removed.size(); ++i) {
            push(removed.inputs.row(i).transpose(), 1, removed.labels[i], 0.0);
        }
    }

    if (method == "batch") {
        // Batch retrains on the resulting objective directly.
        obj.spec = task_name == "change-model-class" ? sc.mspec_new : sc.mspec;
        rows.clear();
        kinds.clear();
        labels.clear();
        teachers.clear();
        const LabeledData& data = sc.train_eval;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            push(data.inputs.row(i).transpose(), 0, data.labels[i], 0.0);
        }
        obj.prior = MlpObjective::Prior::l2_zero;
        obj.delta = task_name == "change-regularizer" ? sc.delta_new : sc.delta_old;
    } else if (kp) {
        // Functional term on the memory against the stored base logits.
        for (Eigen::Index i = 0; i < memory.size(); ++i) {
            push(memory.inputs.row(i).transpose(), 2, 0.0, memory.soft_logits[i]);
        }
        obj.w_star = sc.mbase.flatten();
        if (task_name == "change-regularizer") {
            obj.prior = MlpObjective::Prior::two_generator;
            obj.gamma_new = sc.delta_new;
            obj.delta = sc.delta_old;
        } else if (task_name == "change-model-class") {
            obj.prior = MlpObjective::Prior::none;  // weights are not comparable across nets
        } else {
            obj.prior = MlpObjective::Prior::l2_shift;
            obj.delta = sc.delta_old;
        }
    } else {  // replay
        for (Eigen::Index i = 0; i < memory.size(); ++i) {
            push(memory.inputs.row(i).transpose(), 0, memory.true_labels[i], 0.0);
        }
        obj.prior = MlpObjective::Prior::l2_zero;
        obj.delta = task_name == "change-regularizer" ? sc.delta_new : sc.delta_old;
    }

    obj.inputs.resize(static_cast<Eigen::Index>(rows.size()), sc.old_data.dim());
    obj.labels.resize(static_cast<Eigen::Index>(rows.size()));
    obj.teacher_logits.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        obj.inputs.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
        obj.labels[static_cast<Eigen::Index>(i)] = labels[i];
        obj.teacher_logits[static_cast<Eigen::Index>(i)] = teachers[i];
    }
    obj.kind = std::move(kinds);
    return obj;
}

}  // namespace

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.tasks.empty()) throw std::invalid_argument("config: no tasks given");
    if (cfg.methods.empty()) throw std::invalid_argument("config: no methods given");
    for (const auto& t : cfg.tasks) {
        if (!kTasks.count(t)) throw std::invalid_argument("config: unknown task '" + t + "'");
    }
    for (const auto& m : cfg.methods) {
        if (!kMethods.count(m)) throw std::invalid_argument("config: unknown method '" + m + "'");
    }
    if (cfg.selection != "memorable" && cfg.selection != "random") {
        throw std::invalid_argument("config: selection must be 'memorable' or 'random'");
    }
    if (cfg.model != "glm" && cfg.model != "mlp") {
        throw std::invalid_argument("config: model must be 'glm' or 'mlp'");
    }
    if (cfg.memory_fracs.empty()) throw std::invalid_argument("config: no memory fractions");
    for (double f : cfg.memory_fracs) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw std::invalid_argument("config: memory fractions must lie in (0, 1]");
        }
    }
    const bool has_wp =
        std::find(cfg.methods.begin(), cfg.methods.end(), "weight-prior") != cfg.methods.end();
    if (has_wp) {
        for (const auto& t : cfg.tasks) {
            if (t != "add-data") {
                throw std::invalid_argument("config: weight-prior supports only the add-data task");
            }
        }
        if (cfg.model != "glm") {
            throw std::invalid_argument("config: weight-prior is defined for the glm model");
        }
    }
    if (cfg.seeds <= 0) throw std::invalid_argument("config: seeds must be positive");
    if (cfg.degree <= 0) throw std::invalid_argument("config: degree must be positive");
    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) && cfg.data != "moons") {
        throw std::invalid_argument("config: test fraction must lie in (0, 1)");
    }
    if (cfg.model == "mlp") {
        for (int h : cfg.hidden) {
            if (h <= 0) throw std::invalid_argument("config: hidden sizes must be positive");
        }
    }
}

std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const bool is_mlp = cfg.model == "mlp";
    const bool need_ggn =
        std::find(cfg.methods.begin(), cfg.methods.end(), "weight-prior") != cfg.methods.end();
    const double tau = cfg.tau.value_or(1.0);

    std::map<std::pair<std::size_t, long>, Scenario> scenarios;
    std::map<std::tuple<std::size_t, long, std::size_t>, MemorySet> memories;
    std::vector<ResultRecord> records;
    long cell_index = 0;

    for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
        const std::string& task_name = cfg.tasks[ti];
        for (const std::string& method : cfg.methods) {
            for (std::size_t fi = 0; fi < cfg.memory_fracs.size(); ++fi) {
                const double frac = cfg.memory_fracs[fi];
                for (long si = 0; si < cfg.seeds; ++si) {
                    const std::uint64_t scen = scenario_seed(cfg.master_seed, ti, si);

                    auto sc_it = scenarios.find({ti, si});
                    if (sc_it == scenarios.end()) {
                        Scenario sc =
                            build_scenario(cfg, task_name, ti, si, need_ggn, cfg.optimizer);
                        sc_it = scenarios.emplace(std::make_pair(ti, si), std::move(sc)).first;
                    }
                    Scenario& sc = sc_it->second;

                    const FeatureMap& eval_map =
                        task_name == "change-model-class" ? sc.map_new : sc.map;
                    const MlpSpec& eval_spec =
                        task_name == "change-model-class" ? sc.mspec_new : sc.mspec;

                    AdaptOptions options;
                    options.tau = tau;
                    options.random_init = cfg.random_init;
                    options.init_seed = cell_seed(scen, cell_index);
                    options.accuracy_targets = cfg.accuracy_targets;
                    if (!cfg.accuracy_targets.empty()) {
                        const LabeledData& test = sc.test_data;
                        if (is_mlp) {
                            options.accuracy_probe = [&eval_spec, &test](const Eigen::VectorXd& w) {
                                return mlp_accuracy(MlpParams::unflatten(eval_spec, w), eval_spec,
                                                    test);
                            };
                        } else {
                            options.accuracy_probe = [&eval_map, &test,
                                                      &sc](const Eigen::VectorXd& w) {
                                return glm_accuracy(GlmModel{w, eval_map, sc.base.family}, test);
                            };
                        }
                    }

                    // Batch reference, shared per (task, seed).
                    if (sc.batch.weights.size() == 0) {
                        AdaptOptions batch_opts = options;
                        batch_opts.init_seed = splitmix64(scen ^ 0xBA7C4ULL);
                        if (is_mlp) {
                            MemorySet none;
                            const MlpObjective obj =
                                mlp_objective_for(sc, cfg, task_name, "batch", none);
                            const Eigen::VectorXd w0 =
                                mlp_init(obj.spec, batch_opts.init_seed).flatten();
                            sc.batch = run_mlp_objective(obj, w0, cfg, cfg.optimizer, batch_opts,
                                                         "batch");
                        } else {
                            sc.batch = solve_batch(sc.task, sc.map, sc.base.family, sc.delta_old,
                                                   sc.old_data, cfg.optimizer, batch_opts);
                        }
                    }

                    // Memory, shared across methods for a given fraction.
                    const auto mem_key = std::make_tuple(ti, si, fi);
                    auto mem_it = memories.find(mem_key);
                    if (mem_it == memories.end()) {
                        const auto m = static_cast<Eigen::Index>(
                            std::llround(frac * static_cast<double>(sc.old_data.size())));
                        MemorySet mem;
                        if (cfg.selection == "memorable") {
                            mem = is_mlp ? select_memorable_mlp(sc.mbase, sc.mspec, sc.old_data, m)
                                         : select_memorable(sc.base, sc.old_data, m);
                        } else {
                            mem = select_random(sc.old_data, m, memory_seed(scen, fi));
                            if (is_mlp) {
                                mem.soft_logits =
                                    mlp_forward_batch(sc.mbase, sc.mspec, mem.inputs).col(0);
                            } else {
                                record_base_logits(mem, sc.base);
                            }
                        }
                        mem_it = memories.emplace(mem_key, std::move(mem)).first;
                    }
                    const MemorySet& memory = mem_it->second;

                    AdaptOutcome outcome;
                    if (method == "batch") {
                        outcome = sc.batch;
                    } else if (is_mlp) {
                        const MlpObjective obj =
                            mlp_objective_for(sc, cfg, task_name, method, memory);
                        Eigen::VectorXd w0;
                        if (task_name == "change-model-class" || cfg.random_init) {
                            w0 = mlp_init(obj.spec, options.init_seed).flatten();
                        } else {
                            w0 = sc.mbase.flatten();
                        }
                        outcome = run_mlp_objective(obj, w0, cfg, cfg.optimizer, options, method);
                    } else if (method == "kprior") {
                        outcome = adapt_kprior(sc.task, sc.base, sc.delta_old, memory, sc.old_data,
                                               cfg.optimizer, options);
                    } else if (method == "replay") {
                        outcome = adapt_replay(sc.task, sc.base, sc.delta_old, memory, sc.old_data,
                                               cfg.optimizer, options);
                    } else {  // weight-prior
                        outcome = adapt_weight_prior(sc.task, sc.base, sc.ggn_full, sc.delta_old,
                                                     cfg.optimizer, options);
                    }

                    ResultRecord rec;
                    rec.cell_index = cell_index;
                    rec.task = task_name;
                    rec.method = method;
                    rec.selection = cfg.selection;
                    rec.model = cfg.model;
                    rec.memory_fraction = frac;
                    rec.tau = tau;
                    rec.delta = sc.delta_old;
                    rec.delta_new = sc.delta_new;
                    rec.degree = cfg.degree;
                    rec.seed = si;
                    if (is_mlp) {
                        const MlpParams params = MlpParams::unflatten(eval_spec, outcome.weights);
                        rec.train_acc = mlp_accuracy(params, eval_spec, sc.train_eval);
                        rec.test_acc = mlp_accuracy(params, eval_spec, sc.test_data);
                        rec.l2_to_batch = (outcome.weights - sc.batch.weights).norm();
                        rec.linf_to_batch =
                            (outcome.weights - sc.batch.weights).cwiseAbs().maxCoeff();
                        const MlpParams batch_params =
                            MlpParams::unflatten(eval_spec, sc.batch.weights);
                        const Eigen::MatrixXd fa =
                            mlp_forward_batch(params, eval_spec, sc.test_data.inputs);
                        const Eigen::MatrixXd fb =
                            mlp_forward_batch(batch_params, eval_spec, sc.test_data.inputs);
                        Eigen::Index differ = 0;
                        for (Eigen::Index i = 0; i < fa.rows(); ++i) {
                            if ((fa(i, 0) > 0.0) != (fb(i, 0) > 0.0)) ++differ;
                        }
                        rec.pred_disagreement =
                            fa.rows() == 0 ? 0.0
                                           : static_cast<double>(differ) /
                                                 static_cast<double>(fa.rows());
                    } else {
                        const GlmModel fitted{outcome.weights, eval_map, sc.base.family};
                        rec.train_acc = glm_accuracy(fitted, sc.train_eval);
                        rec.test_acc = glm_accuracy(fitted, sc.test_data);
                        const DistanceReport dist = distance_to_batch(
                            outcome.weights, sc.batch.weights, sc.test_data, eval_map,
                            sc.base.family);
                        rec.l2_to_batch = dist.l2;
                        rec.linf_to_batch = dist.linf;
                        rec.pred_disagreement = dist.pred_disagreement;
                    }
                    rec.final_objective = outcome.final_objective;
                    rec.grad_evals = outcome.grad_evals;
                    rec.converged = outcome.converged;
                    rec.wall_ms = outcome.wall_time_ms;
                    for (double t : cfg.accuracy_targets) rec.backprops_to_target[t] = -1;
                    for (const auto& [t, evals] : outcome.evals_to_target) {
                        rec.backprops_to_target[t] = evals * outcome.points_per_eval;
                    }
                    records.push_back(std::move(rec));
                    ++cell_index;
                }
            }
        }
    }
    std::sort(records.begin(), records.end(),
              [](const ResultRecord& a, const ResultRecord& b) { return a.cell_index < b.cell_index; });
    return records;
}

std::string results_csv(const std::vector<ResultRecord>& records,
                        const std::vector<double>& targets) {
    std::vector<double> cols = targets;
    std::sort(cols.begin(), cols.end());
    std::ostringstream out;
    out << "task,method,selection,model,memory_fraction,tau,delta,delta_new,degree,seed,"
           "train_acc,test_acc,final_objective,l2_to_batch,linf_to_batch,pred_disagreement,"
           "grad_evals,converged";
    for (double t : cols) out << ",backprops_to_" << fmt(t);
    out << '\n';
    for (const auto& r : records) {
        out << r.task << ',' << r.method << ',' << r.selection << ',' << r.model << ','
            << fmt(r.memory_fraction) << ',' << fmt(r.tau) << ',' << fmt(r.delta) << ','
            << fmt(r.delta_new) << ',' << r.degree << ',' << r.seed << ',' << fmt(r.train_acc)
            << ',' << fmt(r.test_acc) << ',' << fmt(r.final_objective) << ','
            << fmt(r.l2_to_batch) << ',' << fmt(r.linf_to_batch) << ','
            << fmt(r.pred_disagreement) << ',' << r.grad_evals << ',' << (r.converged ? 1 : 0);
        for (double t : cols) {
            const auto it = r.backprops_to_target.find(t);
            out << ',' << (it == r.backprops_to_target.end() ? fmt(-1L) : fmt(it->second));
        }
        out << '\n';
    }
    return out.str();
}

namespace {

using FieldGetter = std::function<double(const ResultRecord&)>;

FieldGetter numeric_field(const std::string& name) {
    static const std::map<std::string, FieldGetter> fields = {
        {"memory_fraction", [](const ResultRecord& r) { return r.memory_fraction; }},
        {"tau", [](const ResultRecord& r) { return r.tau; }},
        {"delta", [](const ResultRecord& r) { return r.delta; }},
        {"delta_new", [](const ResultRecord& r) { return r.delta_new; }},
        {"degree", [](const ResultRecord& r) { return double(r.degree); }},
        {"seed", [](const ResultRecord& r) { return double(r.seed); }},
        {"train_acc", [](const ResultRecord& r) { return r.train_acc; }},
        {"test_acc", [](const ResultRecord& r) { return r.test_acc; }},
        {"final_objective", [](const ResultRecord& r) { return r.final_objective; }},
        {"l2_to_batch", [](const ResultRecord& r) { return r.l2_to_batch; }},
        {"linf_to_batch", [](const ResultRecord& r) { return r.linf_to_batch; }},
        {"pred_disagreement", [](const ResultRecord& r) { return r.pred_disagreement; }},
        {"grad_evals", [](const ResultRecord& r) { return double(r.grad_evals); }},
        {"wall_ms", [](const ResultRecord& r) { return r.wall_ms; }},
        {"converged", [](const ResultRecord& r) { return r.converged ? 1.0 : 0.0; }},
    };
    const auto it = fields.find(name);
    if (it == fields.end()) {
        throw std::invalid_argument("emit_plot_data: unknown numeric field '" + name + "'");
    }
    return it->second;
}

std::string field_as_string(const ResultRecord& r, const std::string& name) {
    if (name == "task") return r.task;
    if (name == "method") return r.method;
    if (name == "selection") return r.selection;
    if (name == "model") return r.model;
    return fmt(numeric_field(name)(r));
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                              c == '_'
                          ? c
                          : '-');
    }
    return out;
}

}  // namespace

std::vector<std::string> emit_plot_data(const std::vector<ResultRecord>& records,
                                        const std::string& x_field, const std::string& y_field,
                                        const std::vector<std::string>& group_fields,
                                        const std::string& dir) {
    const FieldGetter get_x = numeric_field(x_field);
    const FieldGetter get_y = numeric_field(y_field);
    for (const auto& g : group_fields) field_as_string(records.empty() ? ResultRecord{} : records.front(), g);

    std::map<std::string, std::map<double, std::vector<double>>> groups;
    for (const auto& r : records) {
        std::string key;
        for (const auto& g : group_fields) {
            if (!key.empty()) key += "__";
            key += g + "-" + field_as_string(r, g);
        }
        if (key.empty()) key = "all";
        groups[key][get_x(r)].push_back(get_y(r));
    }

    std::filesystem::create_directories(dir);
    std::vector<std::string> written;
    for (const auto& [key, buckets] : groups) {
        const std::string path =
            dir + "/" + sanitize(y_field + "_vs_" + x_field + "__" + key) + ".dat";
        std::ostringstream body;
        for (const auto& [x, ys] : buckets) {
            double mean = 0.0;
            for (double y : ys) mean += y;
            mean /= static_cast<double>(ys.size());
            double var = 0.0;
            for (double y : ys) var += (y - mean) * (y - mean);
            var /= static_cast<double>(ys.size());
            body << fmt(x) << ' ' << fmt(mean) << ' ' << fmt(std::sqrt(var)) << '\n';
        }
        write_text_file(path, body.str());
        written.push_back(path);
    }
    return written;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_text_file: cannot open " + path);
    out << content;
}

}  // namespace kpriors
