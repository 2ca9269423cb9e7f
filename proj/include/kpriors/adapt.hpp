#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kpriors/dataset.hpp"
#include "kpriors/glm.hpp"
#include "kpriors/kprior.hpp"
#include "kpriors/memory_select.hpp"
#include "kpriors/optimizer.hpp"

namespace kpriors {

struct AddData {
    LabeledData new_data;
};
struct RemoveData {
    std::vector<Eigen::Index> indices;  ///< rows of the old data to forget
};
struct ChangeRegularizer {
    double delta_new = 0.0;
};
struct ChangeModelClass {
    FeatureMap new_map;
};
using AdaptationTask = std::variant<AddData, RemoveData, ChangeRegularizer, ChangeModelClass>;

struct AdaptOptions {
    double tau = 1.0;
    bool random_init = false;  ///< start from seeded noise instead of w* / A w*
    std::uint64_t init_seed = 0;
    /// Remove-data objectives are unbounded below for aggressive removals;
    /// the run aborts (converged=false) once the objective drops past this.
    double objective_floor = -1e6;
    std::vector<double> accuracy_targets;
    std::function<double(const Eigen::VectorXd&)> accuracy_probe;
};

struct AdaptOutcome {
    Eigen::VectorXd weights;
    long grad_evals = 0;
    double wall_time_ms = 0.0;
    bool converged = false;
    std::string method;
    double memory_fraction = 1.0;
    double final_objective = 0.0;
    /// Data rows whose per-example loss one oracle call evaluates; together
    /// with grad_evals this yields the backprop count of a run.
    Eigen::Index points_per_eval = 0;
    std::vector<std::pair<double, long>> evals_to_target;
};

/// Train a GLM to the configured tolerance; start is w0 or zero.
GlmModel fit_glm(const FeatureMap& map, Family family, const LabeledData& data, double delta,
                 const OptimizerConfig& cfg, OptimResult* result_out = nullptr,
                 const Eigen::VectorXd* w0 = nullptr);

/// Retrain from scratch on the task's full resulting objective.
AdaptOutcome solve_batch(const AdaptationTask& task, const FeatureMap& map, Family family,
                         double delta, const LabeledData& old_data, const OptimizerConfig& cfg,
                         const AdaptOptions& options = {});

/// K-prior adaptation: the task loss (if any) plus the K-prior built from
/// the memory. Add uses + loss(new), Remove uses - loss(removed),
/// Change Regularizer swaps the weight divergence for the two-generator
/// Bregman pair (delta_new, delta_old), and Change Model Class trains the
/// nested map against the stored base logits with the weight term anchored
/// at A w*. Warm-started at w* (or A w*) unless options.random_init.
AdaptOutcome adapt_kprior(const AdaptationTask& task, const GlmModel& base, double delta_old,
                          const MemorySet& memory, const LabeledData& old_data,
                          const OptimizerConfig& cfg, const AdaptOptions& options = {});

/// Same objective shapes, but the functional term replays the memory's
/// true labels and the weight term is the plain (delta/2)||w||^2 of the
/// original problem (centered at zero).
AdaptOutcome adapt_replay(const AdaptationTask& task, const GlmModel& base, double delta_old,
                          const MemorySet& memory, const LabeledData& old_data,
                          const OptimizerConfig& cfg, const AdaptOptions& options = {});

/// Add-data adaptation against the quadratic weight-prior
/// 1/2 (w-w*)'[G+delta I](w-w*); other task kinds are rejected.
AdaptOutcome adapt_weight_prior(const AdaptationTask& task, const GlmModel& base,
                                const Eigen::MatrixXd& ggn_full, double delta,
                                const OptimizerConfig& cfg, const AdaptOptions& options = {});

/// Composed adaptation (add and/or remove rows while optionally changing
/// the regularizer) built from the same ingredients; exact at full memory.
AdaptOutcome adapt_kprior_combined(const LabeledData& added,
                                   const std::vector<Eigen::Index>& removed,
                                   std::optional<double> delta_new, const GlmModel& base,
                                   double delta_old, const MemorySet& memory,
                                   const LabeledData& old_data, const OptimizerConfig& cfg,
                                   const AdaptOptions& options = {});

/// (h'(f_{w*}^i), h'(f_w^i)) per row: stale curvature next to fresh, the
/// diagonal-scatter diagnostic for weight-prior staleness.
std::vector<std::pair<double, double>> stale_mean_diagnostic(const GlmModel& base,
                                                             const Eigen::VectorXd& candidate_w,
                                                             const LabeledData& data);

struct DistanceReport {
    double linf = 0.0;
    double l2 = 0.0;
    double pred_disagreement = 0.0;  ///< fraction of rows whose hard prediction differs
};

DistanceReport distance_to_batch(const Eigen::VectorXd& w_a, const Eigen::VectorXd& w_b,
                                 const LabeledData& eval_data, const FeatureMap& map,
                                 Family family);

}  // namespace kpriors
