#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpriors/adapt.hpp"
#include "kpriors/dataset.hpp"
#include "kpriors/optimizer.hpp"

namespace kpriors {

struct MoonsSpec {
    int n = 500;
    double noise = 0.15;
    int splits = 5;
};

/// One benchmark grid: every (task, method, memory fraction, seed) cell is
/// run and emitted as one CSV row. Rows are fully determined by the config
/// and master seed.
struct ExperimentConfig {
    std::vector<std::string> tasks = {"add-data"};
    std::vector<std::string> methods = {"kprior"};
    std::vector<double> memory_fracs = {0.02, 0.05, 0.10, 0.25, 0.50, 1.0};
    std::string selection = "memorable";  ///< memorable | random
    std::optional<double> tau;            ///< default 1
    std::optional<double> delta;          ///< default 5; change-regularizer: 50 (glm) / 5 (mlp)
    std::optional<double> delta_new;      ///< default 5 (glm) / 10 (mlp)
    int degree = 1;
    int degree_new = 0;  ///< 0 resolves to max(1, degree - 1)
    std::string model = "glm";  ///< glm | mlp
    std::vector<int> hidden = {100};
    std::vector<int> hidden_new;  ///< mlp change-model-class; empty drops the last hidden layer
    int seeds = 5;
    std::uint64_t master_seed = 0;
    std::string data = "moons";  ///< "moons", a .csv path, or a sparse-format path
    std::string label_column = "label";
    MoonsSpec moons;
    double test_fraction = 0.2;  ///< file data only; moons draws a fresh test set
    int remove_count = 0;        ///< 0 resolves to 10% of the old data
    double add_fraction = 0.1;   ///< file data: share of train held out as the new batch
    std::vector<double> accuracy_targets;
    OptimizerConfig optimizer;
    bool random_init = false;
    int sgd_epochs = 0;  ///< > 0 switches the mlp model to minibatch SGD
    int sgd_batch = 128;
    double sgd_step = 0.005;
};

struct ResultRecord {
    long cell_index = 0;
    std::string task;
    std::string method;
    std::string selection;
    std::string model;
    double memory_fraction = 1.0;
    double tau = 1.0;
    double delta = 0.0;
    double delta_new = 0.0;
    int degree = 1;
    long seed = 0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double final_objective = 0.0;
    double l2_to_batch = 0.0;
    double linf_to_batch = 0.0;
    double pred_disagreement = 0.0;
    long grad_evals = 0;
    /// Backprop counts in the style of the convergence-cost table:
    /// gradient evaluations until the target accuracy, times the data rows
    /// each evaluation touches. -1 when the target was never reached.
    std::map<double, long> backprops_to_target;
    double wall_ms = 0.0;  ///< informational; kept out of the CSV so reruns are byte-identical
    bool converged = false;
};

/// Rejects invalid combinations (unknown task/method/selection, fractions
/// outside (0,1], weight-prior on a non-add-data task or on the mlp model)
/// before any cell runs.
void validate_config(const ExperimentConfig& cfg);

/// Runs every grid cell; the batch reference is computed once per
/// (task, seed) and shared across methods and fractions. Deterministic for
/// a fixed (config, master_seed).
std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg);

/// Fixed-header CSV ('.' decimals, locale-independent shortest-round-trip
/// formatting, rows ordered by cell index).
std::string results_csv(const std::vector<ResultRecord>& records,
                        const std::vector<double>& targets);

/// One whitespace-separated file per group under `dir`, columns
/// "x mean std" over seeds (population std), sorted by x. Returns the
/// written paths. Unknown field names raise std::invalid_argument.
std::vector<std::string> emit_plot_data(const std::vector<ResultRecord>& records,
                                        const std::string& x_field, const std::string& y_field,
                                        const std::vector<std::string>& group_fields,
                                        const std::string& dir);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace kpriors
