#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "kpriors/dataset.hpp"
#include "kpriors/glm.hpp"

namespace kpriors {

enum class SelectionStrategy { top_hprime, random };

/// Stored past examples with the base model's predictions frozen at
/// selection time. Logits are stored (not h values) so both the Bregman
/// value and its gradient can be rebuilt without the base weights.
struct MemorySet {
    std::vector<Eigen::Index> indices;  ///< unique, ascending, into the source data
    Eigen::MatrixXd inputs;             ///< M x D raw rows, same order as indices
    Eigen::VectorXd soft_logits;        ///< f_{w*} per point (scalar-output models)
    Eigen::MatrixXd soft_logit_rows;    ///< M x K teacher logits (multi-output models)
    Eigen::VectorXd true_labels;
    SelectionStrategy strategy = SelectionStrategy::top_hprime;

    Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }
};

/// The m rows with the largest h'(f_{w*}^i); ties go to the smaller row
/// index. Soft logits are recorded from `model` at selection time.
MemorySet select_memorable(const GlmModel& model, const LabeledData& data, Eigen::Index m);

/// Uniform sample without replacement drawn from the documented generator
/// in rng.hpp (mt19937_64 + Fisher-Yates), so index sets reproduce across
/// platforms. Soft logits are left empty; fill them with
/// record_base_logits before building a K-prior.
MemorySet select_random(const LabeledData& data, Eigen::Index m, std::uint64_t seed);

/// Record f_{w*} on the stored inputs (used after select_random).
void record_base_logits(MemorySet& memory, const GlmModel& base);

/// Selection score for softmax models: 1 - sum_k p_k^2, the trace of the
/// softmax Jacobian diag(p) - p p'. Throws std::invalid_argument unless p
/// is a simplex vector (entries >= 0, sum within 1e-8 of 1).
double multiclass_score(const Eigen::VectorXd& probabilities);

}  // namespace kpriors
