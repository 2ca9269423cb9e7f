#pragma once

#include <Eigen/Dense>

#include "kpriors/dataset.hpp"
#include "kpriors/exp_family.hpp"
#include "kpriors/features.hpp"

namespace kpriors {

/// Linear model f_w(x) = phi(x)' w with an exponential-family likelihood.
struct GlmModel {
    Eigen::VectorXd weights;
    FeatureMap feature_map;
    Family family = Family::bernoulli_logit;
};

/// Logits phi(x_i)' w for each input row.
Eigen::VectorXd glm_logits(const GlmModel& model, const Eigen::MatrixXd& inputs);

/// sum_i [A(f_i) - y_i f_i] + (delta/2) ||w||^2.
double glm_objective(const GlmModel& model, const LabeledData& data, double delta);

/// sum_i phi_i [h(f_i) - y_i] + delta w.
Eigen::VectorXd glm_gradient(const GlmModel& model, const LabeledData& data, double delta);

/// Generalized Gauss-Newton matrix sum_i phi_i h'(f_i) phi_i', evaluated at
/// the model's current weights over the given input rows. Symmetric PSD.
Eigen::MatrixXd ggn_matrix(const GlmModel& model, const Eigen::MatrixXd& inputs);

/// Hard predictions: f > 0 for Bernoulli/Gaussian logits (the f == 0 tie
/// goes to class 0). Returns the fraction matching the labels.
double glm_accuracy(const GlmModel& model, const LabeledData& data);

}  // namespace kpriors
