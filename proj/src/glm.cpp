#include "kpriors/glm.hpp"

#include <stdexcept>

namespace kpriors {

namespace {

void check_model(const GlmModel& model) {
    if (model.weights.size() != model.feature_map.output_dim()) {
        throw std::invalid_argument("glm: weight length does not match feature map output");
    }
}

}  // namespace

Eigen::VectorXd glm_logits(const GlmModel& model, const Eigen::MatrixXd& inputs) {
    check_model(model);
    return design_matrix(model.feature_map, inputs) * model.weights;
}

double glm_objective(const GlmModel& model, const LabeledData& data, double delta) {
    check_model(model);
    double value = 0.0;
    if (data.size() > 0) {
        const Eigen::VectorXd f = glm_logits(model, data.inputs);
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            value += family_eval(model.family, f[i]).A - data.labels[i] * f[i];
        }
    }
    return value + 0.5 * delta * model.weights.squaredNorm();
}

Eigen::VectorXd glm_gradient(const GlmModel& model, const LabeledData& data, double delta) {
    check_model(model);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.weights.size());
    if (data.size() > 0) {
        const Eigen::MatrixXd phi = design_matrix(model.feature_map, data.inputs);
        const Eigen::VectorXd f = phi * model.weights;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            const double resid = family_eval(model.family, f[i]).h - data.labels[i];
            grad.noalias() += phi.row(i).transpose() * resid;
        }
    }
    grad += delta * model.weights;
    return grad;
}

Eigen::MatrixXd ggn_matrix(const GlmModel& model, const Eigen::MatrixXd& inputs) {
    check_model(model);
    const Eigen::Index p = model.weights.size();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    if (inputs.rows() == 0) return g;
    const Eigen::MatrixXd phi = design_matrix(model.feature_map, inputs);
    const Eigen::VectorXd f = phi * model.weights;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        const double hp = family_eval(model.family, f[i]).hprime;
        g.noalias() += hp * (phi.row(i).transpose() * phi.row(i));
    }
    return g;
}

double glm_accuracy(const GlmModel& model, const LabeledData& data) {
    if (data.size() == 0) return 0.0;
    const Eigen::VectorXd f = glm_logits(model, data.inputs);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const double pred = f[i] > 0.0 ? 1.0 : 0.0;
        if (pred == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace kpriors
