#include "kpriors/features.hpp"

#include <stdexcept>

namespace kpriors {

Eigen::VectorXd features_expand(const FeatureMap& map, const Eigen::VectorXd& x) {
    if (x.size() != map.input_dim) {
        throw std::invalid_argument("features_expand: input length does not match input_dim");
    }
    Eigen::VectorXd out(map.output_dim());
    Eigen::Index k = 0;
    if (map.include_bias) out[k++] = 1.0;
    Eigen::VectorXd power = Eigen::VectorXd::Ones(x.size());
    for (int d = 1; d <= map.degree; ++d) {
        power.array() *= x.array();
        for (Eigen::Index j = 0; j < x.size(); ++j) out[k++] = power[j];
    }
    return out;
}

Eigen::MatrixXd design_matrix(const FeatureMap& map, const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != map.input_dim) {
        throw std::invalid_argument("design_matrix: input width does not match input_dim");
    }
    Eigen::MatrixXd phi(inputs.rows(), map.output_dim());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        phi.row(i) = features_expand(map, inputs.row(i).transpose()).transpose();
    }
    return phi;
}

bool is_nested_prefix(const FeatureMap& inner, const FeatureMap& outer) {
    return inner.input_dim == outer.input_dim && inner.include_bias == outer.include_bias &&
           inner.degree <= outer.degree;
}

Eigen::MatrixXd prefix_projection(const FeatureMap& new_map, const FeatureMap& old_map) {
    const bool nested = is_nested_prefix(new_map, old_map) || is_nested_prefix(old_map, new_map);
    if (!nested) {
        throw std::invalid_argument("prefix_projection: feature maps are not nested");
    }
    const Eigen::Index pn = new_map.output_dim();
    const Eigen::Index po = old_map.output_dim();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(pn, po);
    for (Eigen::Index i = 0; i < std::min(pn, po); ++i) a(i, i) = 1.0;
    return a;
}

}  // namespace kpriors
