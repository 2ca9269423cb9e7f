#pragma once

#include <Eigen/Dense>

namespace kpriors {

/// Per-coordinate polynomial basis: [bias?, x_1..x_D, x_1^2..x_D^2, ...].
/// No cross terms, so the output dimension stays linear in D and a
/// degree-(d-1) map's output is a prefix of the degree-d map's output.
/// That nesting is what makes Change Model Class between degrees exact.
struct FeatureMap {
    int degree = 1;
    bool include_bias = true;
    int input_dim = 0;

    int output_dim() const { return (include_bias ? 1 : 0) + input_dim * degree; }

    bool operator==(const FeatureMap&) const = default;
};

/// Expand one input row; throws std::invalid_argument on length mismatch.
Eigen::VectorXd features_expand(const FeatureMap& map, const Eigen::VectorXd& x);

/// N x P design matrix for a batch of raw input rows.
Eigen::MatrixXd design_matrix(const FeatureMap& map, const Eigen::MatrixXd& inputs);

/// True when `inner`'s feature vector is a coordinate prefix of `outer`'s.
bool is_nested_prefix(const FeatureMap& inner, const FeatureMap& outer);

/// P_new x P_old map A with A(i,i)=1 on the shared prefix and zero
/// elsewhere: shrinking drops the trailing old coordinates, growing pads
/// with zeros. Throws std::invalid_argument when the maps are not nested.
Eigen::MatrixXd prefix_projection(const FeatureMap& new_map, const FeatureMap& old_map);

}  // namespace kpriors
