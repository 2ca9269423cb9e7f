#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "kpriors/dataset.hpp"
#include "kpriors/memory_select.hpp"

namespace kpriors {

enum class Activation { relu, tanh_act };
enum class OutputKind { sigmoid_scalar, softmax };

/// Fully-connected net: layer_sizes = [input, hidden..., output]. The
/// output layer is linear; the loss attaches the sigmoid/softmax link.
struct MlpSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::relu;
    OutputKind output = OutputKind::sigmoid_scalar;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
    Eigen::Index param_count() const;
    void validate() const;  ///< >= 1 hidden layer, output dim matches the link
};

struct MlpParams {
    std::vector<Eigen::MatrixXd> weights;  ///< per layer, out x in
    std::vector<Eigen::VectorXd> biases;

    Eigen::VectorXd flatten() const;
    static MlpParams unflatten(const MlpSpec& spec, const Eigen::VectorXd& flat);
};

/// Per-layer uniform init in +-sqrt(6/(fan_in+fan_out)), seeded.
MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed);

Eigen::VectorXd mlp_forward(const MlpParams& params, const MlpSpec& spec,
                            const Eigen::VectorXd& x);
/// Row i holds the logits of input row i.
Eigen::MatrixXd mlp_forward_batch(const MlpParams& params, const MlpSpec& spec,
                                  const Eigen::MatrixXd& inputs);

/// Numerically stable softmax of a logit vector (rows sum to 1).
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// sum_i grad f_w(x_i) * out_err_i, flattened: one backward pass per row
/// with the given output-space cotangent. The workhorse behind every loss
/// gradient here; summation order is fixed (row-major) so results are
/// deterministic.
Eigen::VectorXd mlp_vjp(const MlpParams& params, const MlpSpec& spec,
                        const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& out_err);

/// Teacher logits used as soft targets, both sides scaled by the
/// temperature and the soft term scaled by T^2.
struct SoftTargets {
    Eigen::MatrixXd logits;  ///< N x K teacher logits
    double temperature = 1.0;
};

/// Value and flattened gradient of
///   lambda sum_i l(y_i, h(f_w^i)) + (delta/2)||w||^2
///     + (1-lambda) T^2 sum_i l(h(f*_i/T), h(f_w^i/T)).
/// Hard labels are 0/1 for the scalar link and class indices for softmax.
/// Throws std::invalid_argument for T <= 0 or lambda outside [0, 1].
std::pair<double, Eigen::VectorXd> mlp_loss_grad(const MlpParams& params, const MlpSpec& spec,
                                                 const LabeledData& data,
                                                 const std::optional<SoftTargets>& soft,
                                                 double lambda, double delta);

/// Computes the KD gradient (T=1, delta=0) two ways -- direct backprop of
/// the blended objective, and the data gradient minus (1-lambda) times the
/// teacher-residual backprop -- and returns their relative difference.
double kd_leftover_identity_check(const MlpParams& student, const MlpParams& teacher,
                                  const MlpSpec& spec, const LabeledData& data, double lambda);

/// Deep-net K-prior: functional Bregman term on the memory plus
/// tau (delta/2) ||w - w*||^2.
double dl_kprior_value(const MlpParams& params, const MlpSpec& spec,
                       const Eigen::MatrixXd& base_soft_logits,
                       const Eigen::MatrixXd& memory_inputs, const Eigen::VectorXd& w_star_flat,
                       double delta, double tau);

/// sum_{i in M} grad f_w^i [h(f_w^i) - h(f*_i)] + tau delta (w - w*).
Eigen::VectorXd dl_kprior_grad(const MlpParams& params, const MlpSpec& spec,
                               const Eigen::MatrixXd& base_soft_logits,
                               const Eigen::MatrixXd& memory_inputs,
                               const Eigen::VectorXd& w_star_flat, double delta, double tau);

/// Hard-label accuracy: f > 0 for the scalar link, argmax for softmax
/// (ties to the smaller class index).
double mlp_accuracy(const MlpParams& params, const MlpSpec& spec, const LabeledData& data);

/// Memorable-past selection for nets: h'(f) for the scalar link, the
/// softmax Jacobian trace (multiclass_score) otherwise. Teacher logits are
/// stored per memory row.
MemorySet select_memorable_mlp(const MlpParams& params, const MlpSpec& spec,
                               const LabeledData& data, Eigen::Index m);

}  // namespace kpriors
