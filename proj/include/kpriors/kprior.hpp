#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>

#include "kpriors/glm.hpp"
#include "kpriors/memory_select.hpp"

namespace kpriors {

/// Weight-space divergence anchored at the base weights. l2_shift is the
/// Bregman divergence of (delta/2)||w||^2, i.e. (delta/2)||w - base||^2.
/// two_generator swaps the regularizer: for the L2 pair it is
///   (1/2)(gamma_new ||w||^2 + delta_old ||base||^2 - 2 delta_old w'base),
/// whose gradient gamma_new*w - delta_old*base replaces the gradient of
/// the old regularizer at the base point with the new one at w.
struct WeightDivergence {
    enum class Kind { none, l2_shift, two_generator };

    Kind kind = Kind::none;
    double delta = 0.0;      ///< l2_shift coefficient
    double gamma_new = 0.0;  ///< two_generator: new regularizer coefficient
    double delta_old = 0.0;  ///< two_generator: old regularizer coefficient

    static WeightDivergence none() { return {}; }
    static WeightDivergence l2_shift(double delta);
    static WeightDivergence two_generator(double gamma_new, double delta_old);

    double value(const Eigen::VectorXd& w, const Eigen::VectorXd& base) const;
    Eigen::VectorXd grad(const Eigen::VectorXd& w, const Eigen::VectorXd& base) const;
};

/// Frozen adaptation prior: base weights w*, a memory of past inputs with
/// the base model's logits, a weight divergence scaled by tau, and the
/// feature map of the model being trained. model_map, when present, is
/// the P_new x P_old matrix A carrying w* into the new parameter space
/// (the weight divergence is then anchored at A w*).
struct KPriorSpec {
    Eigen::VectorXd base_weights;
    MemorySet memory;
    double tau = 1.0;
    WeightDivergence weight_div = WeightDivergence::l2_shift(0.0);
    Family family = Family::bernoulli_logit;
    FeatureMap feature_map_new;
    std::optional<Eigen::MatrixXd> model_map;

    /// Anchor of the weight divergence: A w* when a model map is set.
    Eigen::VectorXd anchor() const;
};

/// sum_{i in M} B_A(f_w^i || f*_i) + tau * weight_div, where f*_i is the
/// stored base logit.
double kprior_value(const KPriorSpec& spec, const Eigen::VectorXd& w);

/// sum_{i in M} phi_i [h(f_w^i) - h(f*_i)] + tau * grad(weight_div).
Eigen::VectorXd kprior_grad(const KPriorSpec& spec, const Eigen::VectorXd& w);

/// Gradient-reconstruction error grad l(w) - grad K(w), computed in the
/// leftover form: the functional differences over rows outside the memory
/// plus the correction terms that the K-prior cannot see. For tau=1 and
/// an l2_shift(delta) divergence this is exactly
///   sum_{i notin M} phi_i [h(f_w^i) - h(f*_i)] + grad l(w*),
/// so the error vanishes for full memory at an optimal base. Requires the
/// memory rows to be a subset of full_data (verified).
Eigen::VectorXd grad_reconstruction_error(const KPriorSpec& spec, const Eigen::VectorXd& w,
                                          const LabeledData& full_data, double delta);

/// First-order estimate G*(X\M) (w - w*) of the reconstruction error,
/// with the leftover GGN built at w*.
Eigen::VectorXd taylor_error_estimate(const Eigen::MatrixXd& leftover_ggn, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& w_star);

/// Quadratic weight-prior (value, gradient):
///   value = 1/2 (w - w*)' [G + delta I] (w - w*),  grad = [G + delta I](w - w*),
/// with G the full-data GGN at w*. The gradient is identical to the
/// GGN-Taylor approximation of the K-prior gradient.
std::pair<double, Eigen::VectorXd> weight_prior_quad(const Eigen::VectorXd& w,
                                                     const Eigen::VectorXd& w_star,
                                                     const Eigen::MatrixXd& ggn_full, double delta);

/// Thin SVD of the transposed design matrix, Phi' = U diag(S) V', kept to
/// the numerical rank K (singular values above 1e-10 * s_max).
struct SvdBasis {
    Eigen::MatrixXd U;  ///< P x K, orthonormal columns
    Eigen::VectorXd S;  ///< K singular values, descending
    Eigen::MatrixXd V;  ///< N x K, orthonormal columns
    Eigen::Index rank = 0;
};

SvdBasis svd_basis(const Eigen::MatrixXd& design_matrix);

/// Gradient of the optimal K-prior built on the top-m singular vectors:
///   U_{1:m} S_{1:m} V_{1:m}' d_x + delta (w - w*),
/// where d_x stacks h(f_w^i) - h(f*_i) over all rows of `features`
/// (the N x P design matrix the basis was computed from). m = K recovers
/// the exact full-memory K-prior gradient. Throws when m > K.
Eigen::VectorXd optimal_kprior_grad(const SvdBasis& basis, Eigen::Index m, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& w_star, double delta,
                                    const Eigen::MatrixXd& features, Family family);

/// Closed-form reconstruction error of the top-m optimal K-prior,
/// sqrt(sum_{j>m} s_j^2 a_j^2) with a = V' d_x; equals the Euclidean norm
/// of the gradient left out by truncating the basis at m.
double optimal_error_norm(const SvdBasis& basis, Eigen::Index m, const Eigen::VectorXd& w,
                          const Eigen::VectorXd& w_star, const Eigen::MatrixXd& features,
                          Family family);

/// Diagnostic per-singular-vector weights beta* = D_u^{-1} S V' d_x, where
/// D_u is diagonal with entries h(f_w(u_j)) - h(f*(u_j)). Undefined (and
/// raising std::runtime_error) when some entry of D_u is within 1e-12 of
/// zero; the factored gradient above never needs it.
Eigen::VectorXd optimal_beta(const SvdBasis& basis, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& w_star, const Eigen::MatrixXd& features,
                             Family family);

}  // namespace kpriors
