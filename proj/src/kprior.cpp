#include "kpriors/kprior.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace kpriors {

WeightDivergence WeightDivergence::l2_shift(double delta) {
    if (delta < 0.0) throw std::invalid_argument("l2_shift: delta must be nonnegative");
    WeightDivergence d;
    d.kind = Kind::l2_shift;
    d.delta = delta;
    return d;
}

WeightDivergence WeightDivergence::two_generator(double gamma_new, double delta_old) {
    if (gamma_new < 0.0 || delta_old < 0.0) {
        throw std::invalid_argument("two_generator: coefficients must be nonnegative");
    }
    WeightDivergence d;
    d.kind = Kind::two_generator;
    d.gamma_new = gamma_new;
    d.delta_old = delta_old;
    return d;
}

double WeightDivergence::value(const Eigen::VectorXd& w, const Eigen::VectorXd& base) const {
    switch (kind) {
        case Kind::none:
            return 0.0;
        case Kind::l2_shift:
            return 0.5 * delta * (w - base).squaredNorm();
        case Kind::two_generator:
            return 0.5 * (gamma_new * w.squaredNorm() + delta_old * base.squaredNorm()) -
                   delta_old * w.dot(base);
    }
    return 0.0;
}

Eigen::VectorXd WeightDivergence::grad(const Eigen::VectorXd& w, const Eigen::VectorXd& base) const {
    switch (kind) {
        case Kind::none:
            return Eigen::VectorXd::Zero(w.size());
        case Kind::l2_shift:
            return delta * (w - base);
        case Kind::two_generator:
            return gamma_new * w - delta_old * base;
    }
    return Eigen::VectorXd::Zero(w.size());
}

Eigen::VectorXd KPriorSpec::anchor() const {
    if (model_map) {
        if (model_map->cols() != base_weights.size()) {
            throw std::invalid_argument("KPriorSpec: model_map width does not match base weights");
        }
        return *model_map * base_weights;
    }
    return base_weights;
}

namespace {

void check_dims(const KPriorSpec& spec, const Eigen::VectorXd& w) {
    if (w.size() != spec.feature_map_new.output_dim()) {
        throw std::invalid_argument("kprior: weight length does not match the new feature map");
    }
    if (spec.memory.size() > 0 && spec.memory.soft_logits.size() != spec.memory.size()) {
        throw std::invalid_argument("kprior: memory has no recorded soft logits");
    }
}

}  // namespace

double kprior_value(const KPriorSpec& spec, const Eigen::VectorXd& w) {
    check_dims(spec, w);
    double value = 0.0;
    if (spec.memory.size() > 0) {
        const Eigen::MatrixXd phi = design_matrix(spec.feature_map_new, spec.memory.inputs);
        const Eigen::VectorXd f = phi * w;
        for (Eigen::Index i = 0; i < spec.memory.size(); ++i) {
            value += bregman_log_partition(spec.family, f[i], spec.memory.soft_logits[i]);
        }
    }
    if (spec.weight_div.kind != WeightDivergence::Kind::none) {
        value += spec.tau * spec.weight_div.value(w, spec.anchor());
    }
    return value;
}

Eigen::VectorXd kprior_grad(const KPriorSpec& spec, const Eigen::VectorXd& w) {
    check_dims(spec, w);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(w.size());
    if (spec.memory.size() > 0) {
        const Eigen::MatrixXd phi = design_matrix(spec.feature_map_new, spec.memory.inputs);
        const Eigen::VectorXd f = phi * w;
        for (Eigen::Index i = 0; i < spec.memory.size(); ++i) {
            const double diff = family_eval(spec.family, f[i]).h -
                                family_eval(spec.family, spec.memory.soft_logits[i]).h;
            grad.noalias() += phi.row(i).transpose() * diff;
        }
    }
    if (spec.weight_div.kind != WeightDivergence::Kind::none) {
        grad += spec.tau * spec.weight_div.grad(w, spec.anchor());
    }
    return grad;
}

Eigen::VectorXd grad_reconstruction_error(const KPriorSpec& spec, const Eigen::VectorXd& w,
                                          const LabeledData& full_data, double delta) {
    check_dims(spec, w);
    if (spec.model_map) {
        throw std::invalid_argument("grad_reconstruction_error: defined for a fixed model class");
    }
    std::set<Eigen::Index> in_memory;
    for (std::size_t k = 0; k < spec.memory.indices.size(); ++k) {
        const Eigen::Index idx = spec.memory.indices[k];
        if (idx < 0 || idx >= full_data.size()) {
            throw std::invalid_argument("grad_reconstruction_error: memory not a subset of the data");
        }
        if (spec.memory.inputs.row(static_cast<Eigen::Index>(k)) != full_data.inputs.row(idx)) {
            throw std::invalid_argument("grad_reconstruction_error: memory rows differ from the data");
        }
        in_memory.insert(idx);
    }

    const GlmModel base{spec.base_weights, spec.feature_map_new, spec.family};
    const Eigen::MatrixXd phi = design_matrix(spec.feature_map_new, full_data.inputs);
    const Eigen::VectorXd f_w = phi * w;
    const Eigen::VectorXd f_base = phi * spec.base_weights;

    // Leftover functional differences plus everything the K-prior cannot
    // reconstruct: the base residual sum and the mismatch between the data
    // regularizer delta*w and the weight divergence.
    Eigen::VectorXd err = Eigen::VectorXd::Zero(w.size());
    for (Eigen::Index i = 0; i < full_data.size(); ++i) {
        if (in_memory.count(i)) continue;
        const double diff =
            family_eval(spec.family, f_w[i]).h - family_eval(spec.family, f_base[i]).h;
        err.noalias() += phi.row(i).transpose() * diff;
    }
    err += glm_gradient(base, full_data, 0.0);
    err += delta * w;
    if (spec.weight_div.kind != WeightDivergence::Kind::none) {
        err -= spec.tau * spec.weight_div.grad(w, spec.base_weights);
    }
    return err;
}

Eigen::VectorXd taylor_error_estimate(const Eigen::MatrixXd& leftover_ggn, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& w_star) {
    return leftover_ggn * (w - w_star);
}

std::pair<double, Eigen::VectorXd> weight_prior_quad(const Eigen::VectorXd& w,
                                                     const Eigen::VectorXd& w_star,
                                                     const Eigen::MatrixXd& ggn_full, double delta) {
    const Eigen::VectorXd d = w - w_star;
    Eigen::VectorXd grad = ggn_full * d + delta * d;
    const double value = 0.5 * d.dot(grad);
    return {value, std::move(grad)};
}

SvdBasis svd_basis(const Eigen::MatrixXd& design_matrix) {
    if (!design_matrix.allFinite()) {
        throw std::invalid_argument("svd_basis: non-finite design matrix");
    }
    const Eigen::MatrixXd phi_t = design_matrix.transpose();  // P x N
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(phi_t, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? 1e-10 * sv[0] : 0.0;
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv[rank] > cutoff) ++rank;
    SvdBasis basis;
    basis.U = svd.matrixU().leftCols(rank);
    basis.S = sv.head(rank);
    basis.V = svd.matrixV().leftCols(rank);
    basis.rank = rank;
    return basis;
}

namespace {

Eigen::VectorXd mean_differences(const Eigen::MatrixXd& features, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& w_star, Family family) {
    const Eigen::VectorXd f_w = features * w;
    const Eigen::VectorXd f_star = features * w_star;
    Eigen::VectorXd d(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        d[i] = family_eval(family, f_w[i]).h - family_eval(family, f_star[i]).h;
    }
    return d;
}

}  // namespace

Eigen::VectorXd optimal_kprior_grad(const SvdBasis& basis, Eigen::Index m, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& w_star, double delta,
                                    const Eigen::MatrixXd& features, Family family) {
    if (m < 0 || m > basis.rank) throw std::invalid_argument("optimal_kprior_grad: m exceeds rank");
    const Eigen::VectorXd d_x = mean_differences(features, w, w_star, family);
    Eigen::VectorXd grad = delta * (w - w_star);
    if (m > 0) {
        grad.noalias() += basis.U.leftCols(m) *
                          (basis.S.head(m).asDiagonal() * (basis.V.leftCols(m).transpose() * d_x));
    }
    return grad;
}

double optimal_error_norm(const SvdBasis& basis, Eigen::Index m, const Eigen::VectorXd& w,
                          const Eigen::VectorXd& w_star, const Eigen::MatrixXd& features,
                          Family family) {
    if (m < 0 || m > basis.rank) throw std::invalid_argument("optimal_error_norm: m exceeds rank");
    const Eigen::VectorXd d_x = mean_differences(features, w, w_star, family);
    const Eigen::VectorXd a = basis.V.transpose() * d_x;
    double sum = 0.0;
    for (Eigen::Index j = m; j < basis.rank; ++j) {
        sum += basis.S[j] * basis.S[j] * a[j] * a[j];
    }
    return std::sqrt(sum);
}

Eigen::VectorXd optimal_beta(const SvdBasis& basis, const Eigen::VectorXd& w,
                             const Eigen::VectorXd& w_star, const Eigen::MatrixXd& features,
                             Family family) {
    const Eigen::VectorXd d_x = mean_differences(features, w, w_star, family);
    const Eigen::VectorXd rhs = basis.S.asDiagonal() * (basis.V.transpose() * d_x);
    Eigen::VectorXd beta(basis.rank);
    for (Eigen::Index j = 0; j < basis.rank; ++j) {
        const double fu_w = basis.U.col(j).dot(w);
        const double fu_star = basis.U.col(j).dot(w_star);
        const double du = family_eval(family, fu_w).h - family_eval(family, fu_star).h;
        if (std::abs(du) < 1e-12) {
            throw std::runtime_error("optimal_beta: singular D_u; beta* is undefined here");
        }
        beta[j] = rhs[j] / du;
    }
    return beta;
}

}  // namespace kpriors
