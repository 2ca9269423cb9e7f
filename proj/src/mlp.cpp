#include "kpriors/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kpriors/exp_family.hpp"
#include "kpriors/rng.hpp"

namespace kpriors {

namespace {

double logsumexp(const Eigen::VectorXd& f) {
    const double m = f.maxCoeff();
    return m + std::log((f.array() - m).exp().sum());
}

/// Log-partition and mean of the output link.
struct LinkEval {
    double A;
    Eigen::VectorXd h;
};

LinkEval link_eval(OutputKind kind, const Eigen::VectorXd& f) {
    if (kind == OutputKind::sigmoid_scalar) {
        const FamilyEval e = family_eval(Family::bernoulli_logit, f[0]);
        Eigen::VectorXd h(1);
        h[0] = e.h;
        return {e.A, std::move(h)};
    }
    Eigen::VectorXd h = softmax(f);
    return {logsumexp(f), std::move(h)};
}

/// l(y, h(f)) = A(f) - <y, f> with y the hard label (0/1 or class index).
double hard_loss(OutputKind kind, double label, const Eigen::VectorXd& f) {
    if (kind == OutputKind::sigmoid_scalar) {
        return family_eval(Family::bernoulli_logit, f[0]).A - label * f[0];
    }
    const auto cls = static_cast<Eigen::Index>(label);
    if (cls < 0 || cls >= f.size()) throw std::invalid_argument("mlp: class label out of range");
    return logsumexp(f) - f[cls];
}

Eigen::VectorXd hard_loss_dlogits(OutputKind kind, double label, const Eigen::VectorXd& f) {
    LinkEval e = link_eval(kind, f);
    if (kind == OutputKind::sigmoid_scalar) {
        e.h[0] -= label;
        return std::move(e.h);
    }
    e.h[static_cast<Eigen::Index>(label)] -= 1.0;
    return std::move(e.h);
}

double bregman_link(OutputKind kind, const Eigen::VectorXd& f1, const Eigen::VectorXd& f2) {
    const LinkEval e1 = link_eval(kind, f1);
    const LinkEval e2 = link_eval(kind, f2);
    return e1.A - e2.A - e2.h.dot(f1 - f2);
}

double act_forward(Activation act, double z) {
    return act == Activation::relu ? std::max(z, 0.0) : std::tanh(z);
}

// relu subgradient at 0 is taken as 0.
double act_deriv(Activation act, double z) {
    if (act == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(z);
    return 1.0 - t * t;
}

struct ForwardTrace {
    std::vector<Eigen::VectorXd> pre;   ///< z per layer
    std::vector<Eigen::VectorXd> post;  ///< activations, post[0] = x
};

Eigen::VectorXd forward_traced(const MlpParams& p, const MlpSpec& spec, const Eigen::VectorXd& x,
                               ForwardTrace* trace) {
    Eigen::VectorXd a = x;
    if (trace) trace->post.push_back(a);
    const int layers = spec.num_layers();
    for (int l = 0; l < layers; ++l) {
        Eigen::VectorXd z = p.weights[static_cast<std::size_t>(l)] * a +
                            p.biases[static_cast<std::size_t>(l)];
        if (l + 1 < layers) {
            a.resize(z.size());
            for (Eigen::Index j = 0; j < z.size(); ++j) a[j] = act_forward(spec.activation, z[j]);
        } else {
            a = z;  // linear output layer
        }
        if (trace) {
            trace->pre.push_back(std::move(z));
            trace->post.push_back(a);
        }
    }
    return a;
}

void check_params(const MlpParams& p, const MlpSpec& spec) {
    if (static_cast<int>(p.weights.size()) != spec.num_layers() ||
        static_cast<int>(p.biases.size()) != spec.num_layers()) {
        throw std::invalid_argument("mlp: parameter layer count does not match the spec");
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& w = p.weights[static_cast<std::size_t>(l)];
        if (w.rows() != spec.layer_sizes[static_cast<std::size_t>(l) + 1] ||
            w.cols() != spec.layer_sizes[static_cast<std::size_t>(l)] ||
            p.biases[static_cast<std::size_t>(l)].size() != w.rows()) {
            throw std::invalid_argument("mlp: parameter shapes do not match the spec");
        }
    }
}

}  // namespace

Eigen::Index MlpSpec::param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < num_layers(); ++l) {
        n += layer_sizes[static_cast<std::size_t>(l) + 1] *
                 (layer_sizes[static_cast<std::size_t>(l)] + 1);
    }
    return n;
}

void MlpSpec::validate() const {
    if (layer_sizes.size() < 3) {
        throw std::invalid_argument("MlpSpec: need at least one hidden layer");
    }
    for (int s : layer_sizes) {
        if (s <= 0) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
    }
    if (output == OutputKind::sigmoid_scalar && output_dim() != 1) {
        throw std::invalid_argument("MlpSpec: sigmoid output needs a single logit");
    }
    if (output == OutputKind::softmax && output_dim() < 2) {
        throw std::invalid_argument("MlpSpec: softmax output needs >= 2 classes");
    }
}

Eigen::VectorXd MlpParams::flatten() const {
    Eigen::Index total = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        total += weights[l].size() + biases[l].size();
    }
    Eigen::VectorXd flat(total);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        flat.segment(at, weights[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(weights[l].data(), weights[l].size());
        at += weights[l].size();
        flat.segment(at, biases[l].size()) = biases[l];
        at += biases[l].size();
    }
    return flat;
}

MlpParams MlpParams::unflatten(const MlpSpec& spec, const Eigen::VectorXd& flat) {
    if (flat.size() != spec.param_count()) {
        throw std::invalid_argument("MlpParams: flat vector length mismatch");
    }
    MlpParams p;
    Eigen::Index at = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const Eigen::Index rows = spec.layer_sizes[static_cast<std::size_t>(l) + 1];
        const Eigen::Index cols = spec.layer_sizes[static_cast<std::size_t>(l)];
        p.weights.emplace_back(Eigen::Map<const Eigen::MatrixXd>(flat.data() + at, rows, cols));
        at += rows * cols;
        p.biases.emplace_back(flat.segment(at, rows));
        at += rows;
    }
    return p;
}

MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    MlpParams p;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int fan_in = spec.layer_sizes[static_cast<std::size_t>(l)];
        const int fan_out = spec.layer_sizes[static_cast<std::size_t>(l) + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                w(i, j) = rng.uniform(-bound, bound);
            }
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return p;
}

Eigen::VectorXd mlp_forward(const MlpParams& params, const MlpSpec& spec,
                            const Eigen::VectorXd& x) {
    spec.validate();
    check_params(params, spec);
    if (x.size() != spec.input_dim()) throw std::invalid_argument("mlp_forward: input size mismatch");
    return forward_traced(params, spec, x, nullptr);
}

Eigen::MatrixXd mlp_forward_batch(const MlpParams& params, const MlpSpec& spec,
                                  const Eigen::MatrixXd& inputs) {
    spec.validate();
    check_params(params, spec);
    if (inputs.cols() != spec.input_dim()) {
        throw std::invalid_argument("mlp_forward_batch: input width mismatch");
    }
    Eigen::MatrixXd out(inputs.rows(), spec.output_dim());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        out.row(i) = forward_traced(params, spec, inputs.row(i).transpose(), nullptr).transpose();
    }
    return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

Eigen::VectorXd mlp_vjp(const MlpParams& params, const MlpSpec& spec, const Eigen::MatrixXd& inputs,
                        const Eigen::MatrixXd& out_err) {
    check_params(params, spec);
    if (inputs.rows() != out_err.rows() || out_err.cols() != spec.output_dim()) {
        throw std::invalid_argument("mlp_vjp: cotangent shape mismatch");
    }
    const int layers = spec.num_layers();
    std::vector<Eigen::MatrixXd> gw;
    std::vector<Eigen::VectorXd> gb;
    for (int l = 0; l < layers; ++l) {
        gw.emplace_back(Eigen::MatrixXd::Zero(params.weights[static_cast<std::size_t>(l)].rows(),
                                              params.weights[static_cast<std::size_t>(l)].cols()));
        gb.emplace_back(Eigen::VectorXd::Zero(params.biases[static_cast<std::size_t>(l)].size()));
    }
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        ForwardTrace trace;
        forward_traced(params, spec, inputs.row(i).transpose(), &trace);
        Eigen::VectorXd delta = out_err.row(i).transpose();
        for (int l = layers - 1; l >= 0; --l) {
            gw[static_cast<std::size_t>(l)].noalias() +=
                delta * trace.post[static_cast<std::size_t>(l)].transpose();
            gb[static_cast<std::size_t>(l)] += delta;
            if (l > 0) {
                Eigen::VectorXd back =
                    params.weights[static_cast<std::size_t>(l)].transpose() * delta;
                const Eigen::VectorXd& z = trace.pre[static_cast<std::size_t>(l) - 1];
                for (Eigen::Index j = 0; j < back.size(); ++j) {
                    back[j] *= act_deriv(spec.activation, z[j]);
                }
                delta = std::move(back);
            }
        }
    }
    MlpParams g;
    g.weights = std::move(gw);
    g.biases = std::move(gb);
    return g.flatten();
}

std::pair<double, Eigen::VectorXd> mlp_loss_grad(const MlpParams& params, const MlpSpec& spec,
                                                 const LabeledData& data,
                                                 const std::optional<SoftTargets>& soft,
                                                 double lambda, double delta) {
    spec.validate();
    check_params(params, spec);
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("mlp_loss_grad: lambda must be in [0, 1]");
    }
    if (soft) {
        if (!(soft->temperature > 0.0)) {
            throw std::invalid_argument("mlp_loss_grad: temperature must be positive");
        }
        if (soft->logits.rows() != data.size() || soft->logits.cols() != spec.output_dim()) {
            throw std::invalid_argument("mlp_loss_grad: soft target shape mismatch");
        }
    } else if (lambda < 1.0) {
        throw std::invalid_argument("mlp_loss_grad: lambda < 1 requires soft targets");
    }

    const double t = soft ? soft->temperature : 1.0;
    double value = 0.0;
    Eigen::MatrixXd err = Eigen::MatrixXd::Zero(data.size(), spec.output_dim());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const Eigen::VectorXd f = forward_traced(params, spec, data.inputs.row(i).transpose(), nullptr);
        if (lambda > 0.0) {
            value += lambda * hard_loss(spec.output, data.labels[i], f);
            err.row(i) += lambda * hard_loss_dlogits(spec.output, data.labels[i], f).transpose();
        }
        if (soft && lambda < 1.0) {
            const Eigen::VectorXd f_scaled = f / t;
            const Eigen::VectorXd teacher = soft->logits.row(i).transpose() / t;
            const LinkEval student = link_eval(spec.output, f_scaled);
            const LinkEval base = link_eval(spec.output, teacher);
            value += (1.0 - lambda) * t * t * (student.A - base.h.dot(f_scaled));
            err.row(i) += (1.0 - lambda) * t * (student.h - base.h).transpose();
        }
    }
    const Eigen::VectorXd flat = params.flatten();
    value += 0.5 * delta * flat.squaredNorm();
    Eigen::VectorXd grad = mlp_vjp(params, spec, data.inputs, err);
    grad += delta * flat;
    return {value, std::move(grad)};
}

double kd_leftover_identity_check(const MlpParams& student, const MlpParams& teacher,
                                  const MlpSpec& spec, const LabeledData& data, double lambda) {
    const Eigen::MatrixXd teacher_logits = mlp_forward_batch(teacher, spec, data.inputs);
    const Eigen::VectorXd direct =
        mlp_loss_grad(student, spec, data, SoftTargets{teacher_logits, 1.0}, lambda, 0.0).second;

    // Second route: full data gradient minus the teacher-residual term.
    const Eigen::MatrixXd student_logits = mlp_forward_batch(student, spec, data.inputs);
    Eigen::MatrixXd err_data(data.size(), spec.output_dim());
    Eigen::MatrixXd err_resid(data.size(), spec.output_dim());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        err_data.row(i) =
            hard_loss_dlogits(spec.output, data.labels[i], student_logits.row(i).transpose())
                .transpose();
        err_resid.row(i) =
            hard_loss_dlogits(spec.output, data.labels[i], teacher_logits.row(i).transpose())
                .transpose();
    }
    const Eigen::VectorXd rebuilt = mlp_vjp(student, spec, data.inputs, err_data) -
                                    (1.0 - lambda) * mlp_vjp(student, spec, data.inputs, err_resid);

    const double scale = std::max({direct.norm(), rebuilt.norm(), 1e-12});
    return (direct - rebuilt).norm() / scale;
}

double dl_kprior_value(const MlpParams& params, const MlpSpec& spec,
                       const Eigen::MatrixXd& base_soft_logits,
                       const Eigen::MatrixXd& memory_inputs, const Eigen::VectorXd& w_star_flat,
                       double delta, double tau) {
    spec.validate();
    check_params(params, spec);
    if (base_soft_logits.rows() != memory_inputs.rows() ||
        base_soft_logits.cols() != spec.output_dim()) {
        throw std::invalid_argument("dl_kprior: soft logit shape mismatch");
    }
    double value = 0.0;
    for (Eigen::Index i = 0; i < memory_inputs.rows(); ++i) {
        const Eigen::VectorXd f =
            forward_traced(params, spec, memory_inputs.row(i).transpose(), nullptr);
        value += bregman_link(spec.output, f, base_soft_logits.row(i).transpose());
    }
    if (delta > 0.0) {
        value += 0.5 * tau * delta * (params.flatten() - w_star_flat).squaredNorm();
    }
    return value;
}

Eigen::VectorXd dl_kprior_grad(const MlpParams& params, const MlpSpec& spec,
                               const Eigen::MatrixXd& base_soft_logits,
                               const Eigen::MatrixXd& memory_inputs,
                               const Eigen::VectorXd& w_star_flat, double delta, double tau) {
    spec.validate();
    check_params(params, spec);
    if (base_soft_logits.rows() != memory_inputs.rows() ||
        base_soft_logits.cols() != spec.output_dim()) {
        throw std::invalid_argument("dl_kprior: soft logit shape mismatch");
    }
    Eigen::MatrixXd err(memory_inputs.rows(), spec.output_dim());
    for (Eigen::Index i = 0; i < memory_inputs.rows(); ++i) {
        const Eigen::VectorXd f =
            forward_traced(params, spec, memory_inputs.row(i).transpose(), nullptr);
        err.row(i) = (link_eval(spec.output, f).h -
                      link_eval(spec.output, base_soft_logits.row(i).transpose()).h)
                         .transpose();
    }
    Eigen::VectorXd grad = mlp_vjp(params, spec, memory_inputs, err);
    if (delta > 0.0) {
        grad += tau * delta * (params.flatten() - w_star_flat);
    }
    return grad;
}

double mlp_accuracy(const MlpParams& params, const MlpSpec& spec, const LabeledData& data) {
    if (data.size() == 0) return 0.0;
    const Eigen::MatrixXd logits = mlp_forward_batch(params, spec, data.inputs);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        double pred = 0.0;
        if (spec.output == OutputKind::sigmoid_scalar) {
            pred = logits(i, 0) > 0.0 ? 1.0 : 0.0;
        } else {
            Eigen::Index best = 0;
            for (Eigen::Index k = 1; k < logits.cols(); ++k) {
                if (logits(i, k) > logits(i, best)) best = k;
            }
            pred = static_cast<double>(best);
        }
        if (pred == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

MemorySet select_memorable_mlp(const MlpParams& params, const MlpSpec& spec,
                               const LabeledData& data, Eigen::Index m) {
    if (m < 0 || m > data.size()) {
        throw std::invalid_argument("select_memorable_mlp: m out of range");
    }
    const Eigen::MatrixXd logits = mlp_forward_batch(params, spec, data.inputs);
    Eigen::VectorXd score(data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (spec.output == OutputKind::sigmoid_scalar) {
            score[i] = family_eval(Family::bernoulli_logit, logits(i, 0)).hprime;
        } else {
            score[i] = multiclass_score(softmax(logits.row(i).transpose()));
        }
    }
    std::vector<Eigen::Index> order(data.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
    });
    order.resize(static_cast<std::size_t>(m));
    std::sort(order.begin(), order.end());

    MemorySet mem;
    mem.strategy = SelectionStrategy::top_hprime;
    mem.indices = order;
    mem.inputs.resize(m, data.dim());
    mem.true_labels.resize(m);
    mem.soft_logit_rows.resize(m, spec.output_dim());
    if (spec.output == OutputKind::sigmoid_scalar) mem.soft_logits.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index idx = order[static_cast<std::size_t>(k)];
        mem.inputs.row(k) = data.inputs.row(idx);
        mem.true_labels[k] = data.labels[idx];
        mem.soft_logit_rows.row(k) = logits.row(idx);
        if (spec.output == OutputKind::sigmoid_scalar) mem.soft_logits[k] = logits(idx, 0);
    }
    return mem;
}

}  // namespace kpriors
