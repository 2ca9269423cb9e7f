#include "kpriors/memory_select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kpriors/rng.hpp"

namespace kpriors {

namespace {

MemorySet gather(const LabeledData& data, std::vector<Eigen::Index> indices,
                 SelectionStrategy strategy) {
    std::sort(indices.begin(), indices.end());
    MemorySet mem;
    mem.strategy = strategy;
    mem.indices = std::move(indices);
    const auto m = static_cast<Eigen::Index>(mem.indices.size());
    mem.inputs.resize(m, data.dim());
    mem.true_labels.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        mem.inputs.row(k) = data.inputs.row(mem.indices[static_cast<std::size_t>(k)]);
        mem.true_labels[k] = data.labels[mem.indices[static_cast<std::size_t>(k)]];
    }
    return mem;
}

}  // namespace

MemorySet select_memorable(const GlmModel& model, const LabeledData& data, Eigen::Index m) {
    if (m < 0 || m > data.size()) {
        throw std::invalid_argument("select_memorable: m out of range");
    }
    const Eigen::VectorXd f = glm_logits(model, data.inputs);
    Eigen::VectorXd score(data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        score[i] = family_eval(model.family, f[i]).hprime;
    }
    std::vector<Eigen::Index> order(data.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
    });
    order.resize(static_cast<std::size_t>(m));
    MemorySet mem = gather(data, std::move(order), SelectionStrategy::top_hprime);
    record_base_logits(mem, model);
    return mem;
}

MemorySet select_random(const LabeledData& data, Eigen::Index m, std::uint64_t seed) {
    if (m < 0 || m > data.size()) {
        throw std::invalid_argument("select_random: m out of range");
    }
    Rng rng(seed);
    const auto picked =
        rng.sample_without_replacement(static_cast<std::size_t>(data.size()), static_cast<std::size_t>(m));
    std::vector<Eigen::Index> indices(picked.begin(), picked.end());
    return gather(data, std::move(indices), SelectionStrategy::random);
}

void record_base_logits(MemorySet& memory, const GlmModel& base) {
    memory.soft_logits = glm_logits(base, memory.inputs);
}

double multiclass_score(const Eigen::VectorXd& probabilities) {
    double sum = 0.0, sumsq = 0.0;
    for (Eigen::Index k = 0; k < probabilities.size(); ++k) {
        const double p = probabilities[k];
        if (!(p >= 0.0)) throw std::invalid_argument("multiclass_score: negative entry");
        sum += p;
        sumsq += p * p;
    }
    if (std::abs(sum - 1.0) > 1e-8) {
        throw std::invalid_argument("multiclass_score: entries do not sum to 1");
    }
    return 1.0 - sumsq;
}

}  // namespace kpriors
