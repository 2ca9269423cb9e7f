#include "kpriors/exp_family.hpp"

#include <cmath>
#include <stdexcept>

namespace kpriors {

namespace {

double stable_sigmoid(double f) {
    if (f >= 0.0) {
        return 1.0 / (1.0 + std::exp(-f));
    }
    const double e = std::exp(f);
    return e / (1.0 + e);
}

}  // namespace

FamilyEval family_eval(Family family, double f) {
    if (!std::isfinite(f)) {
        throw std::domain_error("family_eval: non-finite natural parameter");
    }
    switch (family) {
        case Family::bernoulli_logit: {
            // A(f) = log(1 + e^f) = max(f,0) + log1p(e^{-|f|})
            const double A = std::max(f, 0.0) + std::log1p(std::exp(-std::abs(f)));
            const double s = stable_sigmoid(f);
            const double sm = stable_sigmoid(-f);  // 1 - s without cancellation
            return {A, s, s * sm};
        }
        case Family::gaussian_identity:
            return {0.5 * f * f, f, 1.0};
        case Family::poisson_log: {
            const double e = std::exp(f);
            return {e, e, e};
        }
    }
    throw std::domain_error("family_eval: unknown family");
}

double family_loss(Family family, double y, double f) {
    return family_eval(family, f).A - y * f;
}

double bregman_log_partition(Family family, double f1, double f2) {
    if (!std::isfinite(f1) || !std::isfinite(f2)) {
        throw std::domain_error("bregman_log_partition: non-finite input");
    }
    const FamilyEval e1 = family_eval(family, f1);
    const FamilyEval e2 = family_eval(family, f2);
    return e1.A - e2.A - e2.h * (f1 - f2);
}

}  // namespace kpriors
