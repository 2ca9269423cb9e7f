#pragma once

namespace kpriors {

/// Scalar exponential-family likelihoods over a natural parameter f.
/// The loss of an observation y is  l(y, h(f)) = A(f) - y*f  up to a
/// y-only constant; h = dA/df is the mean mapping and h' its derivative.
enum class Family {
    bernoulli_logit,
    gaussian_identity,
    poisson_log,
};

struct FamilyEval {
    double A;       ///< log-partition A(f)
    double h;       ///< mean h(f) = dA/df
    double hprime;  ///< h'(f) = d2A/df2, always >= 0
};

/// Evaluate A, h, h' at f. Bernoulli uses log1p/sigmoid branches that stay
/// accurate for |f| up to a few hundred. Throws std::domain_error on
/// non-finite f.
FamilyEval family_eval(Family family, double f);

/// Negative log-likelihood A(f) - y*f (the y-only constant dropped).
double family_loss(Family family, double y, double f);

/// Bregman divergence of the log-partition,
///   B_A(f1 || f2) = A(f1) - A(f2) - h(f2) (f1 - f2),
/// nonnegative, zero iff f1 == f2, and equal to l(h(f2), h(f1)) up to a
/// constant independent of f1. Throws std::domain_error on non-finite input.
double bregman_log_partition(Family family, double f1, double f2);

}  // namespace kpriors
