#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "wlens/errors.hpp"

namespace wlens {

// Softmax policy over N outcomes, parameterized by logits. Probabilities
// are derived once through a stable log-softmax.
class CategoricalPolicy {
public:
    explicit CategoricalPolicy(Eigen::VectorXd logits);

    std::size_t size() const { return static_cast<std::size_t>(logits_.size()); }
    const Eigen::VectorXd& logits() const { return logits_; }
    const Eigen::VectorXd& log_probs() const { return log_probs_; }
    const Eigen::VectorXd& probs() const { return probs_; }

private:
    Eigen::VectorXd logits_;
    Eigen::VectorXd log_probs_;
    Eigen::VectorXd probs_;
};

// Fisher information of the logit parameterization: diag(p) - p p^T.
// Symmetric PSD with the all-ones vector in its null space.
Eigen::MatrixXd categorical_fisher(const CategoricalPolicy& p);

// sum_i p_i log(p_i / q_i); full support by construction.
double kl_categorical(const CategoricalPolicy& p, const CategoricalPolicy& q);

struct QuadraticKlCurve {
    std::vector<double> scales;
    std::vector<double> ratios;      // KL(theta + s*dir || theta) / (0.5 s^2 dir^T F dir)
    std::vector<double> remainders;  // |ratio - 1|
    double quad_form = 0.0;          // dir^T F dir
    double fitted_order = 0.0;       // log-log slope of remainder vs scale
};

// Compares the exact policy KL against its quadratic model along one
// direction across a decreasing scale ladder, and fits the convergence
// order of the remainder. Directions in the Fisher null space (constant
// shifts) are rejected.
QuadraticKlCurve quadratic_kl_check(const CategoricalPolicy& policy,
                                    const Eigen::VectorXd& direction,
                                    const std::vector<double>& scales);

struct ClipLeashResult {
    double empirical = 0.0;  // sum_t |log r_t|
    double bound = 0.0;      // T * max(-log(1-eps), log(1+eps))
};

// Validates that every ratio sits inside [1-eps, 1+eps] (ClipViolation
// otherwise) and returns the per-token log-ratio mass against its cap.
ClipLeashResult clip_leash_bound(const std::vector<double>& ratios, double epsilon);

double clip_bound(double epsilon, std::size_t token_count);

// Reweights q by exp(rewards / beta) and renormalizes; the unique maximizer
// of E_p[R] - beta * KL(p || q) over the simplex.
Eigen::VectorXd tilt_distribution(const Eigen::VectorXd& q, const Eigen::VectorXd& rewards,
                                  double beta);

// The tilted objective E_p[R] - beta * KL(p || q) for any simplex point.
double tilt_objective(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& rewards, double beta);

}  // namespace wlens
