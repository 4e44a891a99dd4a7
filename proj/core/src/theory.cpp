#include "wlens/theory.hpp"

#include <algorithm>
#include <cmath>

namespace wlens {

CategoricalPolicy::CategoricalPolicy(Eigen::VectorXd logits) : logits_(std::move(logits)) {
    if (logits_.size() < 2) throw DomainError("CategoricalPolicy: need at least two outcomes");
    if (!logits_.allFinite()) throw DomainError("CategoricalPolicy: non-finite logits");
    const double m = logits_.maxCoeff();
    const double lse = m + std::log((logits_.array() - m).exp().sum());
    log_probs_ = logits_.array() - lse;
    probs_ = log_probs_.array().exp();
}

Eigen::MatrixXd categorical_fisher(const CategoricalPolicy& p) {
    const Eigen::VectorXd& pr = p.probs();
    Eigen::MatrixXd f = Eigen::MatrixXd(pr.asDiagonal());
    f.noalias() -= pr * pr.transpose();
    return f;
}

double kl_categorical(const CategoricalPolicy& p, const CategoricalPolicy& q) {
    if (p.size() != q.size()) throw ShapeError("kl_categorical: outcome counts differ");
    const double kl = (p.probs().array() * (p.log_probs() - q.log_probs()).array()).sum();
    return std::max(kl, 0.0);
}

QuadraticKlCurve quadratic_kl_check(const CategoricalPolicy& policy,
                                    const Eigen::VectorXd& direction,
                                    const std::vector<double>& scales) {
    if (direction.size() != static_cast<Eigen::Index>(policy.size()))
        throw ShapeError("quadratic_kl_check: direction length mismatch");
    if (scales.empty()) throw ConfigError("quadratic_kl_check: empty scale ladder");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (!(scales[i] > 0.0)) throw ConfigError("quadratic_kl_check: scales must be positive");
        if (i > 0 && !(scales[i] < scales[i - 1]))
            throw ConfigError("quadratic_kl_check: scales must decrease");
    }

    // Constant shifts leave the softmax untouched; the quadratic model is
    // identically zero there, so such directions are rejected.
    const Eigen::VectorXd centered =
        direction.array() - direction.mean();
    if (centered.norm() <= 1e-12 * std::max(1.0, direction.norm()))
        throw DomainError("quadratic_kl_check: direction lies in the Fisher null space");

    const Eigen::MatrixXd fisher = categorical_fisher(policy);
    const double quad = direction.dot(fisher * direction);
    if (quad <= 0.0)
        throw DomainError("quadratic_kl_check: direction has zero Fisher quadratic form");

    // KL(softmax(theta + delta) || softmax(theta)) through expm1/log1p.
    // The plain formula differences two O(1) log-normalizers to produce an
    // O(s^2) output and drowns the remainder in rounding noise below
    // s ~ 1e-4; this path keeps the absolute error near eps * s.
    const auto kl_shift = [&](const Eigen::VectorXd& delta) {
        const Eigen::VectorXd& p = policy.probs();
        double s_acc = 0.0, num = 0.0;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double e = std::expm1(delta(i));
            s_acc += p(i) * e;
            num += p(i) * (1.0 + e) * delta(i);
        }
        const double kl = num / (1.0 + s_acc) - std::log1p(s_acc);
        return std::max(kl, 0.0);
    };

    QuadraticKlCurve curve;
    curve.scales = scales;
    curve.quad_form = quad;

    for (const double s : scales) {
        const Eigen::VectorXd delta = s * direction;
        const double kl = delta.cwiseAbs().maxCoeff() < 1.0
                              ? kl_shift(delta)
                              : kl_categorical(CategoricalPolicy(policy.logits() + delta), policy);
        const double ratio = kl / (0.5 * s * s * quad);
        curve.ratios.push_back(ratio);
        curve.remainders.push_back(std::abs(ratio - 1.0));
    }

    // Least-squares slope of log|ratio - 1| against log s, fitted on the
    // finer half of the ladder: coarse scales can sit outside the regime
    // where the leading remainder term dominates and would bias an
    // asymptotic-order estimate. Exact-zero remainders carry no information
    // and are skipped.
    const std::size_t tail_start =
        scales.size() > 4 ? scales.size() - std::max<std::size_t>(3, scales.size() / 2 + 1) : 0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = tail_start; i < scales.size(); ++i) {
        if (curve.remainders[i] <= 0.0) continue;
        const double x = std::log(scales[i]);
        const double y = std::log(curve.remainders[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    curve.fitted_order =
        n >= 2 ? (static_cast<double>(n) * sxy - sx * sy) / (static_cast<double>(n) * sxx - sx * sx)
               : 0.0;
    return curve;
}

double clip_bound(double epsilon, std::size_t token_count) {
    if (!(epsilon > 0.0) || epsilon >= 1.0)
        throw ConfigError("clip_bound: epsilon must lie in (0,1)");
    const double cap = std::max(-std::log1p(-epsilon), std::log1p(epsilon));
    return static_cast<double>(token_count) * cap;
}

ClipLeashResult clip_leash_bound(const std::vector<double>& ratios, double epsilon) {
    const double bound = clip_bound(epsilon, ratios.size());
    double acc = 0.0;
    for (const double r : ratios) {
        if (!(r >= 1.0 - epsilon) || !(r <= 1.0 + epsilon))
            throw ClipViolation("ratio outside the clip interval");
        acc += std::abs(std::log(r));
    }
    return ClipLeashResult{acc, bound};
}

Eigen::VectorXd tilt_distribution(const Eigen::VectorXd& q, const Eigen::VectorXd& rewards,
                                  double beta) {
    if (q.size() != rewards.size()) throw ShapeError("tilt_distribution: size mismatch");
    if (!(beta > 0.0)) throw DomainError("tilt_distribution: beta must be positive");
    if ((q.array() <= 0.0).any()) throw DomainError("tilt_distribution: q needs full support");
    const Eigen::ArrayXd logw = q.array().log() + rewards.array() / beta;
    const double m = logw.maxCoeff();
    const Eigen::ArrayXd w = (logw - m).exp();
    return (w / w.sum()).matrix();
}

double tilt_objective(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                      const Eigen::VectorXd& rewards, double beta) {
    if (p.size() != q.size() || p.size() != rewards.size())
        throw ShapeError("tilt_objective: size mismatch");
    double expected = 0.0, kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) < 0.0) throw DomainError("tilt_objective: negative probability");
        expected += p(i) * rewards(i);
        if (p(i) > 0.0) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
    }
    return expected - beta * kl;
}

}  // namespace wlens
