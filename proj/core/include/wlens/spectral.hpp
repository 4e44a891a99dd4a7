#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wlens/tensor.hpp"

namespace wlens {

// Top-k SVD slice of one layer. sigma holds the full non-increasing
// spectrum unless the blocked path was taken (spectrum_truncated set).
struct SpectralSummary {
    std::string layer_name;
    std::size_t k = 0;
    Eigen::VectorXd sigma;   // all min(m,n) values, or top-k when truncated
    Eigen::MatrixXd U_k;     // m x k, orthonormal columns
    Eigen::MatrixXd V_k;     // n x k, orthonormal columns
    double gap = 0.0;        // sigma_k - sigma_{k+1}
    bool spectrum_truncated = false;
};

struct SpectralOptions {
    // Layers whose short side exceeds this use the blocked subspace
    // iteration below instead of a dense decomposition.
    std::size_t dense_limit = 8192;
    double blocked_tol = 1e-9;
    std::size_t blocked_max_iter = 300;
};

// Deterministic up to the fixed sign convention: the first nonzero entry of
// each left singular vector is made positive (the paired right vector flips
// with it). All spectral math runs in f64.
SpectralSummary svd_topk(const WeightMatrix& w, std::size_t k, const SpectralOptions& opts = {});
SpectralSummary svd_topk(const Eigen::MatrixXd& m, const std::string& name, std::size_t k,
                         const SpectralOptions& opts = {});

// Blocked subspace iteration for layers too large for a dense SVD. Each
// returned triplet satisfies |A v - sigma u| <= tol * sigma (checked, not
// assumed); failing to converge raises NumericsError.
SpectralSummary svd_topk_blocked(const Eigen::MatrixXd& m, const std::string& name,
                                 std::size_t k, double tol = 1e-9, std::size_t max_iter = 300);

struct PrincipalAngles {
    std::vector<double> theta_u;  // radians, non-decreasing
    std::vector<double> theta_v;
    double max_u = 0.0;
    double max_v = 0.0;
};

// Angles from the singular values of the k x k cross-Gram of the bases.
PrincipalAngles principal_angles(const SpectralSummary& s0, const SpectralSummary& s1);

// ||sigma1 - sigma0||_2 / ||sigma0||_2.
double nss(const Eigen::VectorXd& sigma0, const Eigen::VectorXd& sigma1);

// |sum of top-k singular values, before vs after|.
double kyfan_drift(const Eigen::VectorXd& sigma0, const Eigen::VectorXd& sigma1, std::size_t k);

// --- perturbation-bound verification ---

struct BoundCheck {
    std::string name;
    std::string formula;
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = true;
    double rel_slack = 0.0;  // (lhs - rhs) / max(rhs, tiny); negative when satisfied
};

struct BoundReport {
    std::string layer_name;
    std::size_t k = 0;
    double gap = 0.0;
    bool wedin_skipped = false;  // gap was zero; rotation bound not checkable
    std::vector<BoundCheck> checks;
    bool all_hold = true;
};

// Evaluates both sides of the subspace-rotation, singular-value stability,
// Ky Fan, and norm-ordering inequalities for the pair (W0, W0 + Delta) and
// flags any violation beyond 1e-6 relative slack.
BoundReport verify_perturbation_bounds(const WeightMatrix& w0, const WeightMatrix& delta,
                                       std::size_t k);
BoundReport verify_perturbation_bounds(const Eigen::MatrixXd& w0, const Eigen::MatrixXd& delta,
                                       std::size_t k, const std::string& name = "");

// --- per-layer drift metrics ---

struct KDrift {
    std::size_t k = 0;
    double max_angle_u = 0.0;
    double max_angle_v = 0.0;
    double kyfan = 0.0;
    double nss_topk = 0.0;
    double gap0 = 0.0;
};

struct LayerDrift {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double nss_full = 0.0;
    double weyl_max_dsigma = 0.0;       // max |sigma_i(W1) - sigma_i(W0)|
    double hw_sq_dsigma = 0.0;          // sum (sigma_i(W1) - sigma_i(W0))^2
    std::vector<KDrift> per_k;
};

LayerDrift layer_drift(const WeightMatrix& w0, const WeightMatrix& w1,
                       const std::vector<std::size_t>& k_list,
                       const SpectralOptions& opts = {});

void drift_to_csv(const std::vector<LayerDrift>& drifts, std::ostream& out);

}  // namespace wlens
