#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "commands.hpp"
#include "wlens/rng.hpp"
#include "wlens/theory.hpp"

namespace wlens::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

Eigen::VectorXd random_logits(std::size_t n, Rng& rng, double spread) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = spread * rng.gaussian();
    return v;
}

// Exhaustive compositions of `grid` probability units over n outcomes.
void for_each_simplex_point(std::size_t n, int grid,
                            const std::function<void(const Eigen::VectorXd&)>& fn) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<int> units(n, 0);
    const std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
        if (i + 1 == n) {
            units[i] = left;
            for (std::size_t j = 0; j < n; ++j)
                p(static_cast<Eigen::Index>(j)) = static_cast<double>(units[j]) / grid;
            fn(p);
            return;
        }
        for (int u = 0; u <= left; ++u) {
            units[i] = u;
            rec(i + 1, left - u);
        }
    };
    rec(0, grid);
}

}  // namespace

void setup_theory_commands(CLI::App& app, int* exit_code) {
    auto trials = std::make_shared<std::size_t>(100);
    auto clip_batches = std::make_shared<std::size_t>(10000);
    auto max_outcomes = std::make_shared<std::size_t>(32);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto out = std::make_shared<OutputOptions>();

    auto* cmd = app.add_subcommand(
        "theory-check",
        "numerical scorecard for the categorical-policy results: quadratic KL expansion, "
        "clipping leash, tilted-objective argmax, Fisher structure");
    cmd->add_option("--trials", *trials, "random (policy, direction) trials");
    cmd->add_option("--clip-batches", *clip_batches, "Monte-Carlo clip batches");
    cmd->add_option("--max-outcomes", *max_outcomes, "largest categorical support");
    cmd->add_option("--seed", *seed);
    out->attach(cmd);

    cmd->callback([=] {
        Rng rng(split_seed(*seed, "theory-check"));
        Report report(*seed);
        report.echo_config({{"trials", *trials},
                            {"clip_batches", *clip_batches},
                            {"max_outcomes", *max_outcomes},
                            {"seed", *seed}});
        bool all_ok = true;

        // quadratic KL expansion: ratio -> 1, remainder order ~ s
        {
            auto& block = report.add_block(
                "quadratic_kl",
                "KL(theta+s*d || theta) = 0.5 s^2 d^T F d + O(s^3); F = diag(p) - p p^T");
            const std::vector<double> scales = {1e-1, 3.16e-2, 1e-2, 3.16e-3,
                                                1e-3, 3.16e-4, 1e-4};
            double min_order = 1e300, max_order = -1e300, worst_ratio_gap = 0.0;
            std::size_t failures = 0;
            for (std::size_t t = 0; t < *trials; ++t) {
                const std::size_t n = 2 + rng.below(*max_outcomes - 1);
                const CategoricalPolicy p(random_logits(n, rng, 2.0));
                Eigen::VectorXd d = random_logits(n, rng, 1.0);
                d.array() -= d.mean();

                // half the directions come from the tilted-improvement
                // construction so the ladder exercises RL-shaped moves
                if (t % 2 == 1) {
                    Eigen::VectorXd rewards = random_logits(n, rng, 1.0);
                    const Eigen::VectorXd tilted =
                        tilt_distribution(p.probs(), rewards, rng.uniform(0.5, 2.0));
                    d = (tilted.array().log() - p.probs().array().log()).matrix();
                    d.array() -= d.mean();
                    if (d.norm() < 1e-9) d = random_logits(n, rng, 1.0);
                }

                const QuadraticKlCurve curve = quadratic_kl_check(p, d, scales);
                min_order = std::min(min_order, curve.fitted_order);
                max_order = std::max(max_order, curve.fitted_order);
                worst_ratio_gap =
                    std::max(worst_ratio_gap, std::abs(curve.ratios.back() - 1.0));
                if (curve.fitted_order < 0.8) ++failures;
            }
            block["trials"] = *trials;
            block["min_fitted_order"] = min_order;
            block["max_fitted_order"] = max_order;
            block["worst_final_ratio_gap"] = worst_ratio_gap;
            block["failures"] = failures;
            block["pass"] = failures == 0;
            if (failures > 0) all_ok = false;
        }

        // clipping leash: empirical log-ratio mass never exceeds the cap
        {
            auto& block = report.add_block(
                "clip_leash", "sum_t |log r_t| <= T * max(-log(1-eps), log(1+eps))");
            std::size_t violations = 0;
            double worst_margin = 1e300;
            for (std::size_t b = 0; b < *clip_batches; ++b) {
                const double eps = rng.uniform(0.05, 0.5);
                const std::size_t tokens = 1 + rng.below(256);
                std::vector<double> ratios(tokens);
                for (auto& r : ratios) r = rng.uniform(1.0 - eps, 1.0 + eps);
                const ClipLeashResult res = clip_leash_bound(ratios, eps);
                worst_margin = std::min(worst_margin, res.bound - res.empirical);
                if (res.empirical > res.bound) ++violations;
            }
            block["batches"] = *clip_batches;
            block["violations"] = violations;
            block["worst_margin"] = worst_margin;
            block["pass"] = violations == 0;
            if (violations > 0) all_ok = false;
        }

        // tilted distribution maximizes the regularized improvement
        {
            auto& block = report.add_block(
                "tilt_argmax",
                "argmax_p E_p[R] - beta KL(p||q) = q * exp(R/beta) / Z, versus a "
                "simplex-grid brute force");
            std::size_t failures = 0;
            double worst_gap = 0.0;
            const std::vector<std::pair<std::size_t, int>> spaces = {
                {2, 200}, {3, 60}, {5, 16}, {8, 8}};
            for (const auto& [n, grid] : spaces) {
                Eigen::VectorXd q(static_cast<Eigen::Index>(n));
                double acc = 0.0;
                for (Eigen::Index i = 0; i < q.size(); ++i)
                    acc += (q(i) = rng.uniform(0.05, 1.0));
                q /= acc;
                Eigen::VectorXd rewards = random_logits(n, rng, 1.0);
                const double beta = rng.uniform(0.3, 2.0);
                const Eigen::VectorXd tilted = tilt_distribution(q, rewards, beta);
                const double best = tilt_objective(tilted, q, rewards, beta);
                double grid_best = -1e300;
                for_each_simplex_point(n, grid, [&](const Eigen::VectorXd& p) {
                    grid_best = std::max(grid_best, tilt_objective(p, q, rewards, beta));
                });
                worst_gap = std::max(worst_gap, grid_best - best);
                if (grid_best > best + 1e-9) ++failures;
            }
            block["spaces"] = spaces.size();
            block["failures"] = failures;
            block["worst_gap"] = worst_gap;
            block["pass"] = failures == 0;
            if (failures > 0) all_ok = false;
        }

        // Fisher structure: PSD with the ones vector in the null space
        {
            auto& block = report.add_block(
                "fisher_structure", "F = diag(p) - p p^T; F >= 0; F 1 = 0");
            std::size_t failures = 0;
            double min_eig = 1e300;
            for (std::size_t t = 0; t < 50; ++t) {
                const std::size_t n = 2 + rng.below(*max_outcomes - 1);
                const CategoricalPolicy p(random_logits(n, rng, 2.0));
                const Eigen::MatrixXd f = categorical_fisher(p);
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f);
                min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
                if (eig.eigenvalues().minCoeff() < -1e-12) ++failures;
                if ((f * Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)))
                        .cwiseAbs()
                        .maxCoeff() > 1e-12)
                    ++failures;
            }
            block["min_eigenvalue"] = min_eig;
            block["failures"] = failures;
            block["pass"] = failures == 0;
            if (failures > 0) all_ok = false;
        }

        report.json();
        out->emit(report);
        if (!all_ok) *exit_code = kExitFindings;
    });
}

}  // namespace wlens::cli
