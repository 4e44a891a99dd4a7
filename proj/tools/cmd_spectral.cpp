#include <fstream>

#include "commands.hpp"
#include "wlens/diff.hpp"
#include "wlens/parallel.hpp"
#include "wlens/rng.hpp"
#include "wlens/spectral.hpp"

namespace wlens::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json drift_json(const LayerDrift& d) {
    ordered_json row;
    row["layer"] = d.name;
    row["rows"] = d.rows;
    row["cols"] = d.cols;
    row["nss_full"] = d.nss_full;
    row["weyl_max_dsigma"] = d.weyl_max_dsigma;
    row["hw_sq_dsigma"] = d.hw_sq_dsigma;
    ordered_json per_k = ordered_json::array();
    for (const auto& kd : d.per_k)
        per_k.push_back({{"k", kd.k},
                         {"max_angle_u", kd.max_angle_u},
                         {"max_angle_v", kd.max_angle_v},
                         {"kyfan_drift", kd.kyfan},
                         {"nss_topk", kd.nss_topk},
                         {"gap", kd.gap0}});
    row["per_k"] = std::move(per_k);
    return row;
}

ordered_json bound_json(const BoundReport& rep) {
    ordered_json row;
    row["layer"] = rep.layer_name;
    row["k"] = rep.k;
    row["gap"] = rep.gap;
    row["wedin_skipped"] = rep.wedin_skipped;
    row["all_hold"] = rep.all_hold;
    ordered_json checks = ordered_json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name},
                          {"formula", c.formula},
                          {"lhs", c.lhs},
                          {"rhs", c.rhs},
                          {"holds", c.holds},
                          {"rel_slack", c.rel_slack}});
    row["checks"] = std::move(checks);
    return row;
}

}  // namespace

void setup_spectral_commands(CLI::App& app, int* exit_code) {
    // --- spectral ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto out = std::make_shared<OutputOptions>();
        auto base = std::make_shared<std::string>();
        auto finetuned = std::make_shared<std::string>();
        auto k_list = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{64});
        auto drift_csv = std::make_shared<std::string>();
        auto workers = std::make_shared<unsigned>(1);

        auto* cmd = app.add_subcommand(
            "spectral", "principal angles, spectrum shift, and Ky Fan drift per layer");
        cmd->add_option("--base", *base)->required();
        cmd->add_option("--finetuned", *finetuned)->required();
        cmd->add_option("-k,--k", *k_list, "subspace rank(s)");
        cmd->add_option("--drift-csv", *drift_csv, "write per-layer drift rows as CSV");
        cmd->add_option("--workers", *workers, "decompositions in flight at once");
        opts->attach(cmd);
        out->attach(cmd);

        cmd->callback([=] {
            const auto h0 = open_checkpoint(*base);
            const auto h1 = open_checkpoint(*finetuned);
            const auto layers = list_layers(h0, opts->build());

            std::vector<LayerDrift> drifts(layers.size());
            std::vector<std::string> errors(layers.size());
            parallel_for(layers.size(), *workers, [&](std::size_t i) {
                try {
                    const auto w0 = load_matrix(h0, layers[i]);
                    const auto w1 = load_matrix(h1, layers[i]);
                    std::vector<std::size_t> ks;
                    const std::size_t lim = std::min(w0.rows, w0.cols);
                    for (const auto k : *k_list)
                        if (k < lim) ks.push_back(k);
                    if (ks.empty()) throw ConfigError("no requested k fits this layer");
                    drifts[i] = layer_drift(w0, w1, ks);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            });

            Report report(0);
            report.echo_config(
                {{"base", *base}, {"finetuned", *finetuned}, {"k", *k_list}});
            auto& block = report.add_block(
                "spectral_drift",
                "cos theta_i = sigma_i(U0k^T U1k); NSS = ||sigma1-sigma0||2/||sigma0||2; "
                "kyfan_k = |sum_k sigma1 - sum_k sigma0|");
            ordered_json rows = ordered_json::array();
            std::vector<LayerDrift> ok;
            for (std::size_t i = 0; i < layers.size(); ++i) {
                if (!errors[i].empty()) continue;
                rows.push_back(drift_json(drifts[i]));
                ok.push_back(drifts[i]);
            }
            block["layers"] = std::move(rows);
            ordered_json errs = ordered_json::array();
            for (std::size_t i = 0; i < layers.size(); ++i)
                if (!errors[i].empty())
                    errs.push_back({{"layer", layers[i]}, {"error", errors[i]}});
            block["errors"] = std::move(errs);
            if (!drift_csv->empty()) {
                std::ofstream f(*drift_csv);
                if (!f) throw IoError("cannot create " + *drift_csv);
                drift_to_csv(ok, f);
            }
            out->emit(report);
        });
    }

    // --- bounds ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto out = std::make_shared<OutputOptions>();
        auto base = std::make_shared<std::string>();
        auto finetuned = std::make_shared<std::string>();
        auto k = std::make_shared<std::size_t>(8);
        auto trials = std::make_shared<std::size_t>(0);
        auto size = std::make_shared<std::size_t>(32);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto workers = std::make_shared<unsigned>(1);

        auto* cmd = app.add_subcommand(
            "bounds",
            "verify the rotation/stability/Ky Fan inequalities on a checkpoint pair or on "
            "randomized trials");
        cmd->add_option("--base", *base, "base checkpoint (pair mode)");
        cmd->add_option("--finetuned", *finetuned, "finetuned checkpoint (pair mode)");
        cmd->add_option("-k,--k", *k, "subspace rank");
        cmd->add_option("--random-trials", *trials, "run N random (W0, Delta) trials instead");
        cmd->add_option("--size", *size, "matrix side for random trials");
        cmd->add_option("--seed", *seed, "random trial seed");
        cmd->add_option("--workers", *workers);
        opts->attach(cmd);
        out->attach(cmd);

        cmd->callback([=] {
            Report report(*seed);
            bool violations = false;

            if (*trials > 0) {
                report.echo_config({{"random_trials", *trials},
                                    {"size", *size},
                                    {"k", *k},
                                    {"seed", *seed}});
                auto& block = report.add_block(
                    "perturbation_bounds",
                    "sinT <= ||D||2/gap; max|ds| <= ||D||2; sum ds^2 <= ||D||F^2; "
                    "kyfan <= k||D||2; ||D||2 <= ||D||F");
                Rng rng(split_seed(*seed, "bounds"));
                std::size_t failed = 0;
                double worst_slack = -1e300;
                for (std::size_t t = 0; t < *trials; ++t) {
                    Eigen::MatrixXd w0(*size, *size), delta(*size, *size);
                    const double scale = std::pow(10.0, rng.uniform(-3, 0));
                    for (Eigen::Index i = 0; i < w0.rows(); ++i)
                        for (Eigen::Index j = 0; j < w0.cols(); ++j) {
                            w0(i, j) = rng.gaussian();
                            delta(i, j) = scale * rng.gaussian();
                        }
                    const BoundReport rep = verify_perturbation_bounds(
                        w0, delta, std::min(*k, *size - 1), "trial-" + std::to_string(t));
                    for (const auto& c : rep.checks) {
                        worst_slack = std::max(worst_slack, c.rel_slack);
                        if (!c.holds) ++failed;
                    }
                }
                block["trials"] = *trials;
                block["violations"] = failed;
                block["worst_rel_slack"] = worst_slack;
                violations = failed > 0;
            } else {
                if (base->empty() || finetuned->empty())
                    throw ConfigError("bounds needs --base/--finetuned or --random-trials");
                const auto h0 = open_checkpoint(*base);
                const auto h1 = open_checkpoint(*finetuned);
                const auto layers = list_layers(h0, opts->build());
                report.echo_config(
                    {{"base", *base}, {"finetuned", *finetuned}, {"k", *k}});
                auto& block = report.add_block(
                    "perturbation_bounds",
                    "bounds evaluated with Delta = W1 - W0 per layer");
                ordered_json rows = ordered_json::array();
                std::vector<BoundReport> reps(layers.size());
                std::vector<std::string> errors(layers.size());
                parallel_for(layers.size(), *workers, [&](std::size_t i) {
                    try {
                        const auto w0 = load_matrix(h0, layers[i]);
                        const auto w1 = load_matrix(h1, layers[i]);
                        const Eigen::MatrixXd m0 = to_f64(w0);
                        const Eigen::MatrixXd delta = to_f64(w1) - m0;
                        reps[i] = verify_perturbation_bounds(
                            m0, delta, std::min(*k, std::min(w0.rows, w0.cols) - 1),
                            layers[i]);
                    } catch (const std::exception& e) {
                        errors[i] = e.what();
                    }
                });
                for (std::size_t i = 0; i < layers.size(); ++i) {
                    if (!errors[i].empty()) continue;
                    rows.push_back(bound_json(reps[i]));
                    if (!reps[i].all_hold) violations = true;
                }
                block["layers"] = std::move(rows);
                ordered_json errs = ordered_json::array();
                for (std::size_t i = 0; i < layers.size(); ++i)
                    if (!errors[i].empty())
                        errs.push_back({{"layer", layers[i]}, {"error", errors[i]}});
                block["errors"] = std::move(errs);
            }

            out->emit(report);
            if (violations) *exit_code = kExitFindings;
        });
    }
}

}  // namespace wlens::cli
