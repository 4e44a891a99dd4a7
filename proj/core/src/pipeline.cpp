#include "wlens/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "wlens/diff.hpp"
#include "wlens/mask_ops.hpp"
#include "wlens/parallel.hpp"
#include "wlens/rng.hpp"
#include "wlens/spectral.hpp"

namespace wlens {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string sanitize(const std::string& layer) {
    std::string out = layer;
    for (auto& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

ordered_json filter_json(const LayerFilter& f) {
    ordered_json j;
    j["include"] = f.include;
    j["exclude"] = f.exclude;
    j["min_rank"] = f.min_rank;
    return j;
}

ordered_json config_json(const PipelineConfig& cfg) {
    ordered_json j;
    j["base"] = cfg.base;
    j["finetuned"] = cfg.finetuned;
    j["output"] = cfg.output_dir;
    j["eta"] = cfg.eta;
    j["mode"] = cfg.diff_mode_hint == DiffMode::bf16_probe ? "bf16" : "f32";
    j["k"] = cfg.k_list;
    j["window"] = cfg.profile_window;
    j["filter"] = filter_json(cfg.filter);
    j["report_all_tensors"] = cfg.report_all_tensors;
    ordered_json recipes = ordered_json::array();
    for (const auto& r : cfg.recipes) {
        ordered_json jr;
        jr["label"] = r.label;
        jr["kind"] = mask_kind_name(r.recipe.kind);
        jr["k"] = r.recipe.k;
        jr["alpha"] = r.recipe.alpha;
        if (r.recipe.kind == MaskKind::safe) jr["alpha_low"] = r.recipe.alpha_low;
        if (r.recipe.kind == MaskKind::random_matched) {
            jr["seed"] = r.recipe.seed;
            jr["matched_to"] = r.matched_to;
        }
        recipes.push_back(std::move(jr));
    }
    j["masks"] = std::move(recipes);
    return j;
}

ordered_json sparsity_json(const SparsityReport& rep) {
    ordered_json j;
    j["mode"] = rep.mode;
    j["eta"] = rep.eta;
    j["filter"] = filter_json(rep.filter);
    ordered_json layers = ordered_json::array();
    for (const auto& l : rep.layers) {
        ordered_json jl;
        jl["layer"] = l.name;
        jl["changed"] = l.changed;
        jl["total"] = l.total;
        jl["sparsity"] = l.sparsity;
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    j["global"] = {{"changed", rep.changed_total},
                   {"total", rep.param_total},
                   {"sparsity", rep.global_sparsity}};
    return j;
}

struct LayerGeometry {
    bool ok = false;
    std::string error;
    std::vector<Mask> recipe_masks;         // one per cfg.recipes entry
    std::vector<LayerDrift> drift_per_run;  // one per finetuned run
};

}  // namespace

Report run_pipeline(const PipelineConfig& cfg) {
    const auto problems = cfg.validate();
    if (!problems.empty()) {
        std::string msg = "invalid pipeline configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }

    fs::create_directories(cfg.output_dir);
    fs::create_directories(fs::path(cfg.output_dir) / "csv");
    fs::create_directories(fs::path(cfg.output_dir) / "masks");

    Report report(cfg.seed);
    report.echo_config(config_json(cfg));

    const CheckpointHandle base = open_checkpoint(cfg.base);
    std::vector<CheckpointHandle> runs;
    for (const auto& path : cfg.finetuned) runs.push_back(open_checkpoint(path));

    const auto layers = list_layers(base, cfg.filter);
    DiffConfig diff_cfg;
    diff_cfg.probe.eta = cfg.eta;
    diff_cfg.mode = cfg.diff_mode_hint;

    // --- pass A: update masks + sparsity, per run ---
    // masks[r][l] stays bit-packed in memory; failed layers carry an empty
    // mask and an error entry.
    std::vector<std::vector<Mask>> masks(runs.size());
    for (std::size_t r = 0; r < runs.size(); ++r) {
        masks[r].assign(layers.size(), Mask());
        std::vector<std::string> errors(layers.size());
        parallel_for(layers.size(), cfg.workers, [&](std::size_t l) {
            try {
                const auto w0 = load_matrix(base, layers[l], cfg.filter.min_rank <= 1);
                const auto w1 = load_matrix(runs[r], layers[l], cfg.filter.min_rank <= 1);
                masks[r][l] = update_mask(w0, w1, diff_cfg);
            } catch (const std::exception& e) {
                errors[l] = e.what();
            }
        });

        auto& block = report.add_block(
            "sparsity",
            "sparsity = 1 - |{(i,j): changed}| / n; changed iff |w1-w0| > eta*max(|w0|,|w1|)");
        block["run"] = cfg.finetuned[r];
        block["mode"] = diff_cfg.mode == DiffMode::bf16_probe ? "bf16_probe" : "f32_exact";
        block["eta"] = cfg.eta;
        block["filter"] = filter_json(cfg.filter);
        ordered_json jl = ordered_json::array();
        std::size_t changed = 0, total = 0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (!errors[l].empty()) continue;
            const Mask& m = masks[r][l];
            ordered_json row;
            row["layer"] = layers[l];
            row["changed"] = m.count();
            row["total"] = m.size();
            row["sparsity"] = m.size() ? 1.0 - m.density() : 1.0;
            jl.push_back(std::move(row));
            changed += m.count();
            total += m.size();
        }
        block["layers"] = std::move(jl);
        block["global"] = {
            {"changed", changed},
            {"total", total},
            {"sparsity", total ? 1.0 - static_cast<double>(changed) / total : 1.0}};
        ordered_json jerr = ordered_json::array();
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (!errors[l].empty()) jerr.push_back({{"layer", layers[l]}, {"error", errors[l]}});
        block["errors"] = std::move(jerr);

        // Mask files for downstream tooling.
        const std::string mask_dir =
            (fs::path(cfg.output_dir) / "masks" / ("updates-run" + std::to_string(r))).string();
        std::vector<Mask> ok_masks;
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (errors[l].empty()) ok_masks.push_back(masks[r][l]);
        export_mask_archive(mask_dir, ok_masks, "update masks vs " + cfg.finetuned[r], cfg.seed);
    }

    // Sparsity with every tensor included (rank-1 kept), answering the
    // "does the count include norms and biases" question both ways.
    if (cfg.report_all_tensors) {
        for (std::size_t r = 0; r < runs.size(); ++r) {
            auto& block = report.add_block(
                "sparsity_all_tensors",
                "sparsity over all stored tensors including rank-1 (norms, biases)");
            block["run"] = cfg.finetuned[r];
            try {
                const SparsityReport rep = sparsity_bf16(base, runs[r], LayerFilter::everything(),
                                                         diff_cfg, cfg.workers);
                block.update(sparsity_json(rep));
            } catch (const std::exception& e) {
                block["error"] = e.what();
            }
        }
    }

    // --- cross-run agreement ---
    if (runs.size() >= 2) {
        auto& jblock = report.add_block(
            "jaccard", "J(A,B) = |A inter B| / |A union B|; baseline = pq/(p+q-pq)");
        auto& cblock =
            report.add_block("consensus", "C[i,j] = (1/R) sum_r M_r[i,j]");
        ordered_json jl = ordered_json::array();
        ordered_json cl = ordered_json::array();
        double mean_acc = 0.0, base_acc = 0.0;
        std::size_t mean_cnt = 0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::vector<Mask> per_run;
            for (std::size_t r = 0; r < runs.size(); ++r)
                if (masks[r][l].size() > 0) per_run.push_back(masks[r][l]);
            if (per_run.size() < 2) continue;

            const JaccardSummary js = jaccard_matrix(per_run);
            ordered_json row;
            row["layer"] = layers[l];
            row["matrix"] = js.matrix;
            row["baseline"] = js.baseline;
            row["densities"] = js.densities;
            row["mean_off_diagonal"] = js.mean_off_diagonal;
            row["mean_baseline_off_diagonal"] = js.mean_baseline_off_diagonal;
            jl.push_back(std::move(row));
            mean_acc += js.mean_off_diagonal;
            base_acc += js.mean_baseline_off_diagonal;
            ++mean_cnt;

            const ConsensusMap cm = consensus(per_run);
            std::size_t full_rows = 0;
            for (std::size_t i = 0; i < cm.rows; ++i) {
                bool full = true;
                for (std::size_t j = 0; j < cm.cols && full; ++j)
                    full = cm.counts[i * cm.cols + j] == cm.run_count;
                if (full) ++full_rows;
            }
            const std::string csv_name = "consensus-" + sanitize(layers[l]) + ".csv";
            {
                std::ofstream csv(fs::path(cfg.output_dir) / "csv" / csv_name);
                consensus_grid_csv(cm, 256, 256, csv);
            }
            ordered_json crow;
            crow["layer"] = layers[l];
            crow["runs"] = cm.run_count;
            crow["mean"] = cm.mean();
            crow["full_consensus_rows"] = full_rows;
            crow["grid_csv"] = "csv/" + csv_name;
            cl.push_back(std::move(crow));
        }
        jblock["layers"] = std::move(jl);
        jblock["mean_off_diagonal"] = mean_cnt ? mean_acc / mean_cnt : 0.0;
        jblock["mean_baseline_off_diagonal"] = mean_cnt ? base_acc / mean_cnt : 0.0;
        cblock["layers"] = std::move(cl);
    }

    // --- ratio profiles ---
    {
        auto& block = report.add_block(
            "profiles",
            "rho_i = (1/n) sum_j M[i,j]; kappa_j = (1/m) sum_i M[i,j]; centered moving average");
        block["window"] = cfg.profile_window;
        ordered_json rows = ordered_json::array();
        for (std::size_t r = 0; r < runs.size(); ++r) {
            for (std::size_t l = 0; l < layers.size(); ++l) {
                if (masks[r][l].size() == 0) continue;
                const RatioProfiles prof = ratio_profiles(masks[r][l], cfg.profile_window);
                const std::string csv_name =
                    "profiles-run" + std::to_string(r) + "-" + sanitize(layers[l]) + ".csv";
                {
                    std::ofstream csv(fs::path(cfg.output_dir) / "csv" / csv_name);
                    profiles_to_csv(prof, csv);
                }
                double mean_row = 0.0;
                for (const double v : prof.row_ratio) mean_row += v;
                mean_row /= static_cast<double>(prof.row_ratio.size());
                ordered_json row;
                row["run"] = cfg.finetuned[r];
                row["layer"] = layers[l];
                row["csv"] = "csv/" + csv_name;
                row["mean_row_ratio"] = mean_row;
                row["density"] = masks[r][l].density();
                rows.push_back(std::move(row));
            }
        }
        block["layers"] = std::move(rows);
    }

    // --- pass B: spectral drift + recipe masks, per layer ---
    const std::size_t kmax_spectral =
        *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    std::size_t kmax_recipe = 0;
    for (const auto& nr : cfg.recipes)
        if (nr.recipe.kind != MaskKind::low_magnitude &&
            nr.recipe.kind != MaskKind::random_matched)
            kmax_recipe = std::max(kmax_recipe, nr.recipe.k);

    std::vector<LayerGeometry> geometry(layers.size());
    parallel_for(layers.size(), cfg.spectral_workers, [&](std::size_t l) {
        LayerGeometry& g = geometry[l];
        try {
            const auto w0 = load_matrix(base, layers[l], false);
            const Eigen::MatrixXd m0 = to_f64(w0);
            const std::size_t short_side = std::min(w0.rows, w0.cols);
            if (short_side < 2) throw ConfigError("layer too small for spectral analysis");
            const std::size_t kk =
                std::min(std::max(kmax_spectral, kmax_recipe), short_side - 1);
            const SpectralSummary s0 = svd_topk(m0, layers[l], kk);

            // Recipe masks, concrete kinds first so matched references exist.
            g.recipe_masks.assign(cfg.recipes.size(), Mask());
            for (std::size_t i = 0; i < cfg.recipes.size(); ++i) {
                const auto& named = cfg.recipes[i];
                if (named.recipe.kind == MaskKind::random_matched) continue;
                MaskRecipe r = named.recipe;
                r.k = std::min(r.k, short_side - 1);
                const std::size_t rk = r.k;
                switch (r.kind) {
                    case MaskKind::low_magnitude:
                        g.recipe_masks[i] = low_magnitude_mask(m0, layers[l], r.alpha);
                        break;
                    case MaskKind::principal:
                    case MaskKind::principal_complement:
                    case MaskKind::safe: {
                        const Eigen::MatrixXd recon =
                            s0.U_k.leftCols(static_cast<Eigen::Index>(rk)) *
                            s0.sigma.head(static_cast<Eigen::Index>(rk)).asDiagonal() *
                            s0.V_k.leftCols(static_cast<Eigen::Index>(rk)).transpose();
                        Mask princ = top_magnitude_mask(recon, layers[l], r.alpha);
                        if (r.kind == MaskKind::principal) {
                            g.recipe_masks[i] = std::move(princ);
                        } else if (r.kind == MaskKind::principal_complement) {
                            g.recipe_masks[i] = Mask::complement(princ);
                        } else {
                            const Mask low = low_magnitude_mask(m0, layers[l], r.alpha_low);
                            g.recipe_masks[i] =
                                Mask::union_of(low, Mask::complement(princ));
                        }
                        break;
                    }
                    default:
                        break;
                }
            }
            for (std::size_t i = 0; i < cfg.recipes.size(); ++i) {
                const auto& named = cfg.recipes[i];
                if (named.recipe.kind != MaskKind::random_matched) continue;
                const Mask* ref = nullptr;
                for (std::size_t j = 0; j < cfg.recipes.size(); ++j)
                    if (cfg.recipes[j].label == named.matched_to) ref = &g.recipe_masks[j];
                if (!ref || ref->size() == 0)
                    throw ConfigError("random_matched reference mask unavailable");
                g.recipe_masks[i] = build_recipe_mask(w0, named.recipe, ref);
            }

            // Drift against every run.
            g.drift_per_run.resize(runs.size());
            for (std::size_t r = 0; r < runs.size(); ++r) {
                const auto w1 = load_matrix(runs[r], layers[l], false);
                std::vector<std::size_t> klist;
                for (const auto k : cfg.k_list)
                    klist.push_back(std::min(k, short_side - 1));
                std::sort(klist.begin(), klist.end());
                klist.erase(std::unique(klist.begin(), klist.end()), klist.end());
                g.drift_per_run[r] = layer_drift(w0, w1, klist);
            }
            g.ok = true;
        } catch (const std::exception& e) {
            g.error = e.what();
        }
    });

    // Spectral drift blocks, one per run, plus a CSV per run.
    for (std::size_t r = 0; r < runs.size(); ++r) {
        auto& block = report.add_block(
            "spectral_drift",
            "cos theta_i = sigma_i(U0k^T U1k); NSS = ||sigma1-sigma0||2/||sigma0||2; "
            "kyfan_k = |sum_k sigma1 - sum_k sigma0|");
        block["run"] = cfg.finetuned[r];
        ordered_json rows = ordered_json::array();
        std::vector<LayerDrift> drifts;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (!geometry[l].ok) continue;
            const LayerDrift& d = geometry[l].drift_per_run[r];
            drifts.push_back(d);
            ordered_json row;
            row["layer"] = d.name;
            row["rows"] = d.rows;
            row["cols"] = d.cols;
            row["nss_full"] = d.nss_full;
            row["weyl_max_dsigma"] = d.weyl_max_dsigma;
            row["hw_sq_dsigma"] = d.hw_sq_dsigma;
            ordered_json per_k = ordered_json::array();
            for (const auto& kd : d.per_k) {
                ordered_json jk;
                jk["k"] = kd.k;
                jk["max_angle_u"] = kd.max_angle_u;
                jk["max_angle_v"] = kd.max_angle_v;
                jk["kyfan_drift"] = kd.kyfan;
                jk["nss_topk"] = kd.nss_topk;
                jk["gap"] = kd.gap0;
                per_k.push_back(std::move(jk));
            }
            row["per_k"] = std::move(per_k);
            rows.push_back(std::move(row));
        }
        block["layers"] = std::move(rows);
        const std::string csv_name = "drift-run" + std::to_string(r) + ".csv";
        {
            std::ofstream csv(fs::path(cfg.output_dir) / "csv" / csv_name);
            drift_to_csv(drifts, csv);
        }
        block["csv"] = "csv/" + csv_name;
        ordered_json jerr = ordered_json::array();
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (!geometry[l].ok)
                jerr.push_back({{"layer", layers[l]}, {"error", geometry[l].error}});
        block["errors"] = std::move(jerr);
    }

    // Recipe mask densities + export.
    {
        auto& block = report.add_block(
            "recipe_masks",
            "principal: top-alpha of |rank-k reconstruction|; low_magnitude: bottom-alpha of "
            "|W0|; safe: low(alpha_low) union complement(principal)");
        ordered_json jrecipes = ordered_json::array();
        for (std::size_t i = 0; i < cfg.recipes.size(); ++i) {
            const auto& named = cfg.recipes[i];
            std::vector<Mask> layer_masks;
            for (std::size_t l = 0; l < layers.size(); ++l)
                if (geometry[l].ok && geometry[l].recipe_masks[i].size() > 0)
                    layer_masks.push_back(geometry[l].recipe_masks[i]);
            const std::string dir =
                (fs::path(cfg.output_dir) / "masks" / named.label).string();
            std::string desc = std::string(mask_kind_name(named.recipe.kind)) +
                               " k=" + std::to_string(named.recipe.k) +
                               " alpha=" + std::to_string(named.recipe.alpha);
            export_mask_archive(dir, layer_masks, desc, named.recipe.seed);
            ordered_json jr;
            jr["label"] = named.label;
            jr["kind"] = mask_kind_name(named.recipe.kind);
            jr["dir"] = "masks/" + named.label;
            ordered_json dens = ordered_json::array();
            std::size_t selected = 0, total = 0;
            for (const auto& m : layer_masks) {
                dens.push_back(
                    {{"layer", m.layer_name()}, {"density", m.density()}, {"selected", m.count()}});
                selected += m.count();
                total += m.size();
            }
            jr["layers"] = std::move(dens);
            jr["overall_density"] =
                total ? static_cast<double>(selected) / static_cast<double>(total) : 0.0;
            jrecipes.push_back(std::move(jr));
        }
        block["recipes"] = std::move(jrecipes);
    }

    // Overlap of each recipe mask with each run's update mask.
    {
        auto& block = report.add_block(
            "overlap", "overlap = |M_sel inter M_upd| / |M_upd|; baseline = density(M_sel)");
        ordered_json rows = ordered_json::array();
        for (std::size_t r = 0; r < runs.size(); ++r) {
            for (std::size_t i = 0; i < cfg.recipes.size(); ++i) {
                ordered_json entry;
                entry["run"] = cfg.finetuned[r];
                entry["recipe"] = cfg.recipes[i].label;
                ordered_json per_layer = ordered_json::array();
                double acc = 0.0, bacc = 0.0;
                std::size_t cnt = 0;
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    if (!geometry[l].ok || masks[r][l].size() == 0) continue;
                    if (masks[r][l].count() == 0) continue;  // no updates: ratio undefined
                    const OverlapResult o =
                        overlap_ratio(geometry[l].recipe_masks[i], masks[r][l]);
                    per_layer.push_back({{"layer", layers[l]},
                                         {"ratio", o.ratio},
                                         {"baseline", o.random_baseline}});
                    acc += o.ratio;
                    bacc += o.random_baseline;
                    ++cnt;
                }
                entry["layers"] = std::move(per_layer);
                entry["mean_ratio"] = cnt ? acc / cnt : 0.0;
                entry["mean_baseline"] = cnt ? bacc / cnt : 0.0;
                rows.push_back(std::move(entry));
            }
        }
        block["pairs"] = std::move(rows);
    }

    report.save((fs::path(cfg.output_dir) / "report.json").string());
    return report;
}

}  // namespace wlens
