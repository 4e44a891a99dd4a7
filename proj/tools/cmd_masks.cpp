#include <map>

#include "commands.hpp"
#include "wlens/config.hpp"
#include "wlens/parallel.hpp"
#include "wlens/recipes.hpp"
#include "wlens/rng.hpp"

namespace wlens::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

// Builds one recipe across the filtered layers of a checkpoint, with the
// optional reference archive supplying random_matched cardinalities.
std::vector<Mask> build_layer_masks(const CheckpointHandle& h, const LayerFilter& filter,
                                    const MaskRecipe& recipe,
                                    const std::map<std::string, Mask>* reference,
                                    unsigned workers) {
    const auto layers = list_layers(h, filter);
    std::vector<Mask> masks(layers.size());
    std::vector<std::string> errors(layers.size());
    parallel_for(layers.size(), workers, [&](std::size_t i) {
        try {
            const auto w = load_matrix(h, layers[i]);
            MaskRecipe r = recipe;
            const std::size_t lim = std::min(w.rows, w.cols);
            if (lim >= 2) r.k = std::min(r.k, lim - 1);
            const Mask* ref = nullptr;
            if (reference) {
                const auto it = reference->find(layers[i]);
                if (it == reference->end())
                    throw ConfigError("reference archive is missing layer " + layers[i]);
                ref = &it->second;
            }
            masks[i] = build_recipe_mask(w, r, ref);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (!errors[i].empty())
            throw ConfigError("layer " + layers[i] + ": " + errors[i]);
    return masks;
}

ordered_json densities_json(const MaskArchiveManifest& manifest) {
    ordered_json out = ordered_json::array();
    std::size_t selected = 0, total = 0;
    for (const auto& e : manifest.entries) {
        out.push_back({{"layer", e.layer}, {"selected", e.selected}, {"density", e.density}});
        selected += e.selected;
        total += e.rows * e.cols;
    }
    return {{"layers", out},
            {"overall_density",
             total ? static_cast<double>(selected) / static_cast<double>(total) : 0.0}};
}

}  // namespace

void setup_mask_commands(CLI::App& app, int* exit_code) {
    (void)exit_code;

    // --- principal-mask ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto out = std::make_shared<OutputOptions>();
        auto checkpoint = std::make_shared<std::string>();
        auto kind = std::make_shared<std::string>("principal");
        auto k = std::make_shared<std::size_t>(64);
        auto alpha = std::make_shared<double>(0.5);
        auto out_dir = std::make_shared<std::string>();
        auto workers = std::make_shared<unsigned>(1);

        auto* cmd = app.add_subcommand(
            "principal-mask",
            "select the top-alpha weights of the rank-k reconstruction (or related kinds)");
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--kind", *kind, "principal | principal_complement | low_magnitude");
        cmd->add_option("-k,--k", *k, "reconstruction rank");
        cmd->add_option("--alpha", *alpha, "selected fraction");
        cmd->add_option("--mask-dir", *out_dir, "write the mask archive here");
        cmd->add_option("--workers", *workers);
        opts->attach(cmd);
        out->attach(cmd);

        cmd->callback([=] {
            MaskRecipe recipe;
            recipe.kind = mask_kind_from_name(*kind);
            if (recipe.kind == MaskKind::safe || recipe.kind == MaskKind::random_matched)
                throw ConfigError("principal-mask handles the score-based kinds; use "
                                  "export-masks for safe/random_matched");
            recipe.k = *k;
            recipe.alpha = *alpha;
            const auto h = open_checkpoint(*checkpoint);
            const auto masks = build_layer_masks(h, opts->build(), recipe, nullptr, *workers);

            Report report(0);
            report.echo_config({{"checkpoint", *checkpoint},
                                {"kind", *kind},
                                {"k", *k},
                                {"alpha", *alpha}});
            auto& block = report.add_block(
                "recipe_masks",
                "principal: top-alpha of |rank-k reconstruction|; low_magnitude: "
                "bottom-alpha of |W0|");
            if (!out_dir->empty()) {
                const auto manifest = export_mask_archive(
                    *out_dir, masks,
                    *kind + " k=" + std::to_string(*k) + " alpha=" + std::to_string(*alpha), 0);
                block.update(densities_json(manifest));
                block["dir"] = *out_dir;
            } else {
                ordered_json rows = ordered_json::array();
                for (const auto& m : masks)
                    rows.push_back({{"layer", m.layer_name()},
                                    {"selected", m.count()},
                                    {"density", m.density()}});
                block["layers"] = std::move(rows);
            }
            out->emit(report);
        });
    }

    // --- export-masks ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto out = std::make_shared<OutputOptions>();
        auto checkpoint = std::make_shared<std::string>();
        auto config_path = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto k = std::make_shared<std::size_t>(64);
        auto alpha = std::make_shared<double>(0.5);
        auto alpha_low = std::make_shared<double>(0.5);
        auto workers = std::make_shared<unsigned>(1);

        auto* cmd = app.add_subcommand(
            "export-masks",
            "build the selection-mask family (principal, complement, low-magnitude, safe, "
            "density-matched random) and export archives a trainer can consume");
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--out", *out_dir, "output directory (one archive per recipe)")
            ->required();
        cmd->add_option("--config", *config_path,
                        "config file with [mask <label>] sections; default: the five "
                        "standard designs");
        cmd->add_option("--seed", *seed, "root seed for density-matched randomness");
        cmd->add_option("-k,--k", *k, "reconstruction rank for the default recipes");
        cmd->add_option("--alpha", *alpha, "selected fraction for the default recipes");
        cmd->add_option("--alpha-low", *alpha_low, "low-magnitude fraction of the safe mask");
        cmd->add_option("--workers", *workers);
        opts->attach(cmd);
        out->attach(cmd);

        cmd->callback([=] {
            std::vector<NamedRecipe> recipes;
            if (!config_path->empty()) {
                PipelineConfig cfg = PipelineConfig::from_file(*config_path);
                recipes = cfg.recipes;
            } else {
                PipelineConfig cfg;
                cfg.seed = *seed;
                cfg.k_list = {*k};
                cfg.install_default_recipes();
                recipes = cfg.recipes;
                for (auto& named : recipes) {
                    named.recipe.alpha = *alpha;
                    named.recipe.alpha_low = *alpha_low;
                }
            }

            const auto h = open_checkpoint(*checkpoint);
            const LayerFilter filter = opts->build();

            Report report(*seed);
            report.echo_config({{"checkpoint", *checkpoint},
                                {"out", *out_dir},
                                {"seed", *seed}});
            auto& block = report.add_block(
                "recipe_masks",
                "principal: top-alpha of |rank-k recon|; low: bottom-alpha of |W0|; safe: "
                "low(alpha_low) union complement(principal); random_matched: uniform with "
                "reference cardinality");
            ordered_json jrecipes = ordered_json::array();

            // concrete recipes first; matched randomness needs their masks
            std::map<std::string, std::map<std::string, Mask>> built;
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& named : recipes) {
                    const bool matched = named.recipe.kind == MaskKind::random_matched;
                    if ((pass == 0) == matched) continue;
                    const std::map<std::string, Mask>* ref = nullptr;
                    if (matched) {
                        const auto it = built.find(named.matched_to);
                        if (it == built.end())
                            throw ConfigError("mask " + named.label +
                                              ": matched_to recipe '" + named.matched_to +
                                              "' was not built");
                        ref = &it->second;
                    }
                    const auto masks =
                        build_layer_masks(h, filter, named.recipe, ref, *workers);
                    const std::string dir = *out_dir + "/" + named.label;
                    const auto manifest = export_mask_archive(
                        dir, masks, std::string(mask_kind_name(named.recipe.kind)),
                        named.recipe.seed);
                    ordered_json jr = densities_json(manifest);
                    jr["label"] = named.label;
                    jr["kind"] = mask_kind_name(named.recipe.kind);
                    jr["dir"] = dir;
                    jrecipes.push_back(std::move(jr));
                    auto& slot = built[named.label];
                    for (const auto& m : masks) slot.emplace(m.layer_name(), m);
                }
            }
            block["recipes"] = std::move(jrecipes);
            out->emit(report);
        });
    }
}

}  // namespace wlens::cli
