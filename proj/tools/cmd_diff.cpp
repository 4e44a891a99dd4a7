#include <filesystem>
#include <fstream>
#include <map>

#include "commands.hpp"
#include "wlens/diff.hpp"
#include "wlens/mask_ops.hpp"
#include "wlens/recipes.hpp"
#include "wlens/rng.hpp"

namespace wlens::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json sparsity_block(const SparsityReport& rep) {
    ordered_json j;
    j["mode"] = rep.mode;
    j["eta"] = rep.eta;
    j["filter"] = {{"include", rep.filter.include},
                   {"exclude", rep.filter.exclude},
                   {"min_rank", rep.filter.min_rank}};
    ordered_json layers = ordered_json::array();
    for (const auto& l : rep.layers)
        layers.push_back({{"layer", l.name},
                          {"changed", l.changed},
                          {"total", l.total},
                          {"sparsity", l.sparsity}});
    j["layers"] = std::move(layers);
    j["global"] = {{"changed", rep.changed_total},
                   {"total", rep.param_total},
                   {"sparsity", rep.global_sparsity}};
    return j;
}

DiffMode parse_mode(const std::string& mode) {
    if (mode == "bf16") return DiffMode::bf16_probe;
    if (mode == "f32") return DiffMode::f32_exact;
    if (mode == "absolute") return DiffMode::absolute;
    throw ConfigError("--mode must be bf16, f32, or absolute");
}

// Mask archives keyed by layer name, manifest order preserved.
struct LoadedArchive {
    std::vector<std::string> order;
    std::map<std::string, Mask> by_layer;
};

LoadedArchive load_archive(const std::string& dir) {
    LoadedArchive out;
    for (auto& m : load_mask_archive(dir)) {
        out.order.push_back(m.layer_name());
        out.by_layer.emplace(m.layer_name(), std::move(m));
    }
    return out;
}

}  // namespace

void setup_diff_commands(CLI::App& app, int* exit_code) {
    (void)exit_code;

    // --- sparsity ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto out = std::make_shared<OutputOptions>();
        auto base = std::make_shared<std::string>();
        auto finetuned = std::make_shared<std::string>();
        auto eta = std::make_shared<double>(1e-3);
        auto mode = std::make_shared<std::string>("bf16");
        auto abs_tol = std::make_shared<double>(1e-5);
        auto workers = std::make_shared<unsigned>(0);
        auto skip_all = std::make_shared<bool>(false);

        auto* cmd = app.add_subcommand(
            "sparsity", "fraction of stored weights unchanged between two checkpoints");
        cmd->add_option("--base", *base, "base checkpoint")->required();
        cmd->add_option("--finetuned", *finetuned, "finetuned checkpoint")->required();
        cmd->add_option("--eta", *eta, "relative tolerance of the probe");
        cmd->add_option("--mode", *mode, "bf16 | f32 | absolute");
        cmd->add_option("--abs-tol", *abs_tol, "tolerance for --mode absolute");
        cmd->add_option("--workers", *workers, "layer-level parallelism (0 = auto)");
        cmd->add_flag("--filtered-only", *skip_all,
                      "skip the extra all-tensors sparsity block");
        opts->attach(cmd);
        out->attach(cmd);

        cmd->callback([=] {
            DiffConfig cfg;
            cfg.probe.eta = *eta;
            cfg.mode = parse_mode(*mode);
            cfg.absolute_tol = *abs_tol;
            const auto h0 = open_checkpoint(*base);
            const auto h1 = open_checkpoint(*finetuned);

            Report report(0);
            report.echo_config({{"base", *base},
                                {"finetuned", *finetuned},
                                {"eta", *eta},
                                {"mode", *mode}});
            auto& block = report.add_block(
                "sparsity",
                "sparsity = 1 - changed/n; changed iff |w1-w0| > eta*max(|w0|,|w1|)");
            block.update(sparsity_block(sparsity_bf16(h0, h1, opts->build(), cfg, *workers)));

            // Both tensor populations are reported unless suppressed: the
            // linear-layer convention and the everything-included count.
            if (!*skip_all && !opts->all) {
                auto& all_block = report.add_block(
                    "sparsity_all_tensors",
                    "same probe over every stored tensor, rank-1 included");
                all_block.update(sparsity_block(
                    sparsity_bf16(h0, h1, LayerFilter::everything(), cfg, *workers)));
            }
            out->emit(report);
        });
    }

    // --- mask ---
    {
        auto opts = std::make_shared<FilterOptions>();
        auto base = std::make_shared<std::string>();
        auto finetuned = std::make_shared<std::string>();
        auto eta = std::make_shared<double>(1e-3);
        auto mode = std::make_shared<std::string>("bf16");
        auto out_dir = std::make_shared<std::string>();
        auto workers = std::make_shared<unsigned>(0);

        auto* cmd = app.add_subcommand(
            "mask", "write per-layer update masks for a checkpoint pair");
        cmd->add_option("--base", *base)->required();
        cmd->add_option("--finetuned", *finetuned)->required();
        cmd->add_option("--out", *out_dir, "mask archive directory")->required();
        cmd->add_option("--eta", *eta);
        cmd->add_option("--mode", *mode, "bf16 | f32 | absolute");
        cmd->add_option("--workers", *workers);
        opts->attach(cmd);

        cmd->callback([=] {
            DiffConfig cfg;
            cfg.probe.eta = *eta;
            cfg.mode = parse_mode(*mode);
            const auto h0 = open_checkpoint(*base);
            const auto h1 = open_checkpoint(*finetuned);
            const auto masks = update_masks(h0, h1, opts->build(), cfg, *workers);
            const auto manifest = export_mask_archive(
                *out_dir, masks, "update masks: " + *base + " vs " + *finetuned, 0);
            std::size_t changed = 0, total = 0;
            for (const auto& e : manifest.entries) {
                changed += e.selected;
                total += e.rows * e.cols;
            }
            std::printf("wrote %zu masks to %s (changed %zu of %zu, sparsity %.6f)\n",
                        manifest.entries.size(), out_dir->c_str(), changed, total,
                        total ? 1.0 - static_cast<double>(changed) / total : 1.0);
        });
    }

    // --- jaccard ---
    {
        auto dirs = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<OutputOptions>();
        auto* cmd = app.add_subcommand(
            "jaccard", "pairwise overlap of update masks across runs, with analytic baseline");
        cmd->add_option("masks", *dirs, "two or more mask archive directories")
            ->required()
            ->expected(2, -1);
        out->attach(cmd);

        cmd->callback([=] {
            std::vector<LoadedArchive> archives;
            for (const auto& d : *dirs) archives.push_back(load_archive(d));

            Report report(0);
            report.echo_config({{"masks", *dirs}});
            auto& block = report.add_block(
                "jaccard", "J(A,B) = |A inter B| / |A union B|; baseline = pq/(p+q-pq)");
            ordered_json layers = ordered_json::array();
            double acc = 0.0, bacc = 0.0;
            std::size_t cnt = 0;
            for (const auto& layer : archives.front().order) {
                std::vector<Mask> group;
                for (const auto& a : archives) {
                    const auto it = a.by_layer.find(layer);
                    if (it != a.by_layer.end()) group.push_back(it->second);
                }
                if (group.size() < 2) continue;
                const JaccardSummary s = jaccard_matrix(group);
                layers.push_back({{"layer", layer},
                                  {"matrix", s.matrix},
                                  {"baseline", s.baseline},
                                  {"densities", s.densities},
                                  {"mean_off_diagonal", s.mean_off_diagonal},
                                  {"mean_baseline_off_diagonal",
                                   s.mean_baseline_off_diagonal}});
                acc += s.mean_off_diagonal;
                bacc += s.mean_baseline_off_diagonal;
                ++cnt;
            }
            block["layers"] = std::move(layers);
            block["mean_off_diagonal"] = cnt ? acc / cnt : 0.0;
            block["mean_baseline_off_diagonal"] = cnt ? bacc / cnt : 0.0;
            out->emit(report);
        });
    }

    // --- consensus ---
    {
        auto dirs = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<OutputOptions>();
        auto csv_dir = std::make_shared<std::string>();
        auto grid = std::make_shared<std::size_t>(256);
        auto* cmd = app.add_subcommand(
            "consensus", "per-coordinate fraction of runs that changed each weight");
        cmd->add_option("masks", *dirs, "two or more mask archive directories")
            ->required()
            ->expected(2, -1);
        cmd->add_option("--csv-dir", *csv_dir, "write one grid CSV per layer here");
        cmd->add_option("--grid", *grid, "max heatmap cells per axis");
        out->attach(cmd);

        cmd->callback([=] {
            std::vector<LoadedArchive> archives;
            for (const auto& d : *dirs) archives.push_back(load_archive(d));
            if (!csv_dir->empty()) fs::create_directories(*csv_dir);

            Report report(0);
            report.echo_config({{"masks", *dirs}});
            auto& block = report.add_block("consensus", "C[i,j] = (1/R) sum_r M_r[i,j]");
            ordered_json layers = ordered_json::array();
            for (const auto& layer : archives.front().order) {
                std::vector<Mask> group;
                for (const auto& a : archives) {
                    const auto it = a.by_layer.find(layer);
                    if (it != a.by_layer.end()) group.push_back(it->second);
                }
                if (group.size() < 2) continue;
                const ConsensusMap map = consensus(group);
                ordered_json row;
                row["layer"] = layer;
                row["runs"] = map.run_count;
                row["mean"] = map.mean();
                std::size_t full = 0;
                for (const auto c : map.counts)
                    if (c == map.run_count) ++full;
                row["full_consensus_cells"] = full;
                if (!csv_dir->empty()) {
                    std::string name = layer;
                    for (auto& ch : name)
                        if (ch == '/' || ch == '\\' || ch == ':') ch = '_';
                    const std::string path = (fs::path(*csv_dir) / (name + ".csv")).string();
                    std::ofstream f(path);
                    consensus_grid_csv(map, *grid, *grid, f);
                    row["csv"] = path;
                }
                layers.push_back(std::move(row));
            }
            block["layers"] = std::move(layers);
            out->emit(report);
        });
    }

    // --- profiles ---
    {
        auto mask_path = std::make_shared<std::string>();
        auto window = std::make_shared<std::size_t>(3);
        auto csv_path = std::make_shared<std::string>();
        auto out = std::make_shared<OutputOptions>();
        auto* cmd = app.add_subcommand(
            "profiles", "row/column change ratios of one update mask, smoothed");
        cmd->add_option("mask", *mask_path, "a .mask file")->required();
        cmd->add_option("--window", *window, "odd moving-average window");
        cmd->add_option("--profile-csv", *csv_path, "write the per-index profile CSV here");
        out->attach(cmd);

        cmd->callback([=] {
            const Mask m = load_mask(*mask_path);
            const RatioProfiles p = ratio_profiles(m, *window);
            Report report(0);
            report.echo_config({{"mask", *mask_path}, {"window", *window}});
            auto& block = report.add_block(
                "profiles",
                "rho_i = (1/n) sum_j M[i,j]; kappa_j = (1/m) sum_i M[i,j]; centered moving "
                "average");
            block["layer"] = m.layer_name();
            block["rows"] = m.rows();
            block["cols"] = m.cols();
            block["density"] = m.density();
            block["row_ratio"] = p.row_ratio;
            block["col_ratio"] = p.col_ratio;
            block["row_smoothed"] = p.row_smoothed;
            block["col_smoothed"] = p.col_smoothed;
            if (!csv_path->empty()) {
                std::ofstream f(*csv_path);
                if (!f) throw IoError("cannot create " + *csv_path);
                profiles_to_csv(p, f);
            }
            out->emit(report);
        });
    }

    // --- overlap ---
    {
        auto selection = std::make_shared<std::string>();
        auto updates = std::make_shared<std::string>();
        auto out = std::make_shared<OutputOptions>();
        auto* cmd = app.add_subcommand(
            "overlap", "how much of the observed update lands inside a selection mask");
        cmd->add_option("--selection", *selection, "selection mask archive")->required();
        cmd->add_option("--updates", *updates, "update mask archive")->required();
        out->attach(cmd);

        cmd->callback([=] {
            const LoadedArchive sel = load_archive(*selection);
            const LoadedArchive upd = load_archive(*updates);
            Report report(0);
            report.echo_config({{"selection", *selection}, {"updates", *updates}});
            auto& block = report.add_block(
                "overlap", "overlap = |M_sel inter M_upd| / |M_upd|; baseline = density(M_sel)");
            ordered_json layers = ordered_json::array();
            double acc = 0.0, bacc = 0.0;
            std::size_t cnt = 0;
            for (const auto& layer : upd.order) {
                const auto s = sel.by_layer.find(layer);
                const auto u = upd.by_layer.find(layer);
                if (s == sel.by_layer.end() || u == upd.by_layer.end()) continue;
                if (u->second.count() == 0) continue;
                const OverlapResult o = overlap_ratio(s->second, u->second);
                layers.push_back({{"layer", layer},
                                  {"ratio", o.ratio},
                                  {"baseline", o.random_baseline},
                                  {"sub_random", o.ratio < o.random_baseline}});
                acc += o.ratio;
                bacc += o.random_baseline;
                ++cnt;
            }
            block["layers"] = std::move(layers);
            block["mean_ratio"] = cnt ? acc / cnt : 0.0;
            block["mean_baseline"] = cnt ? bacc / cnt : 0.0;
            out->emit(report);
        });
    }
}

}  // namespace wlens::cli
