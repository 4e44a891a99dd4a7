#include <fstream>
#include <set>

#include "commands.hpp"
#include "wlens/intervention.hpp"
#include "wlens/rng.hpp"
#include "wlens/tensor.hpp"

namespace wlens::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string expand(const std::string& pattern, std::size_t layer, const std::string& proj) {
    std::string out = pattern;
    const auto replace = [&](const std::string& key, const std::string& value) {
        const auto pos = out.find(key);
        if (pos == std::string::npos)
            throw ConfigError("layer pattern must contain " + key + ": " + pattern);
        out.replace(pos, key.size(), value);
    };
    replace("{layer}", std::to_string(layer));
    replace("{proj}", proj);
    return out;
}

struct ExtractedAttention {
    AttentionWeights weights;        // canonical: d_model rows, head axis on columns
    std::array<bool, 4> transposed;  // q, k, v, o stored with the head axis on rows
    std::array<Dtype, 4> dtype;
    std::array<std::string, 4> names;
};

// Real checkpoints store projections as [out_features, in_features]; the
// head axis sits on the rows for q/k/v and on the columns for o. Orientation
// is detected from the shape; square layers fall back to that convention.
ExtractedAttention extract_attention(const CheckpointHandle& h, const std::string& pattern,
                                     std::size_t layer, const HeadLayout& layout) {
    layout.validate();
    ExtractedAttention out;
    const std::array<std::string, 4> projs = {"q", "k", "v", "o"};
    std::array<Eigen::MatrixXd, 4> mats;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = expand(pattern, layer, projs[i]);
        out.names[i] = name;
        const WeightMatrix w = load_matrix(h, name);
        out.dtype[i] = w.dtype;
        const std::size_t head_width = (projs[i] == "k" || projs[i] == "v")
                                           ? layout.kv_width()
                                           : layout.q_width();
        Eigen::MatrixXd m = to_f64(w);
        bool transpose;
        if (w.rows == head_width && w.cols != head_width) {
            transpose = true;
        } else if (w.cols == head_width && w.rows != head_width) {
            transpose = false;
        } else if (w.rows == head_width && w.cols == head_width) {
            transpose = projs[i] != "o";  // [out, in] storage convention
        } else {
            throw ShapeError(name + ": neither axis matches the head width " +
                             std::to_string(head_width));
        }
        out.transposed[i] = transpose;
        if (transpose)
            mats[i] = m.transpose();
        else
            mats[i] = std::move(m);
    }
    out.weights.wq = std::move(mats[0]);
    out.weights.wk = std::move(mats[1]);
    out.weights.wv = std::move(mats[2]);
    out.weights.wo = std::move(mats[3]);
    out.weights.validate(layout);
    return out;
}

WeightMatrix pack_back(const std::string& name, const Eigen::MatrixXd& canonical,
                       bool transposed, Dtype dtype) {
    Eigen::MatrixXd stored;
    if (transposed)
        stored = canonical.transpose();
    else
        stored = canonical;
    return from_f64(name, stored, dtype);
}

std::vector<std::size_t> parse_perm(const std::string& text, std::size_t kv_heads, Rng& rng) {
    if (text.empty()) {
        // default: cyclic shift by one (identity when only one KV head)
        std::vector<std::size_t> p(kv_heads);
        for (std::size_t i = 0; i < kv_heads; ++i) p[i] = (i + 1) % kv_heads;
        (void)rng;
        return p;
    }
    std::vector<std::size_t> p;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto comma = text.find(',', pos);
        const std::string tok = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
        p.push_back(static_cast<std::size_t>(std::stoull(tok)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return p;
}

}  // namespace

void setup_intervene_commands(CLI::App& app, int* exit_code) {
    // --- intervene ---
    {
        auto checkpoint = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto provenance_path = std::make_shared<std::string>();
        auto layers = std::make_shared<std::vector<std::size_t>>();
        auto pattern = std::make_shared<std::string>(
            "model.layers.{layer}.self_attn.{proj}_proj.weight");
        auto head_dim = std::make_shared<std::size_t>(0);
        auto q_heads = std::make_shared<std::size_t>(0);
        auto kv_heads = std::make_shared<std::size_t>(0);
        auto rotate = std::make_shared<bool>(false);
        auto permute = std::make_shared<bool>(false);
        auto perm_text = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(0);

        auto* cmd = app.add_subcommand(
            "intervene",
            "rewrite attention layers with function-preserving V/O rotations and/or head "
            "permutations, emitting a new checkpoint plus a provenance record");
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--out", *out_path, "edited checkpoint path")->required();
        cmd->add_option("--provenance", *provenance_path,
                        "provenance JSON path (default: <out>.provenance.json)");
        cmd->add_option("--layer", *layers, "block indices to edit")->required();
        cmd->add_option("--pattern", *pattern, "tensor name template with {layer} and {proj}");
        cmd->add_option("--head-dim", *head_dim)->required();
        cmd->add_option("--q-heads", *q_heads)->required();
        cmd->add_option("--kv-heads", *kv_heads)->required();
        cmd->add_flag("--rotate", *rotate, "apply a per-layer Haar V/O rotation");
        cmd->add_flag("--permute", *permute, "apply a KV head permutation");
        cmd->add_option("--perm", *perm_text, "explicit permutation, e.g. 1,0,3,2");
        cmd->add_option("--seed", *seed);

        cmd->callback([=] {
            if (!*rotate && !*permute)
                throw ConfigError("intervene needs --rotate and/or --permute");
            const HeadLayout layout{*head_dim, *q_heads, *kv_heads};
            layout.validate();
            const auto h = open_checkpoint(*checkpoint);

            ordered_json prov;
            prov["tool_version"] = kToolVersion;
            prov["checkpoint"] = *checkpoint;
            prov["out"] = *out_path;
            prov["seed"] = *seed;
            prov["layout"] = {{"head_dim", *head_dim},
                              {"q_heads", *q_heads},
                              {"kv_heads", *kv_heads}};
            prov["transforms"] = ordered_json::array();

            std::map<std::string, WeightMatrix> edited;
            for (const std::size_t layer : *layers) {
                ExtractedAttention ext = extract_attention(h, *pattern, layer, layout);
                AttentionWeights work = ext.weights;
                ordered_json entry;
                entry["layer"] = layer;
                entry["kinds"] = ordered_json::array();
                entry["orientation_transposed"] = {{"q", ext.transposed[0]},
                                                   {"k", ext.transposed[1]},
                                                   {"v", ext.transposed[2]},
                                                   {"o", ext.transposed[3]}};

                if (*permute) {
                    Rng rng(split_seed(*seed, "perm-layer-" + std::to_string(layer)));
                    const auto perm = parse_perm(*perm_text, layout.kv_heads, rng);
                    work = apply_head_permutation(work, layout, perm);
                    entry["kinds"].push_back("permute");
                    entry["perm"] = perm;
                }
                if (*rotate) {
                    Rng rng(split_seed(*seed, "rotate-layer-" + std::to_string(layer)));
                    const Eigen::MatrixXd r = haar_orthogonal(layout.head_dim, rng);
                    work = apply_vo_rotation(work, layout, r);
                    entry["kinds"].push_back("rotate");
                }

                const double wv_rel =
                    ext.weights.wv.norm() > 0
                        ? (work.wv - ext.weights.wv).norm() / ext.weights.wv.norm()
                        : 0.0;
                entry["wv_rel_deviation"] = wv_rel;
                prov["transforms"].push_back(std::move(entry));

                edited.emplace(ext.names[0],
                               pack_back(ext.names[0], work.wq, ext.transposed[0], ext.dtype[0]));
                edited.emplace(ext.names[1],
                               pack_back(ext.names[1], work.wk, ext.transposed[1], ext.dtype[1]));
                edited.emplace(ext.names[2],
                               pack_back(ext.names[2], work.wv, ext.transposed[2], ext.dtype[2]));
                edited.emplace(ext.names[3],
                               pack_back(ext.names[3], work.wo, ext.transposed[3], ext.dtype[3]));
            }

            // untouched tensors copy through byte-identically
            ArchiveWriter writer;
            for (const auto& e : h.entries) {
                const auto it = edited.find(e.name);
                if (it == edited.end())
                    writer.add_raw(e.name, e.dtype, e.shape, read_raw(h, e.name));
                else
                    writer.add(it->second);
            }
            writer.write(*out_path);

            const std::string prov_path =
                provenance_path->empty() ? *out_path + ".provenance.json" : *provenance_path;
            std::ofstream pf(prov_path, std::ios::trunc);
            if (!pf) throw IoError("cannot create " + prov_path);
            pf << prov.dump(2) << "\n";
            std::printf("edited %zu layer(s) -> %s (provenance: %s)\n", layers->size(),
                        out_path->c_str(), prov_path.c_str());
        });
    }

    // --- verify-invariance ---
    {
        auto original = std::make_shared<std::string>();
        auto edited = std::make_shared<std::string>();
        auto layers = std::make_shared<std::vector<std::size_t>>();
        auto pattern = std::make_shared<std::string>(
            "model.layers.{layer}.self_attn.{proj}_proj.weight");
        auto head_dim = std::make_shared<std::size_t>(0);
        auto q_heads = std::make_shared<std::size_t>(0);
        auto kv_heads = std::make_shared<std::size_t>(0);
        auto trials = std::make_shared<std::size_t>(8);
        auto tol = std::make_shared<double>(1e-5);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto toy = std::make_shared<bool>(false);
        auto toy_configs = std::make_shared<std::size_t>(50);
        auto out = std::make_shared<OutputOptions>();

        auto* cmd = app.add_subcommand(
            "verify-invariance",
            "certify that an edited checkpoint computes the same attention function, or run "
            "the self-contained toy suite");
        cmd->add_option("--original", *original);
        cmd->add_option("--edited", *edited);
        cmd->add_option("--layer", *layers);
        cmd->add_option("--pattern", *pattern);
        cmd->add_option("--head-dim", *head_dim);
        cmd->add_option("--q-heads", *q_heads);
        cmd->add_option("--kv-heads", *kv_heads);
        cmd->add_option("--trials", *trials);
        cmd->add_option("--tol", *tol, "max allowed elementwise output deviation");
        cmd->add_option("--seed", *seed);
        cmd->add_flag("--toy", *toy, "random toy layouts instead of checkpoints");
        cmd->add_option("--toy-configs", *toy_configs, "number of random toy layouts");
        out->attach(cmd);

        cmd->callback([=] {
            Report report(*seed);
            bool ok = true;

            if (*toy) {
                report.echo_config({{"toy_configs", *toy_configs},
                                    {"trials", *trials},
                                    {"seed", *seed}});
                auto& block = report.add_block(
                    "invariance",
                    "outputs of the reference attention before/after rotation and "
                    "permutation edits");
                Rng rng(split_seed(*seed, "toy-invariance"));
                std::size_t failures = 0;
                double worst = 0.0;
                for (std::size_t c = 0; c < *toy_configs; ++c) {
                    const std::size_t dims[] = {4, 8};
                    const std::size_t kvs[] = {1, 2, 4};
                    const std::size_t reps[] = {1, 2, 4};
                    HeadLayout layout{dims[rng.below(2)], 0, kvs[rng.below(3)]};
                    layout.q_heads = layout.kv_heads * reps[rng.below(3)];
                    const auto d_model =
                        static_cast<Eigen::Index>(layout.q_width() + 4);

                    AttentionWeights w;
                    const auto fill = [&](Eigen::Index r, Eigen::Index cc) {
                        Eigen::MatrixXd m(r, cc);
                        for (Eigen::Index i = 0; i < r; ++i)
                            for (Eigen::Index j = 0; j < cc; ++j) m(i, j) = rng.gaussian();
                        return m;
                    };
                    w.wq = fill(d_model, static_cast<Eigen::Index>(layout.q_width()));
                    w.wk = fill(d_model, static_cast<Eigen::Index>(layout.kv_width()));
                    w.wv = fill(d_model, static_cast<Eigen::Index>(layout.kv_width()));
                    w.wo = fill(d_model, static_cast<Eigen::Index>(layout.q_width()));

                    const Eigen::MatrixXd r = haar_orthogonal(layout.head_dim, rng);
                    const AttentionWeights rotated = apply_vo_rotation(w, layout, r);
                    const InvarianceReport rep =
                        verify_invariance(w, rotated, layout, *trials, *tol, rng);
                    worst = std::max(worst, rep.max_output_deviation);
                    if (!rep.pass || rep.weight_rel_deviation <= 0.1) ++failures;
                }
                block["configs"] = *toy_configs;
                block["failures"] = failures;
                block["worst_deviation"] = worst;
                ok = failures == 0;
            } else {
                if (original->empty() || edited->empty() || layers->empty() || *head_dim == 0)
                    throw ConfigError(
                        "verify-invariance needs --original/--edited/--layer/--head-dim/"
                        "--q-heads/--kv-heads (or --toy)");
                const HeadLayout layout{*head_dim, *q_heads, *kv_heads};
                const auto h0 = open_checkpoint(*original);
                const auto h1 = open_checkpoint(*edited);
                report.echo_config({{"original", *original},
                                    {"edited", *edited},
                                    {"tol", *tol},
                                    {"trials", *trials}});
                auto& block = report.add_block(
                    "invariance",
                    "max elementwise output deviation of the reference attention across "
                    "random inputs");
                ordered_json rows = ordered_json::array();
                Rng rng(split_seed(*seed, "invariance"));
                for (const std::size_t layer : *layers) {
                    const auto a = extract_attention(h0, *pattern, layer, layout);
                    const auto b = extract_attention(h1, *pattern, layer, layout);
                    const InvarianceReport rep =
                        verify_invariance(a.weights, b.weights, layout, *trials, *tol, rng);
                    rows.push_back({{"layer", layer},
                                    {"max_output_deviation", rep.max_output_deviation},
                                    {"weight_rel_deviation", rep.weight_rel_deviation},
                                    {"trivial_edit", rep.trivial_edit},
                                    {"pass", rep.pass}});
                    if (!rep.pass) ok = false;
                }
                block["layers"] = std::move(rows);
            }

            out->emit(report);
            if (!ok) *exit_code = kExitFindings;
        });
    }
}

}  // namespace wlens::cli
