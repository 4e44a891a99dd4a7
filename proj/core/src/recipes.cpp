#include "wlens/recipes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "wlens/rng.hpp"

namespace wlens {

namespace fs = std::filesystem;

const char* mask_kind_name(MaskKind k) {
    switch (k) {
        case MaskKind::principal: return "principal";
        case MaskKind::principal_complement: return "principal_complement";
        case MaskKind::low_magnitude: return "low_magnitude";
        case MaskKind::safe: return "safe";
        case MaskKind::random_matched: return "random_matched";
    }
    return "?";
}

MaskKind mask_kind_from_name(const std::string& name) {
    if (name == "principal") return MaskKind::principal;
    if (name == "principal_complement") return MaskKind::principal_complement;
    if (name == "low_magnitude") return MaskKind::low_magnitude;
    if (name == "safe") return MaskKind::safe;
    if (name == "random_matched") return MaskKind::random_matched;
    throw ConfigError("unknown mask kind: " + name);
}

void MaskRecipe::validate() const {
    if (!(alpha > 0.0) || alpha > 1.0)
        throw ConfigError("mask recipe: alpha must lie in (0,1]");
    if (kind == MaskKind::safe && (!(alpha_low > 0.0) || alpha_low > 1.0))
        throw ConfigError("mask recipe: alpha_low must lie in (0,1]");
    if ((kind == MaskKind::principal || kind == MaskKind::principal_complement ||
         kind == MaskKind::safe) &&
        k < 1)
        throw ConfigError("mask recipe: k must be >= 1 for principal kinds");
}

Eigen::MatrixXd rank_k_reconstruct(const Eigen::MatrixXd& w, std::size_t k,
                                   const SpectralOptions& opts) {
    const SpectralSummary s = svd_topk(w, "", k, opts);
    return s.U_k * s.sigma.head(static_cast<Eigen::Index>(k)).asDiagonal() * s.V_k.transpose();
}

WeightMatrix rank_k_reconstruct(const WeightMatrix& w, std::size_t k,
                                const SpectralOptions& opts) {
    return from_f64(w.name, rank_k_reconstruct(to_f64(w), k, opts), Dtype::f32);
}

namespace {

// Deterministic top-count selection over |scores|: order by (score desc,
// linear index asc) for "largest", (score asc, index asc) for "smallest".
Mask select_extreme(const Eigen::MatrixXd& scores, const std::string& name, double alpha,
                    bool largest) {
    const auto rows = static_cast<std::size_t>(scores.rows());
    const auto cols = static_cast<std::size_t>(scores.cols());
    const std::size_t total = rows * cols;
    const auto want = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(total),
                         std::ceil(alpha * static_cast<double>(total))));

    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    const auto score_at = [&](std::size_t i) {
        return std::abs(scores(static_cast<Eigen::Index>(i / cols),
                               static_cast<Eigen::Index>(i % cols)));
    };
    const auto cmp = [&](std::size_t a, std::size_t b) {
        const double sa = score_at(a), sb = score_at(b);
        if (sa != sb) return largest ? sa > sb : sa < sb;
        return a < b;
    };
    if (want < total)
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want) - 1,
                         idx.end(), cmp);

    Mask m(name, rows, cols);
    for (std::size_t i = 0; i < want; ++i) m.set_linear(idx[i], true);
    return m;
}

}  // namespace

Mask top_magnitude_mask(const Eigen::MatrixXd& scores, const std::string& name, double alpha) {
    if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("top_magnitude_mask: alpha in (0,1]");
    return select_extreme(scores, name, alpha, /*largest=*/true);
}

Mask principal_mask(const Eigen::MatrixXd& w, const std::string& name, std::size_t k,
                    double alpha, const SpectralOptions& opts) {
    return top_magnitude_mask(rank_k_reconstruct(w, k, opts), name, alpha);
}

Mask principal_mask(const WeightMatrix& w, std::size_t k, double alpha,
                    const SpectralOptions& opts) {
    return principal_mask(to_f64(w), w.name, k, alpha, opts);
}

Mask low_magnitude_mask(const Eigen::MatrixXd& w, const std::string& name, double alpha) {
    if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("low_magnitude_mask: alpha in (0,1]");
    return select_extreme(w, name, alpha, /*largest=*/false);
}

Mask low_magnitude_mask(const WeightMatrix& w, double alpha) {
    return low_magnitude_mask(to_f64(w), w.name, alpha);
}

Mask build_recipe_mask(const WeightMatrix& w, const MaskRecipe& recipe, const Mask* reference,
                       const SpectralOptions& opts) {
    recipe.validate();
    switch (recipe.kind) {
        case MaskKind::principal:
            return principal_mask(w, recipe.k, recipe.alpha, opts);
        case MaskKind::principal_complement:
            return Mask::complement(principal_mask(w, recipe.k, recipe.alpha, opts));
        case MaskKind::low_magnitude:
            return low_magnitude_mask(w, recipe.alpha);
        case MaskKind::safe: {
            const Mask low = low_magnitude_mask(w, recipe.alpha_low);
            const Mask princ_c = Mask::complement(principal_mask(w, recipe.k, recipe.alpha, opts));
            return Mask::union_of(low, princ_c);
        }
        case MaskKind::random_matched: {
            if (!reference)
                throw ConfigError("random_matched mask needs a reference mask");
            if (reference->rows() != w.rows || reference->cols() != w.cols)
                throw ShapeError("random_matched: reference dimensions mismatch");
            // Partial Fisher-Yates: exactly |reference| coordinates, uniform.
            Rng rng(split_seed(recipe.seed, w.name));
            const std::size_t total = w.size();
            const std::size_t want = reference->count();
            std::vector<std::size_t> idx(total);
            std::iota(idx.begin(), idx.end(), 0);
            Mask m(w.name, w.rows, w.cols);
            for (std::size_t i = 0; i < want; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
                std::swap(idx[i], idx[j]);
                m.set_linear(idx[i], true);
            }
            return m;
        }
    }
    throw ConfigError("build_recipe_mask: unknown kind");
}

namespace {

std::string sanitize(const std::string& layer) {
    std::string out = layer;
    for (auto& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

}  // namespace

MaskArchiveManifest export_mask_archive(const std::string& dir, const std::vector<Mask>& masks,
                                        const std::string& recipe_description,
                                        std::uint64_t seed) {
    fs::create_directories(dir);
    MaskArchiveManifest manifest;
    manifest.recipe = recipe_description;
    manifest.seed = seed;

    nlohmann::ordered_json j;
    j["format"] = "wlens-mask-archive";
    j["version"] = 1;
    j["recipe"] = recipe_description;
    j["seed"] = seed;
    j["layers"] = nlohmann::ordered_json::array();

    for (const auto& m : masks) {
        const std::string file = sanitize(m.layer_name()) + ".mask";
        save_mask(m, (fs::path(dir) / file).string());
        MaskArchiveEntry e{m.layer_name(), file, m.rows(), m.cols(), m.count(), m.density()};
        manifest.entries.push_back(e);
        nlohmann::ordered_json je;
        je["layer"] = e.layer;
        je["file"] = e.file;
        je["rows"] = e.rows;
        je["cols"] = e.cols;
        je["selected"] = e.selected;
        je["density"] = e.density;
        j["layers"].push_back(std::move(je));
    }

    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot create manifest in " + dir);
    out << j.dump(2) << '\n';
    return manifest;
}

std::vector<Mask> load_mask_archive(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("no manifest.json in " + dir);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(dir + "/manifest.json: " + e.what());
    }
    std::vector<Mask> masks;
    for (const auto& e : j.at("layers")) {
        const auto file = e.at("file").get<std::string>();
        Mask m = load_mask((fs::path(dir) / file).string());
        if (m.count() != e.at("selected").get<std::size_t>())
            throw IntegrityError(dir + ": manifest count disagrees with " + file);
        masks.push_back(std::move(m));
    }
    return masks;
}

}  // namespace wlens
