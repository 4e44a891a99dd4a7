#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wlens/mask.hpp"
#include "wlens/spectral.hpp"
#include "wlens/tensor.hpp"

namespace wlens {

enum class MaskKind {
    principal,             // largest |entries| of the rank-k reconstruction
    principal_complement,  // everything the principal mask leaves out
    low_magnitude,         // smallest |entries| of the raw weights
    safe,                  // low_magnitude(alpha_low) ∪ complement(principal(k, alpha))
    random_matched,        // uniform random, cardinality copied from a reference
};

const char* mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& name);

struct MaskRecipe {
    MaskKind kind = MaskKind::principal;
    std::size_t k = 64;        // reconstruction rank for principal kinds
    double alpha = 0.5;        // selected fraction
    double alpha_low = 0.5;    // low-magnitude fraction of the safe mask
    std::uint64_t seed = 0;    // random_matched only

    void validate() const;
};

// Best Frobenius rank-k approximant U_k S_k V_k^T.
Eigen::MatrixXd rank_k_reconstruct(const Eigen::MatrixXd& w, std::size_t k,
                                   const SpectralOptions& opts = {});
WeightMatrix rank_k_reconstruct(const WeightMatrix& w, std::size_t k,
                                const SpectralOptions& opts = {});

// Top ceil(alpha*m*n) entries of |scores|; ties at the selection boundary
// break toward smaller (row, col) so masks are bit-reproducible across
// platforms.
Mask top_magnitude_mask(const Eigen::MatrixXd& scores, const std::string& name, double alpha);

// top_magnitude_mask over the rank-k reconstruction of w.
Mask principal_mask(const WeightMatrix& w, std::size_t k, double alpha,
                    const SpectralOptions& opts = {});
Mask principal_mask(const Eigen::MatrixXd& w, const std::string& name, std::size_t k,
                    double alpha, const SpectralOptions& opts = {});

// Bottom ceil(alpha*m*n) entries of |w|, same tie rule.
Mask low_magnitude_mask(const WeightMatrix& w, double alpha);
Mask low_magnitude_mask(const Eigen::MatrixXd& w, const std::string& name, double alpha);

// Dispatch on recipe.kind; random_matched requires the reference mask whose
// per-layer cardinality it copies exactly.
Mask build_recipe_mask(const WeightMatrix& w, const MaskRecipe& recipe,
                       const Mask* reference = nullptr, const SpectralOptions& opts = {});

// --- mask archive: manifest.json + one .mask file per layer ---

struct MaskArchiveEntry {
    std::string layer;
    std::string file;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t selected = 0;
    double density = 0.0;
};

struct MaskArchiveManifest {
    std::string recipe;
    std::uint64_t seed = 0;
    std::vector<MaskArchiveEntry> entries;
};

// Writes <dir>/manifest.json and <dir>/<sanitized layer>.mask so a trainer
// can apply the masks without linking this library.
MaskArchiveManifest export_mask_archive(const std::string& dir,
                                        const std::vector<Mask>& masks,
                                        const std::string& recipe_description,
                                        std::uint64_t seed);

std::vector<Mask> load_mask_archive(const std::string& dir);

}  // namespace wlens
