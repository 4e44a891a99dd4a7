#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "wlens/mask.hpp"

namespace wlens {

// |A ∩ B| / |A ∪ B|. Two empty masks count as identical (1.0).
double jaccard(const Mask& a, const Mask& b);

// Expected Jaccard of two independent Bernoulli masks with densities p, q:
// pq / (p + q - pq).
double bernoulli_baseline(double p, double q);

struct JaccardSummary {
    std::vector<std::vector<double>> matrix;       // symmetric, unit diagonal
    std::vector<std::vector<double>> baseline;     // analytic, from measured densities
    std::vector<double> densities;
    double mean_off_diagonal = 0.0;
    double mean_baseline_off_diagonal = 0.0;
};

JaccardSummary jaccard_matrix(const std::vector<Mask>& masks);

// Per-coordinate fraction of runs marking the coordinate changed.
struct ConsensusMap {
    std::string layer_name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint32_t run_count = 0;
    std::vector<std::uint32_t> counts;  // row-major; value = count / run_count

    double value(std::size_t r, std::size_t c) const {
        return static_cast<double>(counts[r * cols + c]) / run_count;
    }
    double mean() const;
};

ConsensusMap consensus(const std::vector<Mask>& masks);

// Row and column change ratios with a centered moving average (edges
// truncated to the in-range part of the window).
struct RatioProfiles {
    std::vector<double> row_ratio;       // length m
    std::vector<double> col_ratio;       // length n
    std::vector<double> row_smoothed;
    std::vector<double> col_smoothed;
    std::size_t window = 3;
};

RatioProfiles ratio_profiles(const Mask& mask, std::size_t window = 3);

struct OverlapResult {
    double ratio = 0.0;            // |selection ∩ updates| / |updates|
    double random_baseline = 0.0;  // selection density
};

OverlapResult overlap_ratio(const Mask& selection, const Mask& updates);

enum class SetOp { union_, intersect, complement, difference };

// Exact set semantics; complement is unary (pass b = nullptr).
Mask combine_masks(SetOp op, const Mask& a, const Mask* b = nullptr);

// --- CSV export ---

// One row per coordinate: row,col,value.
void consensus_to_csv(const ConsensusMap& map, std::ostream& out);

// Block-mean downsample to at most max_rows x max_cols cells, emitted as a
// dense grid CSV ready for heatmap rendering.
void consensus_grid_csv(const ConsensusMap& map, std::size_t max_rows, std::size_t max_cols,
                        std::ostream& out);

// axis,index,raw,smoothed rows for both profiles.
void profiles_to_csv(const RatioProfiles& p, std::ostream& out);

}  // namespace wlens
