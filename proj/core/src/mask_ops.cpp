#include "wlens/mask_ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <json.hpp>

namespace wlens {

namespace {

// Shortest-round-trip formatting shared with the JSON reports so the two
// encodings of one block print identically.
std::string num(double v) { return nlohmann::json(v).dump(); }

}  // namespace

double jaccard(const Mask& a, const Mask& b) {
    if (!a.same_dims(b)) throw ShapeError("jaccard: dimension mismatch");
    std::size_t inter = 0, uni = 0;
    const auto& wa = a.words();
    const auto& wb = b.words();
    for (std::size_t i = 0; i < wa.size(); ++i) {
        inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
        uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
    }
    if (uni == 0) return 1.0;  // both empty: identical masks
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double bernoulli_baseline(double p, double q) {
    if (p < 0.0 || p > 1.0 || q < 0.0 || q > 1.0)
        throw DomainError("bernoulli_baseline: densities must lie in [0,1]");
    if (p == 0.0 && q == 0.0)
        throw DomainError("bernoulli_baseline: undefined for two empty masks");
    return p * q / (p + q - p * q);
}

JaccardSummary jaccard_matrix(const std::vector<Mask>& masks) {
    const std::size_t n = masks.size();
    if (n < 2) throw ArityError("jaccard_matrix: need at least two masks");
    JaccardSummary s;
    s.matrix.assign(n, std::vector<double>(n, 1.0));
    s.baseline.assign(n, std::vector<double>(n, 1.0));
    s.densities.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.densities[i] = masks[i].density();
    double sum = 0.0, bsum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double jij = jaccard(masks[i], masks[j]);
            const double bij = bernoulli_baseline(s.densities[i], s.densities[j]);
            s.matrix[i][j] = s.matrix[j][i] = jij;
            s.baseline[i][j] = s.baseline[j][i] = bij;
            sum += jij;
            bsum += bij;
            ++pairs;
        }
    }
    s.mean_off_diagonal = sum / static_cast<double>(pairs);
    s.mean_baseline_off_diagonal = bsum / static_cast<double>(pairs);
    return s;
}

double ConsensusMap::mean() const {
    if (counts.empty()) return 0.0;
    double acc = 0.0;
    for (const auto c : counts) acc += c;
    return acc / (static_cast<double>(counts.size()) * run_count);
}

ConsensusMap consensus(const std::vector<Mask>& masks) {
    if (masks.size() < 2) throw ArityError("consensus: need at least two runs");
    const Mask& first = masks.front();
    for (const auto& m : masks) {
        if (!m.same_dims(first)) throw ShapeError("consensus: dimension mismatch across runs");
        if (m.layer_name() != first.layer_name())
            throw ShapeError("consensus: masks come from different layers");
    }
    ConsensusMap map;
    map.layer_name = first.layer_name();
    map.rows = first.rows();
    map.cols = first.cols();
    map.run_count = static_cast<std::uint32_t>(masks.size());
    map.counts.assign(first.size(), 0);
    for (const auto& m : masks)
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.test_linear(i)) ++map.counts[i];
    return map;
}

namespace {

std::vector<double> smooth(const std::vector<double>& raw, std::size_t window) {
    const std::size_t h = window / 2;
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::size_t lo = i >= h ? i - h : 0;
        const std::size_t hi = std::min(raw.size(), i + h + 1);
        double acc = 0.0;
        for (std::size_t j = lo; j < hi; ++j) acc += raw[j];
        out[i] = acc / static_cast<double>(hi - lo);
    }
    return out;
}

}  // namespace

RatioProfiles ratio_profiles(const Mask& mask, std::size_t window) {
    if (window == 0 || window % 2 == 0)
        throw ConfigError("ratio_profiles: smoothing window must be odd");
    RatioProfiles p;
    p.window = window;
    p.row_ratio.assign(mask.rows(), 0.0);
    p.col_ratio.assign(mask.cols(), 0.0);
    for (std::size_t r = 0; r < mask.rows(); ++r)
        for (std::size_t c = 0; c < mask.cols(); ++c)
            if (mask.test(r, c)) {
                p.row_ratio[r] += 1.0;
                p.col_ratio[c] += 1.0;
            }
    for (auto& v : p.row_ratio) v /= static_cast<double>(mask.cols());
    for (auto& v : p.col_ratio) v /= static_cast<double>(mask.rows());
    p.row_smoothed = smooth(p.row_ratio, window);
    p.col_smoothed = smooth(p.col_ratio, window);
    return p;
}

OverlapResult overlap_ratio(const Mask& selection, const Mask& updates) {
    if (!selection.same_dims(updates)) throw ShapeError("overlap_ratio: dimension mismatch");
    if (updates.count() == 0) throw DomainError("overlap_ratio: update mask is empty");
    const Mask inter = Mask::intersect(selection, updates);
    return OverlapResult{static_cast<double>(inter.count()) / updates.count(),
                         selection.density()};
}

Mask combine_masks(SetOp op, const Mask& a, const Mask* b) {
    switch (op) {
        case SetOp::complement:
            return Mask::complement(a);
        case SetOp::union_:
            if (!b) throw ConfigError("combine_masks: union needs two masks");
            return Mask::union_of(a, *b);
        case SetOp::intersect:
            if (!b) throw ConfigError("combine_masks: intersect needs two masks");
            return Mask::intersect(a, *b);
        case SetOp::difference:
            if (!b) throw ConfigError("combine_masks: difference needs two masks");
            return Mask::difference(a, *b);
    }
    throw ConfigError("combine_masks: unknown operation");
}

void consensus_to_csv(const ConsensusMap& map, std::ostream& out) {
    out << "row,col,consensus\n";
    for (std::size_t r = 0; r < map.rows; ++r)
        for (std::size_t c = 0; c < map.cols; ++c)
            out << r << ',' << c << ',' << num(map.value(r, c)) << '\n';
}

void consensus_grid_csv(const ConsensusMap& map, std::size_t max_rows, std::size_t max_cols,
                        std::ostream& out) {
    if (max_rows == 0 || max_cols == 0) throw ConfigError("consensus_grid_csv: empty grid");
    const std::size_t br = std::max<std::size_t>(1, (map.rows + max_rows - 1) / max_rows);
    const std::size_t bc = std::max<std::size_t>(1, (map.cols + max_cols - 1) / max_cols);
    const std::size_t gr = (map.rows + br - 1) / br;
    const std::size_t gc = (map.cols + bc - 1) / bc;
    for (std::size_t i = 0; i < gr; ++i) {
        for (std::size_t j = 0; j < gc; ++j) {
            double acc = 0.0;
            std::size_t cnt = 0;
            for (std::size_t r = i * br; r < std::min(map.rows, (i + 1) * br); ++r)
                for (std::size_t c = j * bc; c < std::min(map.cols, (j + 1) * bc); ++c) {
                    acc += map.value(r, c);
                    ++cnt;
                }
            if (j) out << ',';
            out << num(cnt ? acc / static_cast<double>(cnt) : 0.0);
        }
        out << '\n';
    }
}

void profiles_to_csv(const RatioProfiles& p, std::ostream& out) {
    out << "axis,index,raw,smoothed\n";
    for (std::size_t i = 0; i < p.row_ratio.size(); ++i)
        out << "row," << i << ',' << num(p.row_ratio[i]) << ',' << num(p.row_smoothed[i]) << '\n';
    for (std::size_t j = 0; j < p.col_ratio.size(); ++j)
        out << "col," << j << ',' << num(p.col_ratio[j]) << ',' << num(p.col_smoothed[j]) << '\n';
}

}  // namespace wlens
