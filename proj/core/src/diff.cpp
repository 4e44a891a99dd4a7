#include "wlens/diff.hpp"

#include <algorithm>

#include "wlens/parallel.hpp"

namespace wlens {

namespace {

void check_pair(const WeightMatrix& w0, const WeightMatrix& w1, const DiffConfig& cfg) {
    if (w0.rows != w1.rows || w0.cols != w1.cols)
        throw ShapeError("update_mask: shape mismatch for layer '" + w0.name + "'");
    if (w0.dtype != w1.dtype)
        throw DtypeError("update_mask: dtype mismatch for layer '" + w0.name + "'");
    if (cfg.mode == DiffMode::bf16_probe) {
        if (w0.dtype != Dtype::bf16)
            throw DtypeError("the bf16 probe requires bf16 storage; use f32 mode for '" +
                             w0.name + "'");
        if (w0.widened_from_f16 || w1.widened_from_f16)
            throw DtypeError("the bf16 probe refuses f16-widened tensors ('" + w0.name + "')");
    }
    if (cfg.mode == DiffMode::f32_exact && w0.dtype != Dtype::f32)
        throw DtypeError("f32 mode requires f32 storage for '" + w0.name + "'");
}

std::vector<std::string> matched_layers(const CheckpointHandle& h0, const CheckpointHandle& h1,
                                        const LayerFilter& f) {
    const auto l0 = list_layers(h0, f);
    const auto l1 = list_layers(h1, f);
    auto s0 = l0, s1 = l1;
    std::sort(s0.begin(), s0.end());
    std::sort(s1.begin(), s1.end());
    if (s0 != s1)
        throw SchemaError("checkpoints expose different layer sets under this filter");
    return l0;  // archive order of the base checkpoint
}

}  // namespace

Mask update_mask(const WeightMatrix& w0, const WeightMatrix& w1, const DiffConfig& cfg) {
    cfg.probe.validate();
    check_pair(w0, w1, cfg);
    Mask m(w0.name, w0.rows, w0.cols);
    const std::size_t n = w0.size();
    switch (cfg.mode) {
        case DiffMode::bf16_probe:
            for (std::size_t i = 0; i < n; ++i) {
                const Bf16 a = Bf16::from_bits(w0.codes[i]);
                const Bf16 b = Bf16::from_bits(w1.codes[i]);
                if (!bf16_unchanged(a, b, cfg.probe)) m.set_linear(i, true);
            }
            break;
        case DiffMode::f32_exact:
            for (std::size_t i = 0; i < n; ++i) {
                const float a = w0.values[i];
                const float b = w1.values[i];
                // NaNs count as changed; +0 == -0 counts as unchanged.
                if (!(a == b)) m.set_linear(i, true);
            }
            break;
        case DiffMode::absolute:
            for (std::size_t i = 0; i < n; ++i) {
                const double a = w0.value_at_f64(i / w0.cols, i % w0.cols);
                const double b = w1.value_at_f64(i / w1.cols, i % w1.cols);
                if (!absolute_rule_unchanged(a, b, cfg.absolute_tol)) m.set_linear(i, true);
            }
            break;
    }
    return m;
}

SparsityReport sparsity_bf16(const CheckpointHandle& h0, const CheckpointHandle& h1,
                             const LayerFilter& f, const DiffConfig& cfg, unsigned workers) {
    cfg.probe.validate();
    const auto layers = matched_layers(h0, h1, f);

    std::vector<LayerSparsity> rows(layers.size());
    parallel_for(layers.size(), workers, [&](std::size_t i) {
        const bool rank1_ok = f.min_rank <= 1;
        const auto w0 = load_matrix(h0, layers[i], rank1_ok);
        const auto w1 = load_matrix(h1, layers[i], rank1_ok);
        const Mask m = update_mask(w0, w1, cfg);
        rows[i] = LayerSparsity{layers[i], m.count(), m.size(),
                                m.size() == 0 ? 1.0
                                              : 1.0 - static_cast<double>(m.count()) / m.size()};
    });

    SparsityReport rep;
    rep.layers = std::move(rows);
    for (const auto& r : rep.layers) {
        rep.changed_total += r.changed;
        rep.param_total += r.total;
    }
    rep.global_sparsity =
        rep.param_total == 0
            ? 1.0
            : 1.0 - static_cast<double>(rep.changed_total) / static_cast<double>(rep.param_total);
    rep.eta = cfg.probe.eta;
    rep.mode = cfg.mode == DiffMode::bf16_probe ? "bf16_probe"
               : cfg.mode == DiffMode::f32_exact ? "f32_exact"
                                                 : "absolute";
    rep.filter = f;
    return rep;
}

std::vector<Mask> update_masks(const CheckpointHandle& h0, const CheckpointHandle& h1,
                               const LayerFilter& f, const DiffConfig& cfg, unsigned workers) {
    cfg.probe.validate();
    const auto layers = matched_layers(h0, h1, f);
    std::vector<Mask> masks(layers.size());
    parallel_for(layers.size(), workers, [&](std::size_t i) {
        const bool rank1_ok = f.min_rank <= 1;
        const auto w0 = load_matrix(h0, layers[i], rank1_ok);
        const auto w1 = load_matrix(h1, layers[i], rank1_ok);
        masks[i] = update_mask(w0, w1, cfg);
    });
    return masks;
}

}  // namespace wlens
