#pragma once

#include <string>
#include <vector>

#include "wlens/bf16.hpp"
#include "wlens/mask.hpp"
#include "wlens/tensor.hpp"
#include "wlens/tensor_io.hpp"

namespace wlens {

enum class DiffMode {
    bf16_probe,   // scale-aware unchanged test on stored bf16 codes
    f32_exact,    // plain value inequality for f32 checkpoints
    absolute,     // fixed absolute tolerance, kept for comparison runs
};

struct DiffConfig {
    ProbeConfig probe;
    DiffMode mode = DiffMode::bf16_probe;
    double absolute_tol = 1e-5;  // only used by DiffMode::absolute
};

// Per-coordinate changed mask between two same-shape layers. Bit set means
// the stored value changed.
Mask update_mask(const WeightMatrix& w0, const WeightMatrix& w1, const DiffConfig& cfg = {});

struct LayerSparsity {
    std::string name;
    std::size_t changed = 0;
    std::size_t total = 0;
    double sparsity = 1.0;  // 1 - changed/total
};

struct SparsityReport {
    std::vector<LayerSparsity> layers;
    std::size_t changed_total = 0;
    std::size_t param_total = 0;
    double global_sparsity = 1.0;
    double eta = 0.0;
    std::string mode;
    LayerFilter filter;
};

// Streams layer pairs through the probe with bounded per-layer parallelism;
// layers are reduced in archive order so reruns reproduce byte-identical
// reports. Layer sets under the filter must agree between the checkpoints.
SparsityReport sparsity_bf16(const CheckpointHandle& h0, const CheckpointHandle& h1,
                             const LayerFilter& f, const DiffConfig& cfg = {},
                             unsigned workers = 0);

// Same traversal, but keeps the per-layer masks (memory permitting).
std::vector<Mask> update_masks(const CheckpointHandle& h0, const CheckpointHandle& h1,
                               const LayerFilter& f, const DiffConfig& cfg = {},
                               unsigned workers = 0);

}  // namespace wlens
