#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wlens/errors.hpp"
#include "wlens/rng.hpp"

namespace wlens {

// Attention geometry: head dimension D, query heads H_q, key/value heads
// H_kv, with H_q divisible by H_kv (each KV head serves n_rep query heads).
struct HeadLayout {
    std::size_t head_dim = 0;
    std::size_t q_heads = 0;
    std::size_t kv_heads = 0;

    std::size_t n_rep() const { return q_heads / kv_heads; }
    std::size_t q_width() const { return q_heads * head_dim; }
    std::size_t kv_width() const { return kv_heads * head_dim; }

    void validate() const {
        if (head_dim == 0 || q_heads == 0 || kv_heads == 0)
            throw ConfigError("HeadLayout: all dimensions must be positive");
        if (q_heads % kv_heads != 0)
            throw ConfigError("HeadLayout: q_heads must be divisible by kv_heads");
    }
};

// Projection weights in the canonical orientation: d_model rows, head axis
// along the columns (q and o are d_model x (H_q*D); k and v are
// d_model x (H_kv*D)). The loader transposes real checkpoints into this
// orientation and back.
struct AttentionWeights {
    Eigen::MatrixXd wq, wk, wv, wo;
    std::optional<Eigen::RowVectorXd> bv;

    void validate(const HeadLayout& layout) const;
};

// Haar-distributed orthogonal matrix via QR of a Gaussian block with the
// sign-of-R-diagonal correction.
Eigen::MatrixXd haar_orthogonal(std::size_t dim, Rng& rng);

// diag(R, ..., R), count copies.
Eigen::MatrixXd block_diagonal(const Eigen::MatrixXd& r, std::size_t count);

struct BlockRotations {
    Eigen::MatrixXd r_kv;  // (H_kv*D)^2
    Eigen::MatrixXd r_q;   // (H_q*D)^2
};

BlockRotations build_block_rotations(const Eigen::MatrixXd& r, const HeadLayout& layout);

// Right-multiplies the V and O projections (and the V bias) by the block
// rotations; Q and K stay untouched so rotary embeddings keep working.
AttentionWeights apply_vo_rotation(const AttentionWeights& w, const HeadLayout& layout,
                                   const Eigen::MatrixXd& r);

// Relabels which KV head carries which subspace: KV head j takes the
// content of head perm[j]; query and output head blocks follow through the
// grouped expansion of perm.
AttentionWeights apply_head_permutation(const AttentionWeights& w, const HeadLayout& layout,
                                        const std::vector<std::size_t>& perm);

// Reference forward pass: causal scaled-dot-product attention with grouped
// KV sharing, out = Ctx * Wo^T. Template on the scalar so invariance can be
// certified in both f64 and f32.
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> toy_attention_forward(
    const AttentionWeights& w, const HeadLayout& layout,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x);

struct InvarianceReport {
    double max_output_deviation = 0.0;
    double weight_rel_deviation = 0.0;  // ||edited - original||_F / ||original||_F over V
    bool trivial_edit = false;          // weights unchanged, so invariance is vacuous
    bool pass = false;
    std::size_t trials = 0;
    double tolerance = 0.0;
};

// Runs the reference forward on random inputs for both weight sets and
// reports the worst elementwise output deviation next to the weight-space
// deviation (to confirm the edit actually moved the weights).
InvarianceReport verify_invariance(const AttentionWeights& original,
                                   const AttentionWeights& edited, const HeadLayout& layout,
                                   std::size_t trials, double tol, Rng& rng,
                                   bool use_f32 = false);

}  // namespace wlens
