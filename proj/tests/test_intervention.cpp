#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "wlens/intervention.hpp"

using namespace wlens;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
    return m;
}

AttentionWeights random_attention(const HeadLayout& layout, Eigen::Index d_model, Rng& rng,
                                  bool with_bias = false) {
    AttentionWeights w;
    w.wq = random_matrix(d_model, static_cast<Eigen::Index>(layout.q_width()), rng);
    w.wk = random_matrix(d_model, static_cast<Eigen::Index>(layout.kv_width()), rng);
    w.wv = random_matrix(d_model, static_cast<Eigen::Index>(layout.kv_width()), rng);
    w.wo = random_matrix(d_model, static_cast<Eigen::Index>(layout.q_width()), rng);
    if (with_bias) {
        Eigen::RowVectorXd b(static_cast<Eigen::Index>(layout.kv_width()));
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.gaussian();
        w.bv = b;
    }
    return w;
}

double forward_deviation(const AttentionWeights& a, const AttentionWeights& b,
                         const HeadLayout& layout, Rng& rng, int trials = 3) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const Eigen::MatrixXd x = random_matrix(5, a.wq.rows(), rng);
        const Eigen::MatrixXd ya = toy_attention_forward<double>(a, layout, x);
        const Eigen::MatrixXd yb = toy_attention_forward<double>(b, layout, x);
        worst = std::max(worst, (ya - yb).cwiseAbs().maxCoeff());
    }
    return worst;
}

}  // namespace

TEST_CASE("layout validation") {
    HeadLayout bad{4, 3, 2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    HeadLayout ok{4, 4, 2};
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.n_rep() == 2);
}

TEST_CASE("haar orthogonal sampling") {
    Rng rng(131);
    // D = 1: the two reflections only
    for (int i = 0; i < 8; ++i) {
        const Eigen::MatrixXd r = haar_orthogonal(1, rng);
        CHECK(std::abs(std::abs(r(0, 0)) - 1.0) < 1e-12);
    }
    for (const std::size_t d : {2ul, 5ul, 16ul}) {
        const Eigen::MatrixXd r = haar_orthogonal(d, rng);
        const Eigen::MatrixXd gram = r.transpose() * r;
        CHECK((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(std::abs(std::abs(r.determinant()) - 1.0) < 1e-8);
    }
}

TEST_CASE("block rotations have the documented structure") {
    Rng rng(137);
    const HeadLayout layout{3, 4, 2};
    const Eigen::MatrixXd r = haar_orthogonal(3, rng);
    const BlockRotations rot = build_block_rotations(r, layout);
    CHECK(rot.r_kv.rows() == 6);
    CHECK(rot.r_q.rows() == 12);
    // each diagonal block equals R, off-blocks vanish
    for (int b = 0; b < 4; ++b)
        CHECK((rot.r_q.block(3 * b, 3 * b, 3, 3) - r).cwiseAbs().maxCoeff() == 0.0);
    CHECK(rot.r_q.block(0, 3, 3, 3).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rot.r_kv.transpose() * rot.r_kv - Eigen::MatrixXd::Identity(6, 6))
              .cwiseAbs()
              .maxCoeff() < 1e-10);

    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(3, 3);
    const BlockRotations id = build_block_rotations(identity, layout);
    CHECK(id.r_kv.isIdentity(0.0));
    CHECK(id.r_q.isIdentity(0.0));
}

TEST_CASE("identity rotation leaves weights untouched") {
    Rng rng(139);
    const HeadLayout layout{4, 2, 1};
    const AttentionWeights w = random_attention(layout, 8, rng);
    const AttentionWeights e = apply_vo_rotation(w, layout, Eigen::MatrixXd::Identity(4, 4));
    CHECK((e.wv - w.wv).cwiseAbs().maxCoeff() == 0.0);
    CHECK((e.wo - w.wo).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vo rotation preserves the forward map and only touches V/O") {
    Rng rng(149);
    const HeadLayout layout{4, 4, 2};
    const AttentionWeights w = random_attention(layout, 16, rng, /*with_bias=*/true);
    const Eigen::MatrixXd r = haar_orthogonal(4, rng);
    const AttentionWeights e = apply_vo_rotation(w, layout, r);

    CHECK((e.wq - w.wq).cwiseAbs().maxCoeff() == 0.0);
    CHECK((e.wk - w.wk).cwiseAbs().maxCoeff() == 0.0);
    CHECK((e.wv - w.wv).norm() > 0.1 * w.wv.norm());

    CHECK(forward_deviation(w, e, layout, rng) < 1e-10);

    // f32 path stays within the coarser tolerance
    const Eigen::MatrixXf xf = random_matrix(5, 16, rng).cast<float>();
    const Eigen::MatrixXf y0 = toy_attention_forward<float>(w, layout, xf);
    const Eigen::MatrixXf y1 = toy_attention_forward<float>(e, layout, xf);
    CHECK((y1 - y0).cwiseAbs().maxCoeff() < 1e-5f);

    // inverse rotation restores the weights
    const AttentionWeights back = apply_vo_rotation(e, layout, r.transpose().eval());
    CHECK((back.wv - w.wv).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.wo - w.wo).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("rotation width mismatch is rejected") {
    Rng rng(151);
    const HeadLayout layout{4, 2, 2};
    const AttentionWeights w = random_attention(layout, 8, rng);
    const HeadLayout other{8, 2, 2};
    CHECK_THROWS_AS(apply_vo_rotation(w, other, haar_orthogonal(8, rng)), ShapeError);
    CHECK_THROWS_AS(apply_vo_rotation(w, layout, haar_orthogonal(3, rng)), ShapeError);
}

TEST_CASE("identity head permutation changes nothing") {
    Rng rng(157);
    const HeadLayout layout{2, 4, 4};
    const AttentionWeights w = random_attention(layout, 8, rng);
    const AttentionWeights e = apply_head_permutation(w, layout, {0, 1, 2, 3});
    CHECK((e.wq - w.wq).cwiseAbs().maxCoeff() == 0.0);
    CHECK((e.wo - w.wo).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("head swap preserves outputs bit for bit in f64") {
    Rng rng(163);
    const HeadLayout layout{3, 4, 2};  // two KV heads, grouped by two
    const AttentionWeights w = random_attention(layout, 12, rng, /*with_bias=*/true);
    const AttentionWeights e = apply_head_permutation(w, layout, {1, 0});
    CHECK((e.wk - w.wk).norm() > 0.0);

    for (int t = 0; t < 4; ++t) {
        const Eigen::MatrixXd x = random_matrix(6, 12, rng);
        const Eigen::MatrixXd y0 = toy_attention_forward<double>(w, layout, x);
        const Eigen::MatrixXd y1 = toy_attention_forward<double>(e, layout, x);
        CHECK((y0 - y1).cwiseAbs().maxCoeff() == 0.0);
    }

    // applying the inverse permutation restores the weights exactly
    const AttentionWeights back = apply_head_permutation(e, layout, {1, 0});
    CHECK((back.wq - w.wq).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.wk - w.wk).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.wv - w.wv).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.wo - w.wo).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("invalid permutations are rejected") {
    Rng rng(167);
    const HeadLayout layout{2, 2, 2};
    const AttentionWeights w = random_attention(layout, 4, rng);
    CHECK_THROWS_AS(apply_head_permutation(w, layout, {0}), ConfigError);
    CHECK_THROWS_AS(apply_head_permutation(w, layout, {0, 0}), ConfigError);
    CHECK_THROWS_AS(apply_head_permutation(w, layout, {0, 5}), ConfigError);
}

TEST_CASE("single-token attention reduces to a plain projection chain") {
    Rng rng(173);
    const HeadLayout layout{4, 1, 1};
    const AttentionWeights w = random_attention(layout, 4, rng);
    const Eigen::MatrixXd x = random_matrix(1, 4, rng);
    const Eigen::MatrixXd y = toy_attention_forward<double>(w, layout, x);
    // softmax over one position is 1, so out = (x Wv) Wo^T
    const Eigen::MatrixXd expect = (x * w.wv) * w.wo.transpose();
    CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("composition of rotation and permutation stays invariant") {
    Rng rng(179);
    const HeadLayout layout{4, 6, 3};
    const AttentionWeights w = random_attention(layout, 24, rng);
    const Eigen::MatrixXd r = haar_orthogonal(4, rng);
    const AttentionWeights rotated = apply_vo_rotation(w, layout, r);
    const AttentionWeights both = apply_head_permutation(rotated, layout, {2, 0, 1});
    CHECK(forward_deviation(w, both, layout, rng) < 1e-10);
    CHECK((both.wv - w.wv).norm() > 0.1 * w.wv.norm());
}

TEST_CASE("wrong O-side rotation is caught by the oracle") {
    Rng rng(181);
    const HeadLayout layout{4, 4, 2};
    const AttentionWeights w = random_attention(layout, 16, rng);
    const Eigen::MatrixXd r = haar_orthogonal(4, rng);
    const Eigen::MatrixXd r_wrong = haar_orthogonal(4, rng);

    AttentionWeights e = w;
    e.wv = w.wv * block_diagonal(r, layout.kv_heads);
    e.wo = w.wo * block_diagonal(r_wrong, layout.q_heads);  // mismatched pairing
    CHECK(forward_deviation(w, e, layout, rng) > 1e-3);
}

TEST_CASE("verify_invariance reports deviations and flags trivial edits") {
    Rng rng(191);
    const HeadLayout layout{4, 4, 2};
    const AttentionWeights w = random_attention(layout, 16, rng);

    const InvarianceReport trivial = verify_invariance(w, w, layout, 4, 1e-10, rng);
    CHECK(trivial.trivial_edit);
    CHECK(trivial.max_output_deviation == 0.0);
    CHECK(trivial.pass);

    const Eigen::MatrixXd r = haar_orthogonal(4, rng);
    const AttentionWeights e = apply_vo_rotation(w, layout, r);
    const InvarianceReport rep = verify_invariance(w, e, layout, 8, 1e-10, rng);
    CHECK(rep.pass);
    CHECK_FALSE(rep.trivial_edit);
    CHECK(rep.weight_rel_deviation > 0.1);

    // negative control: wrong grouping of the O-side blocks
    AttentionWeights bad = w;
    bad.wv = w.wv * block_diagonal(r, layout.kv_heads);
    bad.wo = w.wo * block_diagonal(haar_orthogonal(4, rng), layout.q_heads);
    const InvarianceReport neg = verify_invariance(w, bad, layout, 8, 1e-10, rng);
    CHECK_FALSE(neg.pass);
    CHECK(neg.max_output_deviation > 1e-3);

    CHECK_THROWS_AS(verify_invariance(w, e, layout, 0, 1e-10, rng), ConfigError);
}
