#include <doctest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "wlens/mask_ops.hpp"
#include "wlens/recipes.hpp"

using namespace wlens;
using namespace wlens::testing;

namespace {

Eigen::MatrixXd random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.gaussian();
    return m;
}

}  // namespace

TEST_CASE("rank-1 reconstruction of a diagonal matrix keeps only the top value") {
    Eigen::MatrixXd w(2, 2);
    w << 3, 0, 0, 1;
    const Eigen::MatrixXd r = rank_k_reconstruct(w, 1);
    CHECK(r(0, 0) == doctest::Approx(3.0));
    CHECK(r(0, 1) == doctest::Approx(0.0));
    CHECK(r(1, 0) == doctest::Approx(0.0));
    CHECK(r(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("reconstruction residual equals the spectral tail") {
    Rng rng(83);
    const Eigen::MatrixXd w = random_matrix(32, 32, rng);
    const SpectralSummary s = svd_topk(w, "w", 31);
    for (const std::size_t k : {1ul, 5ul, 16ul, 31ul}) {
        const Eigen::MatrixXd r = rank_k_reconstruct(w, k);
        double tail = 0.0;
        for (Eigen::Index i = static_cast<Eigen::Index>(k); i < s.sigma.size(); ++i)
            tail += s.sigma(i) * s.sigma(i);
        CHECK((w - r).norm() == doctest::Approx(std::sqrt(tail)).epsilon(1e-8));
    }
    // dropping one direction leaves exactly sigma_min
    const Eigen::MatrixXd r31 = rank_k_reconstruct(w, 31);
    CHECK((w - r31).norm() == doctest::Approx(s.sigma(31)).epsilon(1e-8));
}

TEST_CASE("principal mask on the 2x2 analytic fixture") {
    Eigen::MatrixXd w(2, 2);
    w << 3, 0, 0, 1;
    const Mask m = principal_mask(w, "w", 1, 0.25);
    CHECK(m.count() == 1);
    CHECK(m.test(0, 0));

    const Mask full = principal_mask(w, "w", 1, 1.0);
    CHECK(full.count() == 4);
}

TEST_CASE("principal mask density is exactly ceil(alpha*m*n)") {
    Rng rng(89);
    for (const double alpha : {0.1, 0.25, 0.333, 0.5, 0.9}) {
        const Eigen::MatrixXd w = random_matrix(13, 11, rng);
        const Mask m = principal_mask(w, "w", 4, alpha);
        CHECK(m.count() == static_cast<std::size_t>(std::ceil(alpha * 13 * 11)));
    }
}

TEST_CASE("low magnitude mask on the 2x2 analytic fixture") {
    Eigen::MatrixXd w(2, 2);
    w << 3, 0.1, 2, 1;
    const Mask quarter = low_magnitude_mask(w, "w", 0.25);
    CHECK(quarter.count() == 1);
    CHECK(quarter.test(0, 1));

    const Mask half = low_magnitude_mask(w, "w", 0.5);
    CHECK(half.count() == 2);
    CHECK(half.test(0, 1));
    CHECK(half.test(1, 1));

    const Mask comp = Mask::complement(half);
    CHECK(comp.density() == doctest::Approx(0.5));
}

TEST_CASE("tie-breaking picks lexicographically first coordinates") {
    const Eigen::MatrixXd w = Eigen::MatrixXd::Ones(3, 3);
    const Mask m = low_magnitude_mask(w, "w", 0.4);  // ceil(3.6) = 4 of 9 equal scores
    CHECK(m.count() == 4);
    CHECK(m.test(0, 0));
    CHECK(m.test(0, 1));
    CHECK(m.test(0, 2));
    CHECK(m.test(1, 0));

    const Mask p = top_magnitude_mask(w, "w", 0.4);
    CHECK(p.count() == 4);
    CHECK(p.test(0, 0));  // same tie rule for the top-selection
    CHECK(p.test(1, 0));
}

TEST_CASE("principal mask is scale invariant") {
    Rng rng(97);
    const Eigen::MatrixXd w = random_matrix(12, 9, rng);
    const Mask a = principal_mask(w, "w", 3, 0.3);
    const Mask b = principal_mask((7.5 * w).eval(), "w", 3, 0.3);
    CHECK(a == b);
}

TEST_CASE("diagonal matrices reduce the principal mask to top-|diagonal|") {
    Rng rng(101);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < 5; ++i) w(i, i) = rng.gaussian() * (i + 1);
    // rank is 5; with k = 5 the reconstruction is exact
    const Mask m = principal_mask(w, "w", 5, 0.5);  // ceil(18) = 18?? 0.5*36 = 18
    // top 18 slots: 5 diagonal entries are the only nonzeros; ties (zeros)
    // fill the rest lexicographically. The diagonal must all be selected.
    for (int i = 0; i < 5; ++i) CHECK(m.test(i, i));
}

TEST_CASE("safe mask equals its explicit set-algebra composition") {
    Rng rng(103);
    const Eigen::MatrixXd m = random_matrix(4, 4, rng);
    const WeightMatrix w = from_f64("w", m, Dtype::f32);

    MaskRecipe recipe;
    recipe.kind = MaskKind::safe;
    recipe.k = 2;
    recipe.alpha = 0.5;
    recipe.alpha_low = 0.5;
    const Mask safe = build_recipe_mask(w, recipe);

    const Mask low = low_magnitude_mask(m, "w", 0.5);
    const Mask princ_c = combine_masks(SetOp::complement, principal_mask(m, "w", 2, 0.5));
    const Mask expect = combine_masks(SetOp::union_, low, &princ_c);
    CHECK(safe == expect);
}

TEST_CASE("principal and its complement tile the grid") {
    Rng rng(107);
    const Eigen::MatrixXd m = random_matrix(8, 8, rng);
    const WeightMatrix w = from_f64("w", m, Dtype::f32);
    MaskRecipe a{MaskKind::principal, 3, 0.5, 0.5, 0};
    MaskRecipe b{MaskKind::principal_complement, 3, 0.5, 0.5, 0};
    const Mask u = Mask::union_of(build_recipe_mask(w, a), build_recipe_mask(w, b));
    CHECK(u.count() == u.size());
}

TEST_CASE("safe mask density respects inclusion-exclusion bounds") {
    Rng rng(109);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t rows = 4 + rng.below(12);
        const std::size_t cols = 4 + rng.below(12);
        const double alpha_p = rng.uniform(0.2, 0.8);
        const double alpha_l = rng.uniform(0.2, 0.8);
        const Eigen::MatrixXd m = random_matrix(rows, cols, rng);
        const WeightMatrix w = from_f64("w", m, Dtype::f32);

        MaskRecipe recipe{MaskKind::safe, 2, alpha_p, alpha_l, 0};
        const Mask safe = build_recipe_mask(w, recipe);

        const auto total = static_cast<double>(rows * cols);
        const double n_low = std::ceil(alpha_l * total);
        const double n_princ_c = total - std::ceil(alpha_p * total);
        const double lower = std::max(n_low, n_princ_c) / total;
        const double upper = std::min(total, n_low + n_princ_c) / total;
        CHECK(safe.density() >= lower - 1e-12);
        CHECK(safe.density() <= upper + 1e-12);
    }
}

TEST_CASE("random matched masks copy the reference cardinality exactly") {
    Rng rng(113);
    const Eigen::MatrixXd m = random_matrix(10, 10, rng);
    const WeightMatrix w = from_f64("w", m, Dtype::f32);
    const Mask reference = low_magnitude_mask(m, "w", 0.37);

    MaskRecipe recipe{MaskKind::random_matched, 1, 0.5, 0.5, 1234};
    const Mask r = build_recipe_mask(w, recipe, &reference);
    CHECK(r.count() == reference.count());

    // deterministic for a fixed seed, different for another
    const Mask r2 = build_recipe_mask(w, recipe, &reference);
    CHECK(r == r2);
    recipe.seed = 99;
    const Mask r3 = build_recipe_mask(w, recipe, &reference);
    CHECK(r3.count() == reference.count());
    CHECK_FALSE(r3 == r);

    CHECK_THROWS_AS(build_recipe_mask(w, recipe), ConfigError);
}

TEST_CASE("recipe validation rejects bad parameters") {
    MaskRecipe r{MaskKind::principal, 0, 0.5, 0.5, 0};
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.k = 2;
    r.alpha = 0.0;
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.alpha = 1.5;
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.alpha = 0.5;
    CHECK_NOTHROW(r.validate());
}

TEST_CASE("mask archives round-trip through manifest plus payload files") {
    TempDir dir("recipes");
    Rng rng(127);
    std::vector<Mask> masks;
    for (int i = 0; i < 3; ++i) {
        Mask m("model.layers." + std::to_string(i) + ".mlp.up_proj.weight", 6, 5);
        for (std::size_t j = 0; j < m.size(); ++j)
            if (rng.uniform() < 0.4) m.set_linear(j, true);
        masks.push_back(m);
    }
    const auto manifest =
        export_mask_archive(dir.file("arch"), masks, "low_magnitude alpha=0.4", 42);
    CHECK(manifest.entries.size() == 3);
    CHECK(manifest.entries[0].density == doctest::Approx(masks[0].density()));

    const auto loaded = load_mask_archive(dir.file("arch"));
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i] == masks[i]);
        CHECK(loaded[i].layer_name() == masks[i].layer_name());
    }
}
