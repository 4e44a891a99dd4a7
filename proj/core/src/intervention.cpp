#include "wlens/intervention.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace wlens {

void AttentionWeights::validate(const HeadLayout& layout) const {
    layout.validate();
    const auto d_model = wq.rows();
    if (wk.rows() != d_model || wv.rows() != d_model || wo.rows() != d_model)
        throw ShapeError("attention weights disagree on d_model");
    if (static_cast<std::size_t>(wq.cols()) != layout.q_width() ||
        static_cast<std::size_t>(wo.cols()) != layout.q_width())
        throw ShapeError("q/o width does not match H_q * D");
    if (static_cast<std::size_t>(wk.cols()) != layout.kv_width() ||
        static_cast<std::size_t>(wv.cols()) != layout.kv_width())
        throw ShapeError("k/v width does not match H_kv * D");
    if (bv && static_cast<std::size_t>(bv->size()) != layout.kv_width())
        throw ShapeError("v bias width does not match H_kv * D");
}

Eigen::MatrixXd haar_orthogonal(std::size_t dim, Rng& rng) {
    if (dim == 0) throw ConfigError("haar_orthogonal: dimension must be positive");
    Eigen::MatrixXd g(dim, dim);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.gaussian();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

Eigen::MatrixXd block_diagonal(const Eigen::MatrixXd& r, std::size_t count) {
    const auto d = r.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d * static_cast<Eigen::Index>(count),
                                                d * static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i)
        out.block(static_cast<Eigen::Index>(i) * d, static_cast<Eigen::Index>(i) * d, d, d) = r;
    return out;
}

BlockRotations build_block_rotations(const Eigen::MatrixXd& r, const HeadLayout& layout) {
    layout.validate();
    if (r.rows() != r.cols() || static_cast<std::size_t>(r.rows()) != layout.head_dim)
        throw ShapeError("rotation block must be D x D");
    return BlockRotations{block_diagonal(r, layout.kv_heads),
                          block_diagonal(r, layout.q_heads)};
}

AttentionWeights apply_vo_rotation(const AttentionWeights& w, const HeadLayout& layout,
                                   const Eigen::MatrixXd& r) {
    w.validate(layout);
    const BlockRotations rot = build_block_rotations(r, layout);
    AttentionWeights out = w;
    out.wv = w.wv * rot.r_kv;
    out.wo = w.wo * rot.r_q;
    if (w.bv) out.bv = (*w.bv) * rot.r_kv;
    return out;
}

AttentionWeights apply_head_permutation(const AttentionWeights& w, const HeadLayout& layout,
                                        const std::vector<std::size_t>& perm) {
    w.validate(layout);
    if (perm.size() != layout.kv_heads)
        throw ConfigError("head permutation must cover every KV head");
    std::vector<bool> seen(layout.kv_heads, false);
    for (const auto p : perm) {
        if (p >= layout.kv_heads || seen[p])
            throw ConfigError("head permutation is not a bijection");
        seen[p] = true;
    }

    const auto d = static_cast<Eigen::Index>(layout.head_dim);
    const auto gather_blocks = [&](const Eigen::MatrixXd& src,
                                   const std::vector<std::size_t>& map) {
        Eigen::MatrixXd dst(src.rows(), src.cols());
        for (std::size_t j = 0; j < map.size(); ++j)
            dst.middleCols(static_cast<Eigen::Index>(j) * d, d) =
                src.middleCols(static_cast<Eigen::Index>(map[j]) * d, d);
        return dst;
    };

    // Grouped expansion: query slot h follows its KV group, keeping the
    // within-group order.
    std::vector<std::size_t> q_perm(layout.q_heads);
    const std::size_t rep = layout.n_rep();
    for (std::size_t h = 0; h < layout.q_heads; ++h)
        q_perm[h] = perm[h / rep] * rep + h % rep;

    AttentionWeights out = w;
    out.wk = gather_blocks(w.wk, perm);
    out.wv = gather_blocks(w.wv, perm);
    out.wq = gather_blocks(w.wq, q_perm);
    out.wo = gather_blocks(w.wo, q_perm);
    if (w.bv) {
        Eigen::RowVectorXd b(w.bv->size());
        for (std::size_t j = 0; j < perm.size(); ++j)
            b.segment(static_cast<Eigen::Index>(j) * d, d) =
                w.bv->segment(static_cast<Eigen::Index>(perm[j]) * d, d);
        out.bv = b;
    }
    return out;
}

namespace {

// Exactly rounded sum of doubles (expansion arithmetic). The result is the
// correctly rounded value of the exact sum, so it does not depend on the
// order of the addends; relabeling attention heads therefore reproduces the
// forward output bit for bit.
class ExactSum {
public:
    void add(double x) {
        std::size_t out = 0;
        for (std::size_t i = 0; i < parts_.size(); ++i) {
            const double y = parts_[i];
            const double hi = x + y;
            const double virt = hi - x;
            const double lo = (x - (hi - virt)) + (y - virt);
            if (lo != 0.0) parts_[out++] = lo;
            x = hi;
        }
        parts_.resize(out);
        parts_.push_back(x);
    }
    double value() const {
        double acc = 0.0;
        for (const double p : parts_) acc += p;
        return acc;
    }

private:
    std::vector<double> parts_;
};

}  // namespace

// Everything below runs as plain scalar loops in a fixed order. Library
// matrix kernels round a column differently depending on which SIMD panel
// it lands in, which would make a relabeled head differ in the last ulp;
// per-column loops keep each head's arithmetic identical under relabeling,
// and the final head-axis contraction uses the order-invariant accumulator,
// so a pure head permutation reproduces the output bit for bit.
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> toy_attention_forward(
    const AttentionWeights& w, const HeadLayout& layout,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    w.validate(layout);
    if (!x.allFinite()) throw NumericsError("toy_attention_forward: non-finite inputs");
    if (x.cols() != w.wq.rows()) throw ShapeError("input width must equal d_model");

    const Mat wq = w.wq.template cast<Scalar>();
    const Mat wk = w.wk.template cast<Scalar>();
    const Mat wv = w.wv.template cast<Scalar>();
    const Mat wo = w.wo.template cast<Scalar>();

    const Eigen::Index t = x.rows();
    const Eigen::Index d_model = x.cols();
    const auto d = static_cast<Eigen::Index>(layout.head_dim);
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(layout.head_dim));

    const auto project = [&](const Mat& weight) {
        Mat out(t, weight.cols());
        for (Eigen::Index i = 0; i < t; ++i)
            for (Eigen::Index j = 0; j < weight.cols(); ++j) {
                Scalar acc = Scalar(0);
                for (Eigen::Index k = 0; k < d_model; ++k) acc += x(i, k) * weight(k, j);
                out(i, j) = acc;
            }
        return out;
    };
    Mat q = project(wq);
    Mat k = project(wk);
    Mat v = project(wv);
    if (w.bv)
        for (Eigen::Index i = 0; i < t; ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j)
                v(i, j) += static_cast<Scalar>((*w.bv)(j));

    Mat ctx(t, static_cast<Eigen::Index>(layout.q_width()));
    const std::size_t rep = layout.n_rep();
    for (std::size_t h = 0; h < layout.q_heads; ++h) {
        const auto hq = static_cast<Eigen::Index>(h) * d;
        const auto gk = static_cast<Eigen::Index>(h / rep) * d;

        Mat probs(t, t);
        for (Eigen::Index i = 0; i < t; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                Scalar acc = Scalar(0);
                for (Eigen::Index e = 0; e < d; ++e) acc += q(i, hq + e) * k(j, gk + e);
                probs(i, j) = acc * inv_sqrt_d;
            }
            Scalar maxv = probs(i, 0);
            for (Eigen::Index j = 1; j <= i; ++j) maxv = std::max(maxv, probs(i, j));
            Scalar denom = Scalar(0);
            for (Eigen::Index j = 0; j <= i; ++j) {
                probs(i, j) = std::exp(probs(i, j) - maxv);
                denom += probs(i, j);
            }
            for (Eigen::Index j = 0; j <= i; ++j) probs(i, j) /= denom;
            for (Eigen::Index j = i + 1; j < t; ++j) probs(i, j) = Scalar(0);
        }
        for (Eigen::Index i = 0; i < t; ++i)
            for (Eigen::Index e = 0; e < d; ++e) {
                Scalar acc = Scalar(0);
                for (Eigen::Index j = 0; j <= i; ++j) acc += probs(i, j) * v(j, gk + e);
                ctx(i, hq + e) = acc;
            }
    }

    Mat out(t, wo.rows());
    for (Eigen::Index i = 0; i < t; ++i) {
        for (Eigen::Index o = 0; o < wo.rows(); ++o) {
            ExactSum sum;
            for (Eigen::Index j = 0; j < ctx.cols(); ++j)
                sum.add(static_cast<double>(ctx(i, j)) * static_cast<double>(wo(o, j)));
            out(i, o) = static_cast<Scalar>(sum.value());
        }
    }
    return out;
}

template Eigen::MatrixXd toy_attention_forward<double>(const AttentionWeights&,
                                                       const HeadLayout&,
                                                       const Eigen::MatrixXd&);
template Eigen::MatrixXf toy_attention_forward<float>(const AttentionWeights&,
                                                      const HeadLayout&,
                                                      const Eigen::MatrixXf&);

InvarianceReport verify_invariance(const AttentionWeights& original,
                                   const AttentionWeights& edited, const HeadLayout& layout,
                                   std::size_t trials, double tol, Rng& rng, bool use_f32) {
    if (trials < 1) throw ConfigError("verify_invariance: need at least one trial");
    original.validate(layout);
    edited.validate(layout);

    InvarianceReport rep;
    rep.trials = trials;
    rep.tolerance = tol;

    const double wnorm = original.wv.norm();
    rep.weight_rel_deviation =
        wnorm > 0.0 ? (edited.wv - original.wv).norm() / wnorm : (edited.wv - original.wv).norm();
    rep.trivial_edit = (edited.wq - original.wq).norm() == 0.0 &&
                       (edited.wk - original.wk).norm() == 0.0 &&
                       (edited.wv - original.wv).norm() == 0.0 &&
                       (edited.wo - original.wo).norm() == 0.0;

    const Eigen::Index t = 6;
    const Eigen::Index d_model = original.wq.rows();
    for (std::size_t trial = 0; trial < trials; ++trial) {
        Eigen::MatrixXd x(t, d_model);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.gaussian();
        double dev;
        if (use_f32) {
            const Eigen::MatrixXf xf = x.cast<float>();
            const auto y0 = toy_attention_forward<float>(original, layout, xf);
            const auto y1 = toy_attention_forward<float>(edited, layout, xf);
            dev = static_cast<double>((y1 - y0).cwiseAbs().maxCoeff());
        } else {
            const auto y0 = toy_attention_forward<double>(original, layout, x);
            const auto y1 = toy_attention_forward<double>(edited, layout, x);
            dev = (y1 - y0).cwiseAbs().maxCoeff();
        }
        rep.max_output_deviation = std::max(rep.max_output_deviation, dev);
    }
    rep.pass = rep.max_output_deviation <= tol;
    return rep;
}

}  // namespace wlens
