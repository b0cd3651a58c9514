#pragma once

// Training objectives: InfoNCE, cross-view segment consistency between the
// Siamese encoders, one-to-many text-to-views contrast, and the multi-label
// prompt contrast, all sharing one learnable temperature.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "viewco/params.hpp"
#include "viewco/tensor.hpp"

namespace viewco {

// ---------------------------------------------------------------------------
// learnable temperature, tau = exp(log_tau) clamped after each update

struct Temperature {
    Tensor log_tau; // 1x1 leaf

    static constexpr double kMin = 0.01;
    static constexpr double kMax = 1.0;

    static Temperature learnable(double tau_init = 0.07) {
        if (!(tau_init > 0.0)) throw InvalidTemperature("tau init must be positive");
        return Temperature{Tensor::scalar(std::log(tau_init), true)};
    }

    static Temperature fixed(double tau) {
        if (!(tau > 0.0)) throw InvalidTemperature("tau must be positive");
        return Temperature{Tensor::scalar(std::log(tau), false)};
    }

    static Temperature wrap(Tensor log_tau_param) { return Temperature{std::move(log_tau_param)}; }

    Tensor tau() const { return vexp(log_tau); }

    double value() const { return std::exp((*log_tau.data)[0]); }

    void clamp() {
        double& v = (*log_tau.data)[0];
        v = std::clamp(v, std::log(kMin), std::log(kMax));
    }
};

struct LossBreakdown {
    double seg_consistency = 0.0;
    double text_views = 0.0;
    double multilabel = 0.0;
    double total = 0.0;
};

// instrumentation for structural positive/negative pair counting
struct PairCounts {
    long positives = 0;
    long negatives = 0;
};

namespace detail {

inline void check_rows_normalized(const Tensor& t, const char* what) {
    for (int i = 0; i < t.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < t.cols; ++j) s += t.at(i, j) * t.at(i, j);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-3)
            throw NormalizationError(std::string(what) + ": row " + std::to_string(i) +
                                     " is not l2-normalized");
    }
}

} // namespace detail

// -log( exp(q.k+/tau) / sum_i exp(q.k_i/tau) ); differentiable in q, keys,
// and the temperature.
inline Tensor info_nce(const Tensor& q, const Tensor& keys, int pos_index,
                       const Temperature& temp) {
    if (q.rows != 1) throw ShapeError("info_nce: query must be a single row");
    if (pos_index < 0 || pos_index >= keys.rows)
        throw ShapeError("info_nce: positive index out of range");
    detail::check_rows_normalized(q, "info_nce query");
    detail::check_rows_normalized(keys, "info_nce keys");
    Tensor logits = div_by_scalar(matmul_nt(q, keys), temp.tau()); // 1 x N
    return sub(logsumexp_rows(logits), pick(logits, 0, pos_index));
}

// Per-row InfoNCE losses with positives on the diagonal: row k of `queries`
// against all rows of `keys`, positive at key k. Returns N x 1.
inline Tensor nce_diagonal_rows(const Tensor& queries, const Tensor& keys,
                                const Temperature& temp) {
    if (queries.rows != keys.rows)
        throw ShapeError("nce_diagonal_rows: query/key row counts differ");
    detail::check_rows_normalized(queries, "nce queries");
    detail::check_rows_normalized(keys, "nce keys");
    Tensor logits = div_by_scalar(matmul_nt(queries, keys), temp.tau());
    return sub(logsumexp_rows(logits), diag(logits));
}

// ---------------------------------------------------------------------------
// cross-view segmentation consistency (teacher <-> student, both views)
//
// Teacher tokens are treated as constants: only the student side receives
// gradients, matching EMA-only teacher training.

inline Tensor seg_consistency_loss(const std::vector<Tensor>& z_ut, const std::vector<Tensor>& z_vt,
                                   const std::vector<Tensor>& z_us, const std::vector<Tensor>& z_vs,
                                   const Temperature& temp, PairCounts* counts = nullptr) {
    const size_t batch = z_ut.size();
    if (batch == 0 || z_vt.size() != batch || z_us.size() != batch || z_vs.size() != batch)
        throw ShapeError("seg_consistency_loss: batch size mismatch");
    const int k = z_ut[0].rows;
    if (k < 2) throw ConfigError("seg_consistency_loss: K < 2 leaves no negatives");

    Tensor t2s = Tensor::scalar(0.0);
    Tensor s2t = Tensor::scalar(0.0);
    for (size_t i = 0; i < batch; ++i) {
        Tensor ut = z_ut[i].detach();
        Tensor vt = z_vt[i].detach();
        const Tensor& us = z_us[i];
        const Tensor& vs = z_vs[i];
        // teacher -> student: (u_t, v_s) and (v_t, u_s)
        t2s = add(t2s, sum(nce_diagonal_rows(ut, vs, temp)));
        t2s = add(t2s, sum(nce_diagonal_rows(vt, us, temp)));
        // student -> teacher: (u_s, v_t) and (v_s, u_t)
        s2t = add(s2t, sum(nce_diagonal_rows(us, vt, temp)));
        s2t = add(s2t, sum(nce_diagonal_rows(vs, ut, temp)));
        if (counts) {
            counts->positives += 4L * k;
            counts->negatives += 4L * k * (k - 1);
        }
    }
    const double norm = 1.0 / (static_cast<double>(k) * static_cast<double>(batch));
    return add(scale(t2s, norm), scale(s2t, norm));
}

// ---------------------------------------------------------------------------
// projection heads (AvgPool + two-layer MLP, shared embedding space)

struct ProjectionHead {
    std::string prefix;

    static void register_params(ParamStore& P, const std::string& prefix, int d_in, int d_out,
                                Rng& rng) {
        P.add_normal(prefix + ".w1", d_in, d_in, rng);
        P.add_zeros(prefix + ".b1", 1, d_in);
        P.add_normal(prefix + ".w2", d_in, d_out, rng);
        P.add_zeros(prefix + ".b2", 1, d_out);
    }

    Tensor apply(const ParamStore& P, const Tensor& x) const {
        Tensor h = add_rowvec(matmul(x, P.at(prefix + ".w1")), P.at(prefix + ".b1"));
        return add_rowvec(matmul(h, P.at(prefix + ".w2")), P.at(prefix + ".b2"));
    }
};

// mean over the K segment rows, MLP head, then l2-normalize
inline Tensor project_view(const Tensor& segment_tokens, const ParamStore& P,
                           const ProjectionHead& head) {
    if (segment_tokens.rows < 1) throw ShapeError("project_view: no segment rows");
    return l2_normalize(head.apply(P, mean_rows(segment_tokens)));
}

// ---------------------------------------------------------------------------
// text-to-views consistency: both views of image i are positives for text i

inline Tensor text_views_loss(const Tensor& z_iu, const Tensor& z_iv, const Tensor& z_t,
                              const Temperature& temp,
                              std::array<PairCounts, 2>* direction_counts = nullptr) {
    const int batch = z_t.rows;
    if (z_iu.rows != batch || z_iv.rows != batch)
        throw ShapeError("text_views_loss: batch size mismatch");

    // views -> text (diagonal positives per view)
    Tensor v2t = add(sum(nce_diagonal_rows(z_iu, z_t, temp)),
                     sum(nce_diagonal_rows(z_iv, z_t, temp)));
    // text -> views
    Tensor t2v = add(sum(nce_diagonal_rows(z_t, z_iu, temp)),
                     sum(nce_diagonal_rows(z_t, z_iv, temp)));
    if (direction_counts) {
        (*direction_counts)[0].positives += 2L * batch;
        (*direction_counts)[0].negatives += 2L * batch * (batch - 1);
        (*direction_counts)[1].positives += 2L * batch;
        (*direction_counts)[1].negatives += 2L * batch * (batch - 1);
    }
    const double inv_b = 1.0 / batch;
    return add(scale(v2t, inv_b), scale(t2v, inv_b));
}

// ---------------------------------------------------------------------------
// multi-label prompt contrast: the M prompted variants of caption i are all
// positives for both views of image i

// one view against all B*M prompts; prompts laid out row (i*M + m)
inline Tensor views_to_prompts(const Tensor& z_view, const Tensor& z_prompts, int m_prompts,
                               const Temperature& temp) {
    const int batch = z_view.rows;
    if (z_prompts.rows != batch * m_prompts)
        throw ShapeError("views_to_prompts: prompt row count != B*M");
    detail::check_rows_normalized(z_view, "view embeddings");
    detail::check_rows_normalized(z_prompts, "prompt embeddings");
    Tensor logits = div_by_scalar(matmul_nt(z_view, z_prompts), temp.tau()); // B x BM
    Tensor acc = Tensor::scalar(0.0);
    for (int i = 0; i < batch; ++i) {
        Tensor row = take_row(logits, i);
        std::vector<int> own(m_prompts);
        for (int m = 0; m < m_prompts; ++m) own[m] = i * m_prompts + m;
        acc = add(acc, sub(logsumexp_rows(row), logsumexp_rows(select_cols(row, own))));
    }
    return scale(acc, 1.0 / batch);
}

inline Tensor multilabel_prompt_loss(const Tensor& z_iu, const Tensor& z_iv,
                                     const Tensor& z_prompts, int m_prompts,
                                     const Temperature& temp) {
    if (m_prompts < 1) throw ConfigError("multilabel_prompt_loss: M must be >= 1");
    const int batch = z_iu.rows;
    if (z_iv.rows != batch || z_prompts.rows != batch * m_prompts)
        throw ShapeError("multilabel_prompt_loss: shape mismatch");
    detail::check_rows_normalized(z_iu, "view u embeddings");
    detail::check_rows_normalized(z_iv, "view v embeddings");
    detail::check_rows_normalized(z_prompts, "prompt embeddings");

    // views -> prompts, averaged over the two views
    Tensor v2p = scale(add(views_to_prompts(z_iu, z_prompts, m_prompts, temp),
                           views_to_prompts(z_iv, z_prompts, m_prompts, temp)),
                       0.5);

    // prompts -> views: each prompt row (i, m) has positive i in both views
    Tensor logits_u = div_by_scalar(matmul_nt(z_prompts, z_iu), temp.tau()); // BM x B
    Tensor logits_v = div_by_scalar(matmul_nt(z_prompts, z_iv), temp.tau());
    Tensor lse_u = logsumexp_rows(logits_u);
    Tensor lse_v = logsumexp_rows(logits_v);
    Tensor p2v = Tensor::scalar(0.0);
    for (int i = 0; i < batch; ++i)
        for (int m = 0; m < m_prompts; ++m) {
            int r = i * m_prompts + m;
            p2v = add(p2v, sub(pick(lse_u, r, 0), pick(logits_u, r, i)));
            p2v = add(p2v, sub(pick(lse_v, r, 0), pick(logits_v, r, i)));
        }
    p2v = scale(p2v, 1.0 / (2.0 * m_prompts * batch));

    return add(v2p, p2v);
}

// ---------------------------------------------------------------------------
// total objective

struct TotalLoss {
    Tensor tensor; // scalar on the tape
    LossBreakdown breakdown;
};

inline TotalLoss total_loss(const Tensor& seg, const Tensor& text_views,
                            const Tensor& multilabel) {
    TotalLoss out;
    out.tensor = add(add(seg, text_views), multilabel);
    out.breakdown.seg_consistency = seg.value();
    out.breakdown.text_views = text_views.value();
    out.breakdown.multilabel = multilabel.value();
    out.breakdown.total = out.tensor.value();
    return out;
}

} // namespace viewco
