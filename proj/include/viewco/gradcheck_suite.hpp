#pragma once

// Finite-difference validation of every loss and both encoders at small
// shapes, as driven by the `gradcheck` CLI command. A sign-flip injection
// hook exists purely as a test fixture for the failure path.

#include <functional>
#include <string>
#include <vector>

#include "viewco/gradcheck.hpp"
#include "viewco/group_encoder.hpp"
#include "viewco/losses.hpp"
#include "viewco/text_encoder.hpp"

namespace viewco {

struct GradCheckReport {
    std::string component;
    double max_rel_error = 0.0;
    bool pass = false;
};

constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

// grad_check with the analytic gradients negated first; drives the
// fault-injection contract of the gradcheck command
inline double grad_check_sign_flipped(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                      double step = 1e-5) {
    for (auto& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    Tensor loss = f();
    backward(loss);
    double worst = 0.0;
    for (auto& p : params) {
        for (size_t i = 0; i < p.numel(); ++i) {
            const double keep = (*p.data)[i];
            (*p.data)[i] = keep + step;
            double fp = f().value();
            (*p.data)[i] = keep - step;
            double fm = f().value();
            (*p.data)[i] = keep;
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = -(*p.grad)[i]; // injected fault
            worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
        }
    }
    return worst;
}

inline Tensor normalized_leaf(int r, int c, Rng& rng) {
    Tensor n = l2_normalize(Tensor::randn(r, c, rng));
    return Tensor::from(r, c, *n.data, true);
}

} // namespace detail

// Components checked: info_nce, seg_consistency, text_views, multilabel,
// encoder, text_encoder. Encoders run with soft assignment; the
// straight-through hard path is intentionally not the true derivative.
inline std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed,
                                                        const std::string& flip_component = "") {
    std::vector<GradCheckReport> reports;
    auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                     std::vector<Tensor> params) {
        double err = name == flip_component ? detail::grad_check_sign_flipped(f, std::move(params))
                                            : grad_check(f, std::move(params));
        reports.push_back({name, err, err < kGradCheckTolerance});
    };

    {
        Rng rng(derive_seed(seed, 1));
        Tensor q = detail::normalized_leaf(1, 6, rng);
        Tensor keys = detail::normalized_leaf(4, 6, rng);
        Temperature temp = Temperature::learnable(0.3);
        check("info_nce", [&] { return info_nce(q, keys, 2, temp); }, {q, keys, temp.log_tau});
    }
    {
        Rng rng(derive_seed(seed, 2));
        std::vector<Tensor> ut, vt, us, vs;
        for (int i = 0; i < 2; ++i) {
            ut.push_back(detail::normalized_leaf(3, 6, rng));
            vt.push_back(detail::normalized_leaf(3, 6, rng));
            us.push_back(detail::normalized_leaf(3, 6, rng));
            vs.push_back(detail::normalized_leaf(3, 6, rng));
        }
        Temperature temp = Temperature::learnable(0.4);
        check(
            "seg_consistency", [&] { return seg_consistency_loss(ut, vt, us, vs, temp); },
            {us[0], us[1], vs[0], vs[1], temp.log_tau});
    }
    {
        Rng rng(derive_seed(seed, 3));
        Tensor zu = detail::normalized_leaf(3, 6, rng);
        Tensor zv = detail::normalized_leaf(3, 6, rng);
        Tensor zt = detail::normalized_leaf(3, 6, rng);
        Temperature temp = Temperature::learnable(0.5);
        check(
            "text_views", [&] { return text_views_loss(zu, zv, zt, temp); },
            {zu, zv, zt, temp.log_tau});
    }
    {
        Rng rng(derive_seed(seed, 4));
        Tensor zu = detail::normalized_leaf(2, 6, rng);
        Tensor zv = detail::normalized_leaf(2, 6, rng);
        Tensor prompts = detail::normalized_leaf(4, 6, rng); // B=2, M=2
        Temperature temp = Temperature::learnable(0.5);
        check(
            "multilabel", [&] { return multilabel_prompt_loss(zu, zv, prompts, 2, temp); },
            {zu, zv, prompts, temp.log_tau});
    }
    {
        Rng rng(derive_seed(seed, 5));
        EncoderConfig cfg;
        cfg.image_size = 8;
        cfg.patch_size = 4;
        cfg.embed_dim = 8;
        cfg.heads = 2;
        cfg.depth_per_stage = {1};
        cfg.group_token_counts = {2};
        cfg.mlp_ratio = 2;
        ParamStore P;
        register_group_encoder(P, "enc", cfg, rng);
        Image im = Image::blank(8, 8);
        for (auto& v : im.pix) v = rng.uniform();
        std::vector<Tensor> params;
        for (auto& [name, t] : P.all()) params.push_back(t);
        check(
            "encoder",
            [&] { return sum(encode(im, P, "enc", cfg, AssignMode::soft).segments.features); },
            params);
    }
    {
        Rng rng(derive_seed(seed, 6));
        Vocab vocab = Vocab::build({"a red circle on gray", "a blue square on dark"});
        TextConfig cfg;
        cfg.vocab_size = vocab.size();
        cfg.width = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.max_len = 8;
        cfg.mlp_ratio = 2;
        ParamStore P;
        register_text_encoder(P, "txt", cfg, rng);
        std::vector<int> ids = tokenize("a red circle", vocab, cfg.max_len);
        std::vector<Tensor> params;
        for (auto& [name, t] : P.all()) params.push_back(t);
        check("text_encoder", [&] { return sum(text_hidden(ids, P, "txt", cfg)); }, params);
    }
    return reports;
}

} // namespace viewco
