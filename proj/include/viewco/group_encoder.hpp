#pragma once

// Bottom-up grouping vision encoder: patchify, transformer layers per stage,
// then cross-attention grouping from learnable group tokens, progressively
// reducing the token count down to K segment tokens. The chained per-stage
// assignment matrices give the patch-to-segment map.

#include <string>
#include <vector>

#include "viewco/image.hpp"
#include "viewco/transformer.hpp"

namespace viewco {

enum class AssignMode { soft, hard };

struct EncoderConfig {
    int image_size = 224;
    int patch_size = 16;
    int embed_dim = 384;
    int heads = 6;
    std::vector<int> depth_per_stage = {6, 6};
    std::vector<int> group_token_counts = {64, 8};
    int mlp_ratio = 4;

    int segment_tokens() const { return group_token_counts.back(); } // K
    int patches_per_side() const { return image_size / patch_size; }
    int patch_count() const { return patches_per_side() * patches_per_side(); }

    void validate() const {
        if (image_size % patch_size != 0)
            throw ConfigError("image_size must be divisible by patch_size");
        if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
        if (group_token_counts.empty()) throw ConfigError("group_token_counts empty");
        if (depth_per_stage.size() != group_token_counts.size())
            throw ConfigError("depth_per_stage and group_token_counts must have equal length");
        for (size_t s = 1; s < group_token_counts.size(); ++s)
            if (group_token_counts[s] >= group_token_counts[s - 1])
                throw ConfigError("group_token_counts must be strictly decreasing");
        if (group_token_counts[0] > patch_count())
            throw ConfigError("more group tokens than patch tokens");
    }

    static EncoderConfig paper() { return EncoderConfig{}; }

    static EncoderConfig toy() {
        EncoderConfig c;
        c.image_size = 32;
        c.patch_size = 8;
        c.embed_dim = 32;
        c.heads = 4;
        c.depth_per_stage = {1, 1};
        c.group_token_counts = {8, 4};
        return c;
    }
};

struct SegmentView { // which branch produced a set of segment tokens
    enum class View { u, v, original };
    enum class Network { student, teacher };
};

struct SegmentTokens {
    Tensor features; // K x d
    SegmentView::View view = SegmentView::View::original;
    SegmentView::Network network = SegmentView::Network::student;
    std::string image_id;
};

struct EncodeResult {
    SegmentTokens segments;
    Tensor assignment;               // P x K, row-stochastic (one-hot in hard mode)
    std::vector<Tensor> stage_maps;  // per-stage assignment matrices
};

inline void register_group_encoder(ParamStore& P, const std::string& pfx,
                                   const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int patch_dim = cfg.patch_size * cfg.patch_size * 3;
    P.add_normal(pfx + ".patch.w", patch_dim, d, rng);
    P.add_zeros(pfx + ".patch.b", 1, d);
    P.add_normal(pfx + ".pos", cfg.patch_count(), d, rng);
    for (size_t s = 0; s < cfg.depth_per_stage.size(); ++s) {
        std::string spfx = pfx + ".stage" + std::to_string(s);
        for (int l = 0; l < cfg.depth_per_stage[s]; ++l)
            register_transformer_block(P, spfx + ".layer" + std::to_string(l), d,
                                       d * cfg.mlp_ratio, rng);
        P.add_normal(spfx + ".group.tokens", cfg.group_token_counts[s], d, rng);
        P.add_normal(spfx + ".group.wq", d, d, rng);
        P.add_normal(spfx + ".group.wk", d, d, rng);
        P.add_normal(spfx + ".group.mix.w", d, d, rng);
        P.add_zeros(spfx + ".group.mix.b", 1, d);
    }
}

struct GroupingResult {
    Tensor grouped;    // G x d
    Tensor assignment; // N x G
};

// Assign N tokens to G group tokens by attention; each grouped token is the
// assignment-weighted mean of its tokens, mixed and added to its group token.
inline GroupingResult grouping_block(const Tensor& tokens, const Tensor& group_tokens,
                                     const Tensor& wq, const Tensor& wk, const Tensor& mix_w,
                                     const Tensor& mix_b, AssignMode mode) {
    const int n = tokens.rows;
    const int g = group_tokens.rows;
    if (g > n) throw ConfigError("grouping_block: more groups than tokens");
    Tensor q = matmul(group_tokens, wq); // G x d
    Tensor k = matmul(tokens, wk);       // N x d
    Tensor logits = scale(matmul_nt(k, q), 1.0 / std::sqrt(static_cast<double>(tokens.cols)));
    Tensor assign = softmax_rows(logits); // N x G, rows sum to 1
    if (mode == AssignMode::hard) assign = straight_through_hard(assign);
    Tensor weight = transpose(colsum(assign));                    // G x 1
    Tensor sums = matmul(transpose(assign), tokens);              // G x d
    Tensor mean = div_rows_by_vec(sums, add_const(weight, 1e-8)); // empty hard groups stay finite
    Tensor grouped = add(add_rowvec(matmul(mean, mix_w), mix_b), group_tokens);
    return {grouped, assign};
}

namespace detail {

// rows of flattened non-overlapping patches, pixel-major then RGB
inline Tensor patch_matrix(const Image& im, int patch_size) {
    const int side = im.width / patch_size;
    const int patch_dim = patch_size * patch_size * 3;
    Tensor m = Tensor::zeros(side * side, patch_dim);
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            int row = py * side + px;
            int col = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int c = 0; c < 3; ++c)
                        m.at(row, col++) = im.at(px * patch_size + x, py * patch_size + y, c);
        }
    return m;
}

// nearest-neighbor resample of the learned positional grid for inference at
// a resolution other than the training one
inline Tensor resample_pos_grid(const Tensor& pos, int side_trained, int side_needed) {
    Tensor out = Tensor::zeros(side_needed * side_needed, pos.cols);
    for (int y = 0; y < side_needed; ++y) {
        int sy = std::min(y * side_trained / side_needed, side_trained - 1);
        for (int x = 0; x < side_needed; ++x) {
            int sx = std::min(x * side_trained / side_needed, side_trained - 1);
            for (int c = 0; c < pos.cols; ++c)
                out.at(y * side_needed + x, c) = pos.at(sy * side_trained + sx, c);
        }
    }
    return out;
}

} // namespace detail

// image -> P x d patch tokens (learned projection plus positional embedding)
inline Tensor patchify(const Image& im, const ParamStore& P, const std::string& pfx,
                       const EncoderConfig& cfg) {
    if (im.width != im.height) throw ShapeError("patchify: image must be square");
    if (im.width % cfg.patch_size != 0)
        throw ShapeError("patchify: image size not divisible by patch size");
    Tensor patches = detail::patch_matrix(im, cfg.patch_size);
    Tensor tokens = linear(patches, P.at(pfx + ".patch.w"), P.at(pfx + ".patch.b"));
    const int side = im.width / cfg.patch_size;
    const Tensor& pos = P.at(pfx + ".pos");
    if (side == cfg.patches_per_side()) return add(tokens, pos);
    return add(tokens, detail::resample_pos_grid(pos, cfg.patches_per_side(), side));
}

inline EncodeResult encode(const Image& im, const ParamStore& P, const std::string& pfx,
                           const EncoderConfig& cfg, AssignMode mode) {
    Tensor x = patchify(im, P, pfx, cfg);
    Tensor composed;
    std::vector<Tensor> stage_maps;
    for (size_t s = 0; s < cfg.depth_per_stage.size(); ++s) {
        std::string spfx = pfx + ".stage" + std::to_string(s);
        for (int l = 0; l < cfg.depth_per_stage[s]; ++l)
            x = transformer_block(P, spfx + ".layer" + std::to_string(l), x, cfg.heads);
        GroupingResult gr = grouping_block(x, P.at(spfx + ".group.tokens"),
                                           P.at(spfx + ".group.wq"), P.at(spfx + ".group.wk"),
                                           P.at(spfx + ".group.mix.w"), P.at(spfx + ".group.mix.b"),
                                           mode);
        x = gr.grouped;
        stage_maps.push_back(gr.assignment);
        composed = s == 0 ? gr.assignment : matmul(composed, gr.assignment);
    }
    EncodeResult out;
    out.segments.features = x;
    out.assignment = composed;
    out.stage_maps = std::move(stage_maps);
    return out;
}

} // namespace viewco
