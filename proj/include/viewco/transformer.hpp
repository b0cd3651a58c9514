#pragma once

// Pre-LN transformer block shared by the vision and text encoders.

#include <cmath>
#include <string>

#include "viewco/params.hpp"
#include "viewco/tensor.hpp"

namespace viewco {

inline void register_transformer_block(ParamStore& P, const std::string& pfx, int d,
                                       int mlp_hidden, Rng& rng) {
    P.add_ones(pfx + ".ln1.g", 1, d);
    P.add_zeros(pfx + ".ln1.b", 1, d);
    P.add_normal(pfx + ".attn.wq", d, d, rng);
    P.add_zeros(pfx + ".attn.bq", 1, d);
    P.add_normal(pfx + ".attn.wk", d, d, rng);
    P.add_zeros(pfx + ".attn.bk", 1, d);
    P.add_normal(pfx + ".attn.wv", d, d, rng);
    P.add_zeros(pfx + ".attn.bv", 1, d);
    P.add_normal(pfx + ".attn.wo", d, d, rng);
    P.add_zeros(pfx + ".attn.bo", 1, d);
    P.add_ones(pfx + ".ln2.g", 1, d);
    P.add_zeros(pfx + ".ln2.b", 1, d);
    P.add_normal(pfx + ".mlp.w1", d, mlp_hidden, rng);
    P.add_zeros(pfx + ".mlp.b1", 1, mlp_hidden);
    P.add_normal(pfx + ".mlp.w2", mlp_hidden, d, rng);
    P.add_zeros(pfx + ".mlp.b2", 1, d);
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

inline Tensor multi_head_attention(const ParamStore& P, const std::string& pfx, const Tensor& x,
                                   int heads) {
    const int d = x.cols;
    if (d % heads != 0) throw ConfigError("embed dim not divisible by head count");
    const int dh = d / heads;
    Tensor q = linear(x, P.at(pfx + ".attn.wq"), P.at(pfx + ".attn.bq"));
    Tensor k = linear(x, P.at(pfx + ".attn.wk"), P.at(pfx + ".attn.bk"));
    Tensor v = linear(x, P.at(pfx + ".attn.wv"), P.at(pfx + ".attn.bv"));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh));
        head_outs.push_back(matmul(attn, vh));
    }
    Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return linear(merged, P.at(pfx + ".attn.wo"), P.at(pfx + ".attn.bo"));
}

inline Tensor transformer_block(const ParamStore& P, const std::string& pfx, Tensor x, int heads) {
    Tensor normed = layer_norm(x, P.at(pfx + ".ln1.g"), P.at(pfx + ".ln1.b"));
    x = add(x, multi_head_attention(P, pfx, normed, heads));
    Tensor normed2 = layer_norm(x, P.at(pfx + ".ln2.g"), P.at(pfx + ".ln2.b"));
    Tensor h = gelu(linear(normed2, P.at(pfx + ".mlp.w1"), P.at(pfx + ".mlp.b1")));
    return add(x, linear(h, P.at(pfx + ".mlp.w2"), P.at(pfx + ".mlp.b2")));
}

} // namespace viewco
