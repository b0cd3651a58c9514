#pragma once

// Transformer text encoder E_T: token + positional embeddings, full
// attention, EOS-position pooling, then a two-layer MLP head into the shared
// embedding space.

#include <string>
#include <vector>

#include "viewco/text.hpp"
#include "viewco/transformer.hpp"

namespace viewco {

struct TextConfig {
    int vocab_size = 0;
    int width = 256;
    int layers = 12;
    int heads = 4;
    int max_len = 16;
    int mlp_ratio = 4;

    void validate() const {
        if (vocab_size < 4) throw ConfigError("text vocab too small");
        if (width % heads != 0) throw ConfigError("text width must be divisible by heads");
        if (max_len < 3) throw ConfigError("text max_len must be >= 3");
    }

    static TextConfig paper(int vocab_size) {
        TextConfig c;
        c.vocab_size = vocab_size;
        return c;
    }

    static TextConfig toy(int vocab_size) {
        TextConfig c;
        c.vocab_size = vocab_size;
        c.width = 32;
        c.layers = 2;
        c.heads = 4;
        c.max_len = 12;
        return c;
    }
};

inline void register_text_encoder(ParamStore& P, const std::string& pfx, const TextConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    P.add_normal(pfx + ".embed", cfg.vocab_size, cfg.width, rng);
    P.add_normal(pfx + ".pos", cfg.max_len, cfg.width, rng);
    for (int l = 0; l < cfg.layers; ++l)
        register_transformer_block(P, pfx + ".layer" + std::to_string(l), cfg.width,
                                   cfg.width * cfg.mlp_ratio, rng);
}

// Hidden state at the EOS position (1 x width). Trailing PAD tokens are
// trimmed before attention, which implements the PAD masking contract
// exactly: appended padding cannot influence the output.
inline Tensor text_hidden(const std::vector<int>& ids, const ParamStore& P, const std::string& pfx,
                          const TextConfig& cfg) {
    int eos_pos = -1;
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == Vocab::EOS) {
            eos_pos = static_cast<int>(i);
            break;
        }
    if (eos_pos <= 0) throw EmptyText("text_hidden: sequence has no content before EOS");
    if (eos_pos >= cfg.max_len) throw ConfigError("text_hidden: sequence longer than max_len");
    for (int i = 0; i < eos_pos; ++i)
        if (ids[i] == Vocab::PAD) throw EmptyText("text_hidden: PAD before EOS");

    const Tensor& embed = P.at(pfx + ".embed");
    const Tensor& pos = P.at(pfx + ".pos");
    std::vector<Tensor> rows;
    rows.reserve(eos_pos + 1);
    for (int i = 0; i <= eos_pos; ++i) {
        if (ids[i] < 0 || ids[i] >= embed.rows) throw ConfigError("token id out of vocab range");
        rows.push_back(add(take_row(embed, ids[i]), take_row(pos, i)));
    }
    Tensor x = stack_rows(rows);
    for (int l = 0; l < cfg.layers; ++l)
        x = transformer_block(P, pfx + ".layer" + std::to_string(l), x, cfg.heads);
    return take_row(x, eos_pos);
}

} // namespace viewco
