#pragma once

// Flat "key = value" run configuration. Parsing validates every key against
// the schema below and rejects unknown ones; dump() writes the canonical
// form, which is also the config snapshot stored in checkpoints.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "viewco/errors.hpp"
#include "viewco/group_encoder.hpp"
#include "viewco/synth.hpp"
#include "viewco/text.hpp"
#include "viewco/text_encoder.hpp"

namespace viewco {

struct RunConfig {
    // run
    uint64_t seed = 0;
    std::string dataset = "data/toy";
    std::string checkpoint = "checkpoint.vwct";
    std::string metrics = "metrics.tsv";

    // optimization
    int epochs = 5;
    int warmup_epochs = 1;
    int batch_size = 16;
    double base_lr = 1e-3;
    double weight_decay = 0.05;
    double ema_alpha = 0.99;
    double tau_init = 0.07;
    double grad_clip = 5.0;
    int eval_interval = 0; // checkpoint every N steps; 0 = only at the end

    // vision encoder
    int image_size = 32;
    int patch_size = 8;
    int embed_dim = 32;
    int heads = 4;
    std::vector<int> depth_per_stage = {1, 1};
    std::vector<int> group_tokens = {8, 4};
    int mlp_ratio = 4;
    int hard_assign_from_step = 0;    // -1 = always soft
    std::string teacher_assign = "same"; // same | soft | hard

    // text encoder
    int text_layers = 2;
    int text_width = 32;
    int text_heads = 4;
    int text_max_len = 12;

    // shared embedding space and objectives
    int d_embed = 32;
    std::string prompt_templates = "a photo of a {}.|a picture of a {}.|an image of a {}.";
    std::string text_contrast = "views"; // views | single (ablation)
    bool per_loss_tau = false;

    // augmentation
    double crop_scale_min = 0.5;
    double crop_scale_max = 1.0;
    double flip_prob = 0.5;
    bool rotations = true;
    double min_overlap = 0.4;

    // inference
    double threshold = 0.95;
    int eval_size = 0; // 0 = encoder image_size
    bool use_trained_tau = true;

    static RunConfig toy() { return RunConfig{}; }

    static RunConfig paper() {
        RunConfig c;
        c.batch_size = 4096;
        c.base_lr = 0.0016;
        c.epochs = 30;
        c.warmup_epochs = 5;
        c.image_size = 224;
        c.patch_size = 16;
        c.embed_dim = 384;
        c.heads = 6;
        c.depth_per_stage = {6, 6};
        c.group_tokens = {64, 8};
        c.text_layers = 12;
        c.text_width = 256;
        c.text_max_len = 32;
        c.d_embed = 256;
        c.eval_size = 448;
        return c;
    }

    EncoderConfig encoder_config() const {
        EncoderConfig e;
        e.image_size = image_size;
        e.patch_size = patch_size;
        e.embed_dim = embed_dim;
        e.heads = heads;
        e.depth_per_stage = depth_per_stage;
        e.group_token_counts = group_tokens;
        e.mlp_ratio = mlp_ratio;
        e.validate();
        return e;
    }

    TextConfig text_config(int vocab_size) const {
        TextConfig t;
        t.vocab_size = vocab_size;
        t.width = text_width;
        t.layers = text_layers;
        t.heads = text_heads;
        t.max_len = text_max_len;
        t.validate();
        return t;
    }

    PromptSet prompt_set() const {
        PromptSet p;
        std::istringstream is(prompt_templates);
        std::string t;
        while (std::getline(is, t, '|'))
            if (!t.empty()) p.templates.push_back(t);
        p.validate();
        return p;
    }

    AugConfig aug_config() const {
        AugConfig a;
        a.crop_scale_min = crop_scale_min;
        a.crop_scale_max = crop_scale_max;
        a.flip_prob = flip_prob;
        a.rotations = rotations;
        a.min_overlap = min_overlap;
        a.view_size = image_size;
        return a;
    }

    void validate() const {
        if (!(ema_alpha >= 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must be in [0,1)");
        if (epochs > 0 && warmup_epochs >= epochs)
            throw ConfigError("warmup_epochs must be < epochs");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (!(tau_init > 0.0)) throw ConfigError("tau_init must be positive");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
        if (teacher_assign != "same" && teacher_assign != "soft" && teacher_assign != "hard")
            throw ConfigError("teacher_assign must be same|soft|hard");
        if (text_contrast != "views" && text_contrast != "single")
            throw ConfigError("text_contrast must be views|single");
        if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
            throw ConfigError("crop scale range invalid");
        encoder_config();
        prompt_set();
    }

    std::string dump() const;
    static RunConfig parse_text(const std::string& text);
    static RunConfig parse_file(const std::string& path);
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty list element");
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(key + ": bad integer '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, int>) return std::stoi(s);
        else if constexpr (std::is_same_v<T, uint64_t>) return std::stoull(s);
        else return std::stod(s);
    } catch (const std::exception&) {
        throw ConfigError(key + ": bad value '" + s + "'");
    }
}

// shortest representation that parses back to the same double
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline std::string RunConfig::dump() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "dataset = " << dataset << "\n";
    os << "checkpoint = " << checkpoint << "\n";
    os << "metrics = " << metrics << "\n";
    os << "epochs = " << epochs << "\n";
    os << "warmup_epochs = " << warmup_epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "base_lr = " << detail::format_double(base_lr) << "\n";
    os << "weight_decay = " << detail::format_double(weight_decay) << "\n";
    os << "ema_alpha = " << detail::format_double(ema_alpha) << "\n";
    os << "tau_init = " << detail::format_double(tau_init) << "\n";
    os << "grad_clip = " << detail::format_double(grad_clip) << "\n";
    os << "eval_interval = " << eval_interval << "\n";
    os << "image_size = " << image_size << "\n";
    os << "patch_size = " << patch_size << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "heads = " << heads << "\n";
    os << "depth_per_stage = " << detail::join_ints(depth_per_stage) << "\n";
    os << "group_tokens = " << detail::join_ints(group_tokens) << "\n";
    os << "mlp_ratio = " << mlp_ratio << "\n";
    os << "hard_assign_from_step = " << hard_assign_from_step << "\n";
    os << "teacher_assign = " << teacher_assign << "\n";
    os << "text_layers = " << text_layers << "\n";
    os << "text_width = " << text_width << "\n";
    os << "text_heads = " << text_heads << "\n";
    os << "text_max_len = " << text_max_len << "\n";
    os << "d_embed = " << d_embed << "\n";
    os << "prompt_templates = " << prompt_templates << "\n";
    os << "text_contrast = " << text_contrast << "\n";
    os << "per_loss_tau = " << (per_loss_tau ? "true" : "false") << "\n";
    os << "crop_scale_min = " << detail::format_double(crop_scale_min) << "\n";
    os << "crop_scale_max = " << detail::format_double(crop_scale_max) << "\n";
    os << "flip_prob = " << detail::format_double(flip_prob) << "\n";
    os << "rotations = " << (rotations ? "true" : "false") << "\n";
    os << "min_overlap = " << detail::format_double(min_overlap) << "\n";
    os << "threshold = " << detail::format_double(threshold) << "\n";
    os << "eval_size = " << eval_size << "\n";
    os << "use_trained_tau = " << (use_trained_tau ? "true" : "false") << "\n";
    return os.str();
}

inline RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));

        if (key == "seed") c.seed = detail::parse_number<uint64_t>(val, key);
        else if (key == "dataset") c.dataset = val;
        else if (key == "checkpoint") c.checkpoint = val;
        else if (key == "metrics") c.metrics = val;
        else if (key == "epochs") c.epochs = detail::parse_number<int>(val, key);
        else if (key == "warmup_epochs") c.warmup_epochs = detail::parse_number<int>(val, key);
        else if (key == "batch_size") c.batch_size = detail::parse_number<int>(val, key);
        else if (key == "base_lr") c.base_lr = detail::parse_number<double>(val, key);
        else if (key == "weight_decay") c.weight_decay = detail::parse_number<double>(val, key);
        else if (key == "ema_alpha") c.ema_alpha = detail::parse_number<double>(val, key);
        else if (key == "tau_init") c.tau_init = detail::parse_number<double>(val, key);
        else if (key == "grad_clip") c.grad_clip = detail::parse_number<double>(val, key);
        else if (key == "eval_interval") c.eval_interval = detail::parse_number<int>(val, key);
        else if (key == "image_size") c.image_size = detail::parse_number<int>(val, key);
        else if (key == "patch_size") c.patch_size = detail::parse_number<int>(val, key);
        else if (key == "embed_dim") c.embed_dim = detail::parse_number<int>(val, key);
        else if (key == "heads") c.heads = detail::parse_number<int>(val, key);
        else if (key == "depth_per_stage") c.depth_per_stage = detail::parse_int_list(val, key);
        else if (key == "group_tokens") c.group_tokens = detail::parse_int_list(val, key);
        else if (key == "mlp_ratio") c.mlp_ratio = detail::parse_number<int>(val, key);
        else if (key == "hard_assign_from_step")
            c.hard_assign_from_step = detail::parse_number<int>(val, key);
        else if (key == "teacher_assign") c.teacher_assign = val;
        else if (key == "text_layers") c.text_layers = detail::parse_number<int>(val, key);
        else if (key == "text_width") c.text_width = detail::parse_number<int>(val, key);
        else if (key == "text_heads") c.text_heads = detail::parse_number<int>(val, key);
        else if (key == "text_max_len") c.text_max_len = detail::parse_number<int>(val, key);
        else if (key == "d_embed") c.d_embed = detail::parse_number<int>(val, key);
        else if (key == "prompt_templates") c.prompt_templates = val;
        else if (key == "text_contrast") c.text_contrast = val;
        else if (key == "per_loss_tau") c.per_loss_tau = detail::parse_bool(val, key);
        else if (key == "crop_scale_min") c.crop_scale_min = detail::parse_number<double>(val, key);
        else if (key == "crop_scale_max") c.crop_scale_max = detail::parse_number<double>(val, key);
        else if (key == "flip_prob") c.flip_prob = detail::parse_number<double>(val, key);
        else if (key == "rotations") c.rotations = detail::parse_bool(val, key);
        else if (key == "min_overlap") c.min_overlap = detail::parse_number<double>(val, key);
        else if (key == "threshold") c.threshold = detail::parse_number<double>(val, key);
        else if (key == "eval_size") c.eval_size = detail::parse_number<int>(val, key);
        else if (key == "use_trained_tau") c.use_trained_tau = detail::parse_bool(val, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_text(buf.str());
}

} // namespace viewco
