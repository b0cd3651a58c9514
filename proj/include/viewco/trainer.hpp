#pragma once

// Siamese training loop: the student updates by Adam with decoupled weight
// decay under a warmup+cosine schedule, the teacher tracks it by exponential
// moving average and never receives gradients.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "viewco/config.hpp"
#include "viewco/group_encoder.hpp"
#include "viewco/losses.hpp"
#include "viewco/synth.hpp"
#include "viewco/tensor_io.hpp"
#include "viewco/text_encoder.hpp"

namespace viewco {

// ---------------------------------------------------------------------------
// model container

struct ViewCoModel {
    ParamStore P;
    EncoderConfig enc;
    TextConfig txt;
    int d_embed = 0;
    Vocab vocab;
    PromptSet prompts;

    static constexpr const char* kStudent = "student/enc";
    static constexpr const char* kTeacher = "teacher/enc";
    static constexpr const char* kText = "text/enc";

    Temperature temperature() const { return Temperature::wrap(P.at("misc/log_tau")); }

    ProjectionHead vision_head() const { return ProjectionHead{"head_v"}; }
    ProjectionHead text_head() const { return ProjectionHead{"head_t"}; }

    EncodeResult encode_view(const Image& im, bool teacher, AssignMode mode) const {
        return encode(im, P, teacher ? kTeacher : kStudent, enc, mode);
    }

    // raw segment tokens -> pooled, projected, l2-normalized view embedding
    Tensor view_embedding(const Tensor& segment_tokens) const {
        return project_view(segment_tokens, P, vision_head());
    }

    // caption/prompt string -> l2-normalized text embedding (1 x d_embed)
    Tensor text_embedding(const std::string& text) const {
        std::vector<int> ids = tokenize(text, vocab, txt.max_len);
        return l2_normalize(text_head().apply(P, text_hidden(ids, P, kText, txt)));
    }
};

inline ViewCoModel init_model(const EncoderConfig& enc, const TextConfig& txt, int d_embed,
                              Vocab vocab, PromptSet prompts, double tau_init, uint64_t seed) {
    ViewCoModel m;
    m.enc = enc;
    m.txt = txt;
    m.d_embed = d_embed;
    m.vocab = std::move(vocab);
    m.prompts = std::move(prompts);
    Rng rng(derive_seed(seed, 0x91de));
    register_group_encoder(m.P, ViewCoModel::kStudent, enc, rng);
    register_text_encoder(m.P, ViewCoModel::kText, txt, rng);
    ProjectionHead::register_params(m.P, "head_v", enc.embed_dim, d_embed, rng);
    ProjectionHead::register_params(m.P, "head_t", txt.width, d_embed, rng);
    m.P.add(std::string("misc/log_tau"), Tensor::scalar(std::log(tau_init), true));
    // teacher starts as an exact copy of the student
    m.P.clone_subtree(ViewCoModel::kStudent, ViewCoModel::kTeacher, false);
    return m;
}

// ---------------------------------------------------------------------------
// schedule and optimizer

// linear warmup to base_lr, then cosine decay to zero at total_steps
inline double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
    if (step < 0 || step > total_steps) throw ConfigError("cosine_lr: step out of range");
    if (warmup_steps >= total_steps && total_steps > 0)
        throw ConfigError("cosine_lr: warmup must be shorter than the run");
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
    if (total_steps == warmup_steps) return base_lr;
    double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    int64_t t = 0;

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
};

// weight decay skips the temperature, biases, and normalization gains
inline bool decay_exempt(const std::string& name) {
    if (name == "misc/log_tau") return true;
    size_t dot = name.find_last_of('.');
    std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return leaf == "g" || (leaf.size() <= 2 && leaf[0] == 'b');
}

inline std::vector<std::string> trainable_names(const ParamStore& P) {
    std::vector<std::string> names;
    for (const auto& [name, t] : P.all())
        if (t.requires_grad) names.push_back(name);
    return names;
}

// global-norm gradient clip, then Adam with decoupled weight decay
inline void adam_update(ParamStore& P, AdamState& opt, double lr, double weight_decay,
                        double grad_clip) {
    std::vector<std::string> names = trainable_names(P);
    double sq = 0.0;
    for (const auto& name : names) {
        Tensor& p = P.at(name);
        if (!p.grad) continue;
        for (double g : *p.grad) sq += g * g;
    }
    double norm = std::sqrt(sq);
    double clip_scale = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;

    opt.t += 1;
    double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(opt.t));
    double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(opt.t));
    for (const auto& name : names) {
        Tensor& p = P.at(name);
        p.ensure_grad();
        auto& m = opt.m[name];
        auto& v = opt.v[name];
        if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
        if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
        const bool decay = weight_decay > 0.0 && !decay_exempt(name);
        for (size_t i = 0; i < p.numel(); ++i) {
            double g = (*p.grad)[i] * clip_scale;
            m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g;
            v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            double x = (*p.data)[i];
            double step = lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
            if (decay) step += lr * weight_decay * x;
            (*p.data)[i] = x - step;
        }
    }
}

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise; the delta
// form keeps teacher == student an exact fixed point
inline void ema_update(ParamStore& P, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("ema_update: alpha must be in [0,1)");
    for (const auto& name : P.names_with_prefix(ViewCoModel::kTeacher)) {
        std::string student_name =
            ViewCoModel::kStudent + name.substr(std::string(ViewCoModel::kTeacher).size());
        if (!P.has(student_name))
            throw CheckpointMismatch("teacher parameter without student twin: " + name);
        Tensor& t = P.at(name);
        const Tensor& s = P.at(student_name);
        if (t.rows != s.rows || t.cols != s.cols)
            throw CheckpointMismatch("teacher/student shape mismatch at " + name);
        for (size_t i = 0; i < t.numel(); ++i)
            (*t.data)[i] += (1.0 - alpha) * ((*s.data)[i] - (*t.data)[i]);
    }
}

// ---------------------------------------------------------------------------
// checkpoints (numerics tensor container plus optimizer state and metadata)

inline void save_checkpoint(const ViewCoModel& model, const AdamState& opt, int64_t step,
                            const std::string& config_text, const std::string& path) {
    std::vector<TensorEntry> entries;
    for (const auto& [name, t] : model.P.all()) {
        TensorEntry e;
        e.name = name;
        e.dims = {static_cast<uint32_t>(t.rows), static_cast<uint32_t>(t.cols)};
        e.dtype = Dtype::f64;
        e.values = *t.data;
        entries.push_back(std::move(e));
    }
    for (const auto& [name, m] : opt.m)
        entries.push_back({"opt/m/" + name, {static_cast<uint32_t>(m.size())}, Dtype::f64, m});
    for (const auto& [name, v] : opt.v)
        entries.push_back({"opt/v/" + name, {static_cast<uint32_t>(v.size())}, Dtype::f64, v});
    entries.push_back({"meta/step", {1}, Dtype::f64, {static_cast<double>(step)}});
    entries.push_back({"meta/adam_t", {1}, Dtype::f64, {static_cast<double>(opt.t)}});
    std::vector<double> cfg_bytes(config_text.begin(), config_text.end());
    entries.push_back(
        {"meta/config_text", {static_cast<uint32_t>(cfg_bytes.size())}, Dtype::f64, cfg_bytes});
    write_tensor_file(path, entries);
    model.vocab.save(path + ".vocab.tsv");
}

struct LoadedCheckpoint {
    RunConfig config;
    ViewCoModel model;
    AdamState opt;
    int64_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::vector<TensorEntry> entries = read_tensor_file(path);
    std::map<std::string, const TensorEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;

    auto need = [&](const std::string& name) -> const TensorEntry& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointMismatch("checkpoint missing tensor " + name);
        return *it->second;
    };

    const TensorEntry& cfg_entry = need("meta/config_text");
    std::string config_text;
    for (double b : cfg_entry.values) config_text.push_back(static_cast<char>(b));

    LoadedCheckpoint out;
    out.config = RunConfig::parse_text(config_text);
    Vocab vocab = Vocab::load(path + ".vocab.tsv");
    TextConfig tcfg = out.config.text_config(vocab.size());
    out.model = init_model(out.config.encoder_config(), tcfg, out.config.d_embed, std::move(vocab),
                           out.config.prompt_set(), out.config.tau_init, out.config.seed);

    for (auto& [name, t] : out.model.P.all()) {
        const TensorEntry& e = need(name);
        if (e.values.size() != t.numel())
            throw CheckpointMismatch("shape mismatch for " + name + " (config/checkpoint disagree)");
        *t.data = e.values;
    }
    for (const auto& e : entries) {
        if (e.name.rfind("opt/m/", 0) == 0) out.opt.m[e.name.substr(6)] = e.values;
        else if (e.name.rfind("opt/v/", 0) == 0) out.opt.v[e.name.substr(6)] = e.values;
    }
    out.step = static_cast<int64_t>(need("meta/step").values.at(0));
    out.opt.t = static_cast<int64_t>(need("meta/adam_t").values.at(0));
    return out;
}

// ---------------------------------------------------------------------------
// training

struct TrainItem {
    Image image;
    std::string caption;
};

struct TrainState {
    RunConfig cfg;
    ViewCoModel model;
    AdamState opt;
    DatasetIndex data;
    int64_t step = 0;
    int64_t total_steps = 0;
    int64_t warmup_steps = 0;
    std::string metrics; // accumulated log text
};

namespace detail {

inline AssignMode student_mode(const RunConfig& cfg, int64_t step) {
    if (cfg.hard_assign_from_step < 0) return AssignMode::soft;
    return step >= cfg.hard_assign_from_step ? AssignMode::hard : AssignMode::soft;
}

inline AssignMode teacher_mode(const RunConfig& cfg, AssignMode student) {
    if (cfg.teacher_assign == "soft") return AssignMode::soft;
    if (cfg.teacher_assign == "hard") return AssignMode::hard;
    return student;
}

} // namespace detail

// Forward one batch through both networks, apply the total objective, update
// the student by Adam and the teacher by EMA.
inline LossBreakdown train_step(TrainState& st, const std::vector<TrainItem>& batch,
                                uint64_t batch_seed) {
    ViewCoModel& model = st.model;
    const RunConfig& cfg = st.cfg;
    const int b = static_cast<int>(batch.size());
    AssignMode s_mode = detail::student_mode(cfg, st.step);
    AssignMode t_mode = detail::teacher_mode(cfg, s_mode);
    Temperature temp = model.temperature();
    AugConfig aug = cfg.aug_config();

    model.P.zero_grads();

    std::vector<Tensor> ut, vt, us, vs;        // normalized segment tokens
    std::vector<Tensor> z_iu_rows, z_iv_rows;  // projected view embeddings
    std::vector<Tensor> z_t_rows;              // caption embeddings
    std::vector<Tensor> prompt_rows;           // B*M prompt embeddings
    std::map<std::string, Tensor> text_cache;  // dedupe identical strings

    auto cached_text = [&](const std::string& s) {
        auto it = text_cache.find(s);
        if (it != text_cache.end()) return it->second;
        Tensor e = model.text_embedding(s);
        text_cache.emplace(s, e);
        return e;
    };

    const int m_prompts = model.prompts.count();
    for (int i = 0; i < b; ++i) {
        ViewPair pair = augment_two_views(batch[i].image, derive_seed(batch_seed, i), aug);
        EncodeResult su = model.encode_view(pair.view_u, false, s_mode);
        EncodeResult sv = model.encode_view(pair.view_v, false, s_mode);
        us.push_back(l2_normalize(su.segments.features));
        vs.push_back(l2_normalize(sv.segments.features));
        {
            NoGradGuard ng;
            EncodeResult tu = model.encode_view(pair.view_u, true, t_mode);
            EncodeResult tv = model.encode_view(pair.view_v, true, t_mode);
            ut.push_back(l2_normalize(tu.segments.features));
            vt.push_back(l2_normalize(tv.segments.features));
        }
        z_iu_rows.push_back(model.view_embedding(su.segments.features));
        z_iv_rows.push_back(model.view_embedding(sv.segments.features));
        z_t_rows.push_back(cached_text(batch[i].caption));
        std::string cls = extract_class_word(batch[i].caption, st.data.classes);
        for (const std::string& prompt : generate_prompts(cls, model.prompts))
            prompt_rows.push_back(cached_text(prompt));
    }

    Tensor z_iu = stack_rows(z_iu_rows);
    Tensor z_iv = stack_rows(z_iv_rows);
    Tensor z_t = stack_rows(z_t_rows);

    Tensor seg = seg_consistency_loss(ut, vt, us, vs, temp);
    Tensor tv_loss, ml_loss;
    if (cfg.text_contrast == "single") {
        // ablation: one-to-one contrast against the renormalized mean of the
        // two view embeddings; no prompt loss
        Tensor z_avg = l2_normalize(scale(add(z_iu, z_iv), 0.5));
        Tensor v2t = sum(nce_diagonal_rows(z_avg, z_t, temp));
        Tensor t2v = sum(nce_diagonal_rows(z_t, z_avg, temp));
        tv_loss = scale(add(v2t, t2v), 1.0 / b);
        ml_loss = Tensor::scalar(0.0);
    } else {
        tv_loss = text_views_loss(z_iu, z_iv, z_t, temp);
        ml_loss = multilabel_prompt_loss(z_iu, z_iv, stack_rows(prompt_rows), m_prompts, temp);
    }
    TotalLoss total = total_loss(seg, tv_loss, ml_loss);
    if (!std::isfinite(total.breakdown.total))
        throw NonFiniteObjective("train_step: loss is not finite");

    backward(total.tensor);

    double lr = cosine_lr(st.step, st.total_steps, st.warmup_steps, cfg.base_lr);
    adam_update(model.P, st.opt, lr, cfg.weight_decay, cfg.grad_clip);
    temp.clamp();
    ema_update(model.P, cfg.ema_alpha);
    st.step += 1;

    char line[192];
    std::snprintf(line, sizeof(line), "%" PRId64 "\t%.9f\t%.9f\t%.9f\t%.9f\t%.9f\n", st.step - 1,
                  lr, total.breakdown.seg_consistency, total.breakdown.text_views,
                  total.breakdown.multilabel, total.breakdown.total);
    st.metrics += line;
    return total.breakdown;
}

inline TrainState init_training(const RunConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.cfg = cfg;
    st.data = load_dataset(cfg.dataset);

    std::vector<std::string> vocab_texts;
    for (const auto& r : st.data.pairs) vocab_texts.push_back(read_caption(st.data, r));
    PromptSet prompts = cfg.prompt_set();
    for (std::string t : prompts.templates) {
        t.replace(t.find("{}"), 2, "");
        vocab_texts.push_back(t);
    }
    Vocab vocab = Vocab::build(vocab_texts);

    TextConfig tcfg = cfg.text_config(vocab.size());
    st.model = init_model(cfg.encoder_config(), tcfg, cfg.d_embed, std::move(vocab),
                          std::move(prompts), cfg.tau_init, cfg.seed);
    int64_t steps_per_epoch = st.data.pairs.empty()
                                  ? 0
                                  : static_cast<int64_t>(st.data.pairs.size()) / cfg.batch_size;
    st.total_steps = steps_per_epoch * cfg.epochs;
    st.warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    return st;
}

inline TrainItem load_train_item(const DatasetIndex& data, const PairRecord& rec) {
    return TrainItem{read_ppm(data.image_path(rec)), read_caption(data, rec)};
}

inline void write_metrics(const TrainState& st) {
    if (st.cfg.metrics.empty()) return;
    std::filesystem::path p(st.cfg.metrics);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = st.cfg.metrics + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw FormatError("cannot open " + tmp);
    std::fwrite(st.metrics.data(), 1, st.metrics.size(), fp);
    std::fclose(fp);
    std::filesystem::rename(tmp, st.cfg.metrics);
}

inline void checkpoint_now(const TrainState& st) {
    std::filesystem::path p(st.cfg.checkpoint);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    save_checkpoint(st.model, st.opt, st.step, st.cfg.dump(), st.cfg.checkpoint);
}

// Full training run. On a non-finite objective the last written checkpoint is
// left in place and the error propagates.
inline TrainState fit(const RunConfig& cfg) {
    TrainState st = init_training(cfg);
    const int64_t steps_per_epoch =
        st.data.pairs.empty() ? 0 : static_cast<int64_t>(st.data.pairs.size()) / cfg.batch_size;

    checkpoint_now(st); // step-0 state; epochs=0 leaves exactly the initialization
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(st.data.pairs.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5f1e, static_cast<uint64_t>(epoch)));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

        for (int64_t bstep = 0; bstep < steps_per_epoch; ++bstep) {
            std::vector<TrainItem> batch;
            batch.reserve(cfg.batch_size);
            for (int j = 0; j < cfg.batch_size; ++j)
                batch.push_back(load_train_item(st.data, st.data.pairs[order[bstep * cfg.batch_size + j]]));
            uint64_t batch_seed = derive_seed(cfg.seed, 0xba7c4, static_cast<uint64_t>(epoch),
                                              static_cast<uint64_t>(bstep));
            train_step(st, batch, batch_seed);
            if (cfg.eval_interval > 0 && st.step % cfg.eval_interval == 0) {
                checkpoint_now(st);
                write_metrics(st);
            }
        }
    }
    checkpoint_now(st);
    write_metrics(st);
    return st;
}

} // namespace viewco
