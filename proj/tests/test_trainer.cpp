#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "viewco/trainer.hpp"

using namespace viewco;

namespace {

const std::vector<std::string> kClasses = {"circle", "square", "triangle"};

std::string make_dataset(const std::string& name, int size, uint64_t seed) {
    std::string root = testing::TempDir() + name;
    std::filesystem::remove_all(root);
    generate_dataset(root, size, seed, kClasses, 32);
    return root;
}

RunConfig small_config(const std::string& dataset, const std::string& tag) {
    RunConfig cfg = RunConfig::toy();
    cfg.dataset = dataset;
    cfg.checkpoint = testing::TempDir() + tag + ".vwct";
    cfg.metrics = testing::TempDir() + tag + ".metrics.tsv";
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 8;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

} // namespace

TEST(EmaUpdate, DirectFormula) {
    ParamStore P;
    P.add("student/enc.w", Tensor::scalar(0.0, true));
    P.add("teacher/enc.w", Tensor::scalar(1.0, false));
    ema_update(P, 0.9);
    EXPECT_DOUBLE_EQ(P.at("teacher/enc.w").value(), 0.9);
}

TEST(EmaUpdate, FixedPointWhenEqual) {
    ParamStore P;
    P.add("student/enc.w", Tensor::from(2, 2, {1, 2, 3, 4}, true));
    P.add("teacher/enc.w", Tensor::from(2, 2, {1, 2, 3, 4}, false));
    ema_update(P, 0.99);
    EXPECT_EQ(*P.at("teacher/enc.w").data, (std::vector<double>{1, 2, 3, 4}));
}

TEST(EmaUpdate, GeometricDecayClosedForm) {
    // constant student: ||teacher - student|| shrinks by alpha^n exactly
    Rng rng(5);
    ParamStore P;
    Tensor student = Tensor::randn(3, 4, rng, 1.0, true);
    Tensor teacher0 = Tensor::randn(3, 4, rng, 1.0, false);
    P.add("student/enc.w", student);
    P.add("teacher/enc.w", Tensor::from(3, 4, *teacher0.data, false));
    const double alpha = 0.99;
    const int n = 10;
    for (int i = 0; i < n; ++i) ema_update(P, alpha);
    double an = std::pow(alpha, n);
    const Tensor& teacher = P.at("teacher/enc.w");
    for (size_t i = 0; i < teacher.numel(); ++i) {
        double expect = an * (*teacher0.data)[i] + (1.0 - an) * (*student.data)[i];
        EXPECT_NEAR((*teacher.data)[i], expect, 1e-12);
    }
}

TEST(EmaUpdate, ShapeMismatchThrows) {
    ParamStore P;
    P.add("student/enc.w", Tensor::zeros(2, 2, true));
    P.add("teacher/enc.w", Tensor::zeros(2, 3, false));
    EXPECT_THROW(ema_update(P, 0.9), CheckpointMismatch);
}

TEST(CosineLr, ScheduleShape) {
    const double base = 0.5;
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 10, base), 0.0);
    EXPECT_DOUBLE_EQ(cosine_lr(10, 100, 10, base), base);         // ramp endpoint
    EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 10, base), 0.0);         // cosine endpoint
    EXPECT_NEAR(cosine_lr(55, 100, 10, base), base / 2.0, 1e-12); // post-warmup midpoint
    EXPECT_DOUBLE_EQ(cosine_lr(5, 100, 10, base), base * 0.5);    // linear ramp
    EXPECT_THROW(cosine_lr(101, 100, 10, base), ConfigError);
}

TEST(Adam, MatchesScalarOracleFor20Steps) {
    // single-parameter quadratic f(w) = (w - 3)^2, grad = 2(w - 3)
    ParamStore P;
    P.add("student/enc.w", Tensor::scalar(0.0, true));
    AdamState opt;
    const double lr = 0.1, wd = 0.05;

    double w = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 20; ++t) {
        Tensor& p = P.at("student/enc.w");
        p.zero_grad();
        (*p.grad)[0] = 2.0 * ((*p.data)[0] - 3.0);
        adam_update(P, opt, lr, wd, 0.0);

        double g = 2.0 * (w - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        double mhat = m / (1.0 - std::pow(0.9, t));
        double vhat = v / (1.0 - std::pow(0.999, t));
        w = w - lr * mhat / (std::sqrt(vhat) + 1e-8) - lr * wd * w;

        EXPECT_NEAR((*p.data)[0], w, 1e-10) << "step " << t;
    }
}

TEST(Adam, WeightDecayExemptions) {
    EXPECT_TRUE(decay_exempt("misc/log_tau"));
    EXPECT_TRUE(decay_exempt("student/enc.stage0.layer0.ln1.g"));
    EXPECT_TRUE(decay_exempt("student/enc.patch.b"));
    EXPECT_TRUE(decay_exempt("student/enc.stage0.layer0.attn.bq"));
    EXPECT_TRUE(decay_exempt("head_v.b1"));
    EXPECT_FALSE(decay_exempt("student/enc.patch.w"));
    EXPECT_FALSE(decay_exempt("student/enc.pos"));
    EXPECT_FALSE(decay_exempt("text/enc.embed"));
    EXPECT_FALSE(decay_exempt("student/enc.stage0.group.tokens"));

    // zero gradients: only decayed parameters move
    ParamStore P;
    P.add("student/enc.w", Tensor::scalar(2.0, true));
    P.add("student/enc.patch.b", Tensor::scalar(2.0, true));
    P.add("misc/log_tau", Tensor::scalar(-1.0, true));
    for (auto& [name, t] : P.all()) {
        t.ensure_grad();
        t.zero_grad();
    }
    AdamState opt;
    adam_update(P, opt, 0.1, 0.5, 0.0);
    EXPECT_LT(P.at("student/enc.w").value(), 2.0);
    EXPECT_DOUBLE_EQ(P.at("student/enc.patch.b").value(), 2.0);
    EXPECT_DOUBLE_EQ(P.at("misc/log_tau").value(), -1.0);
}

TEST(TrainStep, DeterministicLossSequences) {
    std::string ds = make_dataset("tr_det", 16, 3);
    RunConfig cfg = small_config(ds, "tr_det");
    std::vector<LossBreakdown> first, second;
    for (int run = 0; run < 2; ++run) {
        TrainState st = init_training(cfg);
        std::vector<TrainItem> batch;
        for (int i = 0; i < cfg.batch_size; ++i)
            batch.push_back(load_train_item(st.data, st.data.pairs[i]));
        auto& dst = run == 0 ? first : second;
        for (int s = 0; s < 3; ++s) dst.push_back(train_step(st, batch, derive_seed(9, s)));
    }
    for (int s = 0; s < 3; ++s) {
        EXPECT_EQ(first[s].total, second[s].total);
        EXPECT_EQ(first[s].seg_consistency, second[s].seg_consistency);
        EXPECT_EQ(first[s].text_views, second[s].text_views);
        EXPECT_EQ(first[s].multilabel, second[s].multilabel);
    }
}

TEST(TrainStep, ZeroLearningRateFreezesStudent) {
    std::string ds = make_dataset("tr_zero", 16, 4);
    RunConfig cfg = small_config(ds, "tr_zero");
    cfg.base_lr = 0.0;
    TrainState st = init_training(cfg);
    std::vector<TrainItem> batch;
    for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(load_train_item(st.data, st.data.pairs[i]));

    std::map<std::string, std::vector<double>> before;
    for (const auto& [name, t] : st.model.P.all()) before[name] = *t.data;
    LossBreakdown l1 = train_step(st, batch, 77);
    for (const auto& [name, t] : st.model.P.all()) {
        // teacher starts equal to the student, so EMA leaves it unchanged too
        EXPECT_EQ(*t.data, before[name]) << name;
    }
    st.step = 0; // replay the same schedule position
    LossBreakdown l2 = train_step(st, batch, 77);
    EXPECT_EQ(l1.total, l2.total);
}

TEST(TrainStep, TeacherNeverReceivesGradients) {
    std::string ds = make_dataset("tr_teach", 16, 5);
    RunConfig cfg = small_config(ds, "tr_teach");
    TrainState st = init_training(cfg);
    std::vector<TrainItem> batch;
    for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(load_train_item(st.data, st.data.pairs[i]));
    train_step(st, batch, 11);
    for (const auto& name : st.model.P.names_with_prefix("teacher/")) {
        const Tensor& t = st.model.P.at(name);
        EXPECT_FALSE(t.requires_grad);
        if (t.grad)
            for (double g : *t.grad) EXPECT_DOUBLE_EQ(g, 0.0);
    }
}

TEST(TrainStep, TeacherStaysInsideStudentEnvelope) {
    // teacher weights are convex combinations of their init and the running
    // student trajectory
    std::string ds = make_dataset("tr_env", 16, 6);
    RunConfig cfg = small_config(ds, "tr_env");
    cfg.ema_alpha = 0.9;
    TrainState st = init_training(cfg);
    std::vector<TrainItem> batch;
    for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(load_train_item(st.data, st.data.pairs[i]));

    std::map<std::string, std::vector<double>> lo, hi;
    for (const auto& name : st.model.P.names_with_prefix("teacher/")) {
        lo[name] = *st.model.P.at(name).data;
        hi[name] = *st.model.P.at(name).data;
    }
    for (int s = 0; s < 4; ++s) {
        train_step(st, batch, derive_seed(21, s));
        for (auto& [tname, lov] : lo) {
            std::string sname = std::string(ViewCoModel::kStudent) +
                                tname.substr(std::string(ViewCoModel::kTeacher).size());
            const Tensor& sv = st.model.P.at(sname);
            auto& hiv = hi[tname];
            for (size_t i = 0; i < sv.numel(); ++i) {
                lov[i] = std::min(lov[i], (*sv.data)[i]);
                hiv[i] = std::max(hiv[i], (*sv.data)[i]);
            }
            const Tensor& tv = st.model.P.at(tname);
            for (size_t i = 0; i < tv.numel(); ++i) {
                EXPECT_GE((*tv.data)[i], lov[i] - 1e-12) << tname;
                EXPECT_LE((*tv.data)[i], hiv[i] + 1e-12) << tname;
            }
        }
    }
}

TEST(Fit, ZeroEpochsWritesInitialization) {
    std::string ds = make_dataset("fit_zero", 8, 7);
    RunConfig cfg = small_config(ds, "fit_zero");
    cfg.epochs = 0;
    cfg.warmup_epochs = 0;
    TrainState st = fit(cfg);
    EXPECT_EQ(st.step, 0);
    LoadedCheckpoint back = load_checkpoint(cfg.checkpoint);
    EXPECT_EQ(back.step, 0);
    // teacher equals the student copy at init
    for (const auto& name : back.model.P.names_with_prefix("teacher/")) {
        std::string sname = std::string(ViewCoModel::kStudent) +
                            name.substr(std::string(ViewCoModel::kTeacher).size());
        EXPECT_EQ(*back.model.P.at(name).data, *back.model.P.at(sname).data) << name;
    }
}

TEST(Fit, LossDecreasesOnSmallRun) {
    std::string ds = make_dataset("fit_desc", 32, 8);
    RunConfig cfg = small_config(ds, "fit_desc");
    cfg.epochs = 3;
    TrainState st = fit(cfg);
    ASSERT_GT(st.step, 0);
    // parse first and last totals from the metrics log
    std::istringstream is(st.metrics);
    std::string line, first_line, last_line;
    while (std::getline(is, line))
        if (!line.empty()) {
            if (first_line.empty()) first_line = line;
            last_line = line;
        }
    auto total_of = [](const std::string& l) {
        size_t pos = l.find_last_of('\t');
        return std::stod(l.substr(pos + 1));
    };
    EXPECT_LT(total_of(last_line), total_of(first_line));
}

TEST(Fit, DeterministicAcrossRuns) {
    std::string ds = make_dataset("fit_det", 16, 9);
    RunConfig cfg1 = small_config(ds, "fit_det_a");
    RunConfig cfg2 = small_config(ds, "fit_det_b");
    TrainState a = fit(cfg1);
    TrainState b = fit(cfg2);
    EXPECT_EQ(a.metrics, b.metrics);
    // checkpoints differ only in their embedded config text (paths); compare params
    LoadedCheckpoint ca = load_checkpoint(cfg1.checkpoint);
    LoadedCheckpoint cb = load_checkpoint(cfg2.checkpoint);
    for (const auto& [name, t] : ca.model.P.all())
        EXPECT_EQ(*t.data, *cb.model.P.at(name).data) << name;
}

TEST(Fit, SaveLoadSaveByteIdentical) {
    std::string ds = make_dataset("fit_rt", 16, 10);
    RunConfig cfg = small_config(ds, "fit_rt");
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    TrainState st = fit(cfg);
    std::string original = file_bytes(cfg.checkpoint);
    ASSERT_FALSE(original.empty());

    LoadedCheckpoint back = load_checkpoint(cfg.checkpoint);
    std::string resaved_path = cfg.checkpoint + ".resave";
    save_checkpoint(back.model, back.opt, back.step, back.config.dump(), resaved_path);
    EXPECT_EQ(file_bytes(resaved_path), original);
}

TEST(Fit, MissingDatasetThrows) {
    RunConfig cfg = small_config(testing::TempDir() + "no_such_ds", "fit_missing");
    EXPECT_THROW(fit(cfg), DatasetNotFound);
}

TEST(Checkpoint, MismatchedConfigRejected) {
    std::string ds = make_dataset("ck_mismatch", 8, 11);
    RunConfig cfg = small_config(ds, "ck_mismatch");
    cfg.epochs = 0;
    cfg.warmup_epochs = 0;
    fit(cfg);
    // corrupt: drop one tensor
    auto entries = read_tensor_file(cfg.checkpoint);
    std::vector<TensorEntry> pruned;
    for (const auto& e : entries)
        if (e.name != "student/enc.patch.w") pruned.push_back(e);
    write_tensor_file(cfg.checkpoint, pruned);
    EXPECT_THROW(load_checkpoint(cfg.checkpoint), CheckpointMismatch);
}

TEST(Checkpoint, NonFiniteLossAborts) {
    std::string ds = make_dataset("nf_abort", 16, 12);
    RunConfig cfg = small_config(ds, "nf_abort");
    TrainState st = init_training(cfg);
    (*st.model.P.at("student/enc.patch.w").data)[0] = 1e308; // drive activations to overflow
    std::vector<TrainItem> batch;
    for (int i = 0; i < cfg.batch_size; ++i)
        batch.push_back(load_train_item(st.data, st.data.pairs[i]));
    EXPECT_THROW(train_step(st, batch, 13), NonFiniteObjective);
}
