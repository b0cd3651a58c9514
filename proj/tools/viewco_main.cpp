// viewco command line: dataset generation, training, zero-shot evaluation,
// and gradient verification. Exit codes: 0 success, 1 runtime failure,
// 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "viewco/config.hpp"
#include "viewco/gradcheck_suite.hpp"
#include "viewco/segmenter.hpp"
#include "viewco/trainer.hpp"

namespace {

std::vector<std::string> split_classes(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_gen_data(const std::string& out_dir, int size, uint64_t seed, const std::string& classes) {
    viewco::generate_dataset(out_dir, size, seed, split_classes(classes), 32);
    std::printf("wrote %d pairs to %s\n", size, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path) {
    viewco::RunConfig cfg = viewco::RunConfig::parse_file(config_path);
    viewco::TrainState st = viewco::fit(cfg);
    std::printf("trained %lld steps; checkpoint at %s\n", static_cast<long long>(st.step),
                cfg.checkpoint.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, double threshold,
             bool consistency) {
    viewco::LoadedCheckpoint ck = viewco::load_checkpoint(checkpoint);
    viewco::DatasetIndex data = viewco::load_dataset(dataset);
    viewco::LabelSet labels{data.classes, threshold};
    labels.validate();
    double tau = ck.config.use_trained_tau ? ck.model.temperature().value() : 1.0;

    viewco::EvalOptions opts;
    opts.consistency = consistency;
    viewco::EvalSummary summary = viewco::evaluate_dataset(ck.model, data, labels, tau,
                                                           ck.config.eval_size, opts);

    // per-image prediction masks and metric rows
    std::filesystem::create_directories("eval_masks");
    viewco::Tensor label_embeddings = viewco::compute_label_embeddings(ck.model, labels);
    for (const auto& rec : data.pairs) {
        viewco::Image image = viewco::read_ppm(data.image_path(rec));
        viewco::Mask gt = viewco::read_pgm(data.mask_path(rec));
        viewco::SegmentationResult res = viewco::run_segmentation(
            image, ck.model, labels, label_embeddings, tau, ck.config.eval_size, gt.width, gt.height);
        viewco::write_pgm("eval_masks/" + rec.id + ".pgm", res.pixel_mask);
    }
    std::ofstream tsv("eval.tsv", std::ios::app | std::ios::binary);
    for (const auto& row : summary.rows) {
        char line[128];
        if (consistency)
            std::snprintf(line, sizeof(line), "%s\t%.4f\t%.4f\n", row.id.c_str(), row.miou,
                          row.consistency);
        else
            std::snprintf(line, sizeof(line), "%s\t%.4f\n", row.id.c_str(), row.miou);
        tsv << line;
    }
    tsv.close();

    if (consistency)
        std::printf("mIoU=%.4f consistency=%.4f\n", summary.miou, summary.consistency);
    else
        std::printf("mIoU=%.4f\n", summary.miou);
    return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& flip_sign) {
    std::vector<viewco::GradCheckReport> reports = viewco::run_gradcheck_suite(seed, flip_sign);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::printf("%-16s max_rel_error=%.3e %s\n", r.component.c_str(), r.max_rel_error,
                    r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-view consistent text-supervised segmentation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic image-caption corpus");
    std::string out_dir;
    int size = 0;
    uint64_t gen_seed = 0;
    std::string classes = "circle,square,triangle";
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--size", size, "number of image-caption pairs")->required();
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--classes", classes, "comma-separated class names");

    auto* train = app.add_subcommand("train", "train from a run config");
    std::string config_path;
    train->add_option("--config", config_path, "run config file")->required();

    auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
    std::string checkpoint, dataset;
    double threshold = 0.95;
    bool consistency = false;
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--dataset", dataset, "dataset directory")->required();
    eval->add_option("--threshold", threshold, "foreground probability threshold");
    eval->add_flag("--consistency", consistency, "also report cross-view consistency");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    uint64_t gc_seed = 0;
    std::string flip_sign;
    gradcheck->add_option("--seed", gc_seed, "randomization seed");
    gradcheck->add_option("--flip-sign", flip_sign,
                          "test fixture: negate the analytic gradient of one component");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(out_dir, size, gen_seed, classes);
        if (train->parsed()) return cmd_train(config_path);
        if (eval->parsed()) return cmd_eval(checkpoint, dataset, threshold, consistency);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, flip_sign);
    } catch (const viewco::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
