#pragma once

// Zero-shot inference: the teacher's patch-to-segment assignment gives the
// segmentation, segments are labeled by thresholded softmax-normalized
// similarity to prompt-ensembled class embeddings, and predictions render to
// pixel masks for mIoU and cross-view consistency evaluation.

#include <cmath>
#include <string>
#include <vector>

#include "viewco/synth.hpp"
#include "viewco/trainer.hpp"

namespace viewco {

struct LabelSet {
    std::vector<std::string> names; // foreground classes; background is id 0
    double threshold = 0.95;

    void validate() const {
        if (names.empty()) throw ConfigError("label set is empty");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
        for (size_t i = 0; i < names.size(); ++i)
            for (size_t j = i + 1; j < names.size(); ++j)
                if (names[i] == names[j]) throw ConfigError("duplicate class name " + names[i]);
    }
};

struct SegmentationResult {
    std::vector<int> patch_segments; // P entries in [0, K)
    std::vector<int> segment_classes; // K entries, 0 = background
    Mask pixel_mask;
    int patches_per_side = 0;
};

// argmax per row, ties toward the lowest index
inline std::vector<int> assignment_argmax(const Tensor& assignment) {
    std::vector<int> out(assignment.rows);
    for (int i = 0; i < assignment.rows; ++i) {
        int best = 0;
        for (int j = 1; j < assignment.cols; ++j)
            if (assignment.at(i, j) > assignment.at(i, best)) best = j;
        out[i] = best;
    }
    return out;
}

struct SegmentedImage {
    Tensor segment_tokens; // K x d, teacher features
    std::vector<int> patch_segments;
    int patches_per_side = 0;
};

// Teacher-side segmentation of one image. Inputs whose size differs from the
// target are resized so the shorter side matches, then center-cropped square.
inline SegmentedImage segment_image(const Image& image, const ViewCoModel& model, int eval_size) {
    NoGradGuard ng;
    const int target = eval_size > 0 ? eval_size : model.enc.image_size;
    Image prepared = (image.width == target && image.height == target)
                         ? image
                         : resize_shorter_side_square(image, target);
    EncodeResult enc = model.encode_view(prepared, true, AssignMode::hard);
    SegmentedImage out;
    out.segment_tokens = enc.segments.features;
    out.patch_segments = assignment_argmax(enc.assignment);
    out.patches_per_side = prepared.width / model.enc.patch_size;
    return out;
}

// prompt-ensembled class text embeddings: mean of the M prompt embeddings per
// class, l2-normalized again (C x d_embed)
inline Tensor compute_label_embeddings(const ViewCoModel& model, const LabelSet& labels) {
    NoGradGuard ng;
    labels.validate();
    std::vector<Tensor> rows;
    for (const auto& name : labels.names) {
        std::vector<Tensor> prompt_embeds;
        for (const auto& prompt : generate_prompts(name, model.prompts))
            prompt_embeds.push_back(model.text_embedding(prompt));
        rows.push_back(l2_normalize(mean_rows(stack_rows(prompt_embeds))));
    }
    return stack_rows(rows);
}

// shared kernel: softmax over classes per segment row; below-threshold rows
// fall back to background 0, ties break to the lower class index
inline std::vector<int> classify_from_logits(const Tensor& logits, double threshold) {
    Tensor probs = softmax_rows(logits);
    std::vector<int> out(logits.rows);
    for (int k = 0; k < probs.rows; ++k) {
        int best = 0;
        for (int c = 1; c < probs.cols; ++c)
            if (probs.at(k, c) > probs.at(k, best)) best = c;
        out[k] = probs.at(k, best) >= threshold ? best + 1 : 0;
    }
    return out;
}

inline std::vector<int> classify_segments(const Tensor& segment_tokens, const ViewCoModel& model,
                                          const LabelSet& labels, const Tensor& label_embeddings,
                                          double tau) {
    NoGradGuard ng;
    labels.validate();
    if (label_embeddings.rows != static_cast<int>(labels.names.size()))
        throw ShapeError("label embedding row count does not match label set");
    Tensor seg_embed = Tensor::zeros(segment_tokens.rows, model.d_embed);
    for (int k = 0; k < segment_tokens.rows; ++k) {
        Tensor row = l2_normalize(model.vision_head().apply(model.P, take_row(segment_tokens, k)));
        for (int j = 0; j < model.d_embed; ++j) seg_embed.at(k, j) = row.at(0, j);
    }
    Tensor logits = scale(matmul_nt(seg_embed, label_embeddings), 1.0 / tau);
    return classify_from_logits(logits, labels.threshold);
}

// every pixel inherits the class of its patch's segment (nearest neighbor)
inline Mask render_pixel_mask(const std::vector<int>& patch_segments,
                              const std::vector<int>& segment_classes, int patches_per_side,
                              int width, int height) {
    Mask out = Mask::blank(width, height);
    for (int y = 0; y < height; ++y) {
        int py = std::min(static_cast<int>(static_cast<int64_t>(y) * patches_per_side / height),
                          patches_per_side - 1);
        for (int x = 0; x < width; ++x) {
            int px = std::min(static_cast<int>(static_cast<int64_t>(x) * patches_per_side / width),
                              patches_per_side - 1);
            int seg = patch_segments[py * patches_per_side + px];
            out.at(x, y) = static_cast<uint8_t>(segment_classes[seg]);
        }
    }
    return out;
}

inline SegmentationResult run_segmentation(const Image& image, const ViewCoModel& model,
                                           const LabelSet& labels, const Tensor& label_embeddings,
                                           double tau, int eval_size, int out_w, int out_h) {
    SegmentedImage seg = segment_image(image, model, eval_size);
    SegmentationResult res;
    res.patch_segments = seg.patch_segments;
    res.patches_per_side = seg.patches_per_side;
    res.segment_classes = classify_segments(seg.segment_tokens, model, labels, label_embeddings, tau);
    res.pixel_mask = render_pixel_mask(res.patch_segments, res.segment_classes,
                                       seg.patches_per_side, out_w, out_h);
    return res;
}

// ---------------------------------------------------------------------------
// metrics

struct IouAccumulator {
    std::vector<int64_t> intersection;
    std::vector<int64_t> union_;
    std::vector<int64_t> pred_count;
    std::vector<int64_t> gt_count;

    explicit IouAccumulator(int num_classes)
        : intersection(num_classes, 0), union_(num_classes, 0), pred_count(num_classes, 0),
          gt_count(num_classes, 0) {}

    void add(uint8_t pred, uint8_t gt) {
        intersection[pred] += pred == gt;
        union_[pred] += 1;
        if (pred != gt) union_[gt] += 1;
        pred_count[pred] += 1;
        gt_count[gt] += 1;
    }

    // classes absent from both prediction and ground truth are excluded
    double mean() const {
        double acc = 0.0;
        int present = 0;
        for (size_t c = 0; c < union_.size(); ++c) {
            if (pred_count[c] == 0 && gt_count[c] == 0) continue;
            acc += static_cast<double>(intersection[c]) / static_cast<double>(union_[c]);
            ++present;
        }
        return present == 0 ? 0.0 : acc / present;
    }

    std::vector<double> per_class() const {
        std::vector<double> out(union_.size(), -1.0); // -1 marks absent classes
        for (size_t c = 0; c < union_.size(); ++c)
            if (pred_count[c] != 0 || gt_count[c] != 0)
                out[c] = static_cast<double>(intersection[c]) / static_cast<double>(union_[c]);
        return out;
    }
};

struct MiouResult {
    std::vector<double> per_class; // -1 for classes absent from both masks
    double mean = 0.0;
};

inline MiouResult miou(const Mask& pred, const Mask& gt, int num_classes) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("miou: mask shapes differ");
    IouAccumulator acc(num_classes);
    for (size_t i = 0; i < pred.ids.size(); ++i) {
        if (pred.ids[i] >= num_classes || gt.ids[i] >= num_classes)
            throw ShapeError("miou: class id out of range");
        acc.add(pred.ids[i], gt.ids[i]);
    }
    MiouResult out;
    out.per_class = acc.per_class();
    out.mean = acc.mean();
    return out;
}

// mean IoU between the warped prediction for view u and the prediction for
// view v, restricted to the valid overlap
inline double cross_view_consistency(const SegmentationResult& result_u,
                                     const SegmentationResult& result_v,
                                     const ViewGeometry& geom_u, const ViewGeometry& geom_v,
                                     int num_classes) {
    auto [warped, valid] = warp_mask(result_u.pixel_mask, geom_u, geom_v);
    IouAccumulator acc(num_classes);
    int64_t overlap = 0;
    for (int y = 0; y < valid.height; ++y)
        for (int x = 0; x < valid.width; ++x)
            if (valid.at(x, y)) {
                acc.add(warped.at(x, y), result_v.pixel_mask.at(x, y));
                ++overlap;
            }
    if (overlap == 0) throw EmptyOverlap("cross_view_consistency: views do not overlap");
    return acc.mean();
}

// ---------------------------------------------------------------------------
// dataset evaluation

struct EvalOptions {
    bool consistency = false;
    uint64_t aug_seed = 1; // seeds the consistency view pairs
};

struct EvalRow {
    std::string id;
    double miou = 0.0;
    double consistency = 0.0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    double miou = 0.0;        // dataset-level (accumulated) mean IoU
    double consistency = 0.0; // mean over images
};

inline EvalSummary evaluate_dataset(const ViewCoModel& model, const DatasetIndex& data,
                                    const LabelSet& labels, double tau, int eval_size,
                                    const EvalOptions& opts) {
    NoGradGuard ng;
    const int num_classes = static_cast<int>(labels.names.size()) + 1;
    Tensor label_embeddings = compute_label_embeddings(model, labels);
    IouAccumulator global(num_classes);
    EvalSummary summary;
    double consistency_sum = 0.0;

    for (const auto& rec : data.pairs) {
        Image image = read_ppm(data.image_path(rec));
        Mask gt = read_pgm(data.mask_path(rec));
        SegmentationResult res = run_segmentation(image, model, labels, label_embeddings, tau,
                                                  eval_size, gt.width, gt.height);
        MiouResult image_miou = miou(res.pixel_mask, gt, num_classes);
        for (size_t i = 0; i < res.pixel_mask.ids.size(); ++i)
            global.add(res.pixel_mask.ids[i], gt.ids[i]);

        EvalRow row;
        row.id = rec.id;
        row.miou = image_miou.mean;
        if (opts.consistency) {
            AugConfig aug;
            aug.view_size = model.enc.image_size;
            ViewPair pair = augment_two_views(image, derive_seed(opts.aug_seed, std::stoull(rec.id)),
                                              aug);
            SegmentationResult ru =
                run_segmentation(pair.view_u, model, labels, label_embeddings, tau, 0,
                                 pair.view_u.width, pair.view_u.height);
            SegmentationResult rv =
                run_segmentation(pair.view_v, model, labels, label_embeddings, tau, 0,
                                 pair.view_v.width, pair.view_v.height);
            row.consistency = cross_view_consistency(ru, rv, pair.geom_u, pair.geom_v, num_classes);
            consistency_sum += row.consistency;
        }
        summary.rows.push_back(row);
    }
    summary.miou = global.mean();
    summary.consistency = summary.rows.empty() || !opts.consistency
                              ? 0.0
                              : consistency_sum / static_cast<double>(summary.rows.size());
    return summary;
}

} // namespace viewco
