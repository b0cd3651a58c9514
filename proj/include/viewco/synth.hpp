#pragma once

// Deterministic synthetic image-caption corpus with pixel-exact masks, plus
// the two-view augmentation pipeline whose geometry records are invertible.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "viewco/errors.hpp"
#include "viewco/image.hpp"
#include "viewco/rng.hpp"

namespace viewco {

// ---------------------------------------------------------------------------
// scenes

struct ShapeSpec {
    std::string cls;
    int class_id = 0; // 1-based index into the class set
    double cx = 0, cy = 0, size = 0;
    std::string color;
};

struct SyntheticScene {
    Image canvas;
    Mask gt_mask;
    std::vector<ShapeSpec> shapes;
    std::string caption;
};

namespace detail {

struct NamedColor {
    const char* name;
    double r, g, b;
};

inline const std::array<NamedColor, 6>& shape_colors() {
    static const std::array<NamedColor, 6> colors = {{
        {"red", 0.85, 0.10, 0.10},
        {"green", 0.10, 0.70, 0.15},
        {"blue", 0.15, 0.20, 0.85},
        {"yellow", 0.90, 0.85, 0.10},
        {"purple", 0.60, 0.15, 0.75},
        {"cyan", 0.10, 0.75, 0.80},
    }};
    return colors;
}

struct Background {
    const char* word;
    double base;
};

inline const std::array<Background, 3>& backgrounds() {
    static const std::array<Background, 3> bgs = {{
        {"gray", 0.55},
        {"dark", 0.25},
        {"light", 0.80},
    }};
    return bgs;
}

// stateless per-pixel noise in [-1, 1]
inline double pixel_noise(uint64_t seed, int x, int y) {
    uint64_t h = hash64(seed ^ (static_cast<uint64_t>(x) << 32) ^ static_cast<uint64_t>(y));
    return (static_cast<double>(h >> 11) * 0x1.0p-53) * 2.0 - 1.0;
}

inline bool inside_shape(const ShapeSpec& s, double px, double py) {
    double dx = px - s.cx;
    double dy = py - s.cy;
    if (s.cls == "circle") return dx * dx + dy * dy <= s.size * s.size;
    if (s.cls == "square") return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
    if (s.cls == "triangle") {
        // apex up: vertices (cx, cy-s), (cx-s, cy+s), (cx+s, cy+s)
        if (dy < -s.size || dy > s.size) return false;
        double half_width = s.size * (dy + s.size) / (2.0 * s.size);
        return std::abs(dx) <= half_width;
    }
    throw ConfigError("unknown shape class '" + s.cls + "'");
}

} // namespace detail

inline const std::vector<std::string>& supported_shape_classes() {
    static const std::vector<std::string> classes = {"circle", "square", "triangle"};
    return classes;
}

// 1-2 non-overlapping shapes on a textured background; caption names shapes[0].
inline SyntheticScene gen_scene(uint64_t seed, const std::vector<std::string>& class_set,
                                int canvas_size) {
    if (class_set.empty()) throw ConfigError("gen_scene: empty class set");
    if (canvas_size < 16) throw ConfigError("gen_scene: canvas too small for requested shapes");
    const auto& known = supported_shape_classes();
    for (const auto& c : class_set)
        if (std::find(known.begin(), known.end(), c) == known.end())
            throw ConfigError("unsupported class '" + c + "'");

    Rng rng(derive_seed(seed, 0xface));
    const auto& bg = detail::backgrounds()[rng.uniform_int(0, 2)];

    SyntheticScene scene;
    scene.canvas = Image::blank(canvas_size, canvas_size);
    scene.gt_mask = Mask::blank(canvas_size, canvas_size, 0);
    for (int y = 0; y < canvas_size; ++y)
        for (int x = 0; x < canvas_size; ++x) {
            double v = bg.base + 0.04 * detail::pixel_noise(seed, x, y);
            for (int c = 0; c < 3; ++c) scene.canvas.at(x, y, c) = std::clamp(v, 0.0, 1.0);
        }

    int n_shapes = rng.bernoulli(0.5) ? 2 : 1;
    for (int k = 0; k < n_shapes; ++k) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            ShapeSpec s;
            int ci = rng.uniform_int(0, static_cast<int>(class_set.size()) - 1);
            s.cls = class_set[ci];
            s.class_id = ci + 1;
            s.size = rng.uniform(0.12, 0.2) * canvas_size;
            double margin = s.size + 1.5;
            s.cx = rng.uniform(margin, canvas_size - margin);
            s.cy = rng.uniform(margin, canvas_size - margin);
            const auto& col = detail::shape_colors()[rng.uniform_int(0, 5)];
            s.color = col.name;
            bool clear = true;
            for (const auto& other : scene.shapes) {
                double dx = s.cx - other.cx, dy = s.cy - other.cy;
                double min_dist = 1.6 * (s.size + other.size) + 1.0;
                if (dx * dx + dy * dy < min_dist * min_dist) clear = false;
            }
            if (!clear) continue;
            for (int y = 0; y < canvas_size; ++y)
                for (int x = 0; x < canvas_size; ++x)
                    if (detail::inside_shape(s, x + 0.5, y + 0.5)) {
                        scene.gt_mask.at(x, y) = static_cast<uint8_t>(s.class_id);
                        scene.canvas.at(x, y, 0) = col.r;
                        scene.canvas.at(x, y, 1) = col.g;
                        scene.canvas.at(x, y, 2) = col.b;
                    }
            scene.shapes.push_back(s);
            break;
        }
    }
    if (scene.shapes.empty()) throw ConfigError("gen_scene: could not place any shape");
    scene.caption = "a " + scene.shapes[0].color + " " + scene.shapes[0].cls + " on " + bg.word;
    return scene;
}

// ---------------------------------------------------------------------------
// view geometry: crop in source coords, then horizontal flip, then k*90 CW
// rotation, rendered at view_size x view_size

struct ViewGeometry {
    int crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
    bool flip = false;
    int rot = 0; // quarter turns clockwise
    int view_size = 0;

    // apply k clockwise quarter turns to a pixel coordinate in an n x n grid
    static std::pair<int, int> rotate_coord(int x, int y, int n, int k) {
        for (int i = 0; i < (k % 4 + 4) % 4; ++i) {
            int nx = n - 1 - y;
            int ny = x;
            x = nx;
            y = ny;
        }
        return {x, y};
    }

    // continuous source coordinates of the footprint center of a view pixel
    std::pair<double, double> to_source(int vx, int vy) const {
        auto [fx, fy] = rotate_coord(vx, vy, view_size, (4 - rot % 4) % 4);
        int bx = flip ? view_size - 1 - fx : fx;
        int by = fy;
        double sx = crop_x + (bx + 0.5) * static_cast<double>(crop_w) / view_size;
        double sy = crop_y + (by + 0.5) * static_cast<double>(crop_h) / view_size;
        return {sx, sy};
    }

    // view pixel whose footprint contains the source point; false if outside crop
    bool from_source(double sx, double sy, int& vx, int& vy) const {
        double bxf = (sx - crop_x) * view_size / static_cast<double>(crop_w);
        double byf = (sy - crop_y) * view_size / static_cast<double>(crop_h);
        int bx = static_cast<int>(std::floor(bxf));
        int by = static_cast<int>(std::floor(byf));
        if (bx < 0 || bx >= view_size || by < 0 || by >= view_size) return false;
        int fx = flip ? view_size - 1 - bx : bx;
        auto [rx, ry] = rotate_coord(fx, by, view_size, rot % 4);
        vx = rx;
        vy = ry;
        return true;
    }

    bool in_crop(double sx, double sy) const {
        return sx >= crop_x && sx < crop_x + crop_w && sy >= crop_y && sy < crop_y + crop_h;
    }
};

struct ViewPair {
    Image view_u, view_v;
    ViewGeometry geom_u, geom_v;
};

struct AugConfig {
    double crop_scale_min = 0.5; // area fraction of the source
    double crop_scale_max = 1.0;
    double flip_prob = 0.5;
    bool rotations = true; // 90-degree multiples
    double min_overlap = 0.4;
    int view_size = 32;

    static AugConfig identity(int view_size) {
        AugConfig a;
        a.crop_scale_min = 1.0;
        a.crop_scale_max = 1.0;
        a.flip_prob = 0.0;
        a.rotations = false;
        a.min_overlap = 0.0;
        a.view_size = view_size;
        return a;
    }
};

inline Image render_view(const Image& source, const ViewGeometry& g) {
    Image out = Image::blank(g.view_size, g.view_size);
    for (int vy = 0; vy < g.view_size; ++vy)
        for (int vx = 0; vx < g.view_size; ++vx) {
            auto [sx, sy] = g.to_source(vx, vy);
            int px = std::clamp(static_cast<int>(std::floor(sx)), 0, source.width - 1);
            int py = std::clamp(static_cast<int>(std::floor(sy)), 0, source.height - 1);
            for (int c = 0; c < 3; ++c) out.at(vx, vy, c) = source.at(px, py, c);
        }
    return out;
}

inline Mask render_mask_view(const Mask& source, const ViewGeometry& g) {
    Mask out = Mask::blank(g.view_size, g.view_size);
    for (int vy = 0; vy < g.view_size; ++vy)
        for (int vx = 0; vx < g.view_size; ++vx) {
            auto [sx, sy] = g.to_source(vx, vy);
            int px = std::clamp(static_cast<int>(std::floor(sx)), 0, source.width - 1);
            int py = std::clamp(static_cast<int>(std::floor(sy)), 0, source.height - 1);
            out.at(vx, vy) = source.at(px, py);
        }
    return out;
}

namespace detail {

// Both views of a pair share one crop size so mask warps between them are
// exact pixel permutations; position, flip, and rotation stay independent.
inline ViewGeometry sample_geometry(Rng& rng, int src_w, int src_h, int crop_w, int crop_h,
                                    const AugConfig& cfg) {
    ViewGeometry g;
    g.view_size = cfg.view_size;
    g.crop_w = crop_w;
    g.crop_h = crop_h;
    g.crop_x = rng.uniform_int(0, src_w - crop_w);
    g.crop_y = rng.uniform_int(0, src_h - crop_h);
    g.flip = rng.bernoulli(cfg.flip_prob);
    g.rot = cfg.rotations ? rng.uniform_int(0, 3) : 0;
    return g;
}

inline double crop_overlap_fraction(const ViewGeometry& a, const ViewGeometry& b) {
    double x0 = std::max(a.crop_x, b.crop_x);
    double y0 = std::max(a.crop_y, b.crop_y);
    double x1 = std::min(a.crop_x + a.crop_w, b.crop_x + b.crop_w);
    double y1 = std::min(a.crop_y + a.crop_h, b.crop_y + b.crop_h);
    double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
    double min_area =
        std::min(static_cast<double>(a.crop_w) * a.crop_h, static_cast<double>(b.crop_w) * b.crop_h);
    return inter / min_area;
}

} // namespace detail

// Two independently augmented views whose crop boxes mutually overlap by at
// least min_overlap (intersection over the smaller crop).
inline ViewPair augment_two_views(const Image& source, uint64_t seed, const AugConfig& cfg) {
    Rng rng(derive_seed(seed, 0xa06));
    for (int attempt = 0; attempt < 100; ++attempt) {
        double side = std::sqrt(rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max));
        int crop_w = std::clamp(static_cast<int>(std::lround(side * source.width)), 2, source.width);
        int crop_h = std::clamp(static_cast<int>(std::lround(side * source.height)), 2, source.height);
        ViewGeometry gu = detail::sample_geometry(rng, source.width, source.height, crop_w, crop_h, cfg);
        ViewGeometry gv = detail::sample_geometry(rng, source.width, source.height, crop_w, crop_h, cfg);
        if (detail::crop_overlap_fraction(gu, gv) < cfg.min_overlap) continue;
        ViewPair pair;
        pair.geom_u = gu;
        pair.geom_v = gv;
        pair.view_u = render_view(source, gu);
        pair.view_v = render_view(source, gv);
        return pair;
    }
    throw AugmentationError("no geometry pair met the overlap constraint after 100 resamples");
}

// Warp a per-pixel map from view A into view B through source coordinates.
// validity marks pixels whose source preimage lies inside both crops.
inline std::pair<Mask, Mask> warp_mask(const Mask& mask_a, const ViewGeometry& geom_a,
                                       const ViewGeometry& geom_b) {
    Mask out = Mask::blank(geom_b.view_size, geom_b.view_size, 0);
    Mask valid = Mask::blank(geom_b.view_size, geom_b.view_size, 0);
    for (int vy = 0; vy < geom_b.view_size; ++vy)
        for (int vx = 0; vx < geom_b.view_size; ++vx) {
            auto [sx, sy] = geom_b.to_source(vx, vy);
            if (!geom_a.in_crop(sx, sy)) continue;
            int ax = 0, ay = 0;
            if (!geom_a.from_source(sx, sy, ax, ay)) continue;
            out.at(vx, vy) = mask_a.at(ax, ay);
            valid.at(vx, vy) = 1;
        }
    return {out, valid};
}

// ---------------------------------------------------------------------------
// on-disk corpus
//   <root>/pairs/<id>/image.ppm, mask.pgm, caption.txt
//   <root>/manifest.tsv rows "id<TAB>seed<TAB>class"
//   <root>/classes.txt   one class name per line, id order

struct PairRecord {
    std::string id;
    uint64_t seed = 0;
    std::string cls;
};

struct DatasetIndex {
    std::string root;
    std::vector<PairRecord> pairs;
    std::vector<std::string> classes;

    std::string image_path(const PairRecord& r) const { return root + "/pairs/" + r.id + "/image.ppm"; }
    std::string mask_path(const PairRecord& r) const { return root + "/pairs/" + r.id + "/mask.pgm"; }
    std::string caption_path(const PairRecord& r) const {
        return root + "/pairs/" + r.id + "/caption.txt";
    }
};

namespace detail {

inline void write_text_atomic(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp);
    os << text;
    os.close();
    std::filesystem::rename(tmp, path);
}

} // namespace detail

inline std::string pair_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

inline DatasetIndex generate_dataset(const std::string& root, int size, uint64_t seed,
                                     const std::vector<std::string>& classes, int canvas_size) {
    namespace fs = std::filesystem;
    fs::create_directories(root + "/pairs");
    DatasetIndex idx;
    idx.root = root;
    idx.classes = classes;
    std::string manifest;
    for (int i = 0; i < size; ++i) {
        uint64_t scene_seed = derive_seed(seed, 0x5ce8e, static_cast<uint64_t>(i));
        SyntheticScene scene = gen_scene(scene_seed, classes, canvas_size);
        std::string id = pair_id(i);
        std::string dir = root + "/pairs/" + id;
        fs::create_directories(dir);
        write_ppm(dir + "/image.ppm", scene.canvas);
        write_pgm(dir + "/mask.pgm", scene.gt_mask);
        detail::write_text_atomic(dir + "/caption.txt", scene.caption + "\n");
        manifest += id + "\t" + std::to_string(scene_seed) + "\t" + scene.shapes[0].cls + "\n";
        idx.pairs.push_back({id, scene_seed, scene.shapes[0].cls});
    }
    detail::write_text_atomic(root + "/manifest.tsv", manifest);
    std::string class_lines;
    for (const auto& c : classes) class_lines += c + "\n";
    detail::write_text_atomic(root + "/classes.txt", class_lines);
    return idx;
}

inline DatasetIndex load_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::exists(root + "/manifest.tsv")) throw DatasetNotFound("no manifest.tsv under " + root);
    DatasetIndex idx;
    idx.root = root;
    std::ifstream manifest(root + "/manifest.tsv");
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        PairRecord r;
        std::string seed_str;
        if (!std::getline(ls, r.id, '\t') || !std::getline(ls, seed_str, '\t') ||
            !std::getline(ls, r.cls))
            throw FormatError("malformed manifest line: " + line);
        r.seed = std::stoull(seed_str);
        idx.pairs.push_back(r);
    }
    std::ifstream cls(root + "/classes.txt");
    if (!cls) throw DatasetNotFound("no classes.txt under " + root);
    while (std::getline(cls, line))
        if (!line.empty()) idx.classes.push_back(line);
    return idx;
}

inline std::string read_caption(const DatasetIndex& idx, const PairRecord& r) {
    std::ifstream is(idx.caption_path(r));
    if (!is) throw DatasetNotFound("missing caption for pair " + r.id);
    std::string caption;
    std::getline(is, caption);
    return caption;
}

} // namespace viewco
