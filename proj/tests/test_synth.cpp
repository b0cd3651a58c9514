#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "viewco/synth.hpp"

using namespace viewco;

namespace {
const std::vector<std::string> kClasses = {"circle", "square", "triangle"};
}

TEST(GenScene, SameSeedIdenticalBytes) {
    SyntheticScene a = gen_scene(1234, kClasses, 32);
    SyntheticScene b = gen_scene(1234, kClasses, 32);
    EXPECT_EQ(encode_ppm(a.canvas), encode_ppm(b.canvas));
    EXPECT_EQ(encode_pgm(a.gt_mask), encode_pgm(b.gt_mask));
    EXPECT_EQ(a.caption, b.caption);
}

TEST(GenScene, DifferentSeedsDiffer) {
    SyntheticScene a = gen_scene(1, kClasses, 32);
    SyntheticScene b = gen_scene(2, kClasses, 32);
    EXPECT_NE(encode_ppm(a.canvas), encode_ppm(b.canvas));
}

TEST(GenScene, CircleAreaMatchesAnalytic) {
    // |count - pi r^2| < 4r for pixel-center rasterization
    int checked = 0;
    for (uint64_t seed = 0; seed < 200 && checked < 20; ++seed) {
        SyntheticScene s = gen_scene(seed, {"circle"}, 64);
        if (s.shapes.size() != 1) continue;
        const auto& sh = s.shapes[0];
        int count = 0;
        for (uint8_t id : s.gt_mask.ids)
            if (id != 0) ++count;
        double r = sh.size;
        EXPECT_LT(std::abs(count - M_PI * r * r), 4.0 * r) << "seed " << seed;
        ++checked;
    }
    EXPECT_GE(checked, 20);
}

TEST(GenScene, CaptionNamesFirstShape) {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        SyntheticScene s = gen_scene(seed, kClasses, 32);
        EXPECT_NE(s.caption.find(s.shapes[0].cls), std::string::npos);
        // exactly one class word in the caption
        int hits = 0;
        std::istringstream words(s.caption);
        std::string w;
        while (words >> w)
            for (const auto& c : kClasses)
                if (w == c) ++hits;
        EXPECT_EQ(hits, 1) << s.caption;
    }
}

TEST(GenScene, MaskIdsAreClassIds) {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        SyntheticScene s = gen_scene(seed, kClasses, 32);
        for (uint8_t id : s.gt_mask.ids) EXPECT_LE(id, kClasses.size());
        for (const auto& sh : s.shapes) {
            EXPECT_GE(sh.class_id, 1);
            EXPECT_LE(sh.class_id, static_cast<int>(kClasses.size()));
        }
    }
}

TEST(GenScene, BadConfigThrows) {
    EXPECT_THROW(gen_scene(1, {}, 32), ConfigError);
    EXPECT_THROW(gen_scene(1, kClasses, 8), ConfigError);
    EXPECT_THROW(gen_scene(1, {"hexagon"}, 32), ConfigError);
}

TEST(Geometry, RotationInvolutions) {
    for (int n : {4, 7, 32})
        for (int k = 0; k < 4; ++k)
            for (int x = 0; x < n; ++x)
                for (int y = 0; y < n; ++y) {
                    auto [rx, ry] = ViewGeometry::rotate_coord(x, y, n, k);
                    auto [bx, by] = ViewGeometry::rotate_coord(rx, ry, n, (4 - k) % 4);
                    EXPECT_EQ(bx, x);
                    EXPECT_EQ(by, y);
                }
}

TEST(Geometry, SourceRoundTripExact) {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        ViewGeometry g;
        g.view_size = 32;
        g.crop_w = rng.uniform_int(5, 64);
        g.crop_h = rng.uniform_int(5, 64);
        g.crop_x = rng.uniform_int(0, 10);
        g.crop_y = rng.uniform_int(0, 10);
        g.flip = rng.bernoulli(0.5);
        g.rot = rng.uniform_int(0, 3);
        for (int vx = 0; vx < g.view_size; vx += 5)
            for (int vy = 0; vy < g.view_size; vy += 5) {
                auto [sx, sy] = g.to_source(vx, vy);
                int bx = 0, by = 0;
                ASSERT_TRUE(g.from_source(sx, sy, bx, by));
                EXPECT_EQ(bx, vx);
                EXPECT_EQ(by, vy);
            }
    }
}

TEST(Augment, IdentityConfigReproducesScene) {
    SyntheticScene s = gen_scene(5, kClasses, 32);
    ViewPair p = augment_two_views(s.canvas, 17, AugConfig::identity(32));
    EXPECT_EQ(encode_ppm(p.view_u), encode_ppm(s.canvas));
    EXPECT_EQ(encode_ppm(p.view_v), encode_ppm(s.canvas));
}

TEST(Augment, DoubleFlipIsIdentity) {
    ViewGeometry g;
    g.view_size = 16;
    g.crop_x = 3;
    g.crop_y = 2;
    g.crop_w = 20;
    g.crop_h = 24;
    g.flip = true;
    g.rot = 0;
    for (int vx = 0; vx < 16; ++vx)
        for (int vy = 0; vy < 16; ++vy) {
            auto [sx, sy] = g.to_source(vx, vy);
            int ax = 0, ay = 0;
            ASSERT_TRUE(g.from_source(sx, sy, ax, ay));
            EXPECT_EQ(ax, vx);
            EXPECT_EQ(ay, vy);
        }
}

TEST(Augment, WarpAgreesWithDirectCrop) {
    // warping gt u -> v matches rendering gt directly into v on >= 99% of overlap
    // (corpus geometry: canvas at the view size, crops only upscale)
    int total_overlap = 0, total_agree = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        SyntheticScene s = gen_scene(seed, kClasses, 32);
        AugConfig cfg;
        cfg.view_size = 32;
        ViewPair p = augment_two_views(s.canvas, derive_seed(seed, 7), cfg);
        Mask mask_u = render_mask_view(s.gt_mask, p.geom_u);
        Mask direct_v = render_mask_view(s.gt_mask, p.geom_v);
        auto [warped, valid] = warp_mask(mask_u, p.geom_u, p.geom_v);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if (valid.at(x, y)) {
                    ++total_overlap;
                    if (warped.at(x, y) == direct_v.at(x, y)) ++total_agree;
                }
    }
    ASSERT_GT(total_overlap, 0);
    EXPECT_GE(static_cast<double>(total_agree) / total_overlap, 0.99);
}

TEST(Augment, Rot180WarpsToRotatedMask) {
    ViewGeometry a;
    a.view_size = 8;
    a.crop_x = 0;
    a.crop_y = 0;
    a.crop_w = 8;
    a.crop_h = 8;
    ViewGeometry b = a;
    b.rot = 2;
    Mask m = Mask::blank(8, 8);
    Rng rng(3);
    for (auto& v : m.ids) v = static_cast<uint8_t>(rng.uniform_int(0, 3));
    auto [warped, valid] = warp_mask(m, a, b);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            EXPECT_EQ(valid.at(x, y), 1);
            EXPECT_EQ(warped.at(x, y), m.at(7 - x, 7 - y));
        }
}

TEST(Augment, WarpRoundTripOnDoublyValidRegion) {
    Rng rng(21);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SyntheticScene s = gen_scene(seed, kClasses, 48);
        AugConfig cfg;
        cfg.view_size = 24;
        ViewPair p = augment_two_views(s.canvas, derive_seed(seed, 11), cfg);
        Mask mask_u = render_mask_view(s.gt_mask, p.geom_u);
        auto [to_v, valid_v] = warp_mask(mask_u, p.geom_u, p.geom_v);
        auto [back_u, valid_u] = warp_mask(to_v, p.geom_v, p.geom_u);
        // round trip must agree wherever the intermediate pixel was also valid
        auto [valid_v_in_u, valid_chain] = warp_mask(valid_v, p.geom_v, p.geom_u);
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
                if (valid_u.at(x, y) && valid_chain.at(x, y) && valid_v_in_u.at(x, y)) {
                    EXPECT_EQ(back_u.at(x, y), mask_u.at(x, y));
                }
    }
}

TEST(PnmIo, WriteReadRoundTripByteIdentical) {
    Rng rng(55);
    Image im = Image::blank(9, 7);
    for (auto& v : im.pix) v = rng.uniform();
    std::string dir = testing::TempDir();
    write_ppm(dir + "rt.ppm", im);
    Image back = read_ppm(dir + "rt.ppm");
    write_ppm(dir + "rt2.ppm", back);
    std::ifstream f1(dir + "rt.ppm", std::ios::binary), f2(dir + "rt2.ppm", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);
}

TEST(PnmIo, OnePixelWhitePpmExactBytes) {
    Image white = Image::blank(1, 1, 1.0);
    std::string expected = std::string("P6\n1 1\n255\n") + "\xff\xff\xff";
    EXPECT_EQ(encode_ppm(white), expected);
}

TEST(PnmIo, MaskIdsSurviveRoundTrip) {
    Mask m = Mask::blank(4, 4);
    m.at(0, 0) = 0;
    m.at(1, 0) = 1;
    m.at(2, 0) = 2;
    m.at(3, 3) = 2;
    std::string path = testing::TempDir() + "ids.pgm";
    write_pgm(path, m);
    Mask back = read_pgm(path);
    EXPECT_EQ(back.ids, m.ids);
}

TEST(PnmIo, MalformedHeaderThrows) {
    EXPECT_THROW(decode_ppm("P5\n1 1\n255\nx"), FormatError);
    EXPECT_THROW(decode_ppm("P6\n0 1\n255\n"), FormatError);
    EXPECT_THROW(decode_ppm("P6\n1 1\n127\nxyz"), FormatError);
    EXPECT_THROW(decode_pgm("garbage"), FormatError);
    EXPECT_THROW(decode_ppm("P6\n2 2\n255\nshort"), FormatError);
}

TEST(Dataset, GenerateLoadRoundTrip) {
    std::string root = testing::TempDir() + "viewco_ds";
    std::filesystem::remove_all(root);
    DatasetIndex idx = generate_dataset(root, 12, 77, kClasses, 32);
    EXPECT_EQ(idx.pairs.size(), 12u);
    DatasetIndex loaded = load_dataset(root);
    ASSERT_EQ(loaded.pairs.size(), 12u);
    EXPECT_EQ(loaded.classes, kClasses);
    for (size_t i = 0; i < loaded.pairs.size(); ++i) {
        EXPECT_EQ(loaded.pairs[i].id, idx.pairs[i].id);
        EXPECT_EQ(loaded.pairs[i].seed, idx.pairs[i].seed);
        EXPECT_EQ(loaded.pairs[i].cls, idx.pairs[i].cls);
        Image im = read_ppm(loaded.image_path(loaded.pairs[i]));
        EXPECT_EQ(im.width, 32);
        std::string caption = read_caption(loaded, loaded.pairs[i]);
        EXPECT_FALSE(caption.empty());
    }
}

TEST(Dataset, RegenerationIsByteIdentical) {
    std::string r1 = testing::TempDir() + "viewco_ds_a";
    std::string r2 = testing::TempDir() + "viewco_ds_b";
    std::filesystem::remove_all(r1);
    std::filesystem::remove_all(r2);
    generate_dataset(r1, 6, 42, kClasses, 32);
    generate_dataset(r2, 6, 42, kClasses, 32);
    for (int i = 0; i < 6; ++i) {
        for (const char* f : {"/image.ppm", "/mask.pgm", "/caption.txt"}) {
            std::string p1 = r1 + "/pairs/" + pair_id(i) + f;
            std::string p2 = r2 + "/pairs/" + pair_id(i) + f;
            std::ifstream s1(p1, std::ios::binary), s2(p2, std::ios::binary);
            std::string b1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
            std::string b2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
            EXPECT_EQ(b1, b2) << p1;
        }
    }
}

TEST(Dataset, MissingManifestThrows) {
    EXPECT_THROW(load_dataset(testing::TempDir() + "no_such_dataset"), DatasetNotFound);
}
