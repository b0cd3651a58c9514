#pragma once

// Float RGB images in [0,1], byte masks of class ids, and binary PPM/PGM I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "viewco/errors.hpp"

namespace viewco {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pix; // row-major, RGB interleaved

    static Image blank(int w, int h, double v = 0.0) {
        Image im;
        im.width = w;
        im.height = h;
        im.pix.assign(static_cast<size_t>(w) * h * 3, v);
        return im;
    }

    double& at(int x, int y, int c) { return pix[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return pix[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

struct Mask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> ids; // row-major class ids, 0 = background

    static Mask blank(int w, int h, uint8_t v = 0) {
        Mask m;
        m.width = w;
        m.height = h;
        m.ids.assign(static_cast<size_t>(w) * h, v);
        return m;
    }

    uint8_t& at(int x, int y) { return ids[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int x, int y) const { return ids[static_cast<size_t>(y) * width + x]; }
};

namespace detail {

inline uint8_t to_byte(double v) {
    double scaled = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(scaled);
}

inline void pnm_write(const std::string& path, const std::string& bytes) {
    std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw FormatError("cannot open " + tmp + " for writing");
    if (std::fwrite(bytes.data(), 1, bytes.size(), fp) != bytes.size()) {
        std::fclose(fp);
        throw FormatError("short write to " + tmp);
    }
    std::fclose(fp);
    std::rename(tmp.c_str(), path.c_str());
}

inline std::string pnm_read(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw FormatError("cannot open " + path);
    std::fseek(fp, 0, SEEK_END);
    long sz = std::ftell(fp);
    std::fseek(fp, 0, SEEK_SET);
    std::string buf(static_cast<size_t>(sz), '\0');
    if (sz > 0 && std::fread(buf.data(), 1, buf.size(), fp) != buf.size()) {
        std::fclose(fp);
        throw FormatError("short read from " + path);
    }
    std::fclose(fp);
    return buf;
}

// parse "P6\n<w> <h>\n255\n" style headers, tolerating '#' comments
struct PnmHeader {
    int width = 0;
    int height = 0;
    size_t payload_offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& buf, const char* magic) {
    if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1])
        throw FormatError(std::string("expected ") + magic + " header");
    size_t pos = 2;
    auto next_int = [&]() -> int {
        while (pos < buf.size()) {
            char ch = buf[pos];
            if (ch == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
            throw FormatError("malformed PNM header");
        int v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            ++pos;
        }
        return v;
    };
    PnmHeader h;
    h.width = next_int();
    h.height = next_int();
    int maxval = next_int();
    if (h.width <= 0 || h.height <= 0) throw FormatError("bad PNM dimensions");
    if (maxval != 255) throw FormatError("only maxval 255 supported");
    if (pos >= buf.size() || !(buf[pos] == '\n' || buf[pos] == ' ' || buf[pos] == '\t' || buf[pos] == '\r'))
        throw FormatError("malformed PNM header");
    h.payload_offset = pos + 1; // single whitespace before payload
    return h;
}

} // namespace detail

inline std::string encode_ppm(const Image& im) {
    std::string out = "P6\n" + std::to_string(im.width) + " " + std::to_string(im.height) + "\n255\n";
    out.reserve(out.size() + im.pix.size());
    for (double v : im.pix) out.push_back(static_cast<char>(detail::to_byte(v)));
    return out;
}

inline void write_ppm(const std::string& path, const Image& im) {
    detail::pnm_write(path, encode_ppm(im));
}

inline Image decode_ppm(const std::string& buf) {
    auto h = detail::parse_pnm_header(buf, "P6");
    size_t need = static_cast<size_t>(h.width) * h.height * 3;
    if (buf.size() - h.payload_offset != need) throw FormatError("PPM payload size mismatch");
    Image im = Image::blank(h.width, h.height);
    for (size_t i = 0; i < need; ++i)
        im.pix[i] = static_cast<uint8_t>(buf[h.payload_offset + i]) / 255.0;
    return im;
}

inline Image read_ppm(const std::string& path) { return decode_ppm(detail::pnm_read(path)); }

inline std::string encode_pgm(const Mask& m) {
    std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
    out.reserve(out.size() + m.ids.size());
    for (uint8_t v : m.ids) out.push_back(static_cast<char>(v));
    return out;
}

inline void write_pgm(const std::string& path, const Mask& m) {
    detail::pnm_write(path, encode_pgm(m));
}

inline Mask decode_pgm(const std::string& buf) {
    auto h = detail::parse_pnm_header(buf, "P5");
    size_t need = static_cast<size_t>(h.width) * h.height;
    if (buf.size() - h.payload_offset != need) throw FormatError("PGM payload size mismatch");
    Mask m = Mask::blank(h.width, h.height);
    for (size_t i = 0; i < need; ++i) m.ids[i] = static_cast<uint8_t>(buf[h.payload_offset + i]);
    return m;
}

inline Mask read_pgm(const std::string& path) { return decode_pgm(detail::pnm_read(path)); }

// ---------------------------------------------------------------------------
// nearest-neighbor geometry helpers

inline Image resize_nearest(const Image& im, int w, int h) {
    Image out = Image::blank(w, h);
    for (int y = 0; y < h; ++y) {
        int sy = std::min(static_cast<int>(static_cast<int64_t>(y) * im.height / h), im.height - 1);
        for (int x = 0; x < w; ++x) {
            int sx = std::min(static_cast<int>(static_cast<int64_t>(x) * im.width / w), im.width - 1);
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = im.at(sx, sy, c);
        }
    }
    return out;
}

inline Image center_crop(const Image& im, int w, int h) {
    if (w > im.width || h > im.height) throw ShapeError("center_crop: crop larger than image");
    int x0 = (im.width - w) / 2;
    int y0 = (im.height - h) / 2;
    Image out = Image::blank(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = im.at(x0 + x, y0 + y, c);
    return out;
}

// Resize so the shorter side equals `target`, then center-crop to a square.
inline Image resize_shorter_side_square(const Image& im, int target) {
    int w, h;
    if (im.width <= im.height) {
        w = target;
        h = static_cast<int>(std::lround(static_cast<double>(im.height) * target / im.width));
    } else {
        h = target;
        w = static_cast<int>(std::lround(static_cast<double>(im.width) * target / im.height));
    }
    return center_crop(resize_nearest(im, w, h), target, target);
}

} // namespace viewco
