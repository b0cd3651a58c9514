#pragma once

// Raw tensor container used for checkpoints and fixtures.
//
// Layout (all integers little-endian):
//   magic "VWCT" | version u32 | tensor count u32
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32 each,
//               dtype u8 (0 = f32, 1 = f64), packed values.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "viewco/errors.hpp"
#include "viewco/tensor.hpp"

namespace viewco {

constexpr uint32_t kTensorFileVersion = 1;

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

struct TensorEntry {
    std::string name;
    std::vector<uint32_t> dims;
    Dtype dtype = Dtype::f64;
    std::vector<double> values;

    Tensor as_tensor() const {
        int r = 1, c = 1;
        if (dims.size() == 1) {
            c = static_cast<int>(dims[0]);
        } else if (dims.size() == 2) {
            r = static_cast<int>(dims[0]);
            c = static_cast<int>(dims[1]);
        } else if (!dims.empty()) {
            r = static_cast<int>(dims[0]);
            size_t rest = 1;
            for (size_t i = 1; i < dims.size(); ++i) rest *= dims[i];
            c = static_cast<int>(rest);
        }
        return Tensor::from(r, c, values);
    }
};

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    uint8_t u8() {
        if (pos + 1 > buf.size()) throw FormatError("tensor file truncated");
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        uint16_t v = u8();
        v |= static_cast<uint16_t>(u8()) << 8;
        return v;
    }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::string bytes(size_t n) {
        if (pos + n > buf.size()) throw FormatError("tensor file truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline uint32_t f32_bits(float f) {
    uint32_t u;
    static_assert(sizeof(f) == sizeof(u));
    std::memcpy(&u, &f, sizeof(u));
    return u;
}

inline uint64_t f64_bits(double d) {
    uint64_t u;
    std::memcpy(&u, &d, sizeof(u));
    return u;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw FormatError("cannot open " + tmp + " for writing");
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), fp) != bytes.size()) {
        std::fclose(fp);
        throw FormatError("short write to " + tmp);
    }
    std::fclose(fp);
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
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

} // namespace detail

inline std::string encode_tensor_file(const std::vector<TensorEntry>& entries) {
    std::string out;
    out += "VWCT";
    detail::put_u32(out, kTensorFileVersion);
    detail::put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw FormatError("tensor name too long: " + e.name);
        detail::put_u16(out, static_cast<uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.dims.size()));
        size_t count = e.dims.empty() ? 0 : 1;
        for (uint32_t d : e.dims) {
            detail::put_u32(out, d);
            count *= d;
        }
        if (count != e.values.size())
            throw FormatError("tensor " + e.name + ": dims do not match value count");
        out.push_back(static_cast<char>(e.dtype));
        if (e.dtype == Dtype::f32) {
            for (double v : e.values) detail::put_u32(out, detail::f32_bits(static_cast<float>(v)));
        } else {
            for (double v : e.values) detail::put_u64(out, detail::f64_bits(v));
        }
    }
    return out;
}

inline std::vector<TensorEntry> decode_tensor_file(const std::string& buf) {
    detail::ByteReader rd{buf};
    if (rd.bytes(4) != "VWCT") throw FormatError("bad magic, not a tensor file");
    uint32_t version = rd.u32();
    if (version != kTensorFileVersion)
        throw FormatError("unsupported tensor file version " + std::to_string(version));
    uint32_t count = rd.u32();
    std::vector<TensorEntry> entries;
    entries.reserve(count);
    for (uint32_t t = 0; t < count; ++t) {
        TensorEntry e;
        uint16_t name_len = rd.u16();
        e.name = rd.bytes(name_len);
        uint8_t rank = rd.u8();
        size_t n = rank == 0 ? 0 : 1;
        for (uint8_t i = 0; i < rank; ++i) {
            uint32_t d = rd.u32();
            e.dims.push_back(d);
            n *= d;
        }
        uint8_t tag = rd.u8();
        if (tag > 1) throw FormatError("unknown dtype tag " + std::to_string(tag));
        e.dtype = static_cast<Dtype>(tag);
        e.values.resize(n);
        for (size_t i = 0; i < n; ++i) {
            if (e.dtype == Dtype::f32) {
                uint32_t bits = rd.u32();
                float f;
                std::memcpy(&f, &bits, sizeof(f));
                e.values[i] = static_cast<double>(f);
            } else {
                uint64_t bits = rd.u64();
                double d;
                std::memcpy(&d, &bits, sizeof(d));
                e.values[i] = d;
            }
        }
        entries.push_back(std::move(e));
    }
    if (rd.pos != buf.size()) throw FormatError("trailing bytes after last tensor");
    return entries;
}

inline void write_tensor_file(const std::string& path, const std::vector<TensorEntry>& entries) {
    detail::write_file_atomic(path, encode_tensor_file(entries));
}

inline std::vector<TensorEntry> read_tensor_file(const std::string& path) {
    return decode_tensor_file(detail::read_file(path));
}

} // namespace viewco
