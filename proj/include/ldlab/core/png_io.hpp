#pragma once

// Minimal PNG reader/writer for 8-bit RGB, backed by zlib. Writing always
// emits filter 0 rows at a fixed compression level so identical pixels give
// identical bytes; reading handles the five standard row filters.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"

namespace ldlab {

namespace pngdetail {

inline void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(4 + data.size())));
    put_u32be(out, crc);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

inline std::vector<std::uint8_t> png_encode(const ImageF& img) {
    require(img.c == 3, Err::BadFormat, "png_encode expects 3-channel image");
    require(img.h >= 1 && img.w >= 1, Err::BadResolution, "png_encode: empty image");

    const std::size_t stride = static_cast<std::size_t>(img.w) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        row[0] = 0;  // filter: none
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) row[1 + x * 3 + ch] = to_u8(img.at(y, x, ch));
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_cap);
    const int rc = compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6);
    require(rc == Z_OK, Err::IoError, "zlib compress failed");
    comp.resize(comp_cap);

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
    pngdetail::put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::put_chunk(out, "IHDR", ihdr);
    pngdetail::put_chunk(out, "IDAT", comp);
    pngdetail::put_chunk(out, "IEND", {});
    return out;
}

inline ImageF png_decode(const std::vector<std::uint8_t>& bytes) {
    using namespace pngdetail;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    require(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0, Err::BadFormat, "not a PNG file");

    int w = 0, h = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = get_u32be(bytes.data() + pos);
        require(pos + 12 + len <= bytes.size(), Err::BadFormat, "truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            require(len == 13, Err::BadFormat, "bad IHDR");
            w = static_cast<int>(get_u32be(data));
            h = static_cast<int>(get_u32be(data + 4));
            require(data[8] == 8 && data[9] == 2, Err::BadFormat, "only 8-bit RGB PNGs are supported");
            require(data[10] == 0 && data[11] == 0 && data[12] == 0, Err::BadFormat, "unsupported PNG features");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    require(saw_ihdr && w > 0 && h > 0 && !idat.empty(), Err::BadFormat, "incomplete PNG");

    const std::size_t stride = static_cast<std::size_t>(w) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    require(rc == Z_OK && raw_len == raw.size(), Err::BadFormat, "PNG inflate failed");

    ImageF img(h, w, 3);
    std::vector<std::uint8_t> prev(stride, 0), cur(stride, 0);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        const std::uint8_t filter = row[0];
        require(filter <= 4, Err::BadFormat, "bad PNG filter");
        for (std::size_t i = 0; i < stride; ++i) {
            const int x = static_cast<int>(row[1 + i]);
            const int a = i >= 3 ? cur[i - 3] : 0;
            const int b = prev[i];
            const int c = i >= 3 ? prev[i - 3] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + paeth(a, b, c); break;
            }
            cur[i] = static_cast<std::uint8_t>(v & 0xff);
        }
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = static_cast<float>(cur[static_cast<std::size_t>(x) * 3 + ch]) / 255.0f;
        std::swap(prev, cur);
    }
    return img;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), Err::IoError, "cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), Err::IoError, "short write: " + path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), Err::IoError, "cannot open: " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    require(static_cast<bool>(f), Err::IoError, "short read: " + path);
    return bytes;
}

inline void png_write(const std::string& path, const ImageF& img) { write_file_bytes(path, png_encode(img)); }

inline ImageF png_read(const std::string& path) { return png_decode(read_file_bytes(path)); }

}  // namespace ldlab
