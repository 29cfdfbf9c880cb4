#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "motiondiff/errors.hpp"

namespace motiondiff {

// RGB image with float channels in [0,1], row-major, interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;  // 3 * width * height

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(3) * w * h, 0.0f) {}

    float& at(int x, int y, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

namespace detail {

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t read_u32_be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32_be(out, crc);
}

inline std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& in) {
    uLongf bound = ::compressBound(static_cast<uLong>(in.size()));
    std::vector<uint8_t> out(bound);
    if (::compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK) {
        throw IoError("png: deflate failed");
    }
    out.resize(bound);
    return out;
}

inline std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t size,
                                         size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf dst = static_cast<uLongf>(expected);
    if (::uncompress(out.data(), &dst, data, static_cast<uLong>(size)) != Z_OK ||
        dst != expected) {
        throw IoError("png: inflate failed");
    }
    return out;
}

inline uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(c * 255.0f + 0.5f);
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("read failed: " + path);
    return bytes;
}

// PNG scanline unfiltering (filters 0-4).
inline void png_unfilter(std::vector<uint8_t>& raw, int width, int height, int bpp) {
    const size_t stride = static_cast<size_t>(width) * bpp;
    for (int y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        const uint8_t* prev =
            y > 0 ? raw.data() + static_cast<size_t>(y - 1) * (stride + 1) + 1 : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i >= static_cast<size_t>(bpp)) ? prev[i - bpp] : 0;
            int add = 0;
            switch (filter) {
                case 0: add = 0; break;
                case 1: add = a; break;
                case 2: add = b; break;
                case 3: add = (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    add = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw FormatError("png: unknown filter " + std::to_string(filter));
            }
            cur[i] = static_cast<uint8_t>((cur[i] + add) & 0xff);
        }
    }
}

}  // namespace detail

// 8-bit RGB PNG.
inline void write_png(const std::string& path, const Image& img) {
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) raw.push_back(detail::to_byte(img.at(x, y, c)));
    }
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<uint32_t>(img.width));
    detail::put_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", detail::zlib_deflate(raw));
    detail::png_chunk(out, "IEND", {});
    detail::write_file(path, out);
}

// 8-bit grayscale PNG (values in [0,1]).
inline void write_png_gray(const std::string& path, int width, int height,
                           const std::vector<float>& gray) {
    if (gray.size() != static_cast<size_t>(width) * height) {
        throw ContractError("write_png_gray: buffer size mismatch");
    }
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + width));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < width; ++x)
            raw.push_back(detail::to_byte(gray[static_cast<size_t>(y) * width + x]));
    }
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<uint32_t>(width));
    detail::put_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit, grayscale
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", detail::zlib_deflate(raw));
    detail::png_chunk(out, "IEND", {});
    detail::write_file(path, out);
}

// Reads 8-bit grayscale, RGB, or RGBA PNGs (non-interlaced).
inline Image read_png(const std::string& path) {
    const std::vector<uint8_t> bytes = detail::read_file(path);
    static const uint8_t magic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 8) != 0) {
        throw FormatError("not a png file: " + path);
    }
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = detail::read_u32_be(bytes.data() + pos);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk in " + path);
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = static_cast<int>(detail::read_u32_be(payload));
            height = static_cast<int>(detail::read_u32_be(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw FormatError("png: interlaced not supported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0 || bit_depth != 8) {
        throw FormatError("png: unsupported header in " + path);
    }
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default: throw FormatError("png: unsupported color type in " + path);
    }
    const size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw =
        detail::zlib_inflate(idat.data(), idat.size(), static_cast<size_t>(height) * (stride + 1));
    detail::png_unfilter(raw, width, height, channels);

    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        for (int x = 0; x < width; ++x) {
            const uint8_t* px = row + static_cast<size_t>(x) * channels;
            for (int c = 0; c < 3; ++c) {
                const uint8_t v = channels == 1 ? px[0] : px[c];
                img.at(x, y, c) = static_cast<float>(v) / 255.0f;
            }
        }
    }
    return img;
}

}  // namespace motiondiff
