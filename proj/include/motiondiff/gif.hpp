#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "motiondiff/errors.hpp"
#include "motiondiff/image.hpp"

namespace motiondiff {

// Animated GIF writer with a fixed 6x7x6 global palette and no dithering, so
// identical frame sequences always produce identical bytes.
namespace gifdetail {

inline int quant_level(float v, int levels) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<int>(c * static_cast<float>(levels - 1) + 0.5f);
}

inline uint8_t palette_index(float r, float g, float b) {
    return static_cast<uint8_t>(quant_level(r, 6) * 42 + quant_level(g, 7) * 6 +
                                quant_level(b, 6));
}

class BitPacker {
public:
    void put(uint16_t code, int bits) {
        acc_ |= static_cast<uint32_t>(code) << nbits_;
        nbits_ += bits;
        while (nbits_ >= 8) {
            bytes_.push_back(static_cast<uint8_t>(acc_ & 0xff));
            acc_ >>= 8;
            nbits_ -= 8;
        }
    }
    void flush() {
        if (nbits_ > 0) {
            bytes_.push_back(static_cast<uint8_t>(acc_ & 0xff));
            acc_ = 0;
            nbits_ = 0;
        }
    }
    const std::vector<uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<uint8_t> bytes_;
    uint32_t acc_ = 0;
    int nbits_ = 0;
};

// GIF-variant LZW with 8-bit roots (clear = 256, eoi = 257).
inline std::vector<uint8_t> lzw_encode(const std::vector<uint8_t>& pixels) {
    constexpr int kClear = 256;
    constexpr int kEoi = 257;
    BitPacker out;
    std::unordered_map<uint32_t, int> dict;
    int code_size = 9;
    int next_code = 258;
    auto reset = [&] {
        dict.clear();
        code_size = 9;
        next_code = 258;
    };
    out.put(kClear, code_size);
    int cur = pixels.empty() ? 0 : pixels[0];
    for (size_t i = 1; i < pixels.size(); ++i) {
        const int c = pixels[i];
        const uint32_t key = (static_cast<uint32_t>(cur) << 8) | static_cast<uint32_t>(c);
        auto it = dict.find(key);
        if (it != dict.end()) {
            cur = it->second;
            continue;
        }
        out.put(static_cast<uint16_t>(cur), code_size);
        if (next_code < 4096) {
            dict[key] = next_code++;
            if (next_code - 1 == (1 << code_size) && code_size < 12) ++code_size;
        } else {
            out.put(kClear, code_size);
            reset();
        }
        cur = c;
    }
    out.put(static_cast<uint16_t>(cur), code_size);
    out.put(kEoi, code_size);
    out.flush();
    return out.bytes();
}

inline void put_u16_le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

}  // namespace gifdetail

inline std::vector<uint8_t> encode_gif(const std::vector<Image>& frames, int delay_cs = 12) {
    if (frames.empty()) throw ContractError("encode_gif: no frames");
    const int w = frames[0].width;
    const int h = frames[0].height;
    for (const auto& f : frames) {
        if (f.width != w || f.height != h) throw ContractError("encode_gif: frame size mismatch");
    }

    std::vector<uint8_t> out;
    const char* header = "GIF89a";
    out.insert(out.end(), header, header + 6);
    gifdetail::put_u16_le(out, static_cast<uint16_t>(w));
    gifdetail::put_u16_le(out, static_cast<uint16_t>(h));
    out.push_back(0xF7);  // global color table, 256 entries
    out.push_back(0);     // background color
    out.push_back(0);     // aspect ratio

    // 6x7x6 color cube, padded to 256 entries.
    static const int rlev[6] = {0, 51, 102, 153, 204, 255};
    static const int glev[7] = {0, 43, 85, 128, 170, 213, 255};
    for (int r = 0; r < 6; ++r)
        for (int g = 0; g < 7; ++g)
            for (int b = 0; b < 6; ++b) {
                out.push_back(static_cast<uint8_t>(rlev[r]));
                out.push_back(static_cast<uint8_t>(glev[g]));
                out.push_back(static_cast<uint8_t>(rlev[b]));
            }
    for (int i = 252; i < 256; ++i) {
        out.push_back(0);
        out.push_back(0);
        out.push_back(0);
    }

    // Netscape loop-forever extension.
    const uint8_t loop_ext[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P',
                                'E',  '2',  '.',  '0', 0x03, 0x01, 0x00, 0x00, 0x00};
    out.insert(out.end(), loop_ext, loop_ext + sizeof(loop_ext));

    for (const auto& frame : frames) {
        // Graphic control: keep previous frame, fixed delay, no transparency.
        out.push_back(0x21);
        out.push_back(0xF9);
        out.push_back(0x04);
        out.push_back(0x04);
        gifdetail::put_u16_le(out, static_cast<uint16_t>(delay_cs));
        out.push_back(0x00);
        out.push_back(0x00);

        out.push_back(0x2C);  // image descriptor
        gifdetail::put_u16_le(out, 0);
        gifdetail::put_u16_le(out, 0);
        gifdetail::put_u16_le(out, static_cast<uint16_t>(w));
        gifdetail::put_u16_le(out, static_cast<uint16_t>(h));
        out.push_back(0x00);  // no local color table

        std::vector<uint8_t> pixels(static_cast<size_t>(w) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                pixels[static_cast<size_t>(y) * w + x] = gifdetail::palette_index(
                    frame.at(x, y, 0), frame.at(x, y, 1), frame.at(x, y, 2));

        out.push_back(8);  // LZW minimum code size
        const std::vector<uint8_t> lzw = gifdetail::lzw_encode(pixels);
        size_t off = 0;
        while (off < lzw.size()) {
            const size_t n = std::min<size_t>(255, lzw.size() - off);
            out.push_back(static_cast<uint8_t>(n));
            out.insert(out.end(), lzw.begin() + static_cast<long>(off),
                       lzw.begin() + static_cast<long>(off + n));
            off += n;
        }
        out.push_back(0x00);  // block terminator
    }
    out.push_back(0x3B);  // trailer
    return out;
}

inline void write_gif(const std::string& path, const std::vector<Image>& frames,
                      int delay_cs = 12) {
    detail::write_file(path, encode_gif(frames, delay_cs));
}

}  // namespace motiondiff
