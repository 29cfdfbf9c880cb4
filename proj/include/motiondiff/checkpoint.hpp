#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/denoiser.hpp"
#include "motiondiff/intensity.hpp"

namespace motiondiff {

// Checkpoint file layout:
//   "MJTO" | u32 version | u32 header length | header JSON | f32 blobs
// Blobs are little-endian 32-bit floats in header order; load(save(p))
// reproduces p bit-exactly for f32 parameters.
inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckptdetail {

inline void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline uint32_t read_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::vector<uint8_t>& out, float v) {
    put_u32_le(out, std::bit_cast<uint32_t>(v));
}

inline float read_f32_le(const uint8_t* p) { return std::bit_cast<float>(read_u32_le(p)); }

}  // namespace ckptdetail

template <typename Real>
struct CheckpointData {
    DenoiserParams<Real> params;
    int64_t step = 0;
    IntensityCalibration calibration;
};

template <typename Real>
std::vector<uint8_t> encode_checkpoint(DenoiserParams<Real>& params, int64_t step,
                                       const IntensityCalibration& calib) {
    nlohmann::ordered_json header;
    header["dims"] = {{"d", params.dims.d},
                      {"latent_channels", params.dims.latent_channels},
                      {"latent_h", params.dims.latent_h},
                      {"latent_w", params.dims.latent_w},
                      {"frames", params.dims.frames},
                      {"use_fps", params.dims.use_fps}};
    header["fusion"] = fusion_to_string(params.fusion);
    header["step"] = step;
    header["calibration"] = {{"lo", calib.lo}, {"hi", calib.hi}};
    header["blobs"] = nlohmann::json::array();
    auto named = params.named_params();
    for (auto& [name, t] : named) {
        header["blobs"].push_back({{"name", name}, {"shape", t->shape()}});
    }
    const std::string hs = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), {'M', 'J', 'T', 'O'});
    ckptdetail::put_u32_le(out, kCheckpointVersion);
    ckptdetail::put_u32_le(out, static_cast<uint32_t>(hs.size()));
    out.insert(out.end(), hs.begin(), hs.end());
    for (auto& [name, t] : named) {
        for (int64_t i = 0; i < t->numel(); ++i)
            ckptdetail::put_f32_le(out, static_cast<float>(t->data()[i]));
    }
    return out;
}

template <typename Real>
void save_checkpoint(const std::string& path, DenoiserParams<Real>& params, int64_t step,
                     const IntensityCalibration& calib) {
    const auto bytes = encode_checkpoint(params, step, calib);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

template <typename Real>
CheckpointData<Real> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint read failed: " + path);

    if (bytes.size() < 12 || std::memcmp(bytes.data(), "MJTO", 4) != 0) {
        throw FormatError("not a checkpoint file: " + path);
    }
    const uint32_t version = ckptdetail::read_u32_le(bytes.data() + 4);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
    }
    const uint32_t hlen = ckptdetail::read_u32_le(bytes.data() + 8);
    if (bytes.size() < 12 + hlen) throw FormatError("truncated checkpoint header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt checkpoint header: " + std::string(e.what()));
    }

    ModelDims dims;
    const auto& jd = header.at("dims");
    dims.d = jd.at("d").get<int>();
    dims.latent_channels = jd.at("latent_channels").get<int>();
    dims.latent_h = jd.at("latent_h").get<int>();
    dims.latent_w = jd.at("latent_w").get<int>();
    dims.frames = jd.at("frames").get<int>();
    dims.use_fps = jd.at("use_fps").get<bool>();

    CheckpointData<Real> data;
    data.params = init_denoiser<Real>(dims, fusion_from_string(header.at("fusion")), 0);
    data.step = header.at("step").get<int64_t>();
    data.calibration.lo = header.at("calibration").at("lo").get<double>();
    data.calibration.hi = header.at("calibration").at("hi").get<double>();

    auto named = data.params.named_params();
    const auto& blobs = header.at("blobs");
    if (blobs.size() != named.size()) {
        throw FormatError("checkpoint lists " + std::to_string(blobs.size()) +
                          " blobs, model has " + std::to_string(named.size()));
    }
    size_t offset = 12 + hlen;
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& blob = blobs[i];
        auto& [name, tensor] = named[i];
        if (blob.at("name").get<std::string>() != name) {
            throw FormatError("checkpoint blob '" + blob.at("name").get<std::string>() +
                              "' does not match parameter '" + name + "'");
        }
        const Shape shape = blob.at("shape").get<Shape>();
        if (shape != tensor->shape()) {
            throw FormatError("checkpoint blob '" + name + "' shape " + shape_str(shape) +
                              " does not match model " + shape_str(tensor->shape()));
        }
        const size_t n = static_cast<size_t>(tensor->numel());
        if (offset + 4 * n > bytes.size()) throw FormatError("truncated checkpoint: " + path);
        for (size_t j = 0; j < n; ++j)
            tensor->data()[j] =
                static_cast<Real>(ckptdetail::read_f32_le(bytes.data() + offset + 4 * j));
        offset += 4 * n;
    }
    if (offset != bytes.size()) throw FormatError("trailing bytes in checkpoint: " + path);
    return data;
}

}  // namespace motiondiff
