#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/clipgen.hpp"
#include "motiondiff/conditioning.hpp"
#include "motiondiff/flow.hpp"
#include "motiondiff/image.hpp"

namespace motiondiff {

// Motion intensity level with the raw flow magnitude it came from.
struct IntensityLevel {
    int level = 1;  // 1..10
    double raw = 0.0;
};

// Affine map from raw mean flow magnitude onto the ten discrete levels.
struct IntensityCalibration {
    double lo = 0.0;
    double hi = 1.0;
};

// Mean flow magnitude over all consecutive frame pairs and pixels.
inline double video_intensity(const std::vector<Image>& frames,
                              const FarnebackParams& params = {}) {
    if (frames.size() < 2) throw InputError("video_intensity: need at least 2 frames");
    double acc = 0;
    GrayImage prev = to_gray(frames[0]);
    for (size_t i = 1; i < frames.size(); ++i) {
        GrayImage next = to_gray(frames[i]);
        acc += farneback_flow(prev, next, params).mean_magnitude();
        prev = std::move(next);
    }
    return acc / static_cast<double>(frames.size() - 1);
}

// Continuous (unclamped) level; the discrete level clamps and rounds half-up.
inline double continuous_level(double raw, const IntensityCalibration& calib) {
    if (!(calib.lo < calib.hi)) throw ConfigError("intensity calibration needs lo < hi");
    return 1.0 + 9.0 * (raw - calib.lo) / (calib.hi - calib.lo);
}

inline IntensityLevel quantize_intensity(double raw, const IntensityCalibration& calib) {
    const double cont = continuous_level(raw, calib);
    const int level = static_cast<int>(std::clamp(std::floor(cont + 0.5), 1.0, 10.0));
    return {level, raw};
}

// Duplicated intensity embedding: two identical rows of the learned table.
template <typename Real>
Tensor<Real> encode_intensity(int level, const Tensor<Real>& table) {
    if (level < 1 || level > 10) {
        throw InputError("intensity level " + std::to_string(level) + " outside [1,10]");
    }
    if (table.rank() != 2 || table.dim(0) != 10) {
        throw ShapeError("intensity table must be [10,d], got " + shape_str(table.shape()));
    }
    return gather_rows(table, {level - 1, level - 1});
}

// Combines text tokens and the intensity embedding according to the fusion
// mode. TokenConcat appends the two c_M rows after the text rows; GlobalAdd
// pools c_M into a global vector consumed by the timestep-conditioning path;
// None and TextWord pass the tokens through unchanged (for TextWord the
// intensity word is already part of the caption).
template <typename Real>
Conditioning<Real> fuse_conditioning(const Tensor<Real>& text_tokens,
                                     const Tensor<Real>& intensity_rows, FusionMode mode) {
    Conditioning<Real> cond;
    cond.mode = mode;
    cond.text_token_count = text_tokens.dim(0);
    switch (mode) {
        case FusionMode::TokenConcat:
            if (intensity_rows.empty()) {
                throw ContractError("token_concat fusion requires an intensity embedding");
            }
            cond.tokens = concat<Real>({text_tokens, intensity_rows}, 0);
            break;
        case FusionMode::GlobalAdd: {
            if (intensity_rows.empty()) {
                throw ContractError("global_add fusion requires an intensity embedding");
            }
            cond.tokens = text_tokens;
            // mean over the duplicated rows = the table row itself
            const int d = intensity_rows.dim(1);
            auto pooled = scale(
                add(slice(intensity_rows, 0, 0, 1), slice(intensity_rows, 0, 1, 2)),
                Real(0.5));
            cond.global_vec = reshape(pooled, {d});
            break;
        }
        case FusionMode::None:
        case FusionMode::TextWord:
            cond.tokens = text_tokens;
            break;
    }
    return cond;
}

// End-to-end conditioning for a caption + level under the given fusion mode.
template <typename Real>
Conditioning<Real> build_conditioning(const std::vector<std::string>& caption, int level,
                                      FusionMode mode, const TokenTable<Real>& table,
                                      const Tensor<Real>& intensity_table) {
    std::vector<std::string> words = caption;
    if (mode == FusionMode::TextWord) {
        if (level < 1 || level > 10) {
            throw InputError("intensity level " + std::to_string(level) + " outside [1,10]");
        }
        words.push_back("intensity-" + std::to_string(level));
    }
    auto tok = tokenize(words, table);
    Tensor<Real> c_m;
    if (mode == FusionMode::TokenConcat || mode == FusionMode::GlobalAdd) {
        c_m = encode_intensity(level, intensity_table);
    }
    auto cond = fuse_conditioning(tok.embeddings, c_m, mode);
    cond.token_ids = tok.ids;
    return cond;
}

// ---------------------------------------------------------------------------
// Dataset annotation
// ---------------------------------------------------------------------------

struct AnnotationRecord {
    std::string clip;
    double raw = 0.0;
    int level = 1;
    std::string error;  // non-empty when the clip could not be processed
};

struct AnnotationResult {
    std::vector<AnnotationRecord> records;
    IntensityCalibration calibration;
};

// Raw magnitudes for every clip, then quantization. When no calibration is
// given it is derived from the 1st/99th percentile of the measured values.
// Clips below the static floor are labeled level 1. Failed clips produce an
// error record and processing continues.
inline AnnotationResult annotate_clips(
    const std::vector<std::pair<std::string, std::vector<Image>>>& clips,
    const FarnebackParams& params = {}, double static_floor = 0.05,
    const IntensityCalibration* fixed_calibration = nullptr) {
    AnnotationResult result;
    std::vector<double> raws;
    for (const auto& [id, frames] : clips) {
        AnnotationRecord rec;
        rec.clip = id;
        try {
            rec.raw = video_intensity(frames, params);
            raws.push_back(rec.raw);
        } catch (const Error& e) {
            rec.error = e.what();
        }
        result.records.push_back(std::move(rec));
    }
    if (fixed_calibration) {
        result.calibration = *fixed_calibration;
    } else {
        if (raws.empty()) throw InputError("annotate: no readable clips");
        std::sort(raws.begin(), raws.end());
        auto pct = [&](double p) {
            const double idx = p * (static_cast<double>(raws.size()) - 1);
            const size_t i = static_cast<size_t>(idx);
            const double frac = idx - static_cast<double>(i);
            return i + 1 < raws.size() ? raws[i] * (1 - frac) + raws[i + 1] * frac : raws[i];
        };
        result.calibration.lo = pct(0.01);
        result.calibration.hi = pct(0.99);
        if (!(result.calibration.lo < result.calibration.hi)) {
            result.calibration.hi = result.calibration.lo + 1.0;
        }
    }
    for (auto& rec : result.records) {
        if (!rec.error.empty()) continue;
        rec.level = rec.raw < static_floor
                        ? 1
                        : quantize_intensity(rec.raw, result.calibration).level;
    }
    return result;
}

// Reads a dataset directory (manifest.jsonl + clips/) and writes labels.jsonl:
// one {"clip","raw","level"} record per line, plus calibration.json.
inline AnnotationResult annotate_dataset(
    const std::string& dataset_dir, const FarnebackParams& params = {},
    double static_floor = 0.05, const IntensityCalibration* fixed_calibration = nullptr) {
    namespace fs = std::filesystem;
    const auto ids = read_manifest_ids(dataset_dir);
    std::vector<std::pair<std::string, std::vector<Image>>> clips;
    clips.reserve(ids.size());
    for (const auto& id : ids) {
        try {
            auto clip = load_clip((fs::path(dataset_dir) / "clips" / id).string());
            clips.emplace_back(id, std::move(clip.frames));
        } catch (const Error&) {
            clips.emplace_back(id, std::vector<Image>{});  // recorded as an error below
        }
    }
    auto result = annotate_clips(clips, params, static_floor, fixed_calibration);

    std::ofstream labels(fs::path(dataset_dir) / "labels.jsonl");
    if (!labels) throw IoError("cannot write labels in " + dataset_dir);
    for (const auto& rec : result.records) {
        nlohmann::ordered_json j;
        j["clip"] = rec.clip;
        if (rec.error.empty()) {
            j["raw"] = rec.raw;
            j["level"] = rec.level;
        } else {
            j["error"] = rec.error;
        }
        labels << j.dump() << "\n";
    }
    nlohmann::ordered_json cj;
    cj["lo"] = result.calibration.lo;
    cj["hi"] = result.calibration.hi;
    cj["static_floor"] = static_floor;
    std::ofstream cf(fs::path(dataset_dir) / "calibration.json");
    cf << cj.dump(2) << "\n";
    return result;
}

struct LabelRecord {
    std::string clip;
    double raw = 0.0;
    int level = 1;
};

inline std::vector<LabelRecord> read_labels(const std::string& dataset_dir) {
    std::ifstream f(std::filesystem::path(dataset_dir) / "labels.jsonl");
    if (!f) throw IoError("cannot open labels in " + dataset_dir);
    std::vector<LabelRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (j.contains("error")) continue;
        out.push_back({j.at("clip").get<std::string>(), j.at("raw").get<double>(),
                       j.at("level").get<int>()});
    }
    return out;
}

inline IntensityCalibration read_calibration(const std::string& dataset_dir) {
    std::ifstream f(std::filesystem::path(dataset_dir) / "calibration.json");
    if (!f) throw IoError("cannot open calibration in " + dataset_dir);
    const auto j = nlohmann::json::parse(f);
    return {j.at("lo").get<double>(), j.at("hi").get<double>()};
}

// The full synthesis pipeline: clip generation, manifest, then annotation.
inline AnnotationResult build_annotated_dataset(const std::string& outdir, int count,
                                                uint64_t seed, double speed_lo,
                                                double speed_hi, int frames = 8,
                                                int width = 64, int height = 64,
                                                const FarnebackParams& params = {},
                                                double static_floor = 0.05) {
    build_dataset(outdir, count, seed, speed_lo, speed_hi, frames, width, height);
    return annotate_dataset(outdir, params, static_floor);
}

}  // namespace motiondiff
