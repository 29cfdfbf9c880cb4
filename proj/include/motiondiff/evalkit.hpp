#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/image.hpp"
#include "motiondiff/intensity.hpp"
#include "motiondiff/trajectory.hpp"

namespace motiondiff {

// Axis-aligned pixel box with continuous area.
struct EvalBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
};

// Per-frame detection: a box when the target color was found, plus the blob
// area as a confidence proxy.
struct DetectionResult {
    std::optional<EvalBox> box;
    double area = 0;
};

struct MotionMetrics {
    double miou = 0;
    double ap50 = 0;
    double cd = 0;
    double motion_alignment = 0;
};

// ---------------------------------------------------------------------------
// Color-blob detector (the desk-scale stand-in for an object detector)
// ---------------------------------------------------------------------------

// Largest 4-connected component of pixels within `threshold` Euclidean RGB
// distance of the target color; absent when nothing matches.
inline DetectionResult detect_blob(const Image& frame, const std::array<float, 3>& color,
                                   double threshold) {
    if (!(threshold > 0) || !(threshold < 1)) {
        throw ConfigError("detect_blob: threshold must lie in (0,1)");
    }
    const int w = frame.width, h = frame.height;
    std::vector<uint8_t> match(static_cast<size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d2 = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = frame.at(x, y, c) - color[static_cast<size_t>(c)];
                d2 += d * d;
            }
            match[static_cast<size_t>(y) * w + x] = d2 <= threshold * threshold;
        }

    DetectionResult best;
    std::vector<int> label(static_cast<size_t>(w) * h, 0);
    std::vector<std::pair<int, int>> stack;
    int next_label = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            if (!match[i] || label[i]) continue;
            ++next_label;
            int minx = x, maxx = x, miny = y, maxy = y, area = 0;
            stack.push_back({x, y});
            label[i] = next_label;
            while (!stack.empty()) {
                const auto [cx, cy] = stack.back();
                stack.pop_back();
                ++area;
                minx = std::min(minx, cx);
                maxx = std::max(maxx, cx);
                miny = std::min(miny, cy);
                maxy = std::max(maxy, cy);
                const int nx[4] = {cx - 1, cx + 1, cx, cx};
                const int ny[4] = {cy, cy, cy - 1, cy + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
                    const size_t j = static_cast<size_t>(ny[k]) * w + nx[k];
                    if (match[j] && !label[j]) {
                        label[j] = next_label;
                        stack.push_back({nx[k], ny[k]});
                    }
                }
            }
            if (area > best.area) {
                best.area = area;
                best.box = EvalBox{static_cast<double>(minx), static_cast<double>(miny),
                                   static_cast<double>(maxx + 1),
                                   static_cast<double>(maxy + 1)};
            }
        }
    return best;
}

// ---------------------------------------------------------------------------
// Direction metrics
// ---------------------------------------------------------------------------

inline double iou(const EvalBox& a, const EvalBox& b) {
    if (a.empty() || b.empty()) throw InputError("iou: empty box");
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

inline EvalBox box_from_track(const BoxTrack::Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

// mIoU / AP50 / diagonal-normalized centroid distance against the target
// track. Absent detections score IoU 0 and CD 1 for their frame.
inline MotionMetrics evaluate_direction(const std::vector<DetectionResult>& detections,
                                        const BoxTrack& track, int frame_width,
                                        int frame_height) {
    if (detections.size() != track.boxes.size()) {
        throw ContractError("evaluate_direction: " + std::to_string(detections.size()) +
                            " detections vs " + std::to_string(track.boxes.size()) +
                            " target frames");
    }
    const double diag = std::hypot(static_cast<double>(frame_width),
                                   static_cast<double>(frame_height));
    MotionMetrics m;
    for (size_t i = 0; i < detections.size(); ++i) {
        const EvalBox target = box_from_track(track.boxes[i]);
        if (detections[i].box) {
            const double v = iou(*detections[i].box, target);
            m.miou += v;
            if (v >= 0.5) m.ap50 += 1;
            const double dist = std::hypot(detections[i].box->cx() - target.cx(),
                                           detections[i].box->cy() - target.cy());
            m.cd += std::min(1.0, dist / diag);
        } else {
            m.cd += 1.0;
        }
    }
    const double n = static_cast<double>(detections.size());
    m.miou /= n;
    m.ap50 /= n;
    m.cd /= n;
    return m;
}

// |continuous level of the measured flow - target| / 9. Uses the same
// calibration as the training labels; the continuous level is unclamped.
inline double motion_alignment(const std::vector<Image>& frames, int target_level,
                               const IntensityCalibration& calib,
                               const FarnebackParams& params = {}) {
    if (target_level < 1 || target_level > 10) {
        throw InputError("motion_alignment: target level outside [1,10]");
    }
    const double raw = video_intensity(frames, params);  // throws on single frame
    return std::abs(continuous_level(raw, calib) - target_level) / 9.0;
}

// ---------------------------------------------------------------------------
// Attention-map visualization
// ---------------------------------------------------------------------------

// Writes one grayscale image per (layer, frame, token) plus a contact sheet
// of all maps laid out layer-row by frame-column. Maps are min-max normalized
// per image; a flat map renders mid-gray.
template <typename Real>
std::vector<std::string> attention_heatmap_export(
    const std::vector<AttentionRecord<Real>>& records, int latent_h, int latent_w,
    const std::vector<int>& token_indices, int step, const std::string& dir) {
    if (records.empty()) throw ContractError("heatmap export: no records");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("heatmap export: cannot create " + dir);

    auto normalize = [](std::vector<float>& v) {
        float lo = v[0], hi = v[0];
        for (float x : v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
        if (hi <= lo) {
            std::fill(v.begin(), v.end(), 0.5f);
        } else {
            for (float& x : v) x = (x - lo) / (hi - lo);
        }
    };

    std::vector<std::string> written;
    for (const auto& rec : records) {
        const int n = rec.map.dim(1);
        for (int tok : token_indices) {
            if (tok < 0 || tok >= n) {
                throw ContractError("heatmap export: token index " + std::to_string(tok) +
                                    " outside [0," + std::to_string(n) + ")");
            }
            std::vector<float> gray(static_cast<size_t>(latent_h) * latent_w);
            for (int u = 0; u < latent_h * latent_w; ++u)
                gray[static_cast<size_t>(u)] =
                    static_cast<float>(rec.map.data()[static_cast<int64_t>(u) * n + tok]);
            normalize(gray);
            char name[96];
            std::snprintf(name, sizeof(name), "attn_L%s_f%d_t%d_s%d.png",
                          guidance_layer_name(rec.layer), rec.frame, tok, step);
            const std::string path = (fs::path(dir) / name).string();
            write_png_gray(path, latent_w, latent_h, gray);
            written.push_back(path);
        }
    }

    // contact sheet: rows = (layer, token), columns = frames
    std::map<std::pair<int, int>, std::vector<const AttentionRecord<Real>*>> rows;
    for (const auto& rec : records)
        for (int tok : token_indices)
            rows[{static_cast<int>(rec.layer), tok}].push_back(&rec);
    const int cell = std::max(latent_h, latent_w) + 2;
    int max_frames = 0;
    for (auto& [key, recs] : rows) max_frames = std::max(max_frames, static_cast<int>(recs.size()));
    std::vector<float> sheet(static_cast<size_t>(rows.size()) * cell * max_frames * cell, 0.0f);
    const int sheet_w = max_frames * cell;
    int row_idx = 0;
    for (auto& [key, recs] : rows) {
        std::vector<const AttentionRecord<Real>*> ordered = recs;
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto* a, const auto* b) { return a->frame < b->frame; });
        for (size_t col = 0; col < ordered.size(); ++col) {
            const auto& rec = *ordered[col];
            const int n = rec.map.dim(1);
            std::vector<float> gray(static_cast<size_t>(latent_h) * latent_w);
            for (int u = 0; u < latent_h * latent_w; ++u)
                gray[static_cast<size_t>(u)] = static_cast<float>(
                    rec.map.data()[static_cast<int64_t>(u) * n + key.second]);
            normalize(gray);
            for (int y = 0; y < latent_h; ++y)
                for (int x = 0; x < latent_w; ++x)
                    sheet[static_cast<size_t>(row_idx * cell + y + 1) * sheet_w +
                          static_cast<size_t>(col) * cell + x + 1] =
                        gray[static_cast<size_t>(y) * latent_w + x];
        }
        ++row_idx;
    }
    char sheet_name[64];
    std::snprintf(sheet_name, sizeof(sheet_name), "attn_sheet_s%d.png", step);
    const std::string sheet_path = (fs::path(dir) / sheet_name).string();
    write_png_gray(sheet_path, sheet_w, row_idx * cell, sheet);
    written.push_back(sheet_path);
    return written;
}

}  // namespace motiondiff
