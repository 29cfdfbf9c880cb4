#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/errors.hpp"

namespace motiondiff {

struct TrajectoryKeypoint {
    int frame = 1;  // 1-based
    double x = 0;
    double y = 0;
};

// User-supplied motion path for one object phrase, in pixel coordinates.
struct Trajectory {
    std::vector<TrajectoryKeypoint> keypoints;
    int frames = 8;
    int width = 64;
    int height = 64;
    std::vector<std::string> object_phrase;
    std::vector<int> token_indices;  // optional explicit override
    double dx = 8;
    double dy = 8;

    void validate() const {
        if (keypoints.empty()) throw InputError("trajectory: at least one keypoint required");
        int prev = 0;
        for (const auto& kp : keypoints) {
            if (kp.frame <= prev) {
                throw InputError(kp.frame <= 0 || kp.frame > frames
                                     ? "trajectory: keypoint frame " +
                                           std::to_string(kp.frame) + " outside 1.." +
                                           std::to_string(frames)
                                     : "trajectory: duplicate or unsorted keypoint frame " +
                                           std::to_string(kp.frame));
            }
            prev = kp.frame;
            if (kp.frame > frames) {
                throw InputError("trajectory: keypoint frame " + std::to_string(kp.frame) +
                                 " outside 1.." + std::to_string(frames));
            }
            if (kp.x < 0 || kp.x >= width || kp.y < 0 || kp.y >= height) {
                throw InputError("trajectory: keypoint (" + std::to_string(kp.x) + "," +
                                 std::to_string(kp.y) + ") outside the frame");
            }
        }
        if (!(dx > 0) || !(dy > 0)) throw InputError("trajectory: tolerances must be positive");
    }
};

// Linear interpolation between keypoints with constant extrapolation at both
// ends. Keypoints must be sorted with distinct frame indices.
inline std::vector<std::array<double, 2>> interpolate_trajectory(
    const std::vector<TrajectoryKeypoint>& keypoints, int frames) {
    if (keypoints.empty()) throw InputError("trajectory: at least one keypoint required");
    for (size_t i = 1; i < keypoints.size(); ++i) {
        if (keypoints[i].frame == keypoints[i - 1].frame) {
            throw InputError("trajectory: duplicate keypoint frame " +
                             std::to_string(keypoints[i].frame));
        }
        if (keypoints[i].frame < keypoints[i - 1].frame) {
            throw InputError("trajectory: keypoints not sorted by frame");
        }
    }
    std::vector<std::array<double, 2>> points(static_cast<size_t>(frames));
    for (int f = 1; f <= frames; ++f) {
        const auto after = std::lower_bound(
            keypoints.begin(), keypoints.end(), f,
            [](const TrajectoryKeypoint& kp, int frame) { return kp.frame < frame; });
        std::array<double, 2> p;
        if (after == keypoints.begin()) {
            p = {after->x, after->y};
        } else if (after == keypoints.end()) {
            p = {keypoints.back().x, keypoints.back().y};
        } else if (after->frame == f) {
            p = {after->x, after->y};
        } else {
            const auto& hi = *after;
            const auto& lo = *(after - 1);
            const double w = static_cast<double>(f - lo.frame) / (hi.frame - lo.frame);
            p = {lo.x + w * (hi.x - lo.x), lo.y + w * (hi.y - lo.y)};
        }
        points[static_cast<size_t>(f - 1)] = p;
    }
    return points;
}

// Per-frame pixel boxes around trajectory points plus the latent-grid masks
// used by the guidance energy.
struct BoxTrack {
    struct Box {
        double x0, y0, x1, y1;
        double cx() const { return 0.5 * (x0 + x1); }
        double cy() const { return 0.5 * (y0 + y1); }
    };
    std::vector<Box> boxes;                   // per frame, pixel coordinates
    std::vector<std::vector<uint8_t>> masks;  // per frame, latent_h*latent_w flags
    int latent_h = 0;
    int latent_w = 0;
    int factor = 1;
};

inline BoxTrack expand_to_boxes(const std::vector<std::array<double, 2>>& points, double dx,
                                double dy, int width, int height, int factor) {
    if (!(dx > 0) || !(dy > 0)) throw InputError("box expansion: tolerances must be positive");
    if (factor < 1) throw InputError("box expansion: downsample factor must be >= 1");
    if (width % factor != 0 || height % factor != 0) {
        throw InputError("box expansion: extents not divisible by the downsample factor");
    }
    BoxTrack track;
    track.factor = factor;
    track.latent_w = width / factor;
    track.latent_h = height / factor;
    for (const auto& [x, y] : points) {
        if (x + dx < 0 || x - dx > width - 1 || y + dy < 0 || y - dy > height - 1) {
            throw InputError("box expansion: point (" + std::to_string(x) + "," +
                             std::to_string(y) + ") lies outside the frame");
        }
        BoxTrack::Box box;
        box.x0 = std::clamp(x - dx, 0.0, static_cast<double>(width - 1));
        box.x1 = std::clamp(x + dx, 0.0, static_cast<double>(width - 1));
        box.y0 = std::clamp(y - dy, 0.0, static_cast<double>(height - 1));
        box.y1 = std::clamp(y + dy, 0.0, static_cast<double>(height - 1));

        std::vector<uint8_t> mask(static_cast<size_t>(track.latent_h) * track.latent_w, 0);
        int count = 0;
        for (int r = 0; r < track.latent_h; ++r)
            for (int c = 0; c < track.latent_w; ++c) {
                const double cx = c * factor + factor * 0.5;
                const double cy = r * factor + factor * 0.5;
                if (cx >= box.x0 && cx <= box.x1 && cy >= box.y0 && cy <= box.y1) {
                    mask[static_cast<size_t>(r) * track.latent_w + c] = 1;
                    ++count;
                }
            }
        if (count == 0) {
            // A box narrower than a latent cell can miss every cell center;
            // fall back to the cell containing the trajectory point.
            const int c = std::clamp(static_cast<int>(x) / factor, 0, track.latent_w - 1);
            const int r = std::clamp(static_cast<int>(y) / factor, 0, track.latent_h - 1);
            mask[static_cast<size_t>(r) * track.latent_w + c] = 1;
        }
        track.boxes.push_back(box);
        track.masks.push_back(std::move(mask));
    }
    return track;
}

// ---------------------------------------------------------------------------
// Trajectory spec files (*.traj.json). Unknown fields are rejected.
// ---------------------------------------------------------------------------

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> kAllowed = {
        "object", "token_indices", "keypoints", "dx", "dy", "frame_width", "frame_height"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(kAllowed.begin(), kAllowed.end(), it.key()) == kAllowed.end()) {
            throw InputError("trajectory: unknown field '" + it.key() + "'");
        }
    }
    Trajectory t;
    const std::string phrase = j.at("object").get<std::string>();
    std::istringstream ss(phrase);
    std::string word;
    while (ss >> word) t.object_phrase.push_back(word);
    if (t.object_phrase.empty()) throw InputError("trajectory: empty object phrase");
    if (j.contains("token_indices"))
        t.token_indices = j.at("token_indices").get<std::vector<int>>();
    for (const auto& kp : j.at("keypoints")) {
        t.keypoints.push_back({kp.at("frame").get<int>(), kp.at("x").get<double>(),
                               kp.at("y").get<double>()});
    }
    t.dx = j.at("dx").get<double>();
    t.dy = j.at("dy").get<double>();
    t.width = j.at("frame_width").get<int>();
    t.height = j.at("frame_height").get<int>();
    return t;
}

inline Trajectory load_trajectory(const std::string& path, int frames) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open trajectory file: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("trajectory: invalid JSON in " + path + ": " + e.what());
    }
    Trajectory t = trajectory_from_json(j);
    t.frames = frames;
    t.validate();
    return t;
}

}  // namespace motiondiff
