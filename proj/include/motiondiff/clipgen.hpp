#pragma once

#include <array>
#include <map>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/errors.hpp"
#include "motiondiff/image.hpp"
#include "motiondiff/rng.hpp"

namespace motiondiff {

enum class ShapeKind { Disk, Square };
enum class PathKind { Line, Arc, Zigzag, RandomWalk };
enum class BackgroundKind { Flat, Textured };

inline const char* shape_to_string(ShapeKind s) {
    return s == ShapeKind::Disk ? "disk" : "square";
}
inline ShapeKind shape_from_string(const std::string& s) {
    if (s == "disk") return ShapeKind::Disk;
    if (s == "square") return ShapeKind::Square;
    throw InputError("unknown shape '" + s + "'");
}
inline const char* path_to_string(PathKind p) {
    switch (p) {
        case PathKind::Line: return "line";
        case PathKind::Arc: return "arc";
        case PathKind::Zigzag: return "zigzag";
        case PathKind::RandomWalk: return "random-walk";
    }
    return "line";
}
inline PathKind path_from_string(const std::string& s) {
    if (s == "line") return PathKind::Line;
    if (s == "arc") return PathKind::Arc;
    if (s == "zigzag") return PathKind::Zigzag;
    if (s == "random-walk") return PathKind::RandomWalk;
    throw InputError("unknown path '" + s + "'");
}

struct ClipSpec {
    ShapeKind shape = ShapeKind::Disk;
    std::array<float, 3> color = {1.0f, 0.1f, 0.1f};
    std::string color_name = "red";
    int size_px = 16;  // disk diameter / square side
    PathKind path = PathKind::Line;
    double speed = 2.0;  // px per frame
    int frames = 8;
    int width = 64;
    int height = 64;
    BackgroundKind background = BackgroundKind::Textured;
    uint64_t seed = 0;
};

struct Clip {
    std::vector<Image> frames;
    std::vector<std::array<double, 2>> trajectory;  // shape center per frame
    std::vector<std::string> caption;
};

namespace clipdetail {

// One fixed texture shared by every clip; optical flow needs gradients and the
// constant background keeps the toy task learnable.
inline const Image& global_texture(int width, int height) {
    static std::map<std::pair<int, int>, Image> cache;
    auto it = cache.find({width, height});
    if (it != cache.end()) return it->second;
    Image tex = [&] {
        Rng rng(0x7E57);
        auto value_grid = [&](int n) {
            std::vector<double> g(static_cast<size_t>(n) * n);
            for (auto& v : g) v = rng.uniform();
            return g;
        };
        auto sample = [](const std::vector<double>& g, int n, double u, double v) {
            const double x = u * (n - 1), y = v * (n - 1);
            const int x0 = std::clamp(static_cast<int>(x), 0, n - 2);
            const int y0 = std::clamp(static_cast<int>(y), 0, n - 2);
            const double fx = x - x0, fy = y - y0;
            auto at = [&](int xx, int yy) { return g[static_cast<size_t>(yy) * n + xx]; };
            return (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
                   fy * ((1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
        };
        const auto coarse = value_grid(9);
        const auto fine = value_grid(17);
        Image img(width, height);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double u = static_cast<double>(x) / (width - 1);
                const double v = static_cast<double>(y) / (height - 1);
                const double n = 0.67 * sample(coarse, 9, u, v) + 0.33 * sample(fine, 17, u, v);
                const float lum = static_cast<float>(0.15 + 0.30 * n);
                img.at(x, y, 0) = lum * 0.95f;
                img.at(x, y, 1) = lum;
                img.at(x, y, 2) = std::min(1.0f, lum * 1.05f);
            }
        return img;
    }();
    return cache.emplace(std::make_pair(width, height), std::move(tex)).first->second;
}

inline Image background_frame(const ClipSpec& spec) {
    if (spec.background == BackgroundKind::Textured) {
        return global_texture(spec.width, spec.height);
    }
    Image img(spec.width, spec.height);
    for (auto& v : img.rgb) v = 0.0f;
    return img;
}

// Anti-aliased coverage of the shape at pixel center (x+0.5, y+0.5).
inline float coverage(const ClipSpec& spec, double cx, double cy, int x, int y) {
    const double px = x + 0.5, py = y + 0.5;
    if (spec.shape == ShapeKind::Disk) {
        const double r = spec.size_px * 0.5;
        const double d = std::hypot(px - cx, py - cy);
        return static_cast<float>(std::clamp(r - d + 0.5, 0.0, 1.0));
    }
    const double half = spec.size_px * 0.5;
    const double covx = std::clamp(half - std::abs(px - cx) + 0.5, 0.0, 1.0);
    const double covy = std::clamp(half - std::abs(py - cy) + 0.5, 0.0, 1.0);
    return static_cast<float>(covx * covy);
}

struct Region {
    double lo_x, hi_x, lo_y, hi_y;
    bool contains(double x, double y) const {
        return x >= lo_x && x <= hi_x && y >= lo_y && y <= hi_y;
    }
};

inline std::vector<std::array<double, 2>> make_trajectory(const ClipSpec& spec, Rng& rng) {
    const double margin = spec.size_px * 0.5 + 2.0;
    const Region reg{margin, spec.width - 1 - margin, margin, spec.height - 1 - margin};
    if (reg.lo_x >= reg.hi_x || reg.lo_y >= reg.hi_y) {
        throw InputError("shape of size " + std::to_string(spec.size_px) +
                         " does not fit a " + std::to_string(spec.width) + "x" +
                         std::to_string(spec.height) + " frame");
    }
    const int L = spec.frames;
    std::vector<std::array<double, 2>> traj(static_cast<size_t>(L));

    auto bounce = [&](double& p, double& v, double lo, double hi) {
        if (p < lo) {
            p = 2 * lo - p;
            v = -v;
        } else if (p > hi) {
            p = 2 * hi - p;
            v = -v;
        }
    };

    switch (spec.path) {
        case PathKind::Line: {
            for (int attempt = 0; attempt < 64; ++attempt) {
                const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                const double dx = (L - 1) * spec.speed * std::cos(theta);
                const double dy = (L - 1) * spec.speed * std::sin(theta);
                const double x_lo = reg.lo_x - std::min(0.0, dx);
                const double x_hi = reg.hi_x - std::max(0.0, dx);
                const double y_lo = reg.lo_y - std::min(0.0, dy);
                const double y_hi = reg.hi_y - std::max(0.0, dy);
                if (x_lo > x_hi || y_lo > y_hi) continue;
                const double sx = rng.uniform(x_lo, x_hi);
                const double sy = rng.uniform(y_lo, y_hi);
                for (int i = 0; i < L; ++i)
                    traj[static_cast<size_t>(i)] = {sx + dx * i / std::max(1, L - 1),
                                                    sy + dy * i / std::max(1, L - 1)};
                return traj;
            }
            throw InputError("line path at speed " + std::to_string(spec.speed) +
                             " leaves the frame");
        }
        case PathKind::Arc: {
            for (int attempt = 0; attempt < 64; ++attempt) {
                const double max_r =
                    0.5 * std::min(reg.hi_x - reg.lo_x, reg.hi_y - reg.lo_y);
                const double r = rng.uniform(std::max(4.0, max_r * 0.4), std::max(4.5, max_r));
                const double cx = rng.uniform(reg.lo_x + r, reg.hi_x - r);
                const double cy = rng.uniform(reg.lo_y + r, reg.hi_y - r);
                if (!(cx > reg.lo_x && cx < reg.hi_x && cy > reg.lo_y && cy < reg.hi_y))
                    continue;
                const double omega = spec.speed / r;  // arc length == speed per frame
                const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                bool ok = true;
                for (int i = 0; i < L && ok; ++i) {
                    const double a = phase + omega * i;
                    const double x = cx + r * std::cos(a);
                    const double y = cy + r * std::sin(a);
                    traj[static_cast<size_t>(i)] = {x, y};
                    ok = reg.contains(x, y);
                }
                if (ok) return traj;
            }
            throw InputError("arc path at speed " + std::to_string(spec.speed) +
                             " leaves the frame");
        }
        case PathKind::Zigzag:
        case PathKind::RandomWalk: {
            double x = rng.uniform(reg.lo_x, reg.hi_x);
            double y = rng.uniform(reg.lo_y, reg.hi_y);
            double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            double vx = spec.speed * std::cos(theta);
            double vy = spec.speed * std::sin(theta);
            for (int i = 0; i < L; ++i) {
                traj[static_cast<size_t>(i)] = {x, y};
                if (spec.path == PathKind::RandomWalk) {
                    const double turn = rng.uniform(-0.8, 0.8);
                    const double c = std::cos(turn), s = std::sin(turn);
                    const double nvx = vx * c - vy * s;
                    vy = vx * s + vy * c;
                    vx = nvx;
                } else if (i > 0 && i % 3 == 0) {
                    vy = -vy;  // zigzag kink
                }
                x += vx;
                y += vy;
                bounce(x, vx, reg.lo_x, reg.hi_x);
                bounce(y, vy, reg.lo_y, reg.hi_y);
            }
            return traj;
        }
    }
    throw ContractError("unhandled path kind");
}

inline std::string direction_word(const std::vector<std::array<double, 2>>& traj) {
    const double dx = traj.back()[0] - traj.front()[0];
    const double dy = traj.back()[1] - traj.front()[1];
    if (std::abs(dx) >= std::abs(dy)) return dx >= 0 ? "right" : "left";
    return dy >= 0 ? "down" : "up";
}

}  // namespace clipdetail

inline Clip gen_clip(const ClipSpec& spec) {
    if (spec.frames < 1 || spec.width < 8 || spec.height < 8 || spec.size_px < 2 ||
        spec.speed < 0) {
        throw InputError("invalid clip spec");
    }
    Rng rng(spec.seed);
    Clip clip;
    clip.trajectory = spec.speed == 0
                          ? std::vector<std::array<double, 2>>(
                                static_cast<size_t>(spec.frames),
                                {spec.width * 0.5 + rng.uniform(-8, 8),
                                 spec.height * 0.5 + rng.uniform(-8, 8)})
                          : clipdetail::make_trajectory(spec, rng);

    const Image bg = clipdetail::background_frame(spec);
    clip.frames.reserve(static_cast<size_t>(spec.frames));
    for (int i = 0; i < spec.frames; ++i) {
        Image frame = bg;
        const auto [cx, cy] = clip.trajectory[static_cast<size_t>(i)];
        const int x0 = std::max(0, static_cast<int>(cx - spec.size_px * 0.5 - 2));
        const int x1 = std::min(spec.width, static_cast<int>(cx + spec.size_px * 0.5 + 3));
        const int y0 = std::max(0, static_cast<int>(cy - spec.size_px * 0.5 - 2));
        const int y1 = std::min(spec.height, static_cast<int>(cy + spec.size_px * 0.5 + 3));
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const float a = clipdetail::coverage(spec, cx, cy, x, y);
                if (a <= 0.0f) continue;
                for (int c = 0; c < 3; ++c)
                    frame.at(x, y, c) = frame.at(x, y, c) * (1 - a) + spec.color[c] * a;
            }
        clip.frames.push_back(std::move(frame));
    }
    clip.caption = {spec.color_name, shape_to_string(spec.shape), "moves",
                    clipdetail::direction_word(clip.trajectory)};
    return clip;
}

// ---------------------------------------------------------------------------
// Dataset construction and on-disk layout
// ---------------------------------------------------------------------------

struct DatasetEntry {
    std::string id;
    ClipSpec spec;
};

inline std::array<float, 3> color_by_name(const std::string& name) {
    if (name == "red") return {1.0f, 0.10f, 0.10f};
    if (name == "green") return {0.10f, 0.90f, 0.15f};
    if (name == "blue") return {0.15f, 0.25f, 1.0f};
    if (name == "yellow") return {0.95f, 0.90f, 0.10f};
    if (name == "cyan") return {0.10f, 0.85f, 0.90f};
    if (name == "magenta") return {0.90f, 0.15f, 0.85f};
    throw InputError("unknown color '" + name + "'");
}

// Stratifies speeds uniformly over [speed_lo, speed_hi] in ten bins.
inline std::vector<DatasetEntry> plan_dataset(int count, uint64_t seed, double speed_lo,
                                              double speed_hi, int frames = 8, int width = 64,
                                              int height = 64) {
    if (count < 10) throw ConfigError("dataset count must be >= 10");
    if (!(speed_lo >= 0) || !(speed_hi > speed_lo)) {
        throw ConfigError("invalid speed range [" + std::to_string(speed_lo) + "," +
                          std::to_string(speed_hi) + "]");
    }
    constexpr int kStrata = 10;
    static const char* kColors[] = {"red", "green", "blue", "yellow", "cyan", "magenta"};
    Rng rng(seed);
    std::vector<DatasetEntry> entries;
    entries.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int stratum = i % kStrata;
        const double bin = (speed_hi - speed_lo) / kStrata;
        ClipSpec spec;
        spec.speed = speed_lo + bin * stratum + rng.uniform(0.05, 0.95) * bin;
        spec.color_name = kColors[rng.uniform_int(0, 5)];
        spec.color = color_by_name(spec.color_name);
        spec.shape = rng.uniform() < 0.5 ? ShapeKind::Disk : ShapeKind::Square;
        const PathKind paths[] = {PathKind::Line, PathKind::Zigzag, PathKind::RandomWalk,
                                  PathKind::Arc};
        spec.path = paths[rng.uniform_int(0, 3)];
        spec.size_px = rng.uniform_int(14, 20);
        spec.frames = frames;
        spec.width = width;
        spec.height = height;
        spec.background = BackgroundKind::Textured;
        spec.seed = rng.next_u64();
        char id[32];
        std::snprintf(id, sizeof(id), "clip_%04d", i);
        entries.push_back({id, spec});
    }
    return entries;
}

inline nlohmann::ordered_json clip_spec_to_json(const ClipSpec& spec) {
    nlohmann::ordered_json j;
    j["shape"] = shape_to_string(spec.shape);
    j["color"] = {spec.color[0], spec.color[1], spec.color[2]};
    j["color_name"] = spec.color_name;
    j["size"] = spec.size_px;
    j["path"] = path_to_string(spec.path);
    j["speed"] = spec.speed;
    j["frames"] = spec.frames;
    j["width"] = spec.width;
    j["height"] = spec.height;
    j["background"] = spec.background == BackgroundKind::Textured ? "textured" : "flat";
    j["seed"] = spec.seed;
    return j;
}

inline ClipSpec clip_spec_from_json(const nlohmann::json& j) {
    ClipSpec spec;
    spec.shape = shape_from_string(j.at("shape").get<std::string>());
    spec.color = {j.at("color")[0].get<float>(), j.at("color")[1].get<float>(),
                  j.at("color")[2].get<float>()};
    spec.color_name = j.at("color_name").get<std::string>();
    spec.size_px = j.at("size").get<int>();
    spec.path = path_from_string(j.at("path").get<std::string>());
    spec.speed = j.at("speed").get<double>();
    spec.frames = j.at("frames").get<int>();
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.background = j.at("background").get<std::string>() == "textured"
                          ? BackgroundKind::Textured
                          : BackgroundKind::Flat;
    spec.seed = j.at("seed").get<uint64_t>();
    return spec;
}

// Writes clips/<id>/frame_%04d.png + clip.json per clip plus manifest.jsonl.
// Returns the manifest entries in write order.
inline std::vector<DatasetEntry> build_dataset(const std::string& outdir, int count,
                                               uint64_t seed, double speed_lo, double speed_hi,
                                               int frames = 8, int width = 64,
                                               int height = 64) {
    namespace fs = std::filesystem;
    const auto entries = plan_dataset(count, seed, speed_lo, speed_hi, frames, width, height);
    fs::create_directories(fs::path(outdir) / "clips");
    std::ofstream manifest(fs::path(outdir) / "manifest.jsonl");
    if (!manifest) throw IoError("cannot write manifest in " + outdir);
    for (const auto& entry : entries) {
        const Clip clip = gen_clip(entry.spec);
        const fs::path dir = fs::path(outdir) / "clips" / entry.id;
        fs::create_directories(dir);
        for (size_t i = 0; i < clip.frames.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
            write_png((dir / name).string(), clip.frames[i]);
        }
        nlohmann::ordered_json cj;
        cj["id"] = entry.id;
        cj["spec"] = clip_spec_to_json(entry.spec);
        cj["trajectory"] = nlohmann::json::array();
        for (const auto& p : clip.trajectory) cj["trajectory"].push_back({p[0], p[1]});
        cj["caption"] = clip.caption;
        std::ofstream cf(dir / "clip.json");
        cf << cj.dump(2) << "\n";

        nlohmann::ordered_json mj;
        mj["clip"] = entry.id;
        mj["speed"] = entry.spec.speed;
        mj["caption"] = clip.caption;
        manifest << mj.dump() << "\n";
    }
    return entries;
}

struct LoadedClip {
    std::string id;
    ClipSpec spec;
    std::vector<Image> frames;
    std::vector<std::array<double, 2>> trajectory;
    std::vector<std::string> caption;
};

inline LoadedClip load_clip(const std::string& clip_dir) {
    namespace fs = std::filesystem;
    std::ifstream cf(fs::path(clip_dir) / "clip.json");
    if (!cf) throw IoError("cannot open " + clip_dir + "/clip.json");
    nlohmann::json cj = nlohmann::json::parse(cf);
    LoadedClip clip;
    clip.id = cj.at("id").get<std::string>();
    clip.spec = clip_spec_from_json(cj.at("spec"));
    for (const auto& p : cj.at("trajectory"))
        clip.trajectory.push_back({p[0].get<double>(), p[1].get<double>()});
    clip.caption = cj.at("caption").get<std::vector<std::string>>();
    for (int i = 0; i < clip.spec.frames; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", i);
        clip.frames.push_back(read_png((fs::path(clip_dir) / name).string()));
    }
    return clip;
}

inline std::vector<std::string> read_manifest_ids(const std::string& dataset_dir) {
    std::ifstream mf(std::filesystem::path(dataset_dir) / "manifest.jsonl");
    if (!mf) throw IoError("cannot open manifest in " + dataset_dir);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        ids.push_back(nlohmann::json::parse(line).at("clip").get<std::string>());
    }
    return ids;
}

}  // namespace motiondiff
