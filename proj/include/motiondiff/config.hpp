#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/denoiser.hpp"
#include "motiondiff/errors.hpp"
#include "motiondiff/flow.hpp"
#include "motiondiff/schedule.hpp"

namespace motiondiff {

// Resolved run configuration. Loaded from a single JSON file; command-line
// flags override individual fields. The resolved form is echoed into every
// output directory.
struct RunConfig {
    // model
    int d = 32;
    int latent_channels = 3;
    int frames = 8;
    bool use_fps = false;

    // world / data
    int width = 64;
    int height = 64;
    int downsample = 4;
    int dataset_count = 100;
    double speed_min = 0.5;
    double speed_max = 4.5;

    // schedule
    int steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string sigma_from = "alpha_bar";

    // guidance
    double eta = 200.0;
    double lambda = 0.5;
    int t_g = 41;
    int inner_iterations = 1;
    std::vector<std::string> guidance_layers = {"mid", "up"};
    double box_dx = 8.0;
    double box_dy = 8.0;
    bool smoothness_once_per_layer = false;

    // intensity conditioning
    std::string fusion = "token_concat";
    double static_floor = 0.05;
    FarnebackParams farneback;

    // training
    int train_steps = 2000;
    double lr = 2e-3;
    double momentum = 0.9;
    int batch = 2;
    int ckpt_every = 500;

    // misc
    uint64_t seed = 0;
    std::string precision = "f32";
    int workers = 1;
    double fps = 8.0;
    double detect_threshold = 0.35;
    std::vector<uint64_t> ablation_seeds = {101, 102, 103, 104, 105, 106, 107, 108, 109, 110,
                                            111, 112, 113, 114, 115, 116, 117, 118, 119, 120};

    int latent_h() const { return height / downsample; }
    int latent_w() const { return width / downsample; }

    ModelDims model_dims() const {
        ModelDims dims;
        dims.d = d;
        dims.latent_channels = latent_channels;
        dims.latent_h = latent_h();
        dims.latent_w = latent_w();
        dims.frames = frames;
        dims.use_fps = use_fps;
        return dims;
    }

    void validate() const {
        if (d < 2 || d % 2 != 0) throw ConfigError("model d must be a positive even number");
        if (width < 8 || height < 8 || frames < 1) throw ConfigError("invalid world extents");
        if (downsample < 1 || width % downsample != 0 || height % downsample != 0) {
            throw ConfigError("frame extents must be divisible by the downsample factor");
        }
        if (!(speed_min >= 0) || !(speed_max > speed_min)) {
            throw ConfigError("invalid speed range [" + std::to_string(speed_min) + "," +
                              std::to_string(speed_max) + "]");
        }
        if (steps < 1 || !(beta_start > 0) || !(beta_start <= beta_end) || !(beta_end < 1)) {
            throw ConfigError("invalid schedule parameters");
        }
        (void)sigma_mode_from_string(sigma_from);
        if (eta < 0 || lambda < 0) throw ConfigError("eta and lambda must be >= 0");
        if (t_g < 1 || t_g > steps) {
            throw ConfigError("t_g " + std::to_string(t_g) + " outside [1," +
                              std::to_string(steps) + "]");
        }
        if (inner_iterations < 1) throw ConfigError("inner_iterations must be >= 1");
        if (guidance_layers.empty()) throw ConfigError("guidance layer set is empty");
        (void)GuidanceLayerSet::from_strings(guidance_layers);
        if (!(box_dx > 0) || !(box_dy > 0)) throw ConfigError("box tolerances must be > 0");
        (void)fusion_from_string(fusion);
        if (train_steps < 0 || batch < 1 || !(lr >= 0) || momentum < 0 || momentum >= 1) {
            throw ConfigError("invalid training parameters");
        }
        if (precision != "f32" && precision != "f64") {
            throw ConfigError("precision must be f32 or f64");
        }
        if (!(detect_threshold > 0) || !(detect_threshold < 1)) {
            throw ConfigError("detect_threshold must lie in (0,1)");
        }
        if (dataset_count < 10) throw ConfigError("dataset count must be >= 10");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }

    template <typename Real>
    NoiseSchedule<Real> schedule() const {
        return build_schedule<Real>(steps, static_cast<Real>(beta_start),
                                    static_cast<Real>(beta_end),
                                    sigma_mode_from_string(sigma_from));
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["model"] = {{"d", d},
                      {"latent_channels", latent_channels},
                      {"frames", frames},
                      {"use_fps", use_fps}};
        j["data"] = {{"width", width},           {"height", height},
                     {"downsample", downsample}, {"count", dataset_count},
                     {"speed_min", speed_min},   {"speed_max", speed_max}};
        j["schedule"] = {{"steps", steps},
                         {"beta_start", beta_start},
                         {"beta_end", beta_end},
                         {"sigma_from", sigma_from}};
        j["guidance"] = {{"eta", eta},
                         {"lambda", lambda},
                         {"t_g", t_g},
                         {"inner_iterations", inner_iterations},
                         {"layers", guidance_layers},
                         {"dx", box_dx},
                         {"dy", box_dy},
                         {"smoothness_once_per_layer", smoothness_once_per_layer}};
        j["mim"] = {{"fusion", fusion},
                    {"static_floor", static_floor},
                    {"farneback",
                     {{"pyr_scale", farneback.pyr_scale},
                      {"levels", farneback.levels},
                      {"winsize", farneback.winsize},
                      {"iterations", farneback.iterations},
                      {"poly_n", farneback.poly_n},
                      {"poly_sigma", farneback.poly_sigma}}}};
        j["train"] = {{"steps", train_steps},
                      {"lr", lr},
                      {"momentum", momentum},
                      {"batch", batch},
                      {"ckpt_every", ckpt_every}};
        j["seed"] = seed;
        j["precision"] = precision;
        j["workers"] = workers;
        j["fps"] = fps;
        j["detect_threshold"] = detect_threshold;
        j["ablation_seeds"] = ablation_seeds;
        return j;
    }
};

namespace configdetail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& allowed,
                           const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("config: unknown field '" + scope + it.key() + "'");
    }
}

}  // namespace configdetail

inline RunConfig config_from_json(const nlohmann::json& j) {
    using configdetail::reject_unknown;
    RunConfig c;
    reject_unknown(j,
                   {"model", "data", "schedule", "guidance", "mim", "train", "seed",
                    "precision", "workers", "fps", "detect_threshold", "ablation_seeds"},
                   "");
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, {"d", "latent_channels", "frames", "use_fps"}, "model.");
        c.d = m.value("d", c.d);
        c.latent_channels = m.value("latent_channels", c.latent_channels);
        c.frames = m.value("frames", c.frames);
        c.use_fps = m.value("use_fps", c.use_fps);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"width", "height", "downsample", "count", "speed_min", "speed_max"},
                       "data.");
        c.width = d.value("width", c.width);
        c.height = d.value("height", c.height);
        c.downsample = d.value("downsample", c.downsample);
        c.dataset_count = d.value("count", c.dataset_count);
        c.speed_min = d.value("speed_min", c.speed_min);
        c.speed_max = d.value("speed_max", c.speed_max);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        reject_unknown(s, {"steps", "beta_start", "beta_end", "sigma_from"}, "schedule.");
        c.steps = s.value("steps", c.steps);
        c.beta_start = s.value("beta_start", c.beta_start);
        c.beta_end = s.value("beta_end", c.beta_end);
        c.sigma_from = s.value("sigma_from", c.sigma_from);
    }
    if (j.contains("guidance")) {
        const auto& g = j.at("guidance");
        reject_unknown(g,
                       {"eta", "lambda", "t_g", "inner_iterations", "layers", "dx", "dy",
                        "smoothness_once_per_layer"},
                       "guidance.");
        c.eta = g.value("eta", c.eta);
        c.lambda = g.value("lambda", c.lambda);
        c.t_g = g.value("t_g", c.t_g);
        c.inner_iterations = g.value("inner_iterations", c.inner_iterations);
        if (g.contains("layers"))
            c.guidance_layers = g.at("layers").get<std::vector<std::string>>();
        c.box_dx = g.value("dx", c.box_dx);
        c.box_dy = g.value("dy", c.box_dy);
        c.smoothness_once_per_layer =
            g.value("smoothness_once_per_layer", c.smoothness_once_per_layer);
    }
    if (j.contains("mim")) {
        const auto& m = j.at("mim");
        reject_unknown(m, {"fusion", "static_floor", "farneback"}, "mim.");
        c.fusion = m.value("fusion", c.fusion);
        c.static_floor = m.value("static_floor", c.static_floor);
        if (m.contains("farneback")) {
            const auto& f = m.at("farneback");
            reject_unknown(
                f, {"pyr_scale", "levels", "winsize", "iterations", "poly_n", "poly_sigma"},
                "mim.farneback.");
            c.farneback.pyr_scale = f.value("pyr_scale", c.farneback.pyr_scale);
            c.farneback.levels = f.value("levels", c.farneback.levels);
            c.farneback.winsize = f.value("winsize", c.farneback.winsize);
            c.farneback.iterations = f.value("iterations", c.farneback.iterations);
            c.farneback.poly_n = f.value("poly_n", c.farneback.poly_n);
            c.farneback.poly_sigma = f.value("poly_sigma", c.farneback.poly_sigma);
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, {"steps", "lr", "momentum", "batch", "ckpt_every"}, "train.");
        c.train_steps = t.value("steps", c.train_steps);
        c.lr = t.value("lr", c.lr);
        c.momentum = t.value("momentum", c.momentum);
        c.batch = t.value("batch", c.batch);
        c.ckpt_every = t.value("ckpt_every", c.ckpt_every);
    }
    c.seed = j.value("seed", c.seed);
    c.precision = j.value("precision", c.precision);
    c.workers = j.value("workers", c.workers);
    c.fps = j.value("fps", c.fps);
    c.detect_threshold = j.value("detect_threshold", c.detect_threshold);
    if (j.contains("ablation_seeds"))
        c.ablation_seeds = j.at("ablation_seeds").get<std::vector<uint64_t>>();
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace motiondiff
