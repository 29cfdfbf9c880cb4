#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motiondiff/checkpoint.hpp"
#include "motiondiff/clipgen.hpp"
#include "motiondiff/codec.hpp"
#include "motiondiff/config.hpp"
#include "motiondiff/evalkit.hpp"
#include "motiondiff/gif.hpp"
#include "motiondiff/guidance.hpp"
#include "motiondiff/training.hpp"

namespace motiondiff {

// The frozen toy vocabulary embedding is shared by every command; it stands in
// for a pretrained text encoder and must not vary with the run seed.
inline constexpr uint64_t kTokenTableSeed = 0x746f6b656e;

template <typename Real>
const TokenTable<Real>& shared_token_table(int d) {
    static std::map<int, TokenTable<Real>> cache;
    auto it = cache.find(d);
    if (it == cache.end()) it = cache.emplace(d, make_token_table<Real>(d, kTokenTableSeed)).first;
    return it->second;
}

namespace fsdetail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);
}

inline void echo_config(const RunConfig& cfg, const std::string& dir) {
    std::ofstream f(std::filesystem::path(dir) / "config.json");
    if (!f) throw IoError("cannot write resolved config in " + dir);
    f << cfg.to_json().dump(2) << "\n";
}

}  // namespace fsdetail

// ---------------------------------------------------------------------------
// synth / annotate
// ---------------------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg, const std::string& outdir) {
    fsdetail::ensure_dir(outdir);
    fsdetail::echo_config(cfg, outdir);
    build_dataset(outdir, cfg.dataset_count, cfg.seed, cfg.speed_min, cfg.speed_max,
                  cfg.frames, cfg.width, cfg.height);
    auto result = annotate_dataset(outdir, cfg.farneback, cfg.static_floor);
    std::cout << "dataset: " << result.records.size() << " clips, calibration ["
              << result.calibration.lo << ", " << result.calibration.hi << "]\n";
}

inline void cmd_annotate(const RunConfig& cfg, const std::string& dataset_dir) {
    auto result = annotate_dataset(dataset_dir, cfg.farneback, cfg.static_floor);
    int errors = 0;
    for (const auto& rec : result.records)
        if (!rec.error.empty()) ++errors;
    std::cout << "annotated " << result.records.size() << " clips (" << errors
              << " errors), calibration [" << result.calibration.lo << ", "
              << result.calibration.hi << "]\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <typename Real>
void cmd_train(const RunConfig& cfg, const std::string& dataset_dir,
               const std::string& outdir, const std::string& resume = "") {
    fsdetail::ensure_dir(outdir);
    fsdetail::echo_config(cfg, outdir);
    const auto schedule = cfg.template schedule<Real>();
    const auto& table = shared_token_table<Real>(cfg.d);

    DenoiserParams<Real> params;
    IntensityCalibration calib;
    int64_t start_step = 0;
    if (!resume.empty()) {
        auto data = load_checkpoint<Real>(resume);
        params = std::move(data.params);
        calib = data.calibration;
        start_step = data.step;
    } else {
        params = init_denoiser<Real>(cfg.model_dims(), fusion_from_string(cfg.fusion),
                                     cfg.seed);
        calib = read_calibration(dataset_dir);
    }

    DatasetBatcher<Real> batcher(dataset_dir, cfg.downsample);
    SgdState<Real> opt;
    opt.lr = cfg.lr;
    opt.momentum = cfg.momentum;

    const std::string loss_path = (std::filesystem::path(outdir) / "loss.csv").string();
    std::ofstream loss_csv(loss_path, start_step > 0 ? std::ios::app : std::ios::out);
    if (!loss_csv) throw IoError("cannot write " + loss_path);
    if (start_step == 0) loss_csv << "step,loss\n";

    const std::string ckpt_path = (std::filesystem::path(outdir) / "model.mjto").string();
    for (int64_t step = start_step; step < start_step + cfg.train_steps; ++step) {
        const auto batch = batcher.batch(static_cast<int>(step), cfg.batch);
        const Real loss = train_step(params, batch, table, schedule, opt,
                                     derive_seed(cfg.seed, static_cast<uint64_t>(step)));
        loss_csv << step + 1 << "," << static_cast<double>(loss) << "\n";
        if ((step + 1 - start_step) % std::max(1, cfg.ckpt_every) == 0) {
            save_checkpoint(ckpt_path, params, step + 1, calib);
        }
        if ((step + 1) % 100 == 0) {
            std::cout << "step " << step + 1 << " loss " << static_cast<double>(loss)
                      << std::endl;
        }
    }
    save_checkpoint(ckpt_path, params, start_step + cfg.train_steps, calib);
    std::cout << "checkpoint: " << ckpt_path << "\n";
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

template <typename Real>
struct GenerateOutput {
    LatentVideo<Real> latent;
    std::vector<Image> frames;
    std::vector<GuidanceTraceRow> trace;
};

// Core generation shared by the CLI, the ablations, and the acceptance suite.
template <typename Real>
GenerateOutput<Real> run_generate(const RunConfig& cfg, const DenoiserParams<Real>& params,
                                  const IntensityCalibration& calib,
                                  const std::vector<std::string>& prompt, int level,
                                  const std::optional<Trajectory>& traj, uint64_t seed,
                                  const StepObserver<Real>& observer = {}) {
    (void)calib;
    const auto schedule = cfg.template schedule<Real>();
    const auto& table = shared_token_table<Real>(params.dims.d);
    auto cond = build_conditioning(prompt, level, params.fusion, table,
                                   params.intensity_table);
    const Shape latent_shape{params.dims.frames, params.dims.latent_channels,
                             params.dims.latent_h, params.dims.latent_w};

    GenerateOutput<Real> out;
    if (traj && cfg.eta > 0) {
        Trajectory t = *traj;
        t.frames = params.dims.frames;
        t.validate();
        auto points = interpolate_trajectory(t.keypoints, t.frames);
        auto track = expand_to_boxes(points, t.dx, t.dy, t.width, t.height, cfg.downsample);
        auto token_indices = resolve_token_indices(t, prompt, cond);
        GuidanceConfig<Real> gcfg;
        gcfg.eta = static_cast<Real>(cfg.eta);
        gcfg.lambda = static_cast<Real>(cfg.lambda);
        gcfg.final_timestep = cfg.t_g;
        gcfg.inner_iterations = cfg.inner_iterations;
        gcfg.layers = GuidanceLayerSet::from_strings(cfg.guidance_layers);
        gcfg.smoothness_once_per_layer = cfg.smoothness_once_per_layer;
        out.latent = guided_sample(params, cond, track, token_indices, gcfg, schedule,
                                   latent_shape, seed, &out.trace, observer, cfg.fps);
    } else {
        out.latent = unguided_sample(params, cond, schedule, latent_shape, seed, observer,
                                     cfg.fps);
    }
    out.frames = decode_video(out.latent, cfg.downsample);
    return out;
}

template <typename Real>
void cmd_generate(const RunConfig& cfg, const std::string& ckpt_path,
                  const std::vector<std::string>& prompt, int level,
                  const std::string& traj_path, const std::string& outdir, bool dump_attn,
                  int attn_every = 1) {
    if (prompt.empty()) throw InputError("generate: empty prompt");
    if (level < 1 || level > 10) {
        throw InputError("generate: intensity level " + std::to_string(level) +
                         " outside [1,10]");
    }
    auto data = load_checkpoint<Real>(ckpt_path);
    std::optional<Trajectory> traj;
    if (!traj_path.empty()) {
        traj = load_trajectory(traj_path, data.params.dims.frames);
    }

    fsdetail::ensure_dir(outdir);
    fsdetail::echo_config(cfg, outdir);

    const auto& table = shared_token_table<Real>(data.params.dims.d);
    StepObserver<Real> observer;
    if (dump_attn) {
        auto cond = build_conditioning(prompt, level, data.params.fusion, table,
                                       data.params.intensity_table);
        std::vector<int> tokens;
        if (traj) {
            tokens = resolve_token_indices(*traj, prompt, cond);
        } else {
            tokens = {0};
        }
        const GuidanceLayerSet layers = GuidanceLayerSet::from_strings(cfg.guidance_layers);
        const std::string attn_dir = (std::filesystem::path(outdir) / "attn").string();
        const auto params_copy = data.params;
        observer = [=, &cfg](const Tensor<Real>& z, int t, const Tensor<Real>&) {
            if (attn_every > 1 && t % attn_every != 0 && t != 1) return;
            NoTrace guard;
            auto cond_local = build_conditioning(prompt, level, params_copy.fusion,
                                                 shared_token_table<Real>(params_copy.dims.d),
                                                 params_copy.intensity_table);
            auto out = predict_noise(params_copy, z, t, cond_local, layers, cfg.fps);
            attention_heatmap_export(out.records, params_copy.dims.latent_h,
                                     params_copy.dims.latent_w, tokens, t, attn_dir);
        };
    }

    auto result = run_generate(cfg, data.params, data.calibration, prompt, level, traj,
                               cfg.seed, observer);

    namespace fs = std::filesystem;
    for (size_t i = 0; i < result.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
        write_png((fs::path(outdir) / name).string(), result.frames[i]);
    }
    write_gif((fs::path(outdir) / "out.gif").string(), result.frames);

    if (!result.trace.empty()) {
        std::ofstream trace_csv(fs::path(outdir) / "trace.csv");
        trace_csv << "timestep,inner,objective,in_box_mass\n";
        for (const auto& row : result.trace) {
            trace_csv << row.timestep << "," << row.inner << "," << std::setprecision(10)
                      << row.objective << "," << row.in_box << "\n";
        }
    }

    nlohmann::ordered_json run;
    run["prompt"] = prompt;
    run["level"] = level;
    run["seed"] = cfg.seed;
    run["checkpoint"] = ckpt_path;
    run["calibration"] = {{"lo", data.calibration.lo}, {"hi", data.calibration.hi}};
    run["frames"] = result.frames.size();
    if (traj) {
        nlohmann::ordered_json tj;
        std::string phrase;
        for (size_t i = 0; i < traj->object_phrase.size(); ++i)
            phrase += (i ? " " : "") + traj->object_phrase[i];
        tj["object"] = phrase;
        tj["keypoints"] = nlohmann::json::array();
        for (const auto& kp : traj->keypoints)
            tj["keypoints"].push_back({{"frame", kp.frame}, {"x", kp.x}, {"y", kp.y}});
        tj["dx"] = traj->dx;
        tj["dy"] = traj->dy;
        tj["frame_width"] = traj->width;
        tj["frame_height"] = traj->height;
        run["trajectory"] = tj;
    } else {
        run["trajectory"] = nullptr;
    }
    std::ofstream rf(fs::path(outdir) / "run.json");
    rf << run.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline std::optional<std::array<float, 3>> prompt_color(
    const std::vector<std::string>& prompt) {
    for (const auto& w : prompt) {
        try {
            return color_by_name(w);
        } catch (const InputError&) {
        }
    }
    return std::nullopt;
}

struct EvalRow {
    std::string run_id;
    std::string seed;
    std::optional<double> miou, ap50, cd;
    std::optional<double> motion_alignment;
};

inline void write_metrics_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "run_id,seed,mIoU,AP50,CD,motion_alignment\n";
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string();
        std::ostringstream os;
        os << std::setprecision(8) << *v;
        return os.str();
    };
    for (const auto& r : rows) {
        f << r.run_id << "," << r.seed << "," << cell(r.miou) << "," << cell(r.ap50) << ","
          << cell(r.cd) << "," << cell(r.motion_alignment) << "\n";
    }
}

inline EvalRow eval_run_dir(const RunConfig& cfg, const std::string& run_dir) {
    namespace fs = std::filesystem;
    const fs::path dir(run_dir);
    EvalRow row;
    row.run_id = dir.filename().string();

    std::vector<std::string> prompt;
    std::optional<Trajectory> traj;
    int level = 0;
    IntensityCalibration calib{0.0, 1.0};
    int frame_count = 0;
    int width = cfg.width, height = cfg.height;

    if (fs::exists(dir / "run.json")) {
        std::ifstream rf(dir / "run.json");
        const auto j = nlohmann::json::parse(rf);
        prompt = j.at("prompt").get<std::vector<std::string>>();
        level = j.at("level").get<int>();
        row.seed = std::to_string(j.at("seed").get<uint64_t>());
        calib.lo = j.at("calibration").at("lo").get<double>();
        calib.hi = j.at("calibration").at("hi").get<double>();
        frame_count = j.at("frames").get<int>();
        if (!j.at("trajectory").is_null()) {
            Trajectory t = trajectory_from_json(j.at("trajectory"));
            t.frames = frame_count;
            t.validate();
            traj = t;
            width = t.width;
            height = t.height;
        }
    } else if (fs::exists(dir / "clip.json")) {
        // ground-truth clip: evaluate the renderer against its own trajectory
        auto clip = load_clip(run_dir);
        prompt = clip.caption;
        row.seed = std::to_string(clip.spec.seed);
        frame_count = clip.spec.frames;
        width = clip.spec.width;
        height = clip.spec.height;
        Trajectory t;
        t.frames = frame_count;
        t.width = width;
        t.height = height;
        t.dx = clip.spec.size_px * 0.5;
        t.dy = clip.spec.size_px * 0.5;
        for (int i = 0; i < frame_count; ++i)
            t.keypoints.push_back({i + 1, clip.trajectory[static_cast<size_t>(i)][0],
                                   clip.trajectory[static_cast<size_t>(i)][1]});
        traj = t;
        level = 0;  // no labeled target level for raw clips
    } else {
        throw IoError("no run.json or clip.json in " + run_dir);
    }

    std::vector<Image> frames;
    for (int i = 0; i < frame_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", i);
        frames.push_back(read_png((dir / name).string()));
    }

    if (traj) {
        const auto color = prompt_color(prompt);
        if (!color) throw InputError("eval: prompt of " + run_dir + " names no known color");
        auto points = interpolate_trajectory(traj->keypoints, frame_count);
        auto track =
            expand_to_boxes(points, traj->dx, traj->dy, width, height, cfg.downsample);
        std::vector<DetectionResult> dets;
        for (const auto& frame : frames)
            dets.push_back(detect_blob(frame, *color, cfg.detect_threshold));
        const auto m = evaluate_direction(dets, track, width, height);
        row.miou = m.miou;
        row.ap50 = m.ap50;
        row.cd = m.cd;
    }
    if (level >= 1 && frames.size() >= 2) {
        row.motion_alignment = motion_alignment(frames, level, calib, cfg.farneback);
    }
    return row;
}

inline std::vector<EvalRow> cmd_eval(const RunConfig& cfg,
                                     const std::vector<std::string>& run_dirs,
                                     const std::string& out_csv) {
    if (run_dirs.empty()) throw InputError("eval: empty run set");
    std::vector<EvalRow> rows;
    for (const auto& dir : run_dirs) rows.push_back(eval_run_dir(cfg, dir));

    EvalRow agg;
    agg.run_id = "aggregate";
    int nd = 0, nm = 0;
    double miou = 0, ap50 = 0, cd = 0, ma = 0;
    for (const auto& r : rows) {
        if (r.miou) {
            miou += *r.miou;
            ap50 += *r.ap50;
            cd += *r.cd;
            ++nd;
        }
        if (r.motion_alignment) {
            ma += *r.motion_alignment;
            ++nm;
        }
    }
    if (nd) {
        agg.miou = miou / nd;
        agg.ap50 = ap50 / nd;
        agg.cd = cd / nd;
    }
    if (nm) agg.motion_alignment = ma / nm;
    rows.push_back(agg);
    write_metrics_csv(out_csv, rows);
    return rows;
}

// ---------------------------------------------------------------------------
// Shared evaluation tasks (random line trajectories with matching prompts)
// ---------------------------------------------------------------------------

struct EvalTask {
    std::vector<std::string> prompt;
    Trajectory trajectory;
    std::array<float, 3> color;
};

inline EvalTask make_eval_task(uint64_t seed, const RunConfig& cfg) {
    Rng rng(derive_seed(seed, 0xE7A1));
    static const char* kColors[] = {"red", "green", "blue", "yellow", "cyan", "magenta"};
    static const char* kShapes[] = {"disk", "square"};
    EvalTask task;
    const std::string color = kColors[rng.uniform_int(0, 5)];
    const std::string shape = kShapes[rng.uniform_int(0, 1)];
    task.color = color_by_name(color);

    const double margin = std::max(cfg.box_dx, cfg.box_dy) + 2.0;
    const double lo_x = margin, hi_x = cfg.width - 1 - margin;
    const double lo_y = margin, hi_y = cfg.height - 1 - margin;
    std::array<double, 2> a{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    std::array<double, 2> b{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    // ask for a clearly moving target
    for (int probe = 0; probe < 32 && std::hypot(b[0] - a[0], b[1] - a[1]) < 18; ++probe) {
        b = {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    }
    const char* direction = std::abs(b[0] - a[0]) >= std::abs(b[1] - a[1])
                                ? (b[0] >= a[0] ? "right" : "left")
                                : (b[1] >= a[1] ? "down" : "up");
    task.prompt = {color, shape, "moves", direction};

    Trajectory t;
    t.frames = cfg.frames;
    t.width = cfg.width;
    t.height = cfg.height;
    t.dx = cfg.box_dx;
    t.dy = cfg.box_dy;
    t.object_phrase = {color, shape};
    t.keypoints = {{1, a[0], a[1]}, {cfg.frames, b[0], b[1]}};
    task.trajectory = t;
    return task;
}

// Direction metrics of a generated clip against its commanded track.
template <typename Real>
MotionMetrics score_direction(const RunConfig& cfg, const GenerateOutput<Real>& gen,
                              const EvalTask& task) {
    auto points = interpolate_trajectory(task.trajectory.keypoints, cfg.frames);
    auto track = expand_to_boxes(points, task.trajectory.dx, task.trajectory.dy, cfg.width,
                                 cfg.height, cfg.downsample);
    std::vector<DetectionResult> dets;
    for (const auto& frame : gen.frames)
        dets.push_back(detect_blob(frame, task.color, cfg.detect_threshold));
    return evaluate_direction(dets, track, cfg.width, cfg.height);
}

// Sum over guidance layers of the frame-to-frame squared attention map
// differences at the final reverse step (t = 1).
template <typename Real>
double final_step_smoothness(const RunConfig& cfg, const DenoiserParams<Real>& params,
                             const std::vector<std::string>& prompt, int level,
                             const EvalTask& task, uint64_t seed) {
    const auto& table = shared_token_table<Real>(params.dims.d);
    auto cond = build_conditioning(prompt, level, params.fusion, table,
                                   params.intensity_table);
    const GuidanceLayerSet layers = GuidanceLayerSet::from_strings(cfg.guidance_layers);

    double value = 0;
    StepObserver<Real> observer = [&](const Tensor<Real>& z, int t, const Tensor<Real>&) {
        if (t != 1) return;
        NoTrace guard;
        auto out = predict_noise(params, z, t, cond, layers, cfg.fps);
        std::map<GuidanceLayer, std::vector<const AttentionRecord<Real>*>> by_layer;
        for (const auto& rec : out.records)
            by_layer[rec.layer].push_back(&rec);
        for (auto& [layer, recs] : by_layer) {
            std::sort(recs.begin(), recs.end(),
                      [](const auto* a, const auto* b) { return a->frame < b->frame; });
            for (size_t i = 1; i < recs.size(); ++i) {
                for (int64_t j = 0; j < recs[i]->map.numel(); ++j) {
                    const double diff = static_cast<double>(recs[i]->map.data()[j]) -
                                        recs[i - 1]->map.data()[j];
                    value += diff * diff;
                }
            }
        }
    };

    auto points = interpolate_trajectory(task.trajectory.keypoints, cfg.frames);
    auto track = expand_to_boxes(points, task.trajectory.dx, task.trajectory.dy, cfg.width,
                                 cfg.height, cfg.downsample);
    auto token_indices = resolve_token_indices(task.trajectory, prompt, cond);
    GuidanceConfig<Real> gcfg;
    gcfg.eta = static_cast<Real>(cfg.eta);
    gcfg.lambda = static_cast<Real>(cfg.lambda);
    gcfg.final_timestep = cfg.t_g;
    gcfg.inner_iterations = cfg.inner_iterations;
    gcfg.layers = layers;
    gcfg.smoothness_once_per_layer = cfg.smoothness_once_per_layer;
    const Shape latent_shape{params.dims.frames, params.dims.latent_channels,
                             params.dims.latent_h, params.dims.latent_w};
    (void)guided_sample(params, cond, track, token_indices, gcfg,
                        cfg.template schedule<Real>(), latent_shape, seed, nullptr, observer,
                        cfg.fps);
    return value;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

template <typename Real>
void ablate_guided_steps(const RunConfig& cfg, const CheckpointData<Real>& ckpt,
                         const std::string& outdir) {
    std::ofstream csv(std::filesystem::path(outdir) / "guided_steps.csv");
    csv << "guided_steps,seed,mIoU,AP50,CD\n";
    std::map<int, double> mean_miou;
    for (int count : {0, 1, 5, 10, 30}) {
        double acc = 0;
        for (uint64_t seed : cfg.ablation_seeds) {
            RunConfig run_cfg = cfg;
            if (count > 0) run_cfg.t_g = cfg.steps - count + 1;
            const auto task = make_eval_task(seed, run_cfg);
            auto gen = run_generate(run_cfg, ckpt.params, ckpt.calibration, task.prompt, 5,
                                    count > 0 ? std::optional<Trajectory>(task.trajectory)
                                              : std::nullopt,
                                    seed);
            const auto m = score_direction(run_cfg, gen, task);
            csv << count << "," << seed << "," << m.miou << "," << m.ap50 << "," << m.cd
                << "\n";
            acc += m.miou;
        }
        mean_miou[count] = acc / static_cast<double>(cfg.ablation_seeds.size());
        std::cout << "guided_steps=" << count << " mean mIoU "
                  << mean_miou[count] << "\n";
    }
}

template <typename Real>
void ablate_eta(const RunConfig& cfg, const CheckpointData<Real>& ckpt,
                const std::string& outdir) {
    std::ofstream csv(std::filesystem::path(outdir) / "eta.csv");
    csv << "eta,seed,mIoU,AP50,CD,latent_displacement\n";
    const std::vector<double> grid = {0.0, cfg.eta * 0.25, cfg.eta, cfg.eta * 4.0};
    for (double eta : grid) {
        for (uint64_t seed : cfg.ablation_seeds) {
            RunConfig run_cfg = cfg;
            run_cfg.eta = eta;
            const auto task = make_eval_task(seed, run_cfg);
            auto guided = run_generate(run_cfg, ckpt.params, ckpt.calibration, task.prompt,
                                       5, task.trajectory, seed);
            RunConfig plain_cfg = run_cfg;
            plain_cfg.eta = 0;
            auto plain = run_generate(plain_cfg, ckpt.params, ckpt.calibration, task.prompt,
                                      5, std::nullopt, seed);
            double disp = 0;
            for (int64_t i = 0; i < guided.latent.values.numel(); ++i) {
                const double d = static_cast<double>(guided.latent.values.data()[i]) -
                                 plain.latent.values.data()[i];
                disp += d * d;
            }
            const auto m = score_direction(run_cfg, guided, task);
            csv << eta << "," << seed << "," << m.miou << "," << m.ap50 << "," << m.cd << ","
                << std::sqrt(disp) << "\n";
        }
    }
}

template <typename Real>
void ablate_lambda(const RunConfig& cfg, const CheckpointData<Real>& ckpt,
                   const std::string& outdir) {
    std::ofstream csv(std::filesystem::path(outdir) / "lambda.csv");
    csv << "lambda,seed,final_step_smoothness,mIoU\n";
    for (double lam : {0.0, cfg.lambda}) {
        for (uint64_t seed : cfg.ablation_seeds) {
            RunConfig run_cfg = cfg;
            run_cfg.lambda = lam;
            const auto task = make_eval_task(seed, run_cfg);
            const double smooth = final_step_smoothness(run_cfg, ckpt.params, task.prompt, 5,
                                                        task, seed);
            auto gen = run_generate(run_cfg, ckpt.params, ckpt.calibration, task.prompt, 5,
                                    task.trajectory, seed);
            const auto m = score_direction(run_cfg, gen, task);
            csv << lam << "," << seed << "," << smooth << "," << m.miou << "\n";
        }
    }
}

template <typename Real>
void ablate_fusion(const RunConfig& cfg, const std::string& dataset_dir,
                   const std::string& outdir) {
    std::ofstream csv(std::filesystem::path(outdir) / "fusion.csv");
    csv << "fusion,level,seed,raw_flow,motion_alignment\n";
    const auto& table = shared_token_table<Real>(cfg.d);
    const auto schedule = cfg.template schedule<Real>();
    const auto calib = read_calibration(dataset_dir);
    DatasetBatcher<Real> batcher(dataset_dir, cfg.downsample);

    for (const std::string mode : {"none", "text_word", "global_add", "token_concat"}) {
        auto params = init_denoiser<Real>(cfg.model_dims(), fusion_from_string(mode),
                                          cfg.seed);
        SgdState<Real> opt;
        opt.lr = cfg.lr;
        opt.momentum = cfg.momentum;
        for (int step = 0; step < cfg.train_steps; ++step) {
            (void)train_step(params, batcher.batch(step, cfg.batch), table, schedule, opt,
                             derive_seed(cfg.seed, static_cast<uint64_t>(step)));
        }
        for (int level : {1, 3, 5, 7, 9}) {
            for (int k = 0; k < 10; ++k) {
                const uint64_t seed = derive_seed(0xab1a7e, static_cast<uint64_t>(level * 100 + k));
                const auto task = make_eval_task(seed, cfg);
                auto gen = run_generate(cfg, params, calib, task.prompt, level, std::nullopt,
                                        seed);
                const double raw = video_intensity(gen.frames, cfg.farneback);
                const double err = std::abs(continuous_level(raw, calib) - level) / 9.0;
                csv << mode << "," << level << "," << seed << "," << raw << "," << err
                    << "\n";
            }
        }
        std::cout << "fusion=" << mode << " done\n";
    }
}

template <typename Real>
void cmd_ablate(const RunConfig& cfg, const std::string& sweep, const std::string& ckpt_path,
                const std::string& dataset_dir, const std::string& outdir) {
    fsdetail::ensure_dir(outdir);
    fsdetail::echo_config(cfg, outdir);
    const bool all = sweep == "all";
    if (sweep == "guided-steps" || sweep == "eta" || sweep == "lambda" || all) {
        if (ckpt_path.empty()) throw ConfigError("ablate: this sweep needs --ckpt");
        auto ckpt = load_checkpoint<Real>(ckpt_path);
        if (sweep == "guided-steps" || all) ablate_guided_steps(cfg, ckpt, outdir);
        if (sweep == "eta" || all) ablate_eta(cfg, ckpt, outdir);
        if (sweep == "lambda" || all) ablate_lambda(cfg, ckpt, outdir);
    }
    if (sweep == "fusion" || all) {
        if (dataset_dir.empty()) throw ConfigError("ablate: the fusion sweep needs --dataset");
        ablate_fusion<Real>(cfg, dataset_dir, outdir);
    }
    if (!all && sweep != "guided-steps" && sweep != "eta" && sweep != "lambda" &&
        sweep != "fusion") {
        throw ConfigError("ablate: unknown sweep '" + sweep +
                          "' (guided-steps | eta | lambda | fusion | all)");
    }
}

}  // namespace motiondiff
