// Command-line front end: dataset synthesis, training, guided/unguided
// generation, annotation, evaluation, and ablation sweeps.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "motiondiff/cli.hpp"

namespace {

using namespace motiondiff;

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream ss(s);
    std::vector<std::string> words;
    std::string w;
    while (ss >> w) words.push_back(w);
    return words;
}

struct CommonOpts {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> precision;
    std::optional<double> eta, lambda, lr;
    std::optional<int> t_g, train_steps, count, batch;
    std::optional<std::string> fusion;
};

void add_common(CLI::App* app, CommonOpts& opts) {
    app->add_option("--config", opts.config_path, "run configuration JSON");
    app->add_option("--seed", opts.seed, "override the run seed");
    app->add_option("--precision", opts.precision, "f32 | f64");
    app->add_option("--eta", opts.eta, "guidance strength");
    app->add_option("--lambda", opts.lambda, "temporal smoothness weight");
    app->add_option("--t-g", opts.t_g, "final guided timestep");
    app->add_option("--steps", opts.train_steps, "training steps");
    app->add_option("--count", opts.count, "dataset clip count");
    app->add_option("--batch", opts.batch, "training batch size");
    app->add_option("--lr", opts.lr, "learning rate");
    app->add_option("--fusion", opts.fusion, "none | token_concat | global_add | text_word");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.precision) cfg.precision = *opts.precision;
    if (opts.eta) cfg.eta = *opts.eta;
    if (opts.lambda) cfg.lambda = *opts.lambda;
    if (opts.t_g) cfg.t_g = *opts.t_g;
    if (opts.train_steps) cfg.train_steps = *opts.train_steps;
    if (opts.count) cfg.dataset_count = *opts.count;
    if (opts.batch) cfg.batch = *opts.batch;
    if (opts.lr) cfg.lr = *opts.lr;
    if (opts.fusion) cfg.fusion = *opts.fusion;
    cfg.validate();
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"motion-controlled video diffusion engine"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string out_dir, dataset_dir, ckpt_path, resume_path, traj_path, prompt_str, sweep;
    std::vector<std::string> run_dirs;
    int level = 5;
    int attn_every = 1;
    bool dump_attn = false;

    auto* synth = app.add_subcommand("synth", "generate an annotated synthetic dataset");
    add_common(synth, opts);
    synth->add_option("--out", out_dir, "dataset directory")->required();

    auto* annotate = app.add_subcommand("annotate", "recompute intensity labels");
    add_common(annotate, opts);
    annotate->add_option("--dataset", dataset_dir, "dataset directory")->required();

    auto* train = app.add_subcommand("train", "train the denoiser");
    add_common(train, opts);
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* generate = app.add_subcommand("generate", "sample a video from a checkpoint");
    add_common(generate, opts);
    generate->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    generate->add_option("--prompt", prompt_str, "caption words")->required();
    generate->add_option("--level", level, "motion intensity level (1-10)");
    generate->add_option("--traj", traj_path, "trajectory spec (*.traj.json)");
    generate->add_option("--out", out_dir, "output directory")->required();
    generate->add_flag("--dump-attn", dump_attn, "export per-step attention heatmaps");

    auto* dump = app.add_subcommand("dump-attn",
                                    "sample while exporting attention heatmaps per step");
    add_common(dump, opts);
    dump->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    dump->add_option("--prompt", prompt_str, "caption words")->required();
    dump->add_option("--level", level, "motion intensity level (1-10)");
    dump->add_option("--traj", traj_path, "trajectory spec (*.traj.json)");
    dump->add_option("--out", out_dir, "output directory")->required();
    dump->add_option("--every", attn_every, "dump every N timesteps");

    auto* evalc = app.add_subcommand("eval", "compute metrics for generated runs");
    add_common(evalc, opts);
    evalc->add_option("--out", out_dir, "metrics CSV path")->required();
    evalc->add_option("runs", run_dirs, "run directories");

    auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
    add_common(ablate, opts);
    ablate->add_option("--sweep", sweep, "guided-steps | eta | lambda | fusion | all")
        ->required();
    ablate->add_option("--ckpt", ckpt_path, "checkpoint for sampling sweeps");
    ablate->add_option("--dataset", dataset_dir, "dataset for the fusion sweep");
    ablate->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    const RunConfig cfg = resolve_config(opts);
    const bool f64 = cfg.precision == "f64";

    if (synth->parsed()) {
        cmd_synth(cfg, out_dir);
    } else if (annotate->parsed()) {
        cmd_annotate(cfg, dataset_dir);
    } else if (train->parsed()) {
        if (f64)
            cmd_train<double>(cfg, dataset_dir, out_dir, resume_path);
        else
            cmd_train<float>(cfg, dataset_dir, out_dir, resume_path);
    } else if (generate->parsed() || dump->parsed()) {
        const auto prompt = split_words(prompt_str);
        const bool attn = dump->parsed() || dump_attn;
        const int every = dump->parsed() ? attn_every : 1;
        if (f64)
            cmd_generate<double>(cfg, ckpt_path, prompt, level, traj_path, out_dir, attn,
                                 every);
        else
            cmd_generate<float>(cfg, ckpt_path, prompt, level, traj_path, out_dir, attn,
                                every);
    } else if (evalc->parsed()) {
        cmd_eval(cfg, run_dirs, out_dir);
    } else if (ablate->parsed()) {
        if (f64)
            cmd_ablate<double>(cfg, sweep, ckpt_path, dataset_dir, out_dir);
        else
            cmd_ablate<float>(cfg, sweep, ckpt_path, dataset_dir, out_dir);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const motiondiff::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const motiondiff::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const motiondiff::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const motiondiff::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const motiondiff::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
