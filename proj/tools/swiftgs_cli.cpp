// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// swiftgs command line: gen, train, infer, calibrate, eval, verify.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "swiftgs/checkpoint.hpp"
#include "swiftgs/config.hpp"
#include "swiftgs/metrics.hpp"
#include "swiftgs/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace swiftgs;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string out = ".";
    int threads = 1;
};

RunConfig run_config(const Globals &g) {
    RunConfig rc = g.config.empty() ? RunConfig{} : load_run_config(g.config);
    if (g.seed_set) rc.train.seed = g.seed;
    rc.train.threads = g.threads;
    rc.validate();
    return rc;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<Episode> load_split(const fs::path &dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("no episode directory '" + dir.string() + "'");
    std::vector<fs::path> dirs;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "episode.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw std::runtime_error("no episodes under '" + dir.string() + "'");
    std::vector<Episode> out;
    for (const auto &d : dirs) out.push_back(load_episode(d));
    return out;
}

AsciiGrid dsm_grid(const Episode &ep, const RenderedView &dsm) {
    AsciiGrid g;
    g.nrows = dsm.height;
    g.ncols = dsm.width;
    g.xllcorner = ep.box.lo[0];
    g.yllcorner = ep.box.lo[1];
    g.cellsize = (ep.box.hi[0] - ep.box.lo[0]) / dsm.height;
    g.values = dsm.elevation;
    // Rays that miss every surface have no elevation.
    for (std::size_t k = 0; k < g.values.size(); ++k)
        if (!dsm.valid.empty() && !dsm.valid[k]) g.values[k] = g.nodata;
    return g;
}

nlohmann::ordered_json theta_json(const Calibration<double> &t) {
    nlohmann::ordered_json j;
    visit_params(t, [&](const std::string &name, const double *data, std::size_t n) {
        j[name.substr(name.find('.') + 1)] = std::vector<double>(data, data + n);
    });
    return j;
}

int cmd_gen(const Globals &g, int count, int held_out) {
    const RunConfig rc = run_config(g);
    const int n_train = count >= 0 ? count : rc.dataset.train_episodes;
    const int n_held = held_out >= 0 ? held_out : rc.dataset.held_out_episodes;
    const std::uint64_t seed = rc.train.seed;
    const fs::path root(g.out);
    fs::create_directories(root);
    const auto write_split = [&](const std::string &name, std::uint64_t s, int n) {
        const auto eps = make_dataset(s, n, rc.episodes, g.threads);
        for (const auto &ep : eps) save_episode(root / name / ep.name, ep);
    };
    write_split("train", seed, n_train);
    write_split("held_out", held_out_seed(seed), n_held);
    nlohmann::ordered_json manifest;
    manifest["seed"] = seed;
    manifest["train"] = n_train;
    manifest["held_out"] = n_held;
    write_text(root / "dataset.json", manifest.dump(1) + "\n");
    std::cout << "wrote " << n_train << " training and " << n_held << " held-out episodes to " << root.string()
              << "\n";
    return 0;
}

int cmd_train(const Globals &g, const std::string &data, int iterations, const std::string &init_path) {
    RunConfig rc = run_config(g);
    if (iterations >= 0) rc.train.iterations = iterations;
    rc.train.validate();
    const auto dataset = load_split(fs::path(data) / "train");
    const SharedParams<double> init =
        init_path.empty() ? init_shared(rc.model, rc.train.seed) : load_checkpoint(init_path);
    const fs::path out(g.out);
    fs::create_directories(out);
    const TrainResult r = meta_train(dataset, rc.train, init);
    write_text(out / "train_log.csv", format_train_log(r.log));
    save_checkpoint(out / "checkpoint.swgs", r.params);
    RunConfig used = rc;
    used.model = r.params.config;
    // Results do not depend on the thread count; keep the file identical across counts.
    used.train.threads = TrainConfig{}.threads;
    write_text(out / "run_config.json", format_run_config(used));
    for (const auto &a : r.aborted) std::cerr << "aborted episode " << a << "\n";
    if (r.diverged) {
        std::cerr << "error: training diverged; checkpoint holds the last finite parameters\n";
        return 1;
    }
    std::cout << "trained " << r.log.size() << " iterations on " << dataset.size() << " episodes\n";
    return 0;
}

int write_inference(const Globals &g, const Episode &ep, const InferenceResult &inf, bool calibrated) {
    const fs::path out(g.out);
    fs::create_directories(out);
    write_ascii_grid(out / "dsm.asc", dsm_grid(ep, inf.dsm));
    MetricsReport report;
    double l1 = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < inf.views.size(); ++v) {
        const RenderedView &rv = inf.views[v];
        Image img(rv.height, rv.width, 3);
        img.data = rv.rgb;
        write_pnm(out / (ep.views[v].name + ".ppm"), img);
        const Image &obs = ep.views[v].image;
        if (obs.size() == img.size())
            for (std::size_t k = 0; k < img.size(); ++k, ++n) l1 += std::abs(img.data[k] - obs.data[k]);
    }
    if (n > 0) report.photo_l1 = l1 / static_cast<double>(n);
    report.head_activation = inf.prediction.routing.stats.load;
    if (ep.dsm) {
        std::vector<double> mask;
        if (ep.dsm_mask) mask = ep.dsm_mask->data;
        report.dsm = dsm_metrics(inf.dsm.elevation, ep.dsm->data, mask);
        write_text(out / "metrics.json", format_metrics_report(report));
    }
    if (calibrated) write_text(out / "theta.json", theta_json(inf.theta).dump(1) + "\n");
    std::cout << "wrote inference outputs for " << ep.name << " to " << out.string() << "\n";
    return 0;
}

int cmd_infer(const Globals &g, const std::string &checkpoint, const std::string &episode, bool calibrate,
              int steps) {
    RunConfig rc = run_config(g);
    const SharedParams<double> params = load_checkpoint(checkpoint);
    const Episode ep = load_episode(episode);
    if (!calibrate) return write_inference(g, ep, zero_shot_infer(ep, params, rc.inference.render, g.threads), false);
    InnerConfig inner;
    inner.steps = steps >= 0 ? steps : rc.inference.inner_steps;
    inner.lr = rc.inference.inner_lr;
    inner.box = rc.train.box;
    const auto inf = calibrate_and_infer(ep, params, inner, rc.train.weights, rc.inference.sample, rc.train.seed,
                                         rc.inference.render, g.threads);
    return write_inference(g, ep, inf, true);
}

int cmd_eval(const Globals &g, const std::string &pred, const std::string &ref, const std::string &mask,
             const std::vector<double> &thresholds) {
    const AsciiGrid p = read_ascii_grid(pred);
    const AsciiGrid r = read_ascii_grid(ref);
    if (p.nrows != r.nrows || p.ncols != r.ncols) throw std::runtime_error("eval: grid shapes differ");
    std::vector<double> m;
    if (!mask.empty()) {
        const AsciiGrid mg = read_ascii_grid(mask);
        if (mg.nrows != r.nrows || mg.ncols != r.ncols) throw std::runtime_error("eval: mask shape differs");
        m = mg.values;
    }
    // nodata cells in either grid are excluded.
    if (m.empty()) m.assign(r.values.size(), 1.0);
    for (std::size_t k = 0; k < m.size(); ++k)
        if (p.values[k] == p.nodata || r.values[k] == r.nodata) m[k] = 0.0;
    MetricsReport report;
    report.dsm = dsm_metrics(p.values, r.values, m, thresholds);
    const std::string text = format_metrics_report(report);
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "metrics.json", text);
    std::cout << text;
    return 0;
}

int cmd_verify(const Globals &g) {
    const VerifyReport report = verify_bounds(g.seed_set ? g.seed : 7);
    const std::string text = report.format();
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "verify.txt", text);
    std::cout << text;
    if (!report.all_pass()) {
        for (const auto &c : report.checks)
            if (!c.pass) std::cerr << "error: check failed: " << c.name << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"swiftgs: feed-forward satellite surface reconstruction with per-scene calibration"};
    app.require_subcommand(1);
    Globals g;
    const auto add_globals = [&](CLI::App *sub) {
        sub->add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](const std::uint64_t &s) { g.seed = s, g.seed_set = true; }, "random seed");
        sub->add_option("--out", g.out, "output directory");
        sub->add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
    };

    int count = -1, held = -1;
    auto *gen = app.add_subcommand("gen", "synthesize a training and held-out episode dataset");
    add_globals(gen);
    gen->add_option("--count", count, "training episodes (default from config)");
    gen->add_option("--held-out", held, "held-out episodes (default from config)");

    std::string data, init;
    int iterations = -1;
    auto *train = app.add_subcommand("train", "episodic meta-training");
    add_globals(train);
    train->add_option("--data", data, "dataset directory written by gen")->required();
    train->add_option("--iterations", iterations, "outer iterations (default from config)");
    train->add_option("--init", init, "start from this checkpoint")->check(CLI::ExistingFile);

    std::string checkpoint, episode;
    int steps = -1;
    auto *infer = app.add_subcommand("infer", "zero-shot inference on one episode");
    auto *calib = app.add_subcommand("calibrate", "inner calibration on the support views, then inference");
    for (auto *sub : {infer, calib}) {
        add_globals(sub);
        sub->add_option("--checkpoint", checkpoint, "trained parameters")->required()->check(CLI::ExistingFile);
        sub->add_option("--episode", episode, "episode directory")->required()->check(CLI::ExistingDirectory);
    }
    calib->add_option("--steps", steps, "inner steps (default from config)");

    std::string pred, ref, mask;
    std::vector<double> thresholds = kDefaultPagThresholds;
    auto *eval = app.add_subcommand("eval", "DSM accuracy of a predicted grid against a reference");
    add_globals(eval);
    eval->add_option("--pred", pred, "predicted DSM (ASCII grid)")->required()->check(CLI::ExistingFile);
    eval->add_option("--ref", ref, "reference DSM (ASCII grid)")->required()->check(CLI::ExistingFile);
    eval->add_option("--mask", mask, "mask grid, nonzero cells are scored")->check(CLI::ExistingFile);
    eval->add_option("--pag", thresholds, "PAG thresholds in meters");

    auto *verify = app.add_subcommand("verify", "numerical checks of the analytical bounds");
    add_globals(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return cmd_gen(g, count, held);
        if (*train) return cmd_train(g, data, iterations, init);
        if (*infer) return cmd_infer(g, checkpoint, episode, false, -1);
        if (*calib) return cmd_infer(g, checkpoint, episode, true, steps);
        if (*eval) return cmd_eval(g, pred, ref, mask, thresholds);
        if (*verify) return cmd_verify(g);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
