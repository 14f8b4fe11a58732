// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/config.hpp"

#include "swiftgs/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace swiftgs {

namespace {

using nlohmann::ordered_json;

// One table of (key, read, write) per section keeps parsing and formatting in step.
struct Field {
    std::function<void(const ordered_json &)> read;
    std::function<ordered_json()> write;
};
using Section = std::vector<std::pair<std::string, Field>>;

template <class V>
std::pair<std::string, Field> field(const std::string &key, V &ref) {
    return {key, Field{[&ref](const ordered_json &j) { ref = j.get<V>(); }, [&ref] { return ordered_json(ref); }}};
}

std::map<std::string, Section> sections(RunConfig &c) {
    std::map<std::string, Section> s;
    auto &t = c.train;
    s["train"] = {field("batch", t.batch),           field("outer_lr", t.outer_lr),
                  field("inner_lr", t.inner_lr),     field("inner_steps", t.inner_steps),
                  field("iterations", t.iterations), field("seed", t.seed),
                  field("optimizer", t.optimizer),   field("beta1", t.beta1),
                  field("beta2", t.beta2),           field("epsilon", t.epsilon),
                  field("weight_decay", t.weight_decay), field("grad_clip", t.grad_clip),
                  field("threads", t.threads),       field("divergence", t.divergence)};
    auto &w = t.weights;
    s["weights"] = {field("lpips", w.lpips),     field("reproj", w.reproj), field("dsm", w.dsm),
                    field("distill", w.distill), field("sdf", w.sdf),       field("load", w.load),
                    field("z", w.z),             field("sparse", w.sparse)};
    auto &m = c.model;
    s["model"] = {field("slot_grid", m.slot_grid),
                  field("embed_dim", m.embed_dim),
                  field("heads", m.heads),
                  field("top_k", m.top_k),
                  field("head_width", m.head_width),
                  field("router_temperature", m.router_temperature),
                  field("sdf_layers", m.sdf_layers),
                  field("sdf_width", m.sdf_width),
                  field("sdf_frequencies", m.sdf_frequencies),
                  field("sdf_conditioning", m.sdf_conditioning),
                  field("gate_width", m.gate_width),
                  field("encoder_channels", m.encoder_channels),
                  field("pooled_size", m.pooled_size),
                  field("sweep_levels", m.sweep_levels)};
    auto &sm = t.sample;
    s["sample"] = {field("pixels_per_view", sm.pixels_per_view), field("reproj_points", sm.reproj_points),
                   field("dsm_cells", sm.dsm_cells), field("eikonal_points", sm.eikonal_points)};
    auto &r = t.render;
    s["render"] = {field("cull", r.cull), field("cull_radius", r.cull_radius), field("march_steps", r.march_steps),
                   field("tile", r.tile)};
    auto &b = t.box;
    s["calibration_box"] = {field("a_matrix", b.a_matrix), field("a_offset", b.a_offset),
                            field("gain_lo", b.gain_lo),   field("gain_hi", b.gain_hi),
                            field("bias", b.bias),         field("tau_lo", b.tau_lo),
                            field("tau_hi", b.tau_hi),     field("delta", b.delta)};
    auto &e = c.episodes;
    s["episodes"] = {field("grid", e.grid),
                     field("extent", e.extent),
                     field("image_size", e.image_size),
                     field("views", e.views),
                     field("support", e.support),
                     field("teacher_sigma", e.teacher_sigma),
                     field("max_off_nadir_deg", e.max_off_nadir_deg),
                     field("sun_elevation_lo_deg", e.sun_elevation_lo_deg),
                     field("sun_elevation_hi_deg", e.sun_elevation_hi_deg),
                     field("rpc_cubic", e.rpc_cubic)};
    s["dataset"] = {field("train_episodes", c.dataset.train_episodes),
                    field("held_out_episodes", c.dataset.held_out_episodes)};
    auto &inf = c.inference;
    s["inference"] = {field("inner_steps", inf.inner_steps),
                      field("inner_lr", inf.inner_lr),
                      field("pixels_per_view", inf.sample.pixels_per_view),
                      field("reproj_points", inf.sample.reproj_points),
                      field("eikonal_points", inf.sample.eikonal_points),
                      field("march_steps", inf.render.march_steps)};
    return s;
}

const char *kSectionOrder[] = {"train", "weights", "model", "sample", "render", "calibration_box",
                               "episodes", "dataset", "inference"};

}  // namespace

void RunConfig::validate() const {
    train.validate();
    model.validate();
    if (episodes.grid < 2 || episodes.image_size < 2 || !(episodes.extent > 0.0)) {
        throw ConfigError("episodes: grid, image_size and extent must be positive");
    }
    if (episodes.views < 2 || episodes.support < 1 || episodes.support >= episodes.views) {
        throw ConfigError("episodes: need at least one support and one query view");
    }
    if (dataset.train_episodes < 1 || dataset.held_out_episodes < 0) throw ConfigError("dataset: bad episode counts");
    if (inference.inner_steps < 0 || !(inference.inner_lr > 0.0)) throw ConfigError("inference: bad calibration settings");
}

RunConfig parse_run_config(const std::string &text) {
    RunConfig c;
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception &e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto table = sections(c);
    for (const auto &[name, body] : j.items()) {
        const auto it = table.find(name);
        if (it == table.end()) throw ConfigError("unknown config section '" + name + "'");
        if (!body.is_object()) throw ConfigError("config section '" + name + "' must be an object");
        for (const auto &[key, v] : body.items()) {
            const auto f = std::find_if(it->second.begin(), it->second.end(), [&](const auto &p) { return p.first == key; });
            if (f == it->second.end()) throw ConfigError("unknown key '" + key + "' in config section '" + name + "'");
            try {
                f->second.read(v);
            } catch (const std::exception &e) {
                throw ConfigError("bad value for '" + name + "." + key + "': " + e.what());
            }
        }
    }
    try {
        c.validate();
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError(e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig &config) {
    RunConfig copy = config;
    auto table = sections(copy);
    ordered_json j;
    for (const char *name : kSectionOrder) {
        ordered_json body = ordered_json::object();
        for (const auto &[key, f] : table.at(name)) body[key] = f.write();
        j[name] = body;
    }
    return j.dump(2) + "\n";
}

}  // namespace swiftgs
