// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/episodes.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace swiftgs {

const char *scene_kind_name(SceneKind k) {
    switch (k) {
    case SceneKind::Urban: return "urban";
    case SceneKind::Mountain: return "mountain";
    case SceneKind::Agricultural: return "agricultural";
    case SceneKind::Coastal: return "coastal";
    }
    return "?";
}

SceneKind parse_scene_kind(const std::string &s) {
    for (SceneKind k : kAllSceneKinds) {
        if (s == scene_kind_name(k)) return k;
    }
    throw std::invalid_argument("unknown scene kind '" + s + "'");
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Lattice value noise in [0, 1] sampled on a grid x grid raster.
std::vector<double> value_noise(Rng &rng, int grid, int lattice) {
    std::vector<double> knots(static_cast<std::size_t>(lattice + 1) * (lattice + 1));
    for (double &k : knots) k = rng.uniform();
    std::vector<double> out(static_cast<std::size_t>(grid) * grid);
    for (int r = 0; r < grid; ++r) {
        const double fr = (r + 0.5) / grid * lattice;
        const int ir = std::min(static_cast<int>(fr), lattice - 1);
        const double tr = smoothstep(fr - ir);
        for (int c = 0; c < grid; ++c) {
            const double fc = (c + 0.5) / grid * lattice;
            const int ic = std::min(static_cast<int>(fc), lattice - 1);
            const double tc = smoothstep(fc - ic);
            auto k = [&](int a, int b) { return knots[static_cast<std::size_t>(a) * (lattice + 1) + b]; };
            const double top = k(ir, ic) * (1 - tc) + k(ir, ic + 1) * tc;
            const double bot = k(ir + 1, ic) * (1 - tc) + k(ir + 1, ic + 1) * tc;
            out[static_cast<std::size_t>(r) * grid + c] = top * (1 - tr) + bot * tr;
        }
    }
    return out;
}

std::vector<double> fbm(Rng &rng, int grid, int base_lattice, int octaves) {
    std::vector<double> acc(static_cast<std::size_t>(grid) * grid, 0.0);
    double amp = 1.0, norm = 0.0;
    for (int o = 0; o < octaves; ++o) {
        const auto layer = value_noise(rng, grid, base_lattice << o);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += amp * layer[i];
        norm += amp;
        amp *= 0.5;
    }
    for (double &v : acc) v /= norm;
    return acc;
}

/// 3x3 box blur with clamped borders.
std::vector<double> blur(const std::vector<double> &in, int grid, int passes) {
    std::vector<double> cur = in, next(in.size());
    for (int p = 0; p < passes; ++p) {
        for (int r = 0; r < grid; ++r) {
            for (int c = 0; c < grid; ++c) {
                double s = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = std::clamp(r + dr, 0, grid - 1);
                        const int cc = std::clamp(c + dc, 0, grid - 1);
                        s += cur[static_cast<std::size_t>(rr) * grid + cc];
                    }
                }
                next[static_cast<std::size_t>(r) * grid + c] = s / 9.0;
            }
        }
        cur.swap(next);
    }
    return cur;
}

void set_albedo(SyntheticScene &s, int r, int c, const Vec3<double> &rgb) {
    for (int ch = 0; ch < 3; ++ch) s.albedo.at(r, c, ch) = std::clamp(rgb[ch], 0.0, 1.0);
}

Vec3<double> mix(const Vec3<double> &a, const Vec3<double> &b, double t) { return a * (1.0 - t) + b * t; }

void gen_urban(SyntheticScene &s, Rng &rng) {
    const int g = s.grid;
    const auto ground = fbm(rng, g, 2, 2);
    const Vec3<double> asphalt(0.32, 0.33, 0.34), grass(0.28, 0.4, 0.24);
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            const double n = ground[static_cast<std::size_t>(r) * g + c];
            s.height.at(r, c) = 1.5 * n;
            set_albedo(s, r, c, mix(asphalt, grass, std::clamp(2.0 * n - 0.5, 0.0, 1.0)));
            s.material.at(r, c) = 0.05;
        }
    }
    const int buildings = 6 + static_cast<int>(rng.index(7));
    const double cell = s.cell();
    for (int b = 0; b < buildings; ++b) {
        const int wr = std::max(2, static_cast<int>(std::lround(rng.uniform(12.0, 40.0) / cell)));
        const int wc = std::max(2, static_cast<int>(std::lround(rng.uniform(12.0, 40.0) / cell)));
        const int r0 = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, g - wr))));
        const int c0 = static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, g - wc))));
        const double top = rng.uniform(5.0, 30.0);
        const double shade = rng.uniform(0.45, 0.8);
        const bool tile_roof = rng.uniform() < 0.4;
        const Vec3<double> roof =
            tile_roof ? Vec3<double>(Vec3<double>(0.62, 0.34, 0.26) * (shade + 0.2)) : Vec3<double>(Vec3<double>::Constant(shade));
        for (int r = r0; r < std::min(g, r0 + wr); ++r) {
            for (int c = c0; c < std::min(g, c0 + wc); ++c) {
                s.height.at(r, c) = std::max(s.height.at(r, c), 1.5 + top);
                set_albedo(s, r, c, roof);
                s.material.at(r, c) = 0.3;
            }
        }
    }
}

void gen_mountain(SyntheticScene &s, Rng &rng) {
    const int g = s.grid;
    const auto h = blur(fbm(rng, g, 2, 4), g, 2);
    const double lo = *std::min_element(h.begin(), h.end());
    const double hi = *std::max_element(h.begin(), h.end());
    const double relief = rng.uniform(25.0, 40.0);
    const Vec3<double> forest(0.22, 0.36, 0.2), rock(0.46, 0.4, 0.34), snow(0.9, 0.9, 0.93);
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            const double t = (h[static_cast<std::size_t>(r) * g + c] - lo) / std::max(hi - lo, 1e-12);
            s.height.at(r, c) = relief * t;
            Vec3<double> a = mix(forest, rock, std::clamp((t - 0.3) / 0.4, 0.0, 1.0));
            if (t > 0.85) a = mix(a, snow, std::clamp((t - 0.85) / 0.1, 0.0, 1.0));
            set_albedo(s, r, c, a);
            s.material.at(r, c) = t > 0.85 ? 0.4 : 0.05;
        }
    }
}

void gen_agricultural(SyntheticScene &s, Rng &rng) {
    const int g = s.grid;
    const auto h = fbm(rng, g, 1, 2);
    const int stripe = 4 + static_cast<int>(rng.index(5));
    const int orientation = static_cast<int>(rng.index(3));  // rows, columns, diagonal
    const Vec3<double> palette[] = {{0.55, 0.5, 0.3}, {0.3, 0.45, 0.2}, {0.45, 0.35, 0.25}, {0.62, 0.58, 0.36},
                                    {0.25, 0.38, 0.18}};
    std::vector<int> crop(static_cast<std::size_t>(2 * g / stripe + 2));
    for (int &k : crop) k = static_cast<int>(rng.index(5));
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            s.height.at(r, c) = 2.5 * h[static_cast<std::size_t>(r) * g + c];
            const int coord = orientation == 0 ? r : orientation == 1 ? c : (r + c) / 2;
            set_albedo(s, r, c, palette[crop[static_cast<std::size_t>(coord / stripe)]]);
            s.material.at(r, c) = 0.05;
        }
    }
}

void gen_coastal(SyntheticScene &s, Rng &rng) {
    const int g = s.grid;
    const auto n = fbm(rng, g, 2, 3);
    const bool along_rows = rng.uniform() < 0.5;
    const bool flip = rng.uniform() < 0.5;
    const int shore = static_cast<int>(std::lround(g * rng.uniform(0.25, 0.4)));
    const double slope = rng.uniform(0.4, 0.8);  // meters per meter of distance from the shore
    const Vec3<double> sea(0.06, 0.14, 0.24), sand(0.66, 0.6, 0.44), scrub(0.34, 0.42, 0.26);
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            int d = along_rows ? r : c;
            if (flip) d = g - 1 - d;
            if (d < shore) {
                s.height.at(r, c) = 0.0;
                s.water.at(r, c) = 1.0;
                set_albedo(s, r, c, sea);
                s.material.at(r, c) = 0.6;
                continue;
            }
            const double dist = (d - shore + 0.5) * s.cell();
            const double noise = n[static_cast<std::size_t>(r) * g + c];
            s.height.at(r, c) = std::min(35.0, slope * dist * (0.8 + 0.4 * noise));
            set_albedo(s, r, c, mix(sand, scrub, std::clamp(dist / 40.0, 0.0, 1.0)));
            s.material.at(r, c) = 0.05;
        }
    }
}

int kind_index(SceneKind k) { return static_cast<int>(k); }

}  // namespace

SyntheticScene gen_scene(std::uint64_t seed, SceneKind kind, int grid, double extent) {
    if (grid < 2 || !(extent > 0.0)) throw std::invalid_argument("gen_scene: bad grid or extent");
    SyntheticScene s;
    s.kind = kind;
    s.seed = seed;
    s.grid = grid;
    s.extent = extent;
    s.height = Image(grid, grid, 1);
    s.albedo = Image(grid, grid, 3);
    s.material = Image(grid, grid, 1);
    s.water = Image(grid, grid, 1);
    Rng rng = Rng::derive(seed, 0x5ce7e, static_cast<std::uint64_t>(kind_index(kind)));
    switch (kind) {
    case SceneKind::Urban: gen_urban(s, rng); break;
    case SceneKind::Mountain: gen_mountain(s, rng); break;
    case SceneKind::Agricultural: gen_agricultural(s, rng); break;
    case SceneKind::Coastal: gen_coastal(s, rng); break;
    }
    return s;
}

SceneBox scene_box(const SyntheticScene &scene) {
    SceneBox box;
    box.lo = Vec3<double>(0.0, 0.0, -8.0);
    box.hi = Vec3<double>(scene.extent, scene.extent, 56.0);
    return box;
}

GroundTruthModel ground_truth_model(const SyntheticScene &scene) {
    const int g = scene.grid;
    const double cell = scene.cell();
    GroundTruthModel m;
    m.slots = SlotSet<double>(static_cast<std::size_t>(g) * g);
    double floor = std::numeric_limits<double>::infinity();
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            GaussianPrimitive<double> p;
            p.center = Vec3<double>((r + 0.5) * cell, (c + 0.5) * cell, scene.height.at(r, c));
            p.geom.log_scales = Vec3<double>(std::log(0.6 * cell), std::log(0.6 * cell), std::log(0.25));
            p.opacity_logit = std::log(0.98 / 0.02);
            p.brdf = Vec4<double>(scene.albedo.at(r, c, 0), scene.albedo.at(r, c, 1), scene.albedo.at(r, c, 2),
                                  scene.material.at(r, c));
            m.slots.insert(p);
            floor = std::min(floor, scene.height.at(r, c));
        }
    }
    const SceneBox box = scene_box(scene);
    const double level = (floor - box.center()[2]) / box.half()[2];
    m.sdf = make_plane_sdf(2, 2, 0, 0, level);
    return m;
}

namespace {

RenderOptions truth_options() {
    RenderOptions o;
    o.cull = true;
    o.march_steps = 64;
    return o;
}

Image elevation_image(const RenderedView &rv) {
    Image img(rv.height, rv.width, 1);
    img.data = rv.elevation;
    return img;
}

}  // namespace

ObservationSet render_observations(const SyntheticScene &scene, const std::vector<ViewGeometry> &views,
                                   const std::vector<SunModel> &suns, const Atmosphere<double> &atm,
                                   const SensorResponse<double> &sensor, int threads) {
    if (views.size() < 2) throw std::invalid_argument("render_observations: at least two views required");
    if (suns.size() != views.size()) throw std::invalid_argument("render_observations: one sun per view required");
    for (std::size_t a = 0; a < suns.size(); ++a) {
        suns[a].validate();
        for (std::size_t b = a + 1; b < suns.size(); ++b) {
            if (suns[a].direction == suns[b].direction) {
                throw std::invalid_argument("render_observations: sun directions must be distinct");
            }
        }
    }
    const GroundTruthModel truth = ground_truth_model(scene);
    const SceneBox box = scene_box(scene);
    const SceneRefs<double> refs{&truth.slots, &truth.sdf, nullptr, nullptr};
    ObservationSet out;
    for (std::size_t j = 0; j < views.size(); ++j) {
        const ViewGeometry sun_geom = make_sun_view(box, suns[j].direction, scene.cell(), views[j].name + ".sun");
        const auto pv = prepare_view(views[j], refs, box, truth_options(), static_cast<const Calibration<double> *>(nullptr));
        const auto sv = prepare_view(sun_geom, refs, box, truth_options(), static_cast<const Calibration<double> *>(nullptr));
        const RenderedView rv = render_view(pv, &sv, suns[j], atm, sensor, threads);
        Observation obs;
        obs.image = Image(rv.height, rv.width, 3);
        obs.image.data = rv.rgb;
        quantize_to_float(obs.image);
        obs.shadow = Image(rv.height, rv.width, 1);
        obs.shadow.data = rv.shadow;
        quantize_to_float(obs.shadow);
        obs.elevation = elevation_image(rv);
        out.views.push_back(std::move(obs));
    }
    out.dsm = scene.height;
    return out;
}

TeacherOutput teacher_from_elevation(const Image &elevation, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("teacher_oracle: sigma must be nonnegative");
    TeacherOutput t;
    t.depth = Image(elevation.height, elevation.width, 1);
    t.confidence = Image(elevation.height, elevation.width, 1, 1.0);
    Rng rng(seed);
    for (std::size_t i = 0; i < t.depth.data.size(); ++i) {
        const double noise = sigma * rng.normal();
        t.depth.data[i] = elevation.data[i] + noise;
        if (sigma > 0.0) t.confidence.data[i] = std::clamp(std::exp(-std::abs(noise) / sigma), 0.0, 1.0);
    }
    quantize_to_float(t.depth);
    quantize_to_float(t.confidence);
    return t;
}

TeacherOutput teacher_oracle(const SyntheticScene &scene, const ViewGeometry &view, double sigma, std::uint64_t seed,
                             int threads) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("teacher_oracle: sigma must be nonnegative");
    const GroundTruthModel truth = ground_truth_model(scene);
    const SceneBox box = scene_box(scene);
    const SceneRefs<double> refs{&truth.slots, &truth.sdf, nullptr, nullptr};
    const auto pv = prepare_view(view, refs, box, truth_options(), static_cast<const Calibration<double> *>(nullptr));
    return teacher_from_elevation(elevation_image(render_elevation_map(pv, threads)), sigma, seed);
}

void Episode::validate() const {
    std::vector<int> seen(views.size(), 0);
    auto mark = [&](const std::vector<int> &idx, const char *what) {
        for (int i : idx) {
            if (i < 0 || i >= static_cast<int>(views.size())) {
                throw std::invalid_argument(std::string("episode: ") + what + " index out of range");
            }
            if (seen[static_cast<std::size_t>(i)]++) throw std::invalid_argument("episode: support and query overlap");
        }
    };
    mark(support, "support");
    mark(query, "query");
    if (support.empty()) throw std::invalid_argument("episode: empty support set");
    for (const auto &v : views) {
        v.geometry.validate();
        v.sun.validate();
        if (v.image.height != v.geometry.height || v.image.width != v.geometry.width || v.image.channels != 3) {
            throw std::invalid_argument("episode: image shape does not match view '" + v.name + "'");
        }
    }
}

Episode make_episode(std::uint64_t seed, SceneKind kind, const EpisodeConfig &config, int threads) {
    if (config.views < 2 || config.support < 1 || config.support >= config.views) {
        throw std::invalid_argument("make_episode: need at least one support and one query view");
    }
    const SyntheticScene scene = gen_scene(seed, kind, config.grid, config.extent);
    Episode ep;
    ep.kind = kind;
    ep.seed = seed;
    ep.box = scene_box(scene);
    Rng rng = Rng::derive(seed, 0x71e35, static_cast<std::uint64_t>(kind_index(kind)));
    std::vector<ViewGeometry> views;
    std::vector<SunModel> suns;
    const double deg = std::numbers::pi / 180.0;
    for (int j = 0; j < config.views; ++j) {
        const double off = rng.uniform(0.0, config.max_off_nadir_deg) * deg;
        const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Vec3<double> dir(std::sin(off) * std::cos(az), std::sin(off) * std::sin(az), std::cos(off));
        views.push_back(make_satellite_view(ep.box, dir, config.image_size, config.image_size, "view" + std::to_string(j)));
        const double el = rng.uniform(config.sun_elevation_lo_deg, config.sun_elevation_hi_deg) * deg;
        const double saz = rng.uniform(0.0, 2.0 * std::numbers::pi);
        SunModel sun;
        sun.direction = Vec3<double>(std::cos(el) * std::cos(saz), std::cos(el) * std::sin(saz), std::sin(el));
        suns.push_back(sun);
    }
    ep.atmosphere.transmittance = rng.uniform(0.85, 1.0);
    for (int c = 0; c < 3; ++c) ep.atmosphere.haze[c] = rng.uniform(0.0, 0.04);
    for (int c = 0; c < 3; ++c) ep.sensor.gain[c] = rng.uniform(0.9, 1.1);
    for (int c = 0; c < 3; ++c) ep.sensor.bias[c] = rng.uniform(-0.03, 0.03);
    const ObservationSet obs = render_observations(scene, views, suns, ep.atmosphere, ep.sensor, threads);
    for (int j = 0; j < config.views; ++j) {
        EpisodeView v;
        v.name = views[static_cast<std::size_t>(j)].name;
        v.geometry = views[static_cast<std::size_t>(j)];
        v.sun = suns[static_cast<std::size_t>(j)];
        v.image = obs.views[static_cast<std::size_t>(j)].image;
        v.shadow = obs.views[static_cast<std::size_t>(j)].shadow;
        v.rpc = rpc_from_affine(v.geometry.affine, ep.box.center(), ep.box.half(), config.rpc_cubic);
        v.teacher = teacher_from_elevation(obs.views[static_cast<std::size_t>(j)].elevation, config.teacher_sigma,
                                           Rng::mix(seed ^ Rng::mix(0x7eac0000ULL + static_cast<std::uint64_t>(j))));
        ep.views.push_back(std::move(v));
        (j < config.support ? ep.support : ep.query).push_back(j);
    }
    ep.dsm_view = make_satellite_view(ep.box, Vec3<double>(0.0, 0.0, 1.0), config.grid, config.grid, "dsm");
    ep.dsm = obs.dsm;
    ep.dsm_mask = Image(config.grid, config.grid, 1, 1.0);
    ep.validate();
    return ep;
}

std::vector<Episode> make_dataset(std::uint64_t seed, int count, const EpisodeConfig &config, int threads) {
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(std::max(0, count)));
    for (int i = 0; i < count; ++i) {
        const SceneKind kind = kAllSceneKinds[i % 4];
        Episode ep = make_episode(Rng::mix(seed + 0x100000001b3ULL * static_cast<std::uint64_t>(i + 1)), kind, config,
                                  threads);
        char name[32];
        std::snprintf(name, sizeof(name), "ep%04d", i);
        ep.name = name;
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Storage

namespace {

using nlohmann::json;

json vec_json(const double *v, int n) {
    json a = json::array();
    for (int k = 0; k < n; ++k) a.push_back(v[k]);
    return a;
}

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const json &j, const char *what) {
    if (!j.is_array() || j.size() != N) throw EpisodeFormatError(std::string("manifest: bad array '") + what + "'");
    Eigen::Matrix<double, N, 1> v;
    for (int k = 0; k < N; ++k) v[k] = j.at(static_cast<std::size_t>(k)).get<double>();
    return v;
}

AsciiGrid grid_of(const Image &img, const Episode &ep) {
    AsciiGrid g;
    g.nrows = img.height;
    g.ncols = img.width;
    g.xllcorner = ep.box.lo[0];
    g.yllcorner = ep.box.lo[1];
    g.cellsize = (ep.box.hi[0] - ep.box.lo[0]) / img.height;
    g.values = img.data;
    return g;
}

Image image_of(const AsciiGrid &g) {
    Image img(g.nrows, g.ncols, 1);
    img.data = g.values;
    return img;
}

std::filesystem::path sibling(const std::filesystem::path &dir, const json &name) {
    const auto p = dir / name.get<std::string>();
    if (!std::filesystem::exists(p)) throw EpisodeFormatError("episode: missing sibling file '" + p.string() + "'");
    return p;
}

}  // namespace

void save_episode(const std::filesystem::path &dir, const Episode &ep) {
    ep.validate();
    std::filesystem::create_directories(dir);
    json m;
    m["format"] = "swiftgs-episode";
    m["version"] = kEpisodeFormatVersion;
    m["name"] = ep.name;
    m["kind"] = scene_kind_name(ep.kind);
    m["seed"] = ep.seed;
    m["box"] = {{"lo", vec_json(ep.box.lo.data(), 3)}, {"hi", vec_json(ep.box.hi.data(), 3)}};
    m["support"] = ep.support;
    m["query"] = ep.query;
    m["atmosphere"] = {{"transmittance", ep.atmosphere.transmittance},
                       {"haze", vec_json(ep.atmosphere.haze.data(), 3)}};
    m["sensor"] = {{"gain", vec_json(ep.sensor.gain.data(), 3)},
                   {"bias", vec_json(ep.sensor.bias.data(), 3)},
                   {"gamma", ep.sensor.gamma}};
    json views = json::array();
    for (const auto &v : ep.views) {
        json jv;
        jv["name"] = v.name;
        jv["height"] = v.geometry.height;
        jv["width"] = v.geometry.width;
        jv["gsd"] = v.geometry.gsd;
        Eigen::Matrix<double, 3, 4, Eigen::RowMajor> a = v.geometry.affine;
        jv["affine"] = vec_json(a.data(), 12);
        jv["sun"] = vec_json(v.sun.direction.data(), 3);
        jv["sun_sharpness"] = v.sun.sharpness;
        jv["image"] = v.name + ".pfm";
        write_pfm(dir / (v.name + ".pfm"), v.image);
        if (v.rpc) {
            jv["rpc"] = v.name + ".rpc";
            std::ofstream(dir / (v.name + ".rpc")) << write_rpc(*v.rpc);
        }
        if (v.teacher) {
            jv["teacher_depth"] = v.name + "_teacher_depth.pfm";
            jv["teacher_confidence"] = v.name + "_teacher_conf.pfm";
            write_pfm(dir / (v.name + "_teacher_depth.pfm"), v.teacher->depth);
            write_pfm(dir / (v.name + "_teacher_conf.pfm"), v.teacher->confidence);
        }
        if (v.shadow) {
            jv["shadow"] = v.name + "_shadow.pfm";
            write_pfm(dir / (v.name + "_shadow.pfm"), *v.shadow);
        }
        views.push_back(jv);
    }
    m["views"] = views;
    {
        Eigen::Matrix<double, 3, 4, Eigen::RowMajor> a = ep.dsm_view.affine;
        m["dsm_view"] = {{"height", ep.dsm_view.height}, {"width", ep.dsm_view.width}, {"gsd", ep.dsm_view.gsd},
                         {"affine", vec_json(a.data(), 12)}};
    }
    if (ep.dsm) {
        m["dsm"] = "dsm.asc";
        write_ascii_grid(dir / "dsm.asc", grid_of(*ep.dsm, ep));
    }
    if (ep.dsm_mask) {
        m["dsm_mask"] = "dsm_mask.asc";
        write_ascii_grid(dir / "dsm_mask.asc", grid_of(*ep.dsm_mask, ep));
    }
    std::ofstream out(dir / "episode.json");
    if (!out) throw EpisodeFormatError("cannot write '" + (dir / "episode.json").string() + "'");
    out << m.dump(1) << '\n';
}

Episode load_episode(const std::filesystem::path &dir) {
    const auto path = dir / "episode.json";
    std::ifstream in(path);
    if (!in) throw EpisodeFormatError("cannot open '" + path.string() + "'");
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception &e) {
        throw EpisodeFormatError("episode manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!m.is_object() || m.value("format", std::string()) != "swiftgs-episode") {
        throw EpisodeFormatError("'" + path.string() + "' is not a swiftgs episode manifest");
    }
    const int version = m.value("version", -1);
    if (version != kEpisodeFormatVersion) {
        throw EpisodeFormatError("unsupported episode format version " + std::to_string(version) + " (expected " +
                                 std::to_string(kEpisodeFormatVersion) + ")");
    }
    try {
        Episode ep;
        ep.name = m.at("name").get<std::string>();
        ep.kind = parse_scene_kind(m.at("kind").get<std::string>());
        ep.seed = m.at("seed").get<std::uint64_t>();
        ep.box.lo = json_vec<3>(m.at("box").at("lo"), "box.lo");
        ep.box.hi = json_vec<3>(m.at("box").at("hi"), "box.hi");
        ep.support = m.at("support").get<std::vector<int>>();
        ep.query = m.at("query").get<std::vector<int>>();
        ep.atmosphere.transmittance = m.at("atmosphere").at("transmittance").get<double>();
        ep.atmosphere.haze = json_vec<3>(m.at("atmosphere").at("haze"), "atmosphere.haze");
        ep.sensor.gain = json_vec<3>(m.at("sensor").at("gain"), "sensor.gain");
        ep.sensor.bias = json_vec<3>(m.at("sensor").at("bias"), "sensor.bias");
        ep.sensor.gamma = m.at("sensor").at("gamma").get<double>();
        for (const auto &jv : m.at("views")) {
            EpisodeView v;
            v.name = jv.at("name").get<std::string>();
            const auto a = json_vec<12>(jv.at("affine"), "affine");
            Eigen::Matrix<double, 3, 4, Eigen::RowMajor> am;
            std::copy(a.data(), a.data() + 12, am.data());
            v.geometry = make_affine_view(am, jv.at("height").get<int>(), jv.at("width").get<int>(),
                                          jv.at("gsd").get<double>(), v.name);
            v.sun.direction = json_vec<3>(jv.at("sun"), "sun");
            v.sun.sharpness = jv.at("sun_sharpness").get<double>();
            v.image = read_pfm(sibling(dir, jv.at("image")));
            if (jv.contains("rpc")) {
                std::ifstream rf(sibling(dir, jv.at("rpc")));
                std::stringstream ss;
                ss << rf.rdbuf();
                v.rpc = parse_rpc(ss.str());
            }
            if (jv.contains("teacher_depth")) {
                TeacherOutput t;
                t.depth = read_pfm(sibling(dir, jv.at("teacher_depth")));
                t.confidence = read_pfm(sibling(dir, jv.at("teacher_confidence")));
                v.teacher = std::move(t);
            }
            if (jv.contains("shadow")) v.shadow = read_pfm(sibling(dir, jv.at("shadow")));
            ep.views.push_back(std::move(v));
        }
        {
            const auto &jd = m.at("dsm_view");
            const auto a = json_vec<12>(jd.at("affine"), "dsm_view.affine");
            Eigen::Matrix<double, 3, 4, Eigen::RowMajor> am;
            std::copy(a.data(), a.data() + 12, am.data());
            ep.dsm_view = make_affine_view(am, jd.at("height").get<int>(), jd.at("width").get<int>(),
                                           jd.at("gsd").get<double>(), "dsm");
        }
        if (m.contains("dsm")) ep.dsm = image_of(read_ascii_grid(sibling(dir, m.at("dsm"))));
        if (m.contains("dsm_mask")) ep.dsm_mask = image_of(read_ascii_grid(sibling(dir, m.at("dsm_mask"))));
        ep.validate();
        return ep;
    } catch (const json::exception &e) {
        throw EpisodeFormatError("episode manifest '" + path.string() + "': " + e.what());
    }
}

}  // namespace swiftgs
