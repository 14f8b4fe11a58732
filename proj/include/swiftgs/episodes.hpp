// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes, ground-truth observations rendered by the same image
// formation model the learner uses, a noisy elevation teacher, and episode
// storage (JSON manifest with sibling PFM, ASCII grid and RPC files).
#pragma once

#include "swiftgs/image_io.hpp"
#include "swiftgs/renderer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace swiftgs {

enum class SceneKind { Urban, Mountain, Agricultural, Coastal };
const char *scene_kind_name(SceneKind k);
SceneKind parse_scene_kind(const std::string &s);
inline constexpr SceneKind kAllSceneKinds[] = {SceneKind::Urban, SceneKind::Mountain, SceneKind::Agricultural,
                                               SceneKind::Coastal};

struct SyntheticScene {
    SceneKind kind = SceneKind::Urban;
    std::uint64_t seed = 0;
    int grid = 64;
    double extent = 256.0;  // meters along x and y
    Image height;           // grid x grid, meters; row index follows world x
    Image albedo;           // grid x grid x 3 in [0, 1]
    Image material;         // grid x grid specular weight in [0, 1]
    Image water;            // grid x grid, 1 inside the coastal water zone

    double cell() const { return extent / grid; }
};

/// Deterministic per (seed, kind).
SyntheticScene gen_scene(std::uint64_t seed, SceneKind kind, int grid = 64, double extent = 256.0);

/// Scene box used for a synthetic scene's extent.
SceneBox scene_box(const SyntheticScene &scene);

/// Dense grid of flat opaque disks, one per cell, plus a ground plane SDF.
struct GroundTruthModel {
    SlotSet<double> slots;
    SdfField<double> sdf;
};
GroundTruthModel ground_truth_model(const SyntheticScene &scene);

struct TeacherOutput {
    Image depth;       // meters
    Image confidence;  // in [0, 1]
};

struct Observation {
    Image image;   // rgb, float32-representable
    Image shadow;  // shadow coefficient per pixel
    Image elevation;
};

struct ObservationSet {
    std::vector<Observation> views;
    Image dsm;  // grid x grid
};

/// Renders every view with its own sun. Requires at least two views and
/// pairwise distinct sun directions.
ObservationSet render_observations(const SyntheticScene &scene, const std::vector<ViewGeometry> &views,
                                   const std::vector<SunModel> &suns, const Atmosphere<double> &atm,
                                   const SensorResponse<double> &sensor, int threads = 1);

/// Ground-truth elevation seen by `view` plus N(0, sigma) noise with
/// confidence exp(-|noise| / sigma); sigma = 0 gives exact depth and unit confidence.
TeacherOutput teacher_oracle(const SyntheticScene &scene, const ViewGeometry &view, double sigma, std::uint64_t seed,
                             int threads = 1);
/// Same noise model applied to an already rendered elevation map.
TeacherOutput teacher_from_elevation(const Image &elevation, double sigma, std::uint64_t seed);

struct EpisodeView {
    std::string name;
    ViewGeometry geometry;
    SunModel sun;
    Image image;
    std::optional<RpcMetadata> rpc;
    std::optional<TeacherOutput> teacher;
    std::optional<Image> shadow;  // ground-truth shadow coefficients
};

struct Episode {
    std::string name = "episode";
    SceneKind kind = SceneKind::Urban;
    std::uint64_t seed = 0;
    SceneBox box;
    std::vector<EpisodeView> views;
    std::vector<int> support;
    std::vector<int> query;
    ViewGeometry dsm_view;         // nadir grid that defines the DSM raster
    std::optional<Image> dsm;      // reference DSM
    std::optional<Image> dsm_mask;  // 1 where the reference is valid
    Atmosphere<double> atmosphere;  // generating conditions, for reference only
    SensorResponse<double> sensor;

    /// Throws std::invalid_argument on overlapping or out-of-range splits.
    void validate() const;
};

struct EpisodeConfig {
    int grid = 64;
    double extent = 256.0;
    int image_size = 64;
    int views = 4;
    int support = 2;  // the first `support` views; the rest are query views
    double teacher_sigma = 0.5;
    double max_off_nadir_deg = 20.0;
    double sun_elevation_lo_deg = 40.0;
    double sun_elevation_hi_deg = 70.0;
    double rpc_cubic = 0.0;
};

/// Full episode from (seed, kind): scene, views, suns, observations, teacher, split.
Episode make_episode(std::uint64_t seed, SceneKind kind, const EpisodeConfig &config = {}, int threads = 1);

/// Episode dataset: kinds cycle through all four scene kinds.
std::vector<Episode> make_dataset(std::uint64_t seed, int count, const EpisodeConfig &config = {},
                                  int threads = 1);

/// Seed of the held-out split that accompanies a training dataset seed.
inline std::uint64_t held_out_seed(std::uint64_t seed) { return Rng::mix(seed ^ 0x68656c646f7574ULL); }

inline constexpr int kEpisodeFormatVersion = 1;

class EpisodeFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Writes `dir/episode.json` and its sibling arrays.
void save_episode(const std::filesystem::path &dir, const Episode &episode);
Episode load_episode(const std::filesystem::path &dir);

}  // namespace swiftgs
