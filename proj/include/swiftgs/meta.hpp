// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
// Feed-forward scene predictor, per-scene calibration by a few projected
// gradient steps, and the episodic first-order meta-training loop.
#pragma once

#include "swiftgs/episodes.hpp"
#include "swiftgs/objectives.hpp"
#include "swiftgs/routing.hpp"

#include <array>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace swiftgs {

struct ModelConfig {
    int slot_grid = 8;  // K_max = slot_grid^2 slots anchored on a regular grid
    int embed_dim = 8;
    int heads = 4;
    int top_k = 2;
    int head_width = 32;
    double router_temperature = 1.0;
    int sdf_layers = 4;
    int sdf_width = 16;
    int sdf_frequencies = 4;
    int sdf_conditioning = 8;
    int gate_width = 16;
    int encoder_channels = 8;
    int pooled_size = 16;  // images are box-averaged to this size before the encoder
    int sweep_levels = 8;  // candidate heights of the per-slot photo-consistency sweep

    int slots() const { return slot_grid * slot_grid; }
    void validate() const;
    bool operator==(const ModelConfig &) const = default;
};

/// Three stride-2 3x3 convolutions with tanh, flattened, max-pooled over views
/// and projected to the latent size. Convolutions are stored as dense maps over
/// 3x3xC patches.
template <class T>
struct Encoder {
    std::array<Dense<T>, 3> conv;
    Dense<T> proj;

    template <class U>
    Encoder<U> cast() const {
        return {{conv[0].template cast<U>(), conv[1].template cast<U>(), conv[2].template cast<U>()},
                proj.template cast<U>()};
    }
    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        for (int k = 0; k < 3; ++k) {
            using D = std::remove_cvref_t<decltype(self.conv[0])>;
            D::visit_named(self.conv[static_cast<std::size_t>(k)], name + ".conv[" + std::to_string(k) + "]", f);
        }
        decltype(self.proj)::visit_named(self.proj, name + ".proj", f);
    }
};

template <class T>
struct Decoder {
    MatX<T> embed;  // K x embed_dim
    Dense<T> hidden;
    Router<T> router;
    std::vector<TaskHead<T>> heads;
    Dense<T> out;
    MatX<T> base;    // K x kSlotFields
    Dense<T> cond;   // latent -> SDF conditioning

    template <class U>
    Decoder<U> cast() const {
        Decoder<U> d;
        d.embed = embed.template cast<U>();
        d.hidden = hidden.template cast<U>();
        d.router = router.template cast<U>();
        for (const auto &h : heads) d.heads.push_back(h.template cast<U>());
        d.out = out.template cast<U>();
        d.base = base.template cast<U>();
        d.cond = cond.template cast<U>();
        return d;
    }
    template <class Self, class F>
    static void visit_named(Self &self, const std::string &name, F &&f) {
        f(name + ".embed", self.embed.data(), static_cast<std::size_t>(self.embed.size()));
        decltype(self.hidden)::visit_named(self.hidden, name + ".hidden", f);
        decltype(self.router)::visit_named(self.router, name + ".router", f);
        for (std::size_t k = 0; k < self.heads.size(); ++k) {
            using H = std::remove_cvref_t<decltype(self.heads[k])>;
            H::visit_named(self.heads[k], name + ".heads[" + std::to_string(k) + "]", f);
        }
        decltype(self.out)::visit_named(self.out, name + ".out", f);
        f(name + ".base", self.base.data(), static_cast<std::size_t>(self.base.size()));
        decltype(self.cond)::visit_named(self.cond, name + ".cond", f);
    }
};

/// Everything shared across scenes. The calibration initializer theta0 is the
/// identity correction and is not trained.
template <class T>
struct SharedParams {
    ModelConfig config;
    Encoder<T> encoder;
    Decoder<T> decoder;
    SdfField<T> sdf;
    GateField<T> gate;

    template <class U>
    SharedParams<U> cast() const {
        return {config, encoder.template cast<U>(), decoder.template cast<U>(), sdf.template cast<U>(),
                gate.template cast<U>()};
    }
    template <class Self, class F>
    static void visit(Self &self, F &&f) {
        decltype(self.encoder)::visit_named(self.encoder, "encoder", f);
        decltype(self.decoder)::visit_named(self.decoder, "decoder", f);
        decltype(self.sdf)::visit_named(self.sdf, "sdf", f);
        decltype(self.gate)::visit_named(self.gate, "gate", f);
    }
};

SharedParams<double> init_shared(const ModelConfig &config, std::uint64_t seed);

/// FNV-1a over the bit patterns of every parameter, in visit order.
template <class M>
std::uint64_t param_checksum(const M &model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    visit_params(model, [&](const std::string &, const auto *data, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            const double v = value(data[k]);
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 0x100000001b3ULL;
            }
        }
    });
    return h;
}

/// Per-episode constants derived from the observations.
struct EpisodeCache {
    const Episode *episode = nullptr;
    ModelConfig config;
    std::vector<std::vector<double>> pooled;  // per view, pooled_size^2 x 3
    MatX<double> tokens;                      // K x 3 mean support color under each anchor
    MatX<double> sweep;                       // K x (levels + 1): normalized sweep costs, soft-argmin height
    std::vector<Vec2<double>> anchors;        // K slot anchors in world x, y
    double cell = 0.0;                        // anchor spacing in meters
    std::vector<ViewGeometry> sun_views;      // per view
};

EpisodeCache make_cache(const Episode &episode, const ModelConfig &config);

/// Latent scene code from the listed views. Permutation invariant.
template <class T>
VecX<T> encode_scene(const EpisodeCache &cache, const std::vector<int> &views, const Encoder<T> &encoder);

template <class T>
struct Prediction {
    SlotSet<T> slots;
    SdfField<T> sdf;  // shared SDF with this scene's conditioning
    VecX<T> z;
    RoutingResult<T> routing;
};

template <class T>
Prediction<T> predict(const EpisodeCache &cache, const SharedParams<T> &params, const Calibration<T> &theta);

struct SampleConfig {
    int pixels_per_view = 16;  // <= 0 uses every pixel
    int reproj_points = 8;
    int dsm_cells = 32;        // <= 0 uses every cell
    int eikonal_points = 8;
};

struct SplitSample {
    std::vector<int> views;
    std::vector<std::vector<std::array<int, 2>>> pixels;  // per view in `views`
    std::vector<std::array<int, 2>> dsm_cells;
    std::vector<Vec3<double>> eikonal;  // normalized coordinates
    int reproj_points = 8;              // leading pixels of the first view used for reprojection
};

SplitSample draw_sample(const Episode &episode, const std::vector<int> &views, const SampleConfig &config, Rng &rng,
                        bool with_dsm);

template <class T>
struct SplitLoss {
    LossTerms<T> terms;
    T total = T(0);
    double dsm_mae = std::numeric_limits<double>::quiet_NaN();
    double shadow_l1 = std::numeric_limits<double>::quiet_NaN();
    double load_var = 0.0;
    std::vector<double> loads;
    bool single_view = false;
};

/// Total loss of one split. DSM supervision is used only when `use_dsm` and a
/// reference exists; teacher distillation wherever a teacher is present.
template <class T>
SplitLoss<T> split_loss(const EpisodeCache &cache, const SharedParams<T> &params, const Calibration<T> &theta,
                        const SplitSample &sample, const LossWeights &weights, bool use_dsm,
                        const RenderOptions &options);

struct InnerConfig {
    int steps = 3;
    double lr = 3e-3;
    CalibrationBox box;
    bool measure_final = false;  // also evaluate the support loss at theta_S
};

struct InnerResult {
    Calibration<double> theta;
    std::vector<double> support_loss;  // before each step, plus the final one when measured
    bool aborted = false;
    std::string error;
};

/// S projected gradient steps on theta against the support loss; Phi is read only.
InnerResult inner_calibrate(const EpisodeCache &cache, const SharedParams<double> &params,
                            const Calibration<double> &theta0, const SplitSample &support, const LossWeights &weights,
                            const RenderOptions &options, const InnerConfig &config);

/// Projected gradient descent on an arbitrary differentiable objective of theta.
/// Used for the quadratic contraction check; the same update as inner_calibrate.
InnerResult inner_descent(const std::function<Var(const Calibration<Var> &)> &loss, const Calibration<double> &theta0,
                          const InnerConfig &config);

struct GradientStats {
    double loss = 0.0;
    std::vector<double> gradient;  // in SharedParams visit order
};

/// Gradient of the split loss with respect to Phi at a fixed theta.
GradientStats shared_gradient(const EpisodeCache &cache, const SharedParams<double> &params,
                              const Calibration<double> &theta, const SplitSample &sample, const LossWeights &weights,
                              bool use_dsm, const RenderOptions &options, SplitLoss<double> *report = nullptr);

struct TrainConfig {
    int batch = 4;
    double outer_lr = 3e-4;
    double inner_lr = 3e-3;
    int inner_steps = 3;
    int iterations = 1000;
    std::uint64_t seed = 1;
    LossWeights weights;
    std::string optimizer = "sgd";  // or "adamw"
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;  // adamw only
    double grad_clip = 0.0;      // global norm; 0 disables
    SampleConfig sample;
    RenderOptions render;
    CalibrationBox box;
    int threads = 1;
    double divergence = 1e6;

    TrainConfig() { render.march_steps = 16; weights.lpips = 0.0; }
    void validate() const;
};

struct TrainLogRow {
    int iter = 0;
    double query_loss = 0.0;
    double dsm_mae = 0.0;
    double shadow_loss = 0.0;
    double load_var = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    SharedParams<double> params;
    std::vector<TrainLogRow> log;
    bool diverged = false;
    std::vector<std::string> aborted;  // "iter:episode: reason"
};

/// CSV with header iter,query_loss,dsm_mae,shadow_loss,load_var.
std::string format_train_log(const std::vector<TrainLogRow> &rows);

using TrainCallback = std::function<void(const TrainLogRow &, const SharedParams<double> &)>;

TrainResult meta_train(const std::vector<Episode> &dataset, const TrainConfig &config, const SharedParams<double> &init,
                       const TrainCallback &callback = {});

struct InferenceResult {
    Calibration<double> theta;
    Prediction<double> prediction;
    RenderedView dsm;                 // on the episode's DSM grid
    std::vector<RenderedView> views;  // one per episode view
};

/// Predicts with theta0 and renders the DSM and every view. No parameter is modified.
InferenceResult zero_shot_infer(const Episode &episode, const SharedParams<double> &params,
                                const RenderOptions &options = {}, int threads = 1, bool render_views = true);

/// Inner calibration on the support views, then the same outputs as zero_shot_infer.
InferenceResult calibrate_and_infer(const Episode &episode, const SharedParams<double> &params,
                                    const InnerConfig &inner, const LossWeights &weights,
                                    const SampleConfig &sample, std::uint64_t seed, const RenderOptions &options = {},
                                    int threads = 1, bool render_views = true);

InferenceResult infer_with(const Episode &episode, const EpisodeCache &cache, const SharedParams<double> &params,
                           const Calibration<double> &theta, const RenderOptions &options, int threads,
                           bool render_views);

}  // namespace swiftgs
