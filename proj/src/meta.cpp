// Copyright Contributors to the swiftgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "swiftgs/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

namespace swiftgs {

void ModelConfig::validate() const {
    if (slot_grid < 1 || embed_dim < 1 || heads < 1 || head_width < 1) {
        throw std::invalid_argument("model: sizes must be positive");
    }
    if (top_k < 1 || top_k > heads) throw std::invalid_argument("model: need 1 <= top_k <= heads");
    if (!(router_temperature > 0.0)) throw std::invalid_argument("model: router temperature must be positive");
    if (sdf_layers < 2 || sdf_width < 2 || sdf_frequencies < 0 || sdf_conditioning < 0) {
        throw std::invalid_argument("model: bad SDF shape");
    }
    if (gate_width < 1 || encoder_channels < 1) throw std::invalid_argument("model: sizes must be positive");
    if (pooled_size < 8 || pooled_size % 8 != 0) throw std::invalid_argument("model: pooled size must be a multiple of 8");
    if (sweep_levels < 2) throw std::invalid_argument("model: need at least two sweep levels");
}

SharedParams<double> init_shared(const ModelConfig &config, std::uint64_t seed) {
    config.validate();
    Rng rng = Rng::derive(seed, 0x5a3ed);
    SharedParams<double> p;
    p.config = config;
    const int ch = config.encoder_channels;
    p.encoder.conv[0] = Dense<double>(ch, 27);
    p.encoder.conv[1] = Dense<double>(ch, 9 * ch);
    p.encoder.conv[2] = Dense<double>(ch, 9 * ch);
    const int side = config.pooled_size / 8;
    p.encoder.proj = Dense<double>(kLatentDim, ch * side * side);
    for (auto &c : p.encoder.conv) c.init_uniform(rng);
    p.encoder.proj.init_uniform(rng);

    auto &d = p.decoder;
    const int k = config.slots();
    d.embed = MatX<double>(k, config.embed_dim);
    for (Eigen::Index i = 0; i < d.embed.size(); ++i) d.embed.data()[i] = rng.uniform(-1.0, 1.0);
    d.hidden = Dense<double>(kDecoderHidden, config.embed_dim + kLatentDim + 3 + config.sweep_levels + 1);
    d.hidden.init_uniform(rng);
    d.router = make_router(kDecoderHidden, config.heads, config.top_k, config.router_temperature);
    d.router.proj.init_uniform(rng);
    const HeadRole roles[] = {HeadRole::Rpc, HeadRole::Shadow, HeadRole::Radiometric, HeadRole::Detail};
    for (int h = 0; h < config.heads; ++h) {
        auto head = make_head(kDecoderHidden, config.head_width, roles[h % 4]);
        head.inner.init_uniform(rng);
        head.outer.init_uniform(rng, 0.1);
        d.heads.push_back(std::move(head));
    }
    d.out = Dense<double>(kSlotFields, kDecoderHidden);
    d.out.init_uniform(rng, 0.1);
    d.base = MatX<double>::Zero(k, kSlotFields);
    d.cond = Dense<double>(config.sdf_conditioning, kLatentDim);
    d.cond.init_uniform(rng, 0.1);

    // The SDF starts as the plane z = 0 carried by units 0 and 1; the other
    // units start random and enter the output with small weights.
    const SceneBox box;
    const double level = (0.0 - box.center()[2]) / box.half()[2];
    p.sdf = make_plane_sdf(config.sdf_layers, config.sdf_width, config.sdf_frequencies, config.sdf_conditioning, level);
    const int n = static_cast<int>(p.sdf.layers.size());
    for (int l = 0; l < n; ++l) {
        auto &layer = p.sdf.layers[static_cast<std::size_t>(l)];
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in()));
        if (l + 1 < n) {
            for (int r = 2; r < layer.out(); ++r) {
                for (int c = 0; c < layer.in(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
            }
        } else {
            for (int c = 2; c < layer.in(); ++c) layer.weight(0, c) = rng.uniform(-0.01, 0.01);
        }
    }
    p.gate = make_gate(config.gate_width);
    init_gate(p.gate, rng);
    p.gate.out.bias[0] = 2.0;
    return p;
}

// ---------------------------------------------------------------------------
// Episode constants

namespace {

std::vector<double> pool_image(const Image &img, int size) {
    std::vector<double> out(static_cast<std::size_t>(size) * size * 3, 0.0);
    for (int r = 0; r < size; ++r) {
        const int r0 = r * img.height / size, r1 = std::max(r0 + 1, (r + 1) * img.height / size);
        for (int c = 0; c < size; ++c) {
            const int c0 = c * img.width / size, c1 = std::max(c0 + 1, (c + 1) * img.width / size);
            for (int ch = 0; ch < 3; ++ch) {
                double acc = 0.0;
                for (int y = r0; y < r1; ++y) {
                    for (int x = c0; x < c1; ++x) acc += img.at(y, x, ch);
                }
                out[(static_cast<std::size_t>(r) * size + c) * 3 + ch] = acc / ((r1 - r0) * (c1 - c0));
            }
        }
    }
    return out;
}

Vec3<double> sample_bilinear(const Image &img, const Vec2<double> &px) {
    const double fr = std::clamp(px[0] - 0.5, 0.0, img.height - 1.0);
    const double fc = std::clamp(px[1] - 0.5, 0.0, img.width - 1.0);
    const int r0 = std::min(static_cast<int>(fr), img.height - 1), c0 = std::min(static_cast<int>(fc), img.width - 1);
    const int r1 = std::min(r0 + 1, img.height - 1), c1 = std::min(c0 + 1, img.width - 1);
    const double tr = fr - r0, tc = fc - c0;
    Vec3<double> out;
    for (int ch = 0; ch < 3; ++ch) {
        out[ch] = (img.at(r0, c0, ch) * (1 - tc) + img.at(r0, c1, ch) * tc) * (1 - tr) +
                  (img.at(r1, c0, ch) * (1 - tc) + img.at(r1, c1, ch) * tc) * tr;
    }
    return out;
}

// Photo-consistency of the support views over candidate heights under each
// anchor: mean pairwise L1 color difference of 3x3 ground patches. Costs are
// standardized per slot; the last column is the soft-argmin height in [-1, 1].
MatX<double> plane_sweep(const Episode &ep, const std::vector<Vec2<double>> &anchors, double cell, int levels) {
    const auto k_max = static_cast<Eigen::Index>(anchors.size());
    MatX<double> out = MatX<double>::Zero(k_max, levels + 1);
    const double zlo = ep.box.lo[2], zhi = ep.box.hi[2];
    const double step = cell / 4.0;
    std::vector<std::vector<double>> patch(ep.support.size());
    for (Eigen::Index k = 0; k < k_max; ++k) {
        std::vector<double> cost(static_cast<std::size_t>(levels), 0.0);
        for (int l = 0; l < levels; ++l) {
            const double z = zlo + (l + 0.5) / levels * (zhi - zlo);
            for (std::size_t s = 0; s < ep.support.size(); ++s) {
                const auto &v = ep.views[static_cast<std::size_t>(ep.support[s])];
                patch[s].clear();
                for (int dx = -1; dx <= 1; ++dx) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        const Vec3<double> p(anchors[static_cast<std::size_t>(k)][0] + dx * step,
                                             anchors[static_cast<std::size_t>(k)][1] + dy * step, z);
                        const auto px =
                            project(v.geometry, p, static_cast<const Calibration<double> *>(nullptr), ep.box).pixel;
                        const Vec3<double> col = sample_bilinear(v.image, px);
                        patch[s].insert(patch[s].end(), col.data(), col.data() + 3);
                    }
                }
            }
            double acc = 0.0;
            int pairs = 0;
            for (std::size_t a = 0; a < patch.size(); ++a) {
                for (std::size_t b = a + 1; b < patch.size(); ++b) {
                    for (std::size_t q = 0; q < patch[a].size(); ++q) acc += std::abs(patch[a][q] - patch[b][q]);
                    pairs += static_cast<int>(patch[a].size());
                }
            }
            cost[static_cast<std::size_t>(l)] = pairs ? acc / pairs : 0.0;
        }
        double mean = 0.0, var = 0.0;
        for (double c : cost) mean += c / levels;
        for (double c : cost) var += (c - mean) * (c - mean) / levels;
        const double sd = std::sqrt(var) + 1e-3;
        double wsum = 0.0, zsum = 0.0;
        for (int l = 0; l < levels; ++l) {
            const double n = (cost[static_cast<std::size_t>(l)] - mean) / sd;
            out(k, l) = n;
            const double w = std::exp(-2.0 * n);
            wsum += w;
            zsum += w * (2.0 * (l + 0.5) / levels - 1.0);
        }
        out(k, levels) = zsum / wsum;
    }
    return out;
}

}  // namespace

EpisodeCache make_cache(const Episode &episode, const ModelConfig &config) {
    config.validate();
    EpisodeCache c;
    c.episode = &episode;
    c.config = config;
    for (const auto &v : episode.views) c.pooled.push_back(pool_image(v.image, config.pooled_size));
    const int g = config.slot_grid;
    const Vec3<double> lo = episode.box.lo, hi = episode.box.hi;
    c.cell = (hi[0] - lo[0]) / g;
    const double cell_y = (hi[1] - lo[1]) / g;
    c.tokens = MatX<double>::Zero(config.slots(), 3);
    for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
            const Vec2<double> a(lo[0] + (i + 0.5) * c.cell, lo[1] + (j + 0.5) * cell_y);
            c.anchors.push_back(a);
            const int k = i * g + j;
            for (int s : episode.support) {
                const auto &v = episode.views[static_cast<std::size_t>(s)];
                const Vec3<double> p(a[0], a[1], 0.0);
                const auto px = project(v.geometry, p, static_cast<const Calibration<double> *>(nullptr), episode.box).pixel;
                const Vec3<double> col = sample_bilinear(v.image, px);
                for (int ch = 0; ch < 3; ++ch) c.tokens(k, ch) += col[ch] / static_cast<double>(episode.support.size());
            }
        }
    }
    c.sweep = plane_sweep(episode, c.anchors, c.cell, config.sweep_levels);
    for (const auto &v : episode.views) {
        c.sun_views.push_back(make_sun_view(episode.box, v.sun.direction, v.geometry.gsd, v.name + ".sun"));
    }
    return c;
}

template <class T>
VecX<T> encode_scene(const EpisodeCache &cache, const std::vector<int> &views, const Encoder<T> &encoder) {
    using std::tanh;
    if (views.empty()) throw std::invalid_argument("encode_scene: at least one view required");
    const int ch_out = encoder.conv[0].out();
    VecX<T> pooled_max;
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        const auto &src = cache.pooled.at(static_cast<std::size_t>(views[vi]));
        int size = cache.config.pooled_size;
        int ch_in = 3;
        std::vector<T> act(src.begin(), src.end());
        for (int layer = 0; layer < 3; ++layer) {
            const int out_size = size / 2;
            std::vector<T> next(static_cast<std::size_t>(out_size) * out_size * ch_out);
            VecX<T> patch(9 * ch_in);
            for (int r = 0; r < out_size; ++r) {
                for (int c = 0; c < out_size; ++c) {
                    int k = 0;
                    for (int dr = -1; dr <= 1; ++dr) {
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int y = 2 * r + dr, x = 2 * c + dc;
                            const bool inside = y >= 0 && x >= 0 && y < size && x < size;
                            for (int q = 0; q < ch_in; ++q) {
                                patch[k++] = inside ? act[(static_cast<std::size_t>(y) * size + x) * ch_in + q] : T(0);
                            }
                        }
                    }
                    const VecX<T> y = encoder.conv[static_cast<std::size_t>(layer)](patch);
                    for (int q = 0; q < ch_out; ++q) {
                        next[(static_cast<std::size_t>(r) * out_size + c) * ch_out + q] = tanh(y[q]);
                    }
                }
            }
            act.swap(next);
            size = out_size;
            ch_in = ch_out;
        }
        if (vi == 0) {
            pooled_max = Eigen::Map<const VecX<T>>(act.data(), static_cast<Eigen::Index>(act.size()));
        } else {
            for (Eigen::Index k = 0; k < pooled_max.size(); ++k) pooled_max[k] = smax(pooled_max[k], act[static_cast<std::size_t>(k)]);
        }
    }
    return encoder.proj(pooled_max);
}

template <class T>
Prediction<T> predict(const EpisodeCache &cache, const SharedParams<T> &params, const Calibration<T> &theta) {
    using std::exp;
    using std::log;
    using std::tanh;
    const Episode &ep = *cache.episode;
    const auto &d = params.decoder;
    const int k_max = params.config.slots();
    if (d.embed.rows() != k_max || cache.anchors.size() != static_cast<std::size_t>(k_max)) {
        throw std::invalid_argument("predict: slot count mismatch between model and cache");
    }
    if (theta.delta.size() != kDeltaDim) throw std::invalid_argument("predict: calibration residual has wrong size");
    Prediction<T> out;
    out.z = encode_scene(cache, ep.support, params.encoder);
    out.sdf = params.sdf;
    out.sdf.conditioning = d.cond(out.z);

    std::vector<VecX<T>> features;
    features.reserve(static_cast<std::size_t>(k_max));
    for (int k = 0; k < k_max; ++k) {
        VecX<T> in(d.embed.cols() + out.z.size() + 3 + cache.sweep.cols());
        int i = 0;
        for (Eigen::Index e = 0; e < d.embed.cols(); ++e) in[i++] = d.embed(k, e);
        for (Eigen::Index e = 0; e < out.z.size(); ++e) in[i++] = out.z[e];
        for (int ch = 0; ch < 3; ++ch) in[i++] = T(cache.tokens(k, ch));
        for (Eigen::Index q = 0; q < cache.sweep.cols(); ++q) in[i++] = T(cache.sweep(k, q));
        features.push_back(softplus_vec(d.hidden(in)));
    }
    // Route on slot-centered features: the shared component would otherwise
    // pick the same heads for every slot. The mean is restored after the heads.
    VecX<T> mean = VecX<T>::Zero(kDecoderHidden);
    for (const auto &f : features) mean += f;
    mean = mean * T(1.0 / static_cast<double>(std::max(1, k_max)));
    for (auto &f : features) f -= mean;
    out.routing = route_and_apply(std::span<const VecX<T>>(features), d.router, d.heads);
    for (auto &f : out.routing.fused) f += mean;

    const SceneBox &box = ep.box;
    const double zlo = box.lo[2], zhi = box.hi[2];
    const double cell = cache.cell;
    const double lxy_lo = std::log(0.2 * cell), lxy_span = std::log(6.0);
    const double lz_lo = std::log(0.5), lz_span = std::log(32.0);
    out.slots = SlotSet<T>(static_cast<std::size_t>(k_max));
    for (int k = 0; k < k_max; ++k) {
        VecX<T> f = out.routing.fused[static_cast<std::size_t>(k)];
        for (int u = 0; u < kDecoderHidden; ++u) {
            if (!is_zero_constant(theta.delta[u])) f[u] = f[u] * (T(1) + theta.delta[u]);
        }
        VecX<T> o = d.out(f);
        for (int q = 0; q < kSlotFields; ++q) {
            o[q] = o[q] + d.base(k, q);
            if (!is_zero_constant(theta.delta[kDecoderHidden + q])) o[q] = o[q] + theta.delta[kDecoderHidden + q];
        }
        const Vec2<double> &a = cache.anchors[static_cast<std::size_t>(k)];
        GaussianPrimitive<T> p;
        p.center = Vec3<T>(T(a[0]) + T(0.75 * cell) * tanh(o[0]), T(a[1]) + T(0.75 * cell) * tanh(o[1]),
                           T(zlo) + T(zhi - zlo) * sigmoid(o[2]));
        p.geom.log_scales = Vec3<T>(T(lxy_lo) + T(lxy_span) * sigmoid(o[3]), T(lxy_lo) + T(lxy_span) * sigmoid(o[4]),
                                    T(lz_lo) + T(lz_span) * sigmoid(o[5]));
        p.geom.rotation = normalized_quaternion(
            Vec4<T>(T(1), T(0.25) * tanh(o[6]), T(0.25) * tanh(o[7]), T(0.25) * tanh(o[8])));
        p.radio.log_scales = Vec3<T>(T(2) * tanh(o[9]), T(2) * tanh(o[10]), T(2) * tanh(o[11]));
        p.opacity_logit = T(2) + o[12];
        p.brdf = Vec4<T>(sigmoid(o[13]), sigmoid(o[14]), sigmoid(o[15]), T(0.5) * sigmoid(o[16]));
        p.appearance = VecX<T>(kAppearanceDim);
        for (int q = 0; q < kAppearanceDim; ++q) p.appearance[q] = tanh(o[17 + q]);
        out.slots.slots[static_cast<std::size_t>(k)] = p;
        out.slots.active[static_cast<std::size_t>(k)] = 1;
    }
    return out;
}

SplitSample draw_sample(const Episode &episode, const std::vector<int> &views, const SampleConfig &config, Rng &rng,
                        bool with_dsm) {
    SplitSample s;
    s.views = views;
    s.reproj_points = config.reproj_points;
    auto pick = [&](int h, int w, int count) {
        std::vector<std::array<int, 2>> px;
        const auto n = static_cast<std::size_t>(h) * w;
        if (count <= 0 || static_cast<std::size_t>(count) >= n) {
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) px.push_back({r, c});
            }
            return px;
        }
        // Partial Fisher-Yates over pixel indices.
        std::vector<std::uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        for (int i = 0; i < count; ++i) {
            const std::size_t j = static_cast<std::size_t>(i) + rng.index(n - static_cast<std::size_t>(i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
            px.push_back({static_cast<int>(idx[static_cast<std::size_t>(i)] / w),
                          static_cast<int>(idx[static_cast<std::size_t>(i)] % w)});
        }
        return px;
    };
    for (int v : views) {
        const auto &g = episode.views.at(static_cast<std::size_t>(v)).geometry;
        s.pixels.push_back(pick(g.height, g.width, config.pixels_per_view));
    }
    if (with_dsm && episode.dsm) s.dsm_cells = pick(episode.dsm->height, episode.dsm->width, config.dsm_cells);
    for (int i = 0; i < config.eikonal_points; ++i) {
        const double x = rng.uniform(-1.0, 1.0), y = rng.uniform(-1.0, 1.0), z = rng.uniform(-1.0, 1.0);
        s.eikonal.emplace_back(x, y, z);
    }
    return s;
}

template <class T>
SplitLoss<T> split_loss(const EpisodeCache &cache, const SharedParams<T> &params, const Calibration<T> &theta,
                        const SplitSample &sample, const LossWeights &weights, bool use_dsm,
                        const RenderOptions &options) {
    using std::abs;
    const Episode &ep = *cache.episode;
    const SceneBox &box = ep.box;
    const Prediction<T> pred = predict(cache, params, theta);
    const SceneRefs<T> refs{&pred.slots, &pred.sdf, &params.gate, &pred.z};
    const Atmosphere<T> atm;
    const SensorResponse<T> sensor;
    SplitLoss<T> out;

    std::vector<T> rendered, elevation;
    std::vector<double> observed, teacher, confidence;
    double shadow_acc = 0.0;
    std::size_t shadow_n = 0;
    std::vector<PreparedView<T>> prepared;
    prepared.reserve(sample.views.size());
    for (std::size_t vi = 0; vi < sample.views.size(); ++vi) {
        const auto j = static_cast<std::size_t>(sample.views[vi]);
        const EpisodeView &v = ep.views[j];
        prepared.push_back(prepare_view(v.geometry, refs, box, options, &theta, true));
        const auto sun_pv = prepare_view(cache.sun_views[j], refs, box, options, &theta, false);
        for (const auto &[r, c] : sample.pixels[vi]) {
            const auto px = render_pixel(prepared.back(), &sun_pv, v.sun, atm, sensor, Vec2<T>(T(r + 0.5), T(c + 0.5)));
            for (int ch = 0; ch < 3; ++ch) {
                rendered.push_back(px.color[ch]);
                observed.push_back(v.image.at(r, c, ch));
            }
            if (v.teacher) {
                elevation.push_back(px.elevation);
                teacher.push_back(v.teacher->depth.at(r, c));
                confidence.push_back(v.teacher->confidence.at(r, c));
            }
            if (v.shadow) {
                shadow_acc += std::abs(value(px.shadow) - v.shadow->at(r, c));
                ++shadow_n;
            }
        }
    }
    out.terms.photo = photo_loss(std::span<const T>(rendered), std::span<const double>(observed));
    if (!elevation.empty()) {
        out.terms.distill = distill_loss(std::span<const T>(elevation), std::span<const double>(teacher),
                                         std::span<const double>(confidence));
    }
    if (shadow_n) out.shadow_l1 = shadow_acc / static_cast<double>(shadow_n);

    // Homologous elevations: ground points seen by the first view, re-imaged in the others.
    if (weights.reproj > 0.0 && !prepared.empty()) {
        std::vector<std::vector<T>> samples(prepared.size());
        const auto &first = sample.pixels.front();
        const std::size_t m = std::min<std::size_t>(first.size(), static_cast<std::size_t>(std::max(0, sample.reproj_points)));
        for (std::size_t i = 0; i < m; ++i) {
            const auto [r, c] = first[i];
            const auto e = render_elevation(prepared[0], Vec2<T>(T(r + 0.5), T(c + 0.5)));
            samples[0].push_back(e.elevation);
            const Vec3<double> ground = values(e.ray.at(e.altitude));
            const Vec3<T> gt{T(ground[0]), T(ground[1]), T(ground[2])};
            for (std::size_t vj = 1; vj < prepared.size(); ++vj) {
                const auto hom = project(*prepared[vj].view, gt, prepared[vj].pixel_calib(), box).pixel;
                samples[vj].push_back(render_elevation(prepared[vj], hom).elevation);
            }
        }
        out.terms.reproj = reproj_loss(samples, &out.single_view);
    }

    if (use_dsm && ep.dsm && !sample.dsm_cells.empty()) {
        const auto dv = prepare_view(ep.dsm_view, refs, box, options, &theta, false);
        std::vector<T> pred_dsm;
        std::vector<double> ref;
        std::vector<std::uint8_t> mask;
        double err = 0.0;
        std::size_t n = 0;
        for (const auto &[r, c] : sample.dsm_cells) {
            pred_dsm.push_back(render_elevation(dv, Vec2<T>(T(r + 0.5), T(c + 0.5))).elevation);
            ref.push_back(ep.dsm->at(r, c));
            const bool ok = !ep.dsm_mask || ep.dsm_mask->at(r, c) > 0.5;
            mask.push_back(ok ? 1 : 0);
            if (ok) {
                err += std::abs(value(pred_dsm.back()) - ref.back());
                ++n;
            }
        }
        if (n) {
            out.terms.dsm = dsm_loss(std::span<const T>(pred_dsm), std::span<const double>(ref),
                                     std::span<const std::uint8_t>(mask));
            out.dsm_mae = err / static_cast<double>(n);
        }
    }

    if (weights.sdf > 0.0 && !sample.eikonal.empty()) {
        std::vector<Vec3<T>> centers;
        for (std::size_t k = 0; k < pred.slots.capacity(); ++k) {
            if (pred.slots.active[k]) centers.push_back(box.normalize(pred.slots.slots[k].center));
        }
        out.terms.sdf = sdf_loss(pred.sdf, std::span<const Vec3<double>>(sample.eikonal),
                                 std::span<const Vec3<T>>(centers));
    }
    out.terms.sparse = sparsity(pred.slots);
    const VecX<T> &imp = pred.routing.importance;
    out.terms.load = load_loss(std::span<const T>(imp.data(), static_cast<std::size_t>(imp.size())));
    out.terms.z = z_loss(pred.routing.logits, 1.0);
    out.loads = pred.routing.stats.load;
    out.load_var = load_loss(std::span<const double>(out.loads));
    out.total = total_loss(out.terms, weights);
    return out;
}

// ---------------------------------------------------------------------------
// Gradients and calibration

namespace {

template <class M>
void make_inputs(M &model, Tape &tape) {
    visit_params(model, [&](const std::string &, Var *data, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) data[k] = Var(data[k].v, tape.push_input(data[k].v));
    });
}

template <class M>
std::vector<double> gather(const M &model, const std::vector<double> &adj) {
    std::vector<double> g;
    visit_params(model, [&](const std::string &, const Var *data, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) g.push_back(data[k].i >= 0 ? adj[static_cast<std::size_t>(data[k].i)] : 0.0);
    });
    return g;
}

LossTerms<double> term_values(const LossTerms<Var> &t) {
    return {t.photo.v, t.perceptual.v, t.reproj.v, t.dsm.v, t.distill.v, t.sdf.v, t.load.v, t.z.v, t.sparse.v};
}

SplitLoss<double> loss_values(const SplitLoss<Var> &l) {
    SplitLoss<double> out;
    out.terms = term_values(l.terms);
    out.total = l.total.v;
    out.dsm_mae = l.dsm_mae;
    out.shadow_l1 = l.shadow_l1;
    out.load_var = l.load_var;
    out.loads = l.loads;
    out.single_view = l.single_view;
    return out;
}

void descend(Calibration<double> &theta, const std::vector<double> &g, const InnerConfig &config) {
    ParamVector flat = flatten(theta);
    for (std::size_t k = 0; k < flat.values.size(); ++k) flat.values[k] -= config.lr * g[k];
    assign(theta, std::span<const double>(flat.values));
    project_calibration(theta, config.box);
}

}  // namespace

InnerResult inner_descent(const std::function<Var(const Calibration<Var> &)> &loss, const Calibration<double> &theta0,
                          const InnerConfig &config) {
    if (config.steps < 0) throw std::invalid_argument("inner_calibrate: steps must be nonnegative");
    if (!(config.lr > 0.0)) throw std::invalid_argument("inner_calibrate: step size must be positive");
    InnerResult res;
    res.theta = theta0;
    for (int s = 0; s < config.steps; ++s) {
        Tape tape;
        TapeScope scope(tape);
        Calibration<Var> tv = res.theta.cast<Var>();
        make_inputs(tv, tape);
        const Var l = loss(tv);
        if (!std::isfinite(l.v)) {
            res.aborted = true;
            res.error = "non-finite support loss at step " + std::to_string(s);
            return res;
        }
        res.support_loss.push_back(l.v);
        std::vector<double> g(param_count(tv), 0.0);
        if (!l.is_const()) g = gather(tv, tape.backward(l.i));
        descend(res.theta, g, config);
    }
    return res;
}

InnerResult inner_calibrate(const EpisodeCache &cache, const SharedParams<double> &params,
                            const Calibration<double> &theta0, const SplitSample &support, const LossWeights &weights,
                            const RenderOptions &options, const InnerConfig &config) {
    const SharedParams<Var> frozen = params.cast<Var>();
    InnerResult res;
    try {
        res = inner_descent(
            [&](const Calibration<Var> &tv) {
                return split_loss(cache, frozen, tv, support, weights, false, options).total;
            },
            theta0, config);
        if (!res.aborted && config.measure_final) {
            const double final_loss = split_loss(cache, params, res.theta, support, weights, false, options).total;
            if (!std::isfinite(final_loss)) {
                res.aborted = true;
                res.error = "non-finite support loss after calibration";
            }
            res.support_loss.push_back(final_loss);
        }
    } catch (const NonFiniteLoss &e) {
        res.aborted = true;
        res.error = e.what();
    } catch (const DegenerateProjection &e) {
        res.aborted = true;
        res.error = e.what();
    }
    return res;
}

GradientStats shared_gradient(const EpisodeCache &cache, const SharedParams<double> &params,
                              const Calibration<double> &theta, const SplitSample &sample, const LossWeights &weights,
                              bool use_dsm, const RenderOptions &options, SplitLoss<double> *report) {
    Tape tape;
    TapeScope scope(tape);
    SharedParams<Var> pv = params.cast<Var>();
    make_inputs(pv, tape);
    const Calibration<Var> tv = theta.cast<Var>();
    const SplitLoss<Var> l = split_loss(cache, pv, tv, sample, weights, use_dsm, options);
    GradientStats g;
    g.loss = l.total.v;
    if (report) *report = loss_values(l);
    if (l.total.is_const()) {
        g.gradient.assign(param_count(pv), 0.0);
    } else {
        g.gradient = gather(pv, tape.backward(l.total.i));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Meta-training

void TrainConfig::validate() const {
    if (batch < 1) throw std::invalid_argument("train: batch must be positive");
    if (!(outer_lr > 0.0) || !(inner_lr > 0.0)) throw std::invalid_argument("train: step sizes must be positive");
    if (inner_steps < 0) throw std::invalid_argument("train: inner steps must be nonnegative");
    if (iterations < 0) throw std::invalid_argument("train: iterations must be nonnegative");
    if (optimizer != "sgd" && optimizer != "adamw") throw std::invalid_argument("train: optimizer must be sgd or adamw");
    if (threads < 1) throw std::invalid_argument("train: threads must be positive");
    weights.validate();
}

std::string format_train_log(const std::vector<TrainLogRow> &rows) {
    std::ostringstream out;
    out << "iter,query_loss,dsm_mae,shadow_loss,load_var\n";
    for (const auto &r : rows) {
        out << r.iter << ',' << shortest_repr(r.query_loss) << ',' << shortest_repr(r.dsm_mae) << ','
            << shortest_repr(r.shadow_loss) << ',' << shortest_repr(r.load_var) << '\n';
    }
    return out.str();
}

namespace {

struct EpisodeStep {
    bool ok = false;
    std::string error;
    std::vector<double> gradient;
    SplitLoss<double> query;
};

template <class F>
void run_parallel(int count, int threads, F &&f) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < count; i += threads) f(i);
        });
    }
    for (auto &th : pool) th.join();
}

double mean_finite(const std::vector<double> &xs) {
    double acc = 0.0;
    std::size_t n = 0;
    for (double x : xs) {
        if (std::isfinite(x)) {
            acc += x;
            ++n;
        }
    }
    return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainResult meta_train(const std::vector<Episode> &dataset, const TrainConfig &config, const SharedParams<double> &init,
                       const TrainCallback &callback) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("meta_train: empty dataset");
    std::vector<EpisodeCache> caches;
    caches.reserve(dataset.size());
    for (const auto &ep : dataset) caches.push_back(make_cache(ep, init.config));

    TrainResult result;
    result.params = init;
    ParamVector flat = flatten(result.params);
    const std::size_t n_params = flat.values.size();
    std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
    InnerConfig inner;
    inner.steps = config.inner_steps;
    inner.lr = config.inner_lr;
    inner.box = config.box;

    for (int it = 0; it < config.iterations; ++it) {
        Rng pick = Rng::derive(config.seed, static_cast<std::uint64_t>(it), 0xba7c);
        std::vector<std::size_t> chosen;
        for (int b = 0; b < config.batch; ++b) chosen.push_back(pick.index(dataset.size()));
        const std::uint64_t phi_before = param_checksum(result.params);
        std::vector<EpisodeStep> steps(static_cast<std::size_t>(config.batch));
        run_parallel(config.batch, config.threads, [&](int b) {
            const auto e = chosen[static_cast<std::size_t>(b)];
            const Episode &ep = dataset[e];
            const EpisodeCache &cache = caches[e];
            Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(it), 1000 + static_cast<std::uint64_t>(b));
            const SplitSample support = draw_sample(ep, ep.support, config.sample, rng, false);
            const SplitSample query = draw_sample(ep, ep.query, config.sample, rng, true);
            EpisodeStep &step = steps[static_cast<std::size_t>(b)];
            const InnerResult adapted =
                inner_calibrate(cache, result.params, Calibration<double>::identity(), support, config.weights,
                                config.render, inner);
            if (adapted.aborted) {
                step.error = ep.name + ": " + adapted.error;
                return;
            }
            const std::uint64_t theta_closed = param_checksum(adapted.theta);
            try {
                GradientStats g = shared_gradient(cache, result.params, adapted.theta, query, config.weights, true,
                                                  config.render, &step.query);
                step.gradient = std::move(g.gradient);
                step.ok = std::isfinite(g.loss);
                if (!step.ok) step.error = ep.name + ": non-finite query loss";
            } catch (const std::exception &ex) {
                step.error = ep.name + ": " + ex.what();
            }
            if (param_checksum(adapted.theta) != theta_closed) throw std::logic_error("calibration changed after inner loop");
        });
        if (param_checksum(result.params) != phi_before) throw std::logic_error("inner loop modified shared parameters");

        std::vector<double> grad(n_params, 0.0);
        std::vector<double> losses, dsm, shadow, load;
        int used = 0;
        for (const auto &s : steps) {
            if (!s.ok) {
                result.aborted.push_back(std::to_string(it) + ":" + s.error);
                continue;
            }
            for (std::size_t k = 0; k < n_params; ++k) grad[k] += s.gradient[k];
            losses.push_back(s.query.total);
            dsm.push_back(s.query.dsm_mae);
            shadow.push_back(s.query.shadow_l1);
            load.push_back(s.query.load_var);
            ++used;
        }
        TrainLogRow row;
        row.iter = it;
        row.query_loss = mean_finite(losses);
        row.dsm_mae = mean_finite(dsm);
        row.shadow_loss = mean_finite(shadow);
        row.load_var = mean_finite(load);
        if (used == 0) {
            result.log.push_back(row);
            if (callback) callback(row, result.params);
            continue;
        }
        double norm2 = 0.0;
        for (double &g : grad) {
            g /= used;
            norm2 += g * g;
        }
        row.grad_norm = std::sqrt(norm2);
        if (!(row.query_loss <= config.divergence) || !std::isfinite(row.grad_norm)) {
            result.diverged = true;
            result.log.push_back(row);
            if (callback) callback(row, result.params);
            break;
        }
        if (config.grad_clip > 0.0 && row.grad_norm > config.grad_clip) {
            const double s = config.grad_clip / row.grad_norm;
            for (double &g : grad) g *= s;
        }
        if (config.optimizer == "sgd") {
            for (std::size_t k = 0; k < n_params; ++k) flat.values[k] -= config.outer_lr * grad[k];
        } else {
            const double t = it + 1.0;
            const double c1 = 1.0 - std::pow(config.beta1, t);
            const double c2 = 1.0 - std::pow(config.beta2, t);
            for (std::size_t k = 0; k < n_params; ++k) {
                m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * grad[k];
                m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * grad[k] * grad[k];
                const double step = (m1[k] / c1) / (std::sqrt(m2[k] / c2) + config.epsilon);
                flat.values[k] -= config.outer_lr * (step + config.weight_decay * flat.values[k]);
            }
        }
        assign(result.params, std::span<const double>(flat.values));
        result.log.push_back(row);
        if (callback) callback(row, result.params);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Inference

InferenceResult infer_with(const Episode &episode, const EpisodeCache &cache, const SharedParams<double> &params,
                           const Calibration<double> &theta, const RenderOptions &options, int threads,
                           bool render_views) {
    InferenceResult out;
    out.theta = theta;
    out.prediction = predict(cache, params, theta);
    const SceneRefs<double> refs{&out.prediction.slots, &out.prediction.sdf, &params.gate, &out.prediction.z};
    const auto dv = prepare_view(episode.dsm_view, refs, episode.box, options, &theta, false);
    out.dsm = render_elevation_map(dv, threads);
    if (render_views) {
        for (std::size_t j = 0; j < episode.views.size(); ++j) {
            const auto &v = episode.views[j];
            const auto pv = prepare_view(v.geometry, refs, episode.box, options, &theta, true);
            const auto sv = prepare_view(cache.sun_views[j], refs, episode.box, options, &theta, false);
            out.views.push_back(render_view(pv, &sv, v.sun, Atmosphere<double>(), SensorResponse<double>(), threads));
        }
    }
    return out;
}

InferenceResult zero_shot_infer(const Episode &episode, const SharedParams<double> &params,
                                const RenderOptions &options, int threads, bool render_views) {
    const EpisodeCache cache = make_cache(episode, params.config);
    return infer_with(episode, cache, params, Calibration<double>::identity(), options, threads, render_views);
}

InferenceResult calibrate_and_infer(const Episode &episode, const SharedParams<double> &params,
                                    const InnerConfig &inner, const LossWeights &weights,
                                    const SampleConfig &sample, std::uint64_t seed, const RenderOptions &options,
                                    int threads, bool render_views) {
    const EpisodeCache cache = make_cache(episode, params.config);
    Rng rng = Rng::derive(seed, 0xca1b);
    const SplitSample support = draw_sample(episode, episode.support, sample, rng, false);
    const InnerResult adapted =
        inner_calibrate(cache, params, Calibration<double>::identity(), support, weights, options, inner);
    if (adapted.aborted) throw std::runtime_error("calibration aborted: " + adapted.error);
    return infer_with(episode, cache, params, adapted.theta, options, threads, render_views);
}

#define SWIFTGS_META_INSTANTIATE(T)                                                                              \
    template VecX<T> encode_scene<T>(const EpisodeCache &, const std::vector<int> &, const Encoder<T> &);        \
    template Prediction<T> predict<T>(const EpisodeCache &, const SharedParams<T> &, const Calibration<T> &);    \
    template SplitLoss<T> split_loss<T>(const EpisodeCache &, const SharedParams<T> &, const Calibration<T> &,   \
                                        const SplitSample &, const LossWeights &, bool, const RenderOptions &);

SWIFTGS_META_INSTANTIATE(double)
SWIFTGS_META_INSTANTIATE(long double)
SWIFTGS_META_INSTANTIATE(Var)

#undef SWIFTGS_META_INSTANTIATE

}  // namespace swiftgs
