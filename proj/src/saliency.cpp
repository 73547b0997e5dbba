#include "aosa/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "aosa/errors.hpp"

namespace aosa {

void SaliencyConfig::validate() const {
    if (!std::isfinite(fill_value)) throw ValidationError("fill value must be finite");
    if (mc_samples < 1) throw ValidationError("Monte Carlo sample count must be >= 1");
    flow.validate();
}

std::string method_name(SaliencyConfig::Method m) {
    return m == SaliencyConfig::Method::Exact ? "exact" : "approx";
}

std::string fill_name(SaliencyConfig::Fill f) {
    return f == SaliencyConfig::Fill::Constant ? "const" : "cond";
}

FillDists all_fill_distributions(const VideoTensor& v, const std::vector<AnchorTrack>& tracks,
                                 const MaskConfig& cfg) {
    FillDists out;
    for (const AnchorTrack& track : tracks) {
        std::vector<FillDistribution>& per_frame = out[track.id];
        per_frame.reserve(track.alive_frames());
        for (int t = 0; t < track.alive_frames(); ++t)
            per_frame.push_back(fill_distribution(v, track, t, cfg));
    }
    return out;
}

namespace {

// Visit each occluded pixel of one frame list exactly once. Rectangles are
// scanned back to front with a claim bitmap, so a pixel is attributed to the
// last rectangle covering it, matching last-write-wins fill assembly.
// fn(t, row, col, rect_index).
template <class Fn>
void for_each_occluded(const SpatioTemporalMask& mask, Fn&& fn) {
    const int H = mask.dims.H, W = mask.dims.W;
    std::vector<std::uint8_t> claimed;
    for (int t = 0; t < mask.dims.T; ++t) {
        const std::vector<Rect>& rl = mask.rects[t];
        if (rl.empty()) continue;
        if (rl.size() == 1) {
            const Rect& r = rl[0];
            for (int row = r.top; row < r.bottom(); ++row)
                for (int col = r.left; col < r.right(); ++col) fn(t, row, col, 0);
            continue;
        }
        claimed.assign(static_cast<std::size_t>(H) * W, 0);
        for (int j = static_cast<int>(rl.size()) - 1; j >= 0; --j) {
            const Rect& r = rl[j];
            for (int row = r.top; row < r.bottom(); ++row) {
                std::uint8_t* line = claimed.data() + static_cast<std::size_t>(row) * W;
                for (int col = r.left; col < r.right(); ++col) {
                    if (!line[col]) {
                        line[col] = 1;
                        fn(t, row, col, j);
                    }
                }
            }
        }
    }
}

const FillDistribution& dist_for(const SpatioTemporalMask& mask, const FillDists& dists, int t,
                                 int rect_index) {
    const int src = mask.rect_src[t][rect_index];
    auto it = dists.find(src);
    if (it == dists.end() || t >= static_cast<int>(it->second.size()))
        throw ValidationError("missing fill distribution for anchor " + std::to_string(src));
    return it->second[t];
}

double mean_at(const FillDistribution& fd, int row, int col, int c) {
    return fd.mean[fd.idx(row - fd.top, col - fd.left, c)];
}

struct CounterDelta {
    const CallCounter& counter;
    long f0, b0;
    explicit CounterDelta(const CallCounter& c)
        : counter(c), f0(c.forwards()), b0(c.backwards()) {}
    long forwards() const { return counter.forwards() - f0; }
    long backwards() const { return counter.backwards() - b0; }
};

// The engine runs the model in the configured score mode and puts it back
// afterwards.
struct ModeGuard {
    ScoreModel& m;
    ScoreMode saved;
    ModeGuard(ScoreModel& model, ScoreMode want) : m(model), saved(model.mode()) {
        m.set_mode(want);
    }
    ~ModeGuard() { m.set_mode(saved); }
};

int resolve_target(ScoreModel& m, const SaliencyConfig& cfg, const std::vector<double>& base) {
    if (cfg.target_class >= 0) {
        if (cfg.target_class >= m.num_classes())
            throw ValidationError("target class out of range");
        return cfg.target_class;
    }
    return static_cast<int>(std::max_element(base.begin(), base.end()) - base.begin());
}

void fill_meta(SaliencyResult& r, const SaliencyConfig& cfg, const std::string& method) {
    auto& meta = r.map.meta;
    meta["method"] = method;
    meta["s"] = std::to_string(cfg.mask.s);
    meta["h"] = std::to_string(cfg.mask.occ_h);
    meta["w"] = std::to_string(cfg.mask.occ_w);
    meta["K"] = std::to_string(cfg.mask.K);
    meta["fill"] = fill_name(cfg.fill);
    meta["score_mode"] = score_mode_name(cfg.score_mode);
    meta["class"] = std::to_string(r.target_class);
    meta["seed"] = std::to_string(cfg.seed);
    meta["forwards"] = std::to_string(r.forwards);
    meta["backwards"] = std::to_string(r.backwards);
}

}  // namespace

void fill_rects_const(VideoTensor& g, const SpatioTemporalMask& mask, double value) {
    const float f = static_cast<float>(value);
    for (int t = 0; t < mask.dims.T; ++t)
        for (const Rect& r : mask.rects[t])
            for (int row = r.top; row < r.bottom(); ++row)
                for (int col = r.left; col < r.right(); ++col)
                    for (int c = 0; c < g.C; ++c) g.at(t, row, col, c) = f;
}

void fill_rects_mean(VideoTensor& g, const SpatioTemporalMask& mask, const FillDists& dists) {
    for (int t = 0; t < mask.dims.T; ++t) {
        for (std::size_t j = 0; j < mask.rects[t].size(); ++j) {
            const Rect& r = mask.rects[t][j];
            const FillDistribution& fd = dist_for(mask, dists, t, static_cast<int>(j));
            for (int row = r.top; row < r.bottom(); ++row)
                for (int col = r.left; col < r.right(); ++col)
                    for (int c = 0; c < g.C; ++c)
                        g.at(t, row, col, c) = static_cast<float>(mean_at(fd, row, col, c));
        }
    }
}

void fill_rects_sampled(VideoTensor& g, const SpatioTemporalMask& mask, const FillDists& dists,
                        Rng& rng) {
    for (int t = 0; t < mask.dims.T; ++t) {
        for (std::size_t j = 0; j < mask.rects[t].size(); ++j) {
            const Rect& r = mask.rects[t][j];
            const FillDistribution& fd = dist_for(mask, dists, t, static_cast<int>(j));
            for (int row = r.top; row < r.bottom(); ++row)
                for (int col = r.left; col < r.right(); ++col)
                    for (int c = 0; c < g.C; ++c) {
                        const std::size_t k = fd.idx(row - fd.top, col - fd.left, c);
                        g.at(t, row, col, c) = static_cast<float>(
                            rng.normal(fd.mean[k], std::sqrt(fd.var[k])));
                    }
        }
    }
}

void restore_rects(VideoTensor& g, const VideoTensor& original, const SpatioTemporalMask& mask) {
    for (int t = 0; t < mask.dims.T; ++t)
        for (const Rect& r : mask.rects[t])
            for (int row = r.top; row < r.bottom(); ++row)
                for (int col = r.left; col < r.right(); ++col)
                    for (int c = 0; c < g.C; ++c)
                        g.at(t, row, col, c) = original.at(t, row, col, c);
}

SaliencyMap accumulate_map(const std::vector<SpatioTemporalMask>& masks,
                           const std::vector<double>& scores, int T, int H, int W,
                           bool normalize_coverage) {
    if (masks.size() != scores.size())
        throw ValidationError("accumulate_map: masks/scores size mismatch");
    if (masks.empty()) throw ValidationError("accumulate_map: no masks");
    SaliencyMap s;
    s.T = T;
    s.H = H;
    s.W = W;
    const std::size_t n = static_cast<std::size_t>(T) * H * W;
    s.data.assign(n, 0.0);
    std::vector<std::int32_t> cover;
    if (normalize_coverage) cover.assign(n, 0);

    for (std::size_t i = 0; i < masks.size(); ++i) {
        const std::vector<float> plane = masks[i].rasterize_thw();
        if (plane.size() != n) throw ValidationError("accumulate_map: mask dims mismatch");
        const double w = scores[i];
        for (std::size_t p = 0; p < n; ++p) {
            if (plane[p] != 0.0f) {
                s.data[p] += w;
                if (normalize_coverage) ++cover[p];
            }
        }
    }
    if (normalize_coverage) {
        for (std::size_t p = 0; p < n; ++p)
            s.data[p] = cover[p] > 0 ? s.data[p] / cover[p] : 0.0;
    } else {
        const double inv = static_cast<double>(masks.size());
        for (std::size_t p = 0; p < n; ++p) s.data[p] /= inv;
    }
    return s;
}

SaliencyResult aosa_map_from_masks(const VideoTensor& v, ScoreModel& m,
                                   const std::vector<SpatioTemporalMask>& masks,
                                   const SaliencyConfig& cfg, const FillDists& dists) {
    v.validate();
    cfg.validate();
    if (masks.empty()) throw ValidationError("aosa_map: no masks");
    if (cfg.fill == SaliencyConfig::Fill::Conditional && dists.empty())
        throw ValidationError("conditional fill requires fill distributions");

    ModeGuard guard(m, cfg.score_mode);
    CounterDelta delta(m.counter());

    const std::vector<double> base = m.forward(v);
    const int target = resolve_target(m, cfg, base);

    SaliencyResult result;
    result.target_class = target;
    result.base_score = base[target];
    result.records.reserve(masks.size());

    std::vector<double> scores(masks.size(), 0.0);
    VideoTensor g = v;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        double score = 0.0;
        if (cfg.fill == SaliencyConfig::Fill::Constant) {
            fill_rects_const(g, masks[i], cfg.fill_value);
            score = m.forward(g)[target];
            restore_rects(g, v, masks[i]);
        } else {
            Rng rng(derive_seed(cfg.seed, 0xA05Aull * (i + 1)));
            double sum = 0.0;
            for (int k = 0; k < cfg.mc_samples; ++k) {
                fill_rects_sampled(g, masks[i], dists, rng);
                sum += m.forward(g)[target];
                restore_rects(g, v, masks[i]);
            }
            score = sum / cfg.mc_samples;
        }
        scores[i] = score;
        result.records.push_back(MaskScoreRecord{static_cast<int>(i), score,
                                                 result.base_score - score, false});
    }

    result.map = accumulate_map(masks, scores, v.T, v.H, v.W, cfg.normalize_coverage);
    result.forwards = delta.forwards();
    result.backwards = delta.backwards();
    fill_meta(result, cfg, method_name(SaliencyConfig::Method::Exact));
    return result;
}

namespace {

struct BuiltMasks {
    std::vector<AnchorTrack> tracks;
    std::vector<SpatioTemporalMask> integrated;
};

BuiltMasks build_integrated_masks(const VideoTensor& v, const SaliencyConfig& cfg) {
    const std::vector<Vec2> anchors = place_anchor_grid(v.H, v.W, cfg.mask.s);
    cfg.mask.validate(v.H, v.W, static_cast<int>(anchors.size()));
    BuiltMasks out;
    out.tracks = track_anchors(v, anchors, cfg.flow);
    const MaskDims dims{v.T, v.H, v.W, v.C};
    std::vector<SpatioTemporalMask> singles;
    singles.reserve(out.tracks.size());
    for (const AnchorTrack& track : out.tracks)
        singles.push_back(build_mask(track, cfg.mask, dims));
    out.integrated.reserve(singles.size());
    for (std::size_t i = 0; i < singles.size(); ++i)
        out.integrated.push_back(
            integrate_masks(static_cast<int>(i), out.tracks, singles, cfg.mask.K));
    return out;
}

}  // namespace

SaliencyResult aosa_map(const VideoTensor& v, ScoreModel& m, const SaliencyConfig& cfg) {
    v.validate();
    BuiltMasks built = build_integrated_masks(v, cfg);
    FillDists dists;
    if (cfg.fill == SaliencyConfig::Fill::Conditional)
        dists = all_fill_distributions(v, built.tracks, cfg.mask);
    return aosa_map_from_masks(v, m, built.integrated, cfg, dists);
}

void CuboidSpec::validate(int T, int H, int W) const {
    if (occ_t < 1 || occ_t > T || occ_h < 1 || occ_h > H || occ_w < 1 || occ_w > W)
        throw ValidationError("cuboid occlusion does not fit input dims");
    if (stride_t < 1 || stride_s < 1) throw ValidationError("cuboid strides must be >= 1");
}

std::vector<SpatioTemporalMask> cuboid_masks(const CuboidSpec& spec, MaskDims dims) {
    spec.validate(dims.T, dims.H, dims.W);
    const std::vector<Vec2> centers = place_anchor_grid(dims.H, dims.W, spec.stride_s);
    const int nt = (dims.T - spec.occ_t) / spec.stride_t + 1;

    std::vector<SpatioTemporalMask> out;
    out.reserve(static_cast<std::size_t>(nt) * centers.size());
    int id = 0;
    for (int k = 0; k < nt; ++k) {
        const int t0 = k * spec.stride_t;
        for (const Vec2& c : centers) {
            SpatioTemporalMask m;
            m.dims = dims;
            m.source_ids = {id};
            m.rects.resize(dims.T);
            m.rect_src.resize(dims.T);
            const Rect r = centered_rect(c.row, c.col, spec.occ_h, spec.occ_w, dims.H, dims.W);
            for (int t = t0; t < t0 + spec.occ_t; ++t) {
                m.rects[t].push_back(r);
                m.rect_src[t].push_back(id);
            }
            out.push_back(std::move(m));
            ++id;
        }
    }
    return out;
}

SaliencyResult cuboid_osa_map(const VideoTensor& v, ScoreModel& m, const CuboidSpec& spec,
                              const SaliencyConfig& cfg) {
    v.validate();
    if (cfg.fill != SaliencyConfig::Fill::Constant)
        throw ValidationError("cuboid baseline supports constant fill only");
    const std::vector<SpatioTemporalMask> masks =
        cuboid_masks(spec, MaskDims{v.T, v.H, v.W, v.C});
    SaliencyResult r = aosa_map_from_masks(v, m, masks, cfg);
    r.map.meta["method"] = "cuboid";
    return r;
}

double approx_score(double f_x, const GradTensor& J, const VideoTensor& v,
                    const SpatioTemporalMask& mask, double fill_value) {
    if (J.T != v.T || J.H != v.H || J.W != v.W || J.C != v.C)
        throw ValidationError("gradient dims do not match video");
    // The exact path writes the fill as float32; expand around that same input.
    const double fill = static_cast<double>(static_cast<float>(fill_value));
    double term = 0.0;
    for_each_occluded(mask, [&](int t, int row, int col, int) {
        for (int c = 0; c < v.C; ++c)
            term += J.at(t, row, col, c) * (fill - v.at(t, row, col, c));
    });
    return f_x + term;
}

double conditional_approx_score(const GradTensor& J, const VideoTensor& v,
                                const SpatioTemporalMask& mask, const FillDists& dists) {
    if (J.T != v.T || J.H != v.H || J.W != v.W || J.C != v.C)
        throw ValidationError("gradient dims do not match video");
    double s_m = 0.0;
    for_each_occluded(mask, [&](int t, int row, int col, int j) {
        const FillDistribution& fd = dist_for(mask, dists, t, j);
        for (int c = 0; c < v.C; ++c)
            s_m += J.at(t, row, col, c) * (v.at(t, row, col, c) - mean_at(fd, row, col, c));
    });
    return s_m;
}

double exact_conditional_score(ScoreModel& m, const VideoTensor& v,
                               const SpatioTemporalMask& mask, const FillDists& dists,
                               int n_samples, std::uint64_t seed, int target_class) {
    if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
    const double f_x = m.forward(v)[target_class];
    VideoTensor g = v;
    Rng rng(seed);
    double sum = 0.0;
    for (int k = 0; k < n_samples; ++k) {
        fill_rects_sampled(g, mask, dists, rng);
        sum += m.forward(g)[target_class];
        restore_rects(g, v, mask);
    }
    return f_x - sum / n_samples;
}

std::pair<std::vector<int>, std::vector<int>> iqr_outliers(const std::vector<double>& values) {
    std::pair<std::vector<int>, std::vector<int>> out;
    const std::size_t n = values.size();
    if (n < 4) return out;

    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    // Interpolated order statistic at 1-based position q(n+1).
    auto quantile = [&](double q) {
        double pos = q * (n + 1);
        pos = std::clamp(pos, 1.0, static_cast<double>(n));
        const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
        const double frac = pos - lo;
        return sorted[lo - 1] + frac * (sorted[hi - 1] - sorted[lo - 1]);
    };
    const double q1 = quantile(0.25);
    const double q3 = quantile(0.75);
    const double iqr = q3 - q1;
    const double lo_fence = q1 - 1.5 * iqr;
    const double hi_fence = q3 + 1.5 * iqr;
    for (std::size_t i = 0; i < n; ++i) {
        if (values[i] < lo_fence) out.first.push_back(static_cast<int>(i));
        if (values[i] > hi_fence) out.second.push_back(static_cast<int>(i));
    }
    return out;
}

namespace {

// Occluded input for one mask under the configured fill, as a dense video.
VideoTensor occluded_input(const VideoTensor& v, const SpatioTemporalMask& mask,
                           const SaliencyConfig& cfg, const FillDists& dists) {
    VideoTensor g = v;
    if (cfg.fill == SaliencyConfig::Fill::Constant)
        fill_rects_const(g, mask, cfg.fill_value);
    else
        fill_rects_mean(g, mask, dists);
    return g;
}

struct Extreme {
    VideoTensor g;             // the linearization point x*
    const SpatioTemporalMask* mask = nullptr;
    double f = 0.0;            // f(x*)
    GradTensor J;              // gradient at x*
};

// f(x*) + <J_{x*}, g_rec - x*> evaluated sparsely: the two inputs differ only
// inside the union of the two occluded sets.
double relinearized_score(const Extreme& ex, const SpatioTemporalMask& rec_mask,
                          const VideoTensor& v, const SaliencyConfig& cfg,
                          const FillDists& dists) {
    const int H = v.H, W = v.W;
    double term = 0.0;
    std::vector<std::uint8_t> in_rec(static_cast<std::size_t>(H) * W);
    std::vector<std::uint8_t> claimed(static_cast<std::size_t>(H) * W);
    for (int t = 0; t < v.T; ++t) {
        const std::vector<Rect>& rec_rl = rec_mask.rects[t];
        const std::vector<Rect>& ex_rl = ex.mask->rects[t];
        if (rec_rl.empty() && ex_rl.empty()) continue;

        // Pixels occluded by the record's mask: g_rec = fill, x* read densely.
        std::fill(in_rec.begin(), in_rec.end(), 0);
        for (int j = static_cast<int>(rec_rl.size()) - 1; j >= 0; --j) {
            const Rect& r = rec_rl[j];
            for (int row = r.top; row < r.bottom(); ++row) {
                std::uint8_t* line = in_rec.data() + static_cast<std::size_t>(row) * W;
                for (int col = r.left; col < r.right(); ++col) {
                    if (line[col]) continue;
                    line[col] = 1;
                    for (int c = 0; c < v.C; ++c) {
                        const double fill =
                            cfg.fill == SaliencyConfig::Fill::Constant
                                ? cfg.fill_value
                                : mean_at(dist_for(rec_mask, dists, t, j), row, col, c);
                        term += ex.J.at(t, row, col, c) * (fill - ex.g.at(t, row, col, c));
                    }
                }
            }
        }
        // Pixels occluded only by the extreme's mask: g_rec = x there.
        std::fill(claimed.begin(), claimed.end(), 0);
        for (int j = static_cast<int>(ex_rl.size()) - 1; j >= 0; --j) {
            const Rect& r = ex_rl[j];
            for (int row = r.top; row < r.bottom(); ++row) {
                std::uint8_t* line = claimed.data() + static_cast<std::size_t>(row) * W;
                const std::uint8_t* rec_line = in_rec.data() + static_cast<std::size_t>(row) * W;
                for (int col = r.left; col < r.right(); ++col) {
                    if (line[col] || rec_line[col]) continue;
                    line[col] = 1;
                    for (int c = 0; c < v.C; ++c)
                        term += ex.J.at(t, row, col, c) *
                                (v.at(t, row, col, c) - ex.g.at(t, row, col, c));
                }
            }
        }
    }
    return ex.f + term;
}

}  // namespace

void adjust_importances(std::vector<MaskScoreRecord>& records, ScoreModel& m,
                        const VideoTensor& v, const std::vector<SpatioTemporalMask>& masks,
                        const SaliencyConfig& cfg, const FillDists& dists, int target_class,
                        double f_x) {
    if (records.empty()) return;
    std::vector<double> diffs(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) diffs[i] = records[i].difference;
    const auto [low, high] = iqr_outliers(diffs);
    if (low.empty() && high.empty()) return;

    auto build_extreme = [&](std::size_t rec_idx) {
        Extreme ex;
        ex.mask = &masks[records[rec_idx].mask_id];
        ex.g = occluded_input(v, *ex.mask, cfg, dists);
        ex.f = m.forward(ex.g)[target_class];
        ex.J = m.gradient(ex.g, target_class);
        return ex;
    };
    auto apply = [&](const std::vector<int>& ids, const Extreme& ex) {
        for (int idx : ids) {
            MaskScoreRecord& rec = records[idx];
            rec.score = relinearized_score(ex, masks[rec.mask_id], v, cfg, dists);
            rec.difference = f_x - rec.score;
            rec.adjusted = true;
        }
    };

    if (!high.empty()) {
        const std::size_t hi_idx = static_cast<std::size_t>(
            std::max_element(diffs.begin(), diffs.end()) - diffs.begin());
        const Extreme ex = build_extreme(hi_idx);
        apply(high, ex);
    }
    if (!low.empty()) {
        const std::size_t lo_idx = static_cast<std::size_t>(
            std::min_element(diffs.begin(), diffs.end()) - diffs.begin());
        const Extreme ex = build_extreme(lo_idx);
        apply(low, ex);
    }
}

SaliencyResult approx_map_from_masks(const VideoTensor& v, ScoreModel& m,
                                     const std::vector<SpatioTemporalMask>& masks,
                                     const SaliencyConfig& cfg, const FillDists& dists) {
    v.validate();
    cfg.validate();
    if (masks.empty()) throw ValidationError("approx_map: no masks");
    if (cfg.fill == SaliencyConfig::Fill::Conditional && dists.empty())
        throw ValidationError("conditional fill requires fill distributions");

    ModeGuard guard(m, cfg.score_mode);
    CounterDelta delta(m.counter());

    const std::vector<double> base = m.forward(v);
    const int target = resolve_target(m, cfg, base);
    const double f_x = base[target];
    const GradTensor J = m.gradient(v, target);

    SaliencyResult result;
    result.target_class = target;
    result.base_score = f_x;
    result.records.reserve(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        double score;
        if (cfg.fill == SaliencyConfig::Fill::Constant) {
            score = approx_score(f_x, J, v, masks[i], cfg.fill_value);
        } else {
            score = f_x - conditional_approx_score(J, v, masks[i], dists);
        }
        result.records.push_back(
            MaskScoreRecord{static_cast<int>(i), score, f_x - score, false});
    }

    if (cfg.adjust)
        adjust_importances(result.records, m, v, masks, cfg, dists, target, f_x);

    std::vector<double> scores(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) scores[i] = result.records[i].score;
    result.map = accumulate_map(masks, scores, v.T, v.H, v.W, cfg.normalize_coverage);
    result.forwards = delta.forwards();
    result.backwards = delta.backwards();
    fill_meta(result, cfg, method_name(SaliencyConfig::Method::Approx));
    return result;
}

SaliencyResult approx_map(const VideoTensor& v, ScoreModel& m, const SaliencyConfig& cfg) {
    v.validate();
    BuiltMasks built = build_integrated_masks(v, cfg);
    FillDists dists;
    if (cfg.fill == SaliencyConfig::Fill::Conditional)
        dists = all_fill_distributions(v, built.tracks, cfg.mask);
    return approx_map_from_masks(v, m, built.integrated, cfg, dists);
}

}  // namespace aosa
