#include "aosa/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aosa/errors.hpp"

namespace aosa {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

void MaskConfig::validate(int H, int W, int anchor_count) const {
    if (s < 1) throw ValidationError("MaskConfig: spacing s must be >= 1");
    if (occ_h < 1 || occ_h > H) throw ValidationError("MaskConfig: occlusion height out of range");
    if (occ_w < 1 || occ_w > W) throw ValidationError("MaskConfig: occlusion width out of range");
    if (K < 0 || K > anchor_count - 1)
        throw ValidationError("MaskConfig: K must be in [0, N-1]");
}

std::vector<float> SpatioTemporalMask::rasterize_thw() const {
    const std::size_t plane = static_cast<std::size_t>(dims.H) * dims.W;
    std::vector<float> out(static_cast<std::size_t>(dims.T) * plane, 1.0f);
    for (int t = 0; t < dims.T; ++t) {
        for (const Rect& r : rects[t]) {
            for (int row = r.top; row < r.bottom(); ++row) {
                float* base = out.data() + t * plane + static_cast<std::size_t>(row) * dims.W;
                std::fill(base + r.left, base + r.right(), 0.0f);
            }
        }
    }
    return out;
}

std::size_t SpatioTemporalMask::occluded_count() const {
    std::vector<float> plane = rasterize_thw();
    return static_cast<std::size_t>(std::count(plane.begin(), plane.end(), 0.0f));
}

std::vector<Vec2> place_anchor_grid(int H, int W, int s) {
    if (s < 1) throw ValidationError("place_anchor_grid: s must be >= 1");
    if (s > std::min(H, W)) throw ValidationError("place_anchor_grid: s exceeds frame size");
    const int nr = H / s;
    const int nc = W / s;
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(nr) * nc);
    const double half = s / 2.0;
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) out.push_back(Vec2{half + i * s, half + j * s});
    return out;
}

Rect centered_rect(double row, double col, int h, int w, int H, int W) {
    const int cr = round_half_up(row);
    const int cc = round_half_up(col);
    int top = cr - h / 2;
    int left = cc - w / 2;
    int bottom = top + h;
    int right = left + w;
    top = std::max(top, 0);
    left = std::max(left, 0);
    bottom = std::min(bottom, H);
    right = std::min(right, W);
    return Rect{top, left, bottom - top, right - left};
}

SpatioTemporalMask build_mask(const AnchorTrack& track, const MaskConfig& cfg, MaskDims dims) {
    if (track.positions.empty() || track.alive_frames() > dims.T)
        throw ValidationError("build_mask: track does not fit video dims");
    SpatioTemporalMask m;
    m.dims = dims;
    m.source_ids = {track.id};
    m.rects.resize(dims.T);
    m.rect_src.resize(dims.T);
    for (int t = 0; t < track.alive_frames(); ++t) {
        Rect r = centered_rect(track.positions[t].row, track.positions[t].col, cfg.occ_h,
                               cfg.occ_w, dims.H, dims.W);
        if (!r.empty()) {
            m.rects[t].push_back(r);
            m.rect_src[t].push_back(track.id);
        }
    }
    return m;
}

double co_occurrence(const AnchorTrack& a, const AnchorTrack& b) {
    const std::vector<double> va = a.displacement();
    const std::vector<double> vb = b.displacement();
    const std::size_t n = std::min(va.size(), vb.size());
    if (n == 0) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        dot += va[k] * vb[k];
        na += va[k] * va[k];
        nb += vb[k] * vb[k];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> top_k_partners(int i, const std::vector<AnchorTrack>& tracks, int k) {
    if (i < 0 || i >= static_cast<int>(tracks.size()))
        throw ValidationError("top_k_partners: anchor index out of range");
    if (k < 0 || k > static_cast<int>(tracks.size()) - 1)
        throw ValidationError("top_k_partners: k out of range");
    std::vector<int> order;
    order.reserve(tracks.size() - 1);
    for (int x = 0; x < static_cast<int>(tracks.size()); ++x)
        if (x != i) order.push_back(x);
    std::vector<double> co(tracks.size(), 0.0);
    for (int x : order) co[x] = co_occurrence(tracks[i], tracks[x]);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (co[a] != co[b]) return co[a] > co[b];
        return a < b;
    });
    order.resize(k);
    return order;
}

SpatioTemporalMask integrate_masks(int i, const std::vector<AnchorTrack>& tracks,
                                   const std::vector<SpatioTemporalMask>& masks, int k) {
    if (masks.size() != tracks.size())
        throw ValidationError("integrate_masks: masks/tracks size mismatch");
    const std::vector<int> partners = top_k_partners(i, tracks, k);
    SpatioTemporalMask out = masks[i];
    for (int p : partners) {
        out.source_ids.push_back(p);
        for (int t = 0; t < out.dims.T; ++t) {
            for (std::size_t j = 0; j < masks[p].rects[t].size(); ++j) {
                out.rects[t].push_back(masks[p].rects[t][j]);
                out.rect_src[t].push_back(masks[p].rect_src[t][j]);
            }
        }
    }
    return out;
}

namespace {

// Summed-area table over a window of the video, one channel at a time.
// sat(r, c) holds the sum over rows [0, r) x cols [0, c) of the window.
struct WindowSat {
    int h = 0, w = 0;
    std::vector<double> sum, sumsq;

    void build(const VideoTensor& v, int t, int top, int left, int hh, int ww, int ch) {
        h = hh;
        w = ww;
        sum.assign(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
        sumsq.assign(sum.size(), 0.0);
        for (int r = 0; r < h; ++r) {
            double run = 0.0, runsq = 0.0;
            for (int c = 0; c < w; ++c) {
                const double x = v.at(t, top + r, left + c, ch);
                run += x;
                runsq += x * x;
                at(sum, r + 1, c + 1) = at(sum, r, c + 1) + run;
                at(sumsq, r + 1, c + 1) = at(sumsq, r, c + 1) + runsq;
            }
        }
    }
    double& at(std::vector<double>& v, int r, int c) {
        return v[static_cast<std::size_t>(r) * (w + 1) + c];
    }
    double box(const std::vector<double>& v, int r0, int c0, int r1, int c1) const {
        auto g = [&](int r, int c) { return v[static_cast<std::size_t>(r) * (w + 1) + c]; };
        return g(r1, c1) - g(r0, c1) - g(r1, c0) + g(r0, c0);
    }
};

}  // namespace

FillDistribution fill_distribution(const VideoTensor& v, const AnchorTrack& track, int t,
                                   const MaskConfig& cfg) {
    if (t < 0 || t >= track.alive_frames())
        throw ValidationError("fill_distribution: track not alive at frame");
    const Vec2 p = track.positions[t];
    const int ar = round_half_up(p.row);
    const int ac = round_half_up(p.col);
    const int h = cfg.occ_h;
    const int w = cfg.occ_w;

    FillDistribution fd;
    fd.h = h;
    fd.w = w;
    fd.c = v.C;
    fd.top = ar - h / 2;
    fd.left = ac - w / 2;
    fd.mean.assign(static_cast<std::size_t>(h) * w * v.C, 0.0);
    fd.var.assign(fd.mean.size(), 0.0);

    // Sampling window clipped to the frame.
    const int wt0 = std::max(ar - kFillWindow / 2, 0);
    const int wt1 = std::min(ar - kFillWindow / 2 + kFillWindow, v.H);
    const int wl0 = std::max(ac - kFillWindow / 2, 0);
    const int wl1 = std::min(ac - kFillWindow / 2 + kFillWindow, v.W);

    // Candidate patch top-lefts: patch inside the window and covering (ar, ac).
    const int rlo = std::max(wt0, ar - h + 1);
    const int rhi = std::min(wt1 - h, ar);
    const int clo = std::max(wl0, ac - w + 1);
    const int chi = std::min(wl1 - w, ac);
    const long long nr = rhi >= rlo ? rhi - rlo + 1 : 0;
    const long long nc = chi >= clo ? chi - clo + 1 : 0;
    const bool exclude =
        fd.top >= rlo && fd.top <= rhi && fd.left >= clo && fd.left <= chi;
    const long long m = nr * nc - (exclude ? 1 : 0);

    if (m < 2) {
        // Extreme border case: fall back to window-wide scalar stats per channel.
        fd.scalar_fallback = true;
        for (int ch = 0; ch < v.C; ++ch) {
            double s = 0.0, s2 = 0.0;
            long long n = 0;
            for (int r = wt0; r < wt1; ++r) {
                for (int c = wl0; c < wl1; ++c) {
                    const double x = v.at(t, r, c, ch);
                    s += x;
                    s2 += x * x;
                    ++n;
                }
            }
            const double mu = n > 0 ? s / n : 0.0;
            const double var = n > 0 ? std::max(0.0, s2 / n - mu * mu) : 0.0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    fd.mean[fd.idx(i, j, ch)] = mu;
                    fd.var[fd.idx(i, j, ch)] = var;
                }
        }
        return fd;
    }

    // For patch pixel (i, j) the candidate values occupy the contiguous image
    // block rows [rlo+i, rhi+i] x cols [clo+j, chi+j]; box sums come from a
    // summed-area table over the window.
    WindowSat sat;
    for (int ch = 0; ch < v.C; ++ch) {
        sat.build(v, t, wt0, wl0, wt1 - wt0, wl1 - wl0, ch);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const int r0 = rlo + i - wt0;
                const int c0 = clo + j - wl0;
                const int r1 = r0 + static_cast<int>(nr);
                const int c1 = c0 + static_cast<int>(nc);
                double s = sat.box(sat.sum, r0, c0, r1, c1);
                double s2 = sat.box(sat.sumsq, r0, c0, r1, c1);
                if (exclude) {
                    const double x = v.at(t, fd.top + i, fd.left + j, ch);
                    s -= x;
                    s2 -= x * x;
                }
                const double mu = s / m;
                fd.mean[fd.idx(i, j, ch)] = mu;
                fd.var[fd.idx(i, j, ch)] = std::max(0.0, s2 / m - mu * mu);
            }
        }
    }
    return fd;
}

}  // namespace aosa
