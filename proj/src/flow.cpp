#include "aosa/flow.hpp"

#include <algorithm>
#include <cmath>

#include "aosa/errors.hpp"

namespace aosa {

namespace {

// Bilinear sample with replicated borders. Exact at integer coordinates.
double sample(const GrayImage& im, double r, double c) {
    r = std::clamp(r, 0.0, static_cast<double>(im.h - 1));
    c = std::clamp(c, 0.0, static_cast<double>(im.w - 1));
    int r0 = static_cast<int>(std::floor(r));
    int c0 = static_cast<int>(std::floor(c));
    if (r0 > im.h - 2) r0 = std::max(0, im.h - 2);
    if (c0 > im.w - 2) c0 = std::max(0, im.w - 2);
    const int r1 = std::min(r0 + 1, im.h - 1);
    const int c1 = std::min(c0 + 1, im.w - 1);
    const double fr = r - r0;
    const double fc = c - c0;
    const double top = im.at(r0, c0) * (1.0 - fc) + im.at(r0, c1) * fc;
    const double bot = im.at(r1, c0) * (1.0 - fc) + im.at(r1, c1) * fc;
    return top * (1.0 - fr) + bot * fr;
}

bool on_screen(const Vec2& p, int h, int w) {
    return p.row >= 0.0 && p.row <= h - 1 && p.col >= 0.0 && p.col <= w - 1;
}

int clamp_levels(int levels, int h, int w, int window_radius) {
    // Keep the coarsest level at least one window wide so the least-squares
    // system stays meaningful on small inputs.
    const int win = 2 * window_radius + 1;
    while (levels > 1 && ((h >> (levels - 1)) < win || (w >> (levels - 1)) < win)) --levels;
    return levels;
}

}  // namespace

void FlowParams::validate() const {
    if (levels < 1) throw ValidationError("FlowParams: levels must be >= 1");
    if (window_radius < 1) throw ValidationError("FlowParams: window radius must be >= 1");
    if (max_iterations < 1) throw ValidationError("FlowParams: max iterations must be >= 1");
    if (!(epsilon > 0.0)) throw ValidationError("FlowParams: epsilon must be positive");
}

std::vector<double> AnchorTrack::displacement() const {
    std::vector<double> v;
    if (positions.size() < 2) return v;
    v.reserve(2 * (positions.size() - 1));
    for (std::size_t k = 1; k < positions.size(); ++k) {
        v.push_back(positions[k].row - positions[k - 1].row);
        v.push_back(positions[k].col - positions[k - 1].col);
    }
    return v;
}

GrayImage to_gray(const VideoTensor& v, int frame) {
    if (frame < 0 || frame >= v.T) throw ValidationError("to_gray: frame out of range");
    GrayImage g;
    g.h = v.H;
    g.w = v.W;
    g.pix.resize(static_cast<std::size_t>(v.H) * v.W);
    for (int r = 0; r < v.H; ++r) {
        for (int c = 0; c < v.W; ++c) {
            if (v.C == 1) {
                g.at(r, c) = v.at(frame, r, c, 0);
            } else {
                g.at(r, c) = 0.299 * v.at(frame, r, c, 0) + 0.587 * v.at(frame, r, c, 1) +
                             0.114 * v.at(frame, r, c, 2);
            }
        }
    }
    return g;
}

std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels) {
    if (levels < 1) throw ValidationError("build_pyramid: levels must be >= 1");
    const int need = 1 << (levels - 1);
    if (img.h < need || img.w < need)
        throw ValidationError("build_pyramid: image too small for requested levels");

    std::vector<GrayImage> pyr;
    pyr.reserve(levels);
    pyr.push_back(img);
    for (int k = 1; k < levels; ++k) {
        const GrayImage& src = pyr.back();
        GrayImage dst;
        dst.h = src.h / 2;
        dst.w = src.w / 2;
        dst.pix.resize(static_cast<std::size_t>(dst.h) * dst.w);
        for (int r = 0; r < dst.h; ++r) {
            for (int c = 0; c < dst.w; ++c) {
                dst.at(r, c) = 0.25 * (src.at(2 * r, 2 * c) + src.at(2 * r, 2 * c + 1) +
                                       src.at(2 * r + 1, 2 * c) + src.at(2 * r + 1, 2 * c + 1));
            }
        }
        pyr.push_back(std::move(dst));
    }
    return pyr;
}

Vec2 lk_refine(const GrayImage& prev, const GrayImage& next, Vec2 point, Vec2 guess,
               const FlowParams& params) {
    params.validate();
    const int r = params.window_radius;
    const int win = 2 * r + 1;
    const int n = win * win;

    // Fixed-template KLT: spatial gradients come from the previous frame, so
    // the structure matrix is constant across iterations.
    std::vector<double> gr(n), gc(n), ref(n);
    double a00 = 0.0, a01 = 0.0, a11 = 0.0;
    int idx = 0;
    for (int i = -r; i <= r; ++i) {
        for (int j = -r; j <= r; ++j, ++idx) {
            const double pr = point.row + i;
            const double pc = point.col + j;
            ref[idx] = sample(prev, pr, pc);
            gr[idx] = 0.5 * (sample(prev, pr + 1, pc) - sample(prev, pr - 1, pc));
            gc[idx] = 0.5 * (sample(prev, pr, pc + 1) - sample(prev, pr, pc - 1));
            a00 += gr[idx] * gr[idx];
            a01 += gr[idx] * gc[idx];
            a11 += gc[idx] * gc[idx];
        }
    }

    const double trace_half = 0.5 * (a00 + a11);
    const double det_term = std::sqrt(0.25 * (a00 - a11) * (a00 - a11) + a01 * a01);
    const double min_eig = trace_half - det_term;
    if (min_eig < 1e-6 * n) return guess;

    const double det = a00 * a11 - a01 * a01;
    Vec2 d = guess;
    for (int it = 0; it < params.max_iterations; ++it) {
        double b0 = 0.0, b1 = 0.0;
        idx = 0;
        for (int i = -r; i <= r; ++i) {
            for (int j = -r; j <= r; ++j, ++idx) {
                const double diff =
                    sample(next, point.row + d.row + i, point.col + d.col + j) - ref[idx];
                b0 -= diff * gr[idx];
                b1 -= diff * gc[idx];
            }
        }
        const double step_r = (a11 * b0 - a01 * b1) / det;
        const double step_c = (a00 * b1 - a01 * b0) / det;
        d.row += step_r;
        d.col += step_c;
        if (std::sqrt(step_r * step_r + step_c * step_c) < params.epsilon) break;
    }
    return d;
}

std::vector<AnchorTrack> track_anchors(const VideoTensor& v, const std::vector<Vec2>& anchors,
                                       const FlowParams& params) {
    v.validate();
    params.validate();
    for (const Vec2& a : anchors)
        if (!on_screen(a, v.H, v.W))
            throw ValidationError("track_anchors: anchor outside frame bounds");

    const int levels = clamp_levels(params.levels, v.H, v.W, params.window_radius);

    std::vector<AnchorTrack> tracks(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        tracks[i].id = static_cast<int>(i);
        tracks[i].positions.push_back(anchors[i]);
    }

    std::vector<GrayImage> prev_pyr = build_pyramid(to_gray(v, 0), levels);
    for (int t = 0; t + 1 < v.T; ++t) {
        std::vector<GrayImage> next_pyr = build_pyramid(to_gray(v, t + 1), levels);
        for (auto& track : tracks) {
            if (track.alive_frames() != t + 1) continue;  // already stopped
            const Vec2 p = track.positions.back();
            Vec2 d{0.0, 0.0};
            for (int k = levels - 1; k >= 0; --k) {
                if (k < levels - 1) {
                    d.row *= 2.0;
                    d.col *= 2.0;
                }
                const double scale = 1.0 / static_cast<double>(1 << k);
                d = lk_refine(prev_pyr[k], next_pyr[k], Vec2{p.row * scale, p.col * scale}, d,
                              params);
            }
            const Vec2 moved{p.row + d.row, p.col + d.col};
            if (on_screen(moved, v.H, v.W)) track.positions.push_back(moved);
        }
        prev_pyr = std::move(next_pyr);
    }
    return tracks;
}

DenseFlow load_flow(const std::string& path) {
    TensorFile t = load_tensor(path);
    if (t.rank != 3 || t.dims[2] != 2)
        throw FormatError("dense flow must be a rank-3 H x W x 2 tensor: " + path);
    DenseFlow f;
    f.h = static_cast<int>(t.dims[0]);
    f.w = static_cast<int>(t.dims[1]);
    f.data = std::move(t.data);
    return f;
}

std::vector<AnchorTrack> track_anchors_dense(int T, int H, int W, const std::vector<Vec2>& anchors,
                                             const std::vector<DenseFlow>& flows) {
    if (T < 2) throw ValidationError("track_anchors_dense: need at least 2 frames");
    if (flows.size() != static_cast<std::size_t>(T - 1))
        throw ValidationError("track_anchors_dense: need exactly T-1 flow fields");
    for (const DenseFlow& f : flows)
        if (f.h != H || f.w != W || f.data.size() != static_cast<std::size_t>(H) * W * 2)
            throw ValidationError("track_anchors_dense: flow field dims mismatch");
    for (const Vec2& a : anchors)
        if (!on_screen(a, H, W))
            throw ValidationError("track_anchors_dense: anchor outside frame bounds");

    std::vector<AnchorTrack> tracks(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        tracks[i].id = static_cast<int>(i);
        tracks[i].positions.push_back(anchors[i]);
    }
    GrayImage rows, cols;
    rows.h = cols.h = H;
    rows.w = cols.w = W;
    rows.pix.resize(static_cast<std::size_t>(H) * W);
    cols.pix.resize(static_cast<std::size_t>(H) * W);
    for (int t = 0; t + 1 < T; ++t) {
        // Split the field into planes so the gray-image bilinear sampler applies.
        const DenseFlow& f = flows[t];
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                rows.at(r, c) = f.drow(r, c);
                cols.at(r, c) = f.dcol(r, c);
            }
        }
        for (auto& track : tracks) {
            if (track.alive_frames() != t + 1) continue;
            const Vec2 p = track.positions.back();
            const Vec2 moved{p.row + sample(rows, p.row, p.col),
                             p.col + sample(cols, p.row, p.col)};
            if (on_screen(moved, H, W)) track.positions.push_back(moved);
        }
    }
    return tracks;
}

}  // namespace aosa
