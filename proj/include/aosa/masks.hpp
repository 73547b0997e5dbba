#pragma once

#include <cstddef>
#include <vector>

#include "aosa/flow.hpp"
#include "aosa/tensor.hpp"

namespace aosa {

// Round half away from zero is not wanted here; placement uses half-up
// (toward +infinity), i.e. floor(x + 0.5).
int round_half_up(double x);

struct Rect {
    int top = 0;
    int left = 0;
    int h = 0;
    int w = 0;

    int bottom() const { return top + h; }
    int right() const { return left + w; }
    long long area() const { return static_cast<long long>(h) * w; }
    bool empty() const { return h <= 0 || w <= 0; }
};

struct MaskConfig {
    int s = 8;       // anchor spacing in pixels
    int occ_h = 16;  // occlusion patch height
    int occ_w = 16;  // occlusion patch width
    int K = 5;       // number of co-occurring masks to integrate (0 = single mask)

    void validate(int H, int W, int anchor_count) const;
};

struct MaskDims {
    int T = 0;
    int H = 0;
    int W = 0;
    int C = 0;
};

// Binary spatio-temporal occlusion mask in sparse form: a short rectangle
// list per frame. Rasterizes to 0 inside rectangles, 1 elsewhere; the same
// plane applies to every channel.
struct SpatioTemporalMask {
    MaskDims dims;
    std::vector<int> source_ids;           // owning anchor first, then partners
    std::vector<std::vector<Rect>> rects;  // one list per frame; may be empty
    std::vector<std::vector<int>> rect_src;  // anchor id behind each rect

    std::vector<float> rasterize_thw() const;  // T*H*W plane, values in {0,1}
    std::size_t occluded_count() const;        // zeros across all frames
};

// Cell-centered anchor grid: floor(H/s) * floor(W/s) points at
// (s/2 + i*s, s/2 + j*s) in row-major order.
std::vector<Vec2> place_anchor_grid(int H, int W, int s);

// h x w rectangle centered at the rounded point, clipped to the frame.
Rect centered_rect(double row, double col, int h, int w, int H, int W);

SpatioTemporalMask build_mask(const AnchorTrack& track, const MaskConfig& cfg, MaskDims dims);

// Cosine similarity of displacement vectors over the common alive prefix.
// Returns 0 when either vector is empty or has zero norm.
double co_occurrence(const AnchorTrack& a, const AnchorTrack& b);

// Indices of the k highest-co-occurrence partners of anchor i, descending
// similarity, ties broken by lower anchor id.
std::vector<int> top_k_partners(int i, const std::vector<AnchorTrack>& tracks, int k);

// Element-wise product of mask i with its top-k partners: the occluded set
// becomes the per-frame union of up to k+1 rectangles.
SpatioTemporalMask integrate_masks(int i, const std::vector<AnchorTrack>& tracks,
                                   const std::vector<SpatioTemporalMask>& masks, int k);

// Per-pixel normal fill statistics estimated from the occ_h x occ_w patches
// inside the sampling window around an anchor at one frame.
struct FillDistribution {
    int h = 0;
    int w = 0;
    int c = 0;
    int top = 0;   // unclipped top-left of the anchor-centered patch
    int left = 0;
    bool scalar_fallback = false;  // too few candidate patches; window-wide stats
    std::vector<double> mean;      // h*w*c
    std::vector<double> var;       // h*w*c, non-negative

    std::size_t idx(int i, int j, int ch) const {
        return (static_cast<std::size_t>(i) * w + j) * c + ch;
    }
};

inline constexpr int kFillWindow = 36;

FillDistribution fill_distribution(const VideoTensor& v, const AnchorTrack& track, int t,
                                   const MaskConfig& cfg);

}  // namespace aosa
