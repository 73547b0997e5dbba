#pragma once

#include <vector>

#include "aosa/tensor.hpp"

namespace aosa {

struct Vec2 {
    double row = 0.0;
    double col = 0.0;
};

// Pyramidal Lucas-Kanade parameters. The defaults track motions up to about
// +-12 px/frame at 112x112.
struct FlowParams {
    int levels = 3;
    int window_radius = 7;
    int max_iterations = 10;
    double epsilon = 0.01;  // convergence threshold in pixels

    void validate() const;
};

// Trajectory of one anchor point. positions[k] is the (row, col) location in
// frame k; tracking stops at the last frame where the point is still
// on-screen, so positions.size() is the alive frame count.
struct AnchorTrack {
    int id = 0;
    std::vector<Vec2> positions;

    int alive_frames() const { return static_cast<int>(positions.size()); }

    // Concatenated consecutive position differences, 2*(alive-1) entries in
    // (row, col) pairs.
    std::vector<double> displacement() const;
};

struct GrayImage {
    int h = 0, w = 0;
    std::vector<double> pix;

    double at(int r, int c) const { return pix[static_cast<std::size_t>(r) * w + c]; }
    double& at(int r, int c) { return pix[static_cast<std::size_t>(r) * w + c]; }
};

// Luminance conversion, 0.299 R + 0.587 G + 0.114 B (single channel passes
// through unchanged).
GrayImage to_gray(const VideoTensor& v, int frame);

// Level 0 is the input; each further level halves both dims with 2x2 box
// averaging, dropping a trailing odd row/column.
std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels);

// One windowed least-squares refinement at a single point. Returns the
// refined displacement, or the guess unchanged when the structure matrix is
// near-singular (min eigenvalue < 1e-6 * window area).
Vec2 lk_refine(const GrayImage& prev, const GrayImage& next, Vec2 point, Vec2 guess,
               const FlowParams& params);

// Tracks each anchor across all frames with pyramidal LK, stopping a track
// at the frame where the moved point leaves [0, H-1] x [0, W-1].
std::vector<AnchorTrack> track_anchors(const VideoTensor& v, const std::vector<Vec2>& anchors,
                                       const FlowParams& params);

// Dense per-frame-pair displacement field, (drow, dcol) per pixel.
struct DenseFlow {
    int h = 0, w = 0;
    std::vector<float> data;  // h*w*2

    double drow(int r, int c) const { return data[(static_cast<std::size_t>(r) * w + c) * 2]; }
    double dcol(int r, int c) const { return data[(static_cast<std::size_t>(r) * w + c) * 2 + 1]; }
};

// Reads a rank-3 H x W x 2 tensor file as a dense flow field.
DenseFlow load_flow(const std::string& path);

// Replays externally supplied flow instead of running LK: the field for each
// frame pair is sampled bilinearly at the current anchor position. flows must
// hold exactly T-1 fields matching the frame size.
std::vector<AnchorTrack> track_anchors_dense(int T, int H, int W, const std::vector<Vec2>& anchors,
                                             const std::vector<DenseFlow>& flows);

}  // namespace aosa
