#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "aosa/tensor.hpp"

namespace aosa {

// Axis-aligned pixel box, inclusive of its last row/column.
struct Box {
    int top = 0, left = 0, height = 0, width = 0;

    int bottom() const { return top + height - 1; }
    int right() const { return left + width - 1; }
};

// Optional per-frame annotation; empty where the shape is off-screen.
struct GroundTruthBoxes {
    std::vector<std::optional<Box>> per_frame;
};

enum class ShapeKind { Rectangle, Disc };
enum class TextureMode { Flat, Noise };
enum class BackgroundMode { Static, DriftingNoise };

// Scene description for the moving-shape generator. The class label is the
// motion direction, one of eight 45-degree sectors.
struct SyntheticSpec {
    int frames = 16;
    int height = 112;
    int width = 112;
    int channels = 3;

    ShapeKind shape = ShapeKind::Rectangle;
    int shape_h = 16;  // disc uses shape_h as its diameter
    int shape_w = 16;

    double start_row = 0.0;  // top-left of the shape in frame 1
    double start_col = 0.0;
    double vel_row = 0.0;  // pixels per frame
    double vel_col = 0.0;

    TextureMode texture = TextureMode::Noise;
    BackgroundMode background = BackgroundMode::Static;
    double background_level = 0.1;  // Static mode fill value

    void validate() const;
};

constexpr int kDirectionClasses = 8;

// Maps a motion vector to one of eight direction classes (0 = rightward,
// counting counter-clockwise in image coordinates, 45 degrees per class).
int direction_class(double vel_row, double vel_col);

// Unit-speed velocity for a direction class; inverse of direction_class.
void direction_velocity(int cls, double& vel_row, double& vel_col);

struct SyntheticSample {
    VideoTensor video;
    GroundTruthBoxes boxes;
    int label = 0;
};

// Deterministic for a fixed (spec, seed). Boxes tightly bound the rasterized
// shape on every frame where any of it is visible.
SyntheticSample generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Noise-textured square moving at unit speed in direction `cls`, started so
// the whole trajectory stays on screen. Shared by the trainer and the
// held-out evaluation sets; the two draw from different seed streams.
SyntheticSample direction_sample(int cls, int frames, int size, int channels,
                                 std::uint64_t seed);

class Rng;

// Training-time robustness edits: pepper dropout plus a couple of cutout
// tubes, both painted with zeros. Kept mild so a mostly-destroyed scene never
// carries a confident direction label.
void augment_for_training(VideoTensor& v, Rng& rng);

// Ready-to-train set: per_class scenes for each of the eight directions,
// scenes first in index order. With augment set, every scene gets
// augment_for_training edits and eight all-black calibration videos are
// appended, one per label, which pins the score on empty inputs near uniform.
std::vector<std::pair<VideoTensor, int>> make_direction_dataset(int per_class, int frames,
                                                                int size, int channels,
                                                                std::uint64_t seed,
                                                                bool augment);

}  // namespace aosa
