#pragma once

#include <cstdint>
#include <vector>

#include "aosa/model.hpp"
#include "aosa/synthetic.hpp"
#include "aosa/tensor.hpp"

namespace aosa {

struct DeletionInsertionResult {
    enum class Mode { Deletion, Insertion };
    Mode mode = Mode::Deletion;
    int steps = 0;
    double baseline = 0.0;
    std::vector<double> curve;  // steps+1 scores, first entry before any step
    double auc = 0.0;
};

inline constexpr int kDefaultCurveSteps = 28;

// Replace positions (all channels) with the baseline in descending-saliency
// order, ties broken by position index, scoring after each equal batch.
DeletionInsertionResult deletion_auc(const VideoTensor& v, const SaliencyMap& s, ScoreModel& m,
                                     int target_class, int steps = kDefaultCurveSteps,
                                     double baseline = 0.0);

// Start from an all-baseline input and restore original pixels in the same
// order.
DeletionInsertionResult insertion_auc(const VideoTensor& v, const SaliencyMap& s, ScoreModel& m,
                                      int target_class, int steps = kDefaultCurveSteps,
                                      double baseline = 0.0);

inline constexpr int kDefaultSPTRadius = 7;

// True iff the closed disc of the given radius around the frame's saliency
// argmax (ties to the smallest row-major index) intersects the box.
bool spt_hit(const SaliencyMap& s, int frame, const Box& box, int radius = kDefaultSPTRadius);

struct SPTResult {
    std::vector<bool> hits;   // one entry per annotated frame, in frame order
    int frames_with_boxes = 0;
    int hit_count = 0;
    int radius = kDefaultSPTRadius;
    double hit_rate = 0.0;  // 0 when no frame carries a box
};

SPTResult spt_video(const SaliencyMap& s, const GroundTruthBoxes& boxes,
                    int radius = kDefaultSPTRadius);

// Pooled hit rate: total hits over total annotated frames.
double spt_score(const std::vector<SPTResult>& results);

// Uniform [0,1) noise map, deterministic per seed.
SaliencyMap random_saliency(int T, int H, int W, std::uint64_t seed);

}  // namespace aosa
