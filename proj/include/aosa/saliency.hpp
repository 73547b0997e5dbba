#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aosa/flow.hpp"
#include "aosa/masks.hpp"
#include "aosa/model.hpp"
#include "aosa/rng.hpp"
#include "aosa/tensor.hpp"

namespace aosa {

struct SaliencyConfig {
    enum class Method { Exact, Approx };
    enum class Fill { Constant, Conditional };

    Method method = Method::Exact;
    Fill fill = Fill::Constant;
    double fill_value = 0.0;
    MaskConfig mask;
    FlowParams flow;
    int target_class = -1;  // -1 = model argmax on the unoccluded input
    ScoreMode score_mode = ScoreMode::Probability;
    bool normalize_coverage = false;
    int mc_samples = 1;  // samples per mask for exact-mode conditional fill
    std::uint64_t seed = 0;
    bool adjust = true;  // IQR-based re-linearization in approx mode

    void validate() const;
};

std::string method_name(SaliencyConfig::Method m);
std::string fill_name(SaliencyConfig::Fill f);

struct MaskScoreRecord {
    int mask_id = 0;
    double score = 0.0;       // f(occluded input) or its approximation
    double difference = 0.0;  // f(x) - score
    bool adjusted = false;
};

struct SaliencyResult {
    SaliencyMap map;
    std::vector<MaskScoreRecord> records;
    int target_class = 0;
    double base_score = 0.0;  // f_c on the unoccluded input
    long forwards = 0;        // model calls consumed by this run
    long backwards = 0;
};

// Fill statistics for every anchor and alive frame, keyed by anchor id.
using FillDists = std::map<int, std::vector<FillDistribution>>;

FillDists all_fill_distributions(const VideoTensor& v, const std::vector<AnchorTrack>& tracks,
                                 const MaskConfig& cfg);

// Occlude in place: write fill values into the mask's rectangles; restore
// copies the original pixels back.
void fill_rects_const(VideoTensor& g, const SpatioTemporalMask& mask, double value);
void fill_rects_mean(VideoTensor& g, const SpatioTemporalMask& mask, const FillDists& dists);
void fill_rects_sampled(VideoTensor& g, const SpatioTemporalMask& mask, const FillDists& dists,
                        Rng& rng);
void restore_rects(VideoTensor& g, const VideoTensor& original, const SpatioTemporalMask& mask);

// Weighted-mask aggregation: S = (1/N) sum_i score_i * mask_i, accumulated in
// mask id order. With normalize_coverage each position divides by its
// visible-mask count instead of N.
SaliencyMap accumulate_map(const std::vector<SpatioTemporalMask>& masks,
                           const std::vector<double>& scores, int T, int H, int W,
                           bool normalize_coverage);

// Occlusion scores per mask by running the model on each occluded input.
SaliencyResult aosa_map(const VideoTensor& v, ScoreModel& m, const SaliencyConfig& cfg);
SaliencyResult aosa_map_from_masks(const VideoTensor& v, ScoreModel& m,
                                   const std::vector<SpatioTemporalMask>& masks,
                                   const SaliencyConfig& cfg, const FillDists& dists = {});

// Taylor-approximated scores from one forward and one gradient, with
// optional IQR adjustment.
SaliencyResult approx_map(const VideoTensor& v, ScoreModel& m, const SaliencyConfig& cfg);
SaliencyResult approx_map_from_masks(const VideoTensor& v, ScoreModel& m,
                                     const std::vector<SpatioTemporalMask>& masks,
                                     const SaliencyConfig& cfg, const FillDists& dists = {});

// Fixed-cuboid occlusion baseline on a regular 3D grid.
struct CuboidSpec {
    int occ_t = 8;
    int occ_h = 16;
    int occ_w = 16;
    int stride_t = 2;
    int stride_s = 8;

    void validate(int T, int H, int W) const;
};

std::vector<SpatioTemporalMask> cuboid_masks(const CuboidSpec& spec, MaskDims dims);
SaliencyResult cuboid_osa_map(const VideoTensor& v, ScoreModel& m, const CuboidSpec& spec,
                              const SaliencyConfig& cfg);

// First-order score of the occluded input under constant fill:
// f'(g(x)) = f_x + <J, (1-M) (fill - x)>, accumulated over occluded pixels.
double approx_score(double f_x, const GradTensor& J, const VideoTensor& v,
                    const SpatioTemporalMask& mask, double fill_value);

// Closed-form importance under conditional fill: S_M = <J, (1-M) (x - mu)>.
// The approximated occluded-input score is f_x - S_M.
double conditional_approx_score(const GradTensor& J, const VideoTensor& v,
                                const SpatioTemporalMask& mask, const FillDists& dists);

// Monte Carlo importance under conditional fill: f(x) minus the mean score
// over sampled fills. Deterministic for a fixed seed.
double exact_conditional_score(ScoreModel& m, const VideoTensor& v,
                               const SpatioTemporalMask& mask, const FillDists& dists,
                               int n_samples, std::uint64_t seed, int target_class);

// Tukey-fence outliers with interpolated quartiles; returns (low, high)
// index lists. Fewer than 4 values yields no outliers.
std::pair<std::vector<int>, std::vector<int>> iqr_outliers(const std::vector<double>& values);

// Re-linearize flagged records at the extreme occluded inputs (at most one
// forward and one gradient per side). f_x is the unoccluded base score used
// to refresh difference amounts.
void adjust_importances(std::vector<MaskScoreRecord>& records, ScoreModel& m,
                        const VideoTensor& v, const std::vector<SpatioTemporalMask>& masks,
                        const SaliencyConfig& cfg, const FillDists& dists, int target_class,
                        double f_x);

}  // namespace aosa
