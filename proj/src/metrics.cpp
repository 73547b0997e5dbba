#include "aosa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aosa/errors.hpp"
#include "aosa/rng.hpp"

namespace aosa {

namespace {

std::vector<std::size_t> saliency_order(const SaliencyMap& s) {
    std::vector<std::size_t> order(s.data.size());
    std::iota(order.begin(), order.end(), 0);
    // Descending value; stable sort keeps equal values in position order.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.data[a] > s.data[b]; });
    return order;
}

double trapezoid_auc(const std::vector<double>& curve, std::size_t total, std::size_t batch) {
    // x axis is the actual fraction of positions processed; the last batch
    // may be smaller than the others.
    double auc = 0.0;
    double x_prev = 0.0;
    for (std::size_t k = 1; k < curve.size(); ++k) {
        const double x = static_cast<double>(std::min(k * batch, total)) / total;
        auc += (x - x_prev) * 0.5 * (curve[k - 1] + curve[k]);
        x_prev = x;
    }
    return auc;
}

void check_pair(const VideoTensor& v, const SaliencyMap& s, int steps) {
    v.validate();
    if (s.T != v.T || s.H != v.H || s.W != v.W)
        throw ValidationError("saliency map dims do not match video");
    if (steps < 1) throw ValidationError("steps must be >= 1");
}

void set_position(VideoTensor& g, std::size_t pos, const VideoTensor& src) {
    const std::size_t base = pos * g.C;
    for (int c = 0; c < g.C; ++c) g.data[base + c] = src.data[base + c];
}

void set_position(VideoTensor& g, std::size_t pos, float value) {
    const std::size_t base = pos * g.C;
    for (int c = 0; c < g.C; ++c) g.data[base + c] = value;
}

}  // namespace

DeletionInsertionResult deletion_auc(const VideoTensor& v, const SaliencyMap& s, ScoreModel& m,
                                     int target_class, int steps, double baseline) {
    check_pair(v, s, steps);
    const std::size_t total = s.data.size();
    const std::size_t batch = (total + steps - 1) / steps;
    const std::vector<std::size_t> order = saliency_order(s);

    DeletionInsertionResult r;
    r.mode = DeletionInsertionResult::Mode::Deletion;
    r.steps = steps;
    r.baseline = baseline;
    r.curve.reserve(steps + 1);

    VideoTensor g = v;
    r.curve.push_back(m.forward(g)[target_class]);
    std::size_t at = 0;
    for (int k = 0; k < steps; ++k) {
        const std::size_t end = std::min(at + batch, total);
        for (; at < end; ++at) set_position(g, order[at], static_cast<float>(baseline));
        r.curve.push_back(m.forward(g)[target_class]);
    }
    r.auc = trapezoid_auc(r.curve, total, batch);
    return r;
}

DeletionInsertionResult insertion_auc(const VideoTensor& v, const SaliencyMap& s, ScoreModel& m,
                                      int target_class, int steps, double baseline) {
    check_pair(v, s, steps);
    const std::size_t total = s.data.size();
    const std::size_t batch = (total + steps - 1) / steps;
    const std::vector<std::size_t> order = saliency_order(s);

    DeletionInsertionResult r;
    r.mode = DeletionInsertionResult::Mode::Insertion;
    r.steps = steps;
    r.baseline = baseline;
    r.curve.reserve(steps + 1);

    VideoTensor g(v.T, v.H, v.W, v.C);
    std::fill(g.data.begin(), g.data.end(), static_cast<float>(baseline));
    r.curve.push_back(m.forward(g)[target_class]);
    std::size_t at = 0;
    for (int k = 0; k < steps; ++k) {
        const std::size_t end = std::min(at + batch, total);
        for (; at < end; ++at) set_position(g, order[at], v);
        r.curve.push_back(m.forward(g)[target_class]);
    }
    r.auc = trapezoid_auc(r.curve, total, batch);
    return r;
}

bool spt_hit(const SaliencyMap& s, int frame, const Box& box, int radius) {
    if (frame < 0 || frame >= s.T) throw ValidationError("spt_hit: frame out of range");
    if (radius < 0) throw ValidationError("spt_hit: radius must be >= 0");
    const std::size_t plane = static_cast<std::size_t>(s.H) * s.W;
    const double* base = s.data.data() + frame * plane;

    std::size_t best = 0;
    for (std::size_t p = 1; p < plane; ++p)
        if (base[p] > base[best]) best = p;
    const int r = static_cast<int>(best / s.W);
    const int c = static_cast<int>(best % s.W);

    // Closed-set distance from the argmax to the box.
    const int dr = std::max({box.top - r, 0, r - (box.top + box.height - 1)});
    const int dc = std::max({box.left - c, 0, c - (box.left + box.width - 1)});
    return dr * dr + dc * dc <= radius * radius;
}

SPTResult spt_video(const SaliencyMap& s, const GroundTruthBoxes& boxes, int radius) {
    if (static_cast<int>(boxes.per_frame.size()) != s.T)
        throw ValidationError("spt_video: box annotations do not match frame count");
    SPTResult r;
    r.radius = radius;
    for (int t = 0; t < s.T; ++t) {
        if (!boxes.per_frame[t].has_value()) continue;
        ++r.frames_with_boxes;
        const bool hit = spt_hit(s, t, *boxes.per_frame[t], radius);
        r.hits.push_back(hit);
        if (hit) ++r.hit_count;
    }
    r.hit_rate = r.frames_with_boxes > 0
                     ? static_cast<double>(r.hit_count) / r.frames_with_boxes
                     : 0.0;
    return r;
}

double spt_score(const std::vector<SPTResult>& results) {
    long hits = 0, frames = 0;
    for (const SPTResult& r : results) {
        hits += r.hit_count;
        frames += r.frames_with_boxes;
    }
    if (frames == 0) throw ValidationError("spt_score: no annotated frames");
    return static_cast<double>(hits) / static_cast<double>(frames);
}

SaliencyMap random_saliency(int T, int H, int W, std::uint64_t seed) {
    if (T < 1 || H < 1 || W < 1) throw ValidationError("random_saliency: bad dims");
    SaliencyMap s;
    s.T = T;
    s.H = H;
    s.W = W;
    s.data.resize(static_cast<std::size_t>(T) * H * W);
    Rng rng(seed);
    for (double& v : s.data) v = rng.uniform01();
    return s;
}

}  // namespace aosa
