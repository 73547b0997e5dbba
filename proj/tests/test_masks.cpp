#include <cmath>
#include <set>

#include "aosa/errors.hpp"
#include "aosa/masks.hpp"
#include "aosa/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace aosa;

namespace {

AnchorTrack straight_track(int id, double r0, double c0, double vr, double vc, int frames) {
    AnchorTrack tr;
    tr.id = id;
    for (int t = 0; t < frames; ++t) tr.positions.push_back(Vec2{r0 + vr * t, c0 + vc * t});
    return tr;
}

std::set<std::size_t> occluded_set(const SpatioTemporalMask& m) {
    const auto plane = m.rasterize_thw();
    std::set<std::size_t> zeros;
    for (std::size_t i = 0; i < plane.size(); ++i)
        if (plane[i] == 0.0f) zeros.insert(i);
    return zeros;
}

}  // namespace

TEST_SUITE("masks") {

TEST_CASE("anchor grid sizes match the spacing arithmetic") {
    CHECK(place_anchor_grid(112, 112, 8).size() == 196);
    CHECK(place_anchor_grid(112, 112, 4).size() == 784);
    const auto single = place_anchor_grid(16, 16, 16);
    REQUIRE(single.size() == 1);
    CHECK(single[0].row == 8.0);
    CHECK(single[0].col == 8.0);
}

TEST_CASE("anchor grid is cell centered and row major") {
    const auto g = place_anchor_grid(24, 16, 8);
    REQUIRE(g.size() == 6);
    CHECK(g[0].row == 4.0);
    CHECK(g[0].col == 4.0);
    CHECK(g[1].row == 4.0);
    CHECK(g[1].col == 12.0);
    CHECK(g[2].row == 12.0);
    CHECK(g[2].col == 4.0);
    CHECK(g[5].row == 20.0);
    CHECK(g[5].col == 12.0);
}

TEST_CASE("anchor grid rejects bad spacing") {
    CHECK_THROWS_AS(place_anchor_grid(16, 16, 0), ValidationError);
    CHECK_THROWS_AS(place_anchor_grid(16, 16, 17), ValidationError);
}

TEST_CASE("round_half_up rounds toward positive infinity at .5") {
    CHECK(round_half_up(2.5) == 3);
    CHECK(round_half_up(2.4) == 2);
    CHECK(round_half_up(-1.5) == -1);
    CHECK(round_half_up(-1.6) == -2);
}

TEST_CASE("zero-flow track builds one fixed cuboid rectangle") {
    const MaskDims dims{16, 112, 112, 3};
    const MaskConfig cfg{8, 16, 16, 0};
    const AnchorTrack tr = straight_track(0, 56, 56, 0, 0, 16);
    const SpatioTemporalMask m = build_mask(tr, cfg, dims);
    REQUIRE(m.rects.size() == 16);
    for (int t = 0; t < 16; ++t) {
        REQUIRE(m.rects[t].size() == 1);
        const Rect& r = m.rects[t][0];
        CHECK(r.top == 48);
        CHECK(r.left == 48);
        CHECK(r.h == 16);
        CHECK(r.w == 16);
    }
}

TEST_CASE("moving track shifts the rectangle with the anchor") {
    const MaskDims dims{8, 112, 112, 1};
    const MaskConfig cfg{8, 16, 16, 0};
    const AnchorTrack tr = straight_track(0, 56, 56, 2, 0, 8);
    const SpatioTemporalMask m = build_mask(tr, cfg, dims);
    for (int t = 0; t < 8; ++t) {
        REQUIRE(m.rects[t].size() == 1);
        CHECK(m.rects[t][0].top == 48 + 2 * t);
        CHECK(m.rects[t][0].left == 48);
    }
}

TEST_CASE("frames after track death carry no rectangles and rasterize to ones") {
    const MaskDims dims{16, 32, 32, 1};
    const MaskConfig cfg{8, 8, 8, 0};
    const AnchorTrack tr = straight_track(0, 16, 16, 0, 0, 5);
    const SpatioTemporalMask m = build_mask(tr, cfg, dims);
    for (int t = 0; t < 5; ++t) CHECK(m.rects[t].size() == 1);
    for (int t = 5; t < 16; ++t) CHECK(m.rects[t].empty());

    const auto plane = m.rasterize_thw();
    const std::size_t frame = 32 * 32;
    for (int t = 5; t < 16; ++t)
        for (std::size_t p = 0; p < frame; ++p) CHECK(plane[t * frame + p] == 1.0f);
}

TEST_CASE("rasterization is binary and counts its zeros") {
    const MaskDims dims{4, 20, 20, 3};
    const MaskConfig cfg{4, 6, 5, 0};
    const AnchorTrack tr = straight_track(2, 9.5, 10.2, 0.7, -1.1, 4);
    const SpatioTemporalMask m = build_mask(tr, cfg, dims);
    const auto plane = m.rasterize_thw();
    std::size_t zeros = 0;
    for (float x : plane) {
        CHECK((x == 0.0f || x == 1.0f));
        if (x == 0.0f) ++zeros;
    }
    CHECK(zeros == m.occluded_count());
    CHECK(zeros == 4u * 6 * 5);
}

TEST_CASE("rectangles are clipped at the border, not shifted") {
    const MaskDims dims{2, 32, 32, 1};
    const MaskConfig cfg{8, 16, 16, 0};
    const AnchorTrack tr = straight_track(0, 0, 0, 0, 0, 2);
    const SpatioTemporalMask m = build_mask(tr, cfg, dims);
    const Rect& r = m.rects[0][0];
    CHECK(r.top == 0);
    CHECK(r.left == 0);
    CHECK(r.h == 8);
    CHECK(r.w == 8);
}

TEST_CASE("centered_rect centers on the rounded anchor position") {
    const Rect r = centered_rect(56.0, 56.0, 16, 16, 112, 112);
    CHECK(r.top == 48);
    CHECK(r.left == 48);
    CHECK(r.bottom() == 64);
    CHECK(r.right() == 64);

    const Rect odd = centered_rect(10.0, 10.0, 5, 5, 32, 32);
    CHECK(odd.top == 8);
    CHECK(odd.h == 5);
}

TEST_CASE("co-occurrence handles the worked examples") {
    const int T = 3;
    // Displacements (1,0),(1,0) vs (0,1),(0,1): orthogonal.
    const AnchorTrack a = straight_track(0, 2, 2, 1, 0, T);
    const AnchorTrack b = straight_track(1, 2, 8, 0, 1, T);
    CHECK(co_occurrence(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(co_occurrence(a, b) == doctest::Approx(0.0).epsilon(1e-12));

    // v_a = (1,0,1,0) vs v_b = (1,0,0,0): cosine 1/sqrt(2).
    AnchorTrack c;
    c.id = 2;
    c.positions = {Vec2{5, 5}, Vec2{6, 5}, Vec2{6, 5}};
    CHECK(co_occurrence(a, c) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("co-occurrence of a static track is zero") {
    const AnchorTrack moving = straight_track(0, 4, 4, 1, 1, 4);
    const AnchorTrack still = straight_track(1, 10, 10, 0, 0, 4);
    CHECK(co_occurrence(moving, still) == 0.0);
    CHECK(co_occurrence(still, still) == 0.0);
}

TEST_CASE("co-occurrence truncates to the common alive prefix") {
    // a moves right for 5 frames; b moves right for 2 then dies.
    const AnchorTrack a = straight_track(0, 8, 8, 0, 1, 5);
    const AnchorTrack b = straight_track(1, 16, 8, 0, 1, 2);
    CHECK(co_occurrence(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    // A track alive for a single frame has no displacement at all.
    const AnchorTrack dead = straight_track(2, 12, 12, 0, 0, 1);
    CHECK(co_occurrence(a, dead) == 0.0);
}

TEST_CASE("co-occurrence is symmetric and bounded on random tracks") {
    Rng rng(31);
    std::vector<AnchorTrack> tracks;
    for (int i = 0; i < 8; ++i) {
        AnchorTrack tr;
        tr.id = i;
        const int alive = 2 + static_cast<int>(rng.uniform_int(5));
        Vec2 p{rng.uniform(5, 25), rng.uniform(5, 25)};
        for (int t = 0; t < alive; ++t) {
            tr.positions.push_back(p);
            p.row += rng.uniform(-1.5, 1.5);
            p.col += rng.uniform(-1.5, 1.5);
        }
        tracks.push_back(tr);
    }
    for (const auto& a : tracks)
        for (const auto& b : tracks) {
            const double ab = co_occurrence(a, b);
            CHECK(ab == doctest::Approx(co_occurrence(b, a)).epsilon(1e-15));
            CHECK(std::abs(ab) <= 1.0 + 1e-12);
        }
}

TEST_CASE("top-k partners ranks by similarity with id tie-break") {
    std::vector<AnchorTrack> tracks;
    tracks.push_back(straight_track(0, 10, 10, 1, 0, 4));   // query: straight down
    tracks.push_back(straight_track(1, 10, 20, 1, 0, 4));   // identical motion
    tracks.push_back(straight_track(2, 20, 10, 1, 0, 4));   // identical motion
    tracks.push_back(straight_track(3, 20, 20, 0, 1, 4));   // orthogonal
    tracks.push_back(straight_track(4, 15, 15, -1, 0, 4));  // opposite

    const auto top = top_k_partners(0, tracks, 3);
    REQUIRE(top.size() == 3);
    // Ties between anchors 1 and 2 (both cosine 1) break toward the lower id.
    CHECK(top[0] == 1);
    CHECK(top[1] == 2);
    CHECK(top[2] == 3);

    CHECK_THROWS_AS(top_k_partners(0, tracks, 5), ValidationError);
    CHECK(top_k_partners(0, tracks, 0).empty());
}

TEST_CASE("integration with K=0 is the single mask") {
    const MaskDims dims{4, 32, 32, 1};
    const MaskConfig cfg{8, 8, 8, 0};
    std::vector<AnchorTrack> tracks{straight_track(0, 8, 8, 1, 0, 4),
                                    straight_track(1, 24, 24, 1, 0, 4)};
    std::vector<SpatioTemporalMask> masks;
    for (const auto& tr : tracks) masks.push_back(build_mask(tr, cfg, dims));
    const SpatioTemporalMask m = integrate_masks(0, tracks, masks, 0);
    CHECK(occluded_set(m) == occluded_set(masks[0]));
}

TEST_CASE("integrated occlusion is the union of partner rectangles") {
    const MaskDims dims{3, 32, 32, 1};
    const MaskConfig cfg{8, 8, 8, 0};
    std::vector<AnchorTrack> tracks{straight_track(0, 8, 8, 1, 0, 3),
                                    straight_track(1, 10, 12, 1, 0, 3),
                                    straight_track(2, 24, 24, 0, 1, 3)};
    std::vector<SpatioTemporalMask> masks;
    for (const auto& tr : tracks) masks.push_back(build_mask(tr, cfg, dims));

    const SpatioTemporalMask m = integrate_masks(0, tracks, masks, 2);
    std::set<std::size_t> expected;
    for (const auto& single : masks)
        for (std::size_t p : occluded_set(single)) expected.insert(p);
    CHECK(occluded_set(m) == expected);

    // Union is at least as large as every constituent.
    for (const auto& single : masks)
        CHECK(m.occluded_count() >= single.occluded_count());
}

TEST_CASE("duplicate partner tracks leave the union unchanged") {
    const MaskDims dims{3, 24, 24, 1};
    const MaskConfig cfg{8, 8, 8, 0};
    std::vector<AnchorTrack> tracks{straight_track(0, 8, 8, 1, 0, 3),
                                    straight_track(1, 8, 8, 1, 0, 3),
                                    straight_track(2, 8, 8, 1, 0, 3)};
    std::vector<SpatioTemporalMask> masks;
    for (const auto& tr : tracks) masks.push_back(build_mask(tr, cfg, dims));

    const SpatioTemporalMask one = integrate_masks(0, tracks, masks, 1);
    const SpatioTemporalMask two = integrate_masks(0, tracks, masks, 2);
    CHECK(occluded_set(one) == occluded_set(two));
    CHECK(occluded_set(one) == occluded_set(masks[0]));
}

TEST_CASE("per-frame occluded area is bounded by the rectangle budget") {
    const MaskDims dims{4, 64, 64, 1};
    const MaskConfig cfg{8, 8, 8, 0};
    std::vector<AnchorTrack> tracks;
    for (int i = 0; i < 6; ++i)
        tracks.push_back(straight_track(i, 16 + 4 * i, 16 + 4 * i, 1, 0.5, 4));
    std::vector<SpatioTemporalMask> masks;
    for (const auto& tr : tracks) masks.push_back(build_mask(tr, cfg, dims));

    const SpatioTemporalMask m = integrate_masks(0, tracks, masks, 5);
    const auto plane = m.rasterize_thw();
    const std::size_t frame = 64 * 64;
    for (int t = 0; t < 4; ++t) {
        std::size_t zeros = 0;
        for (std::size_t p = 0; p < frame; ++p)
            if (plane[t * frame + p] == 0.0f) ++zeros;
        CHECK(zeros >= 8u * 8);
        CHECK(zeros <= 6u * 8 * 8);
    }
}

TEST_CASE("mask config validation enforces ranges") {
    CHECK_THROWS_AS((MaskConfig{0, 8, 8, 0}).validate(32, 32, 16), ValidationError);
    CHECK_THROWS_AS((MaskConfig{8, 0, 8, 0}).validate(32, 32, 16), ValidationError);
    CHECK_THROWS_AS((MaskConfig{8, 33, 8, 0}).validate(32, 32, 16), ValidationError);
    CHECK_THROWS_AS((MaskConfig{8, 8, 8, 16}).validate(32, 32, 16), ValidationError);
    CHECK_NOTHROW((MaskConfig{8, 8, 8, 15}).validate(32, 32, 16));
}

TEST_CASE("fill distribution of a constant video is exact") {
    VideoTensor v(3, 64, 64, 1);
    std::fill(v.data.begin(), v.data.end(), 0.625f);
    const MaskConfig cfg{8, 16, 16, 0};
    const AnchorTrack tr = straight_track(0, 32, 32, 0, 0, 3);
    const FillDistribution fd = fill_distribution(v, tr, 1, cfg);
    CHECK_FALSE(fd.scalar_fallback);
    for (std::size_t i = 0; i < fd.mean.size(); ++i) {
        CHECK(fd.mean[i] == doctest::Approx(0.625).epsilon(1e-12));
        CHECK(fd.var[i] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("fill distribution matches a hand enumeration of window patches") {
    const VideoTensor v = testutil::random_video(2, 64, 64, 1, 41);
    const MaskConfig cfg{8, 16, 16, 0};
    const int ar = 32, ac = 32, h = 16, w = 16, win = kFillWindow;
    const AnchorTrack tr = straight_track(0, ar, ac, 0, 0, 2);
    const FillDistribution fd = fill_distribution(v, tr, 0, cfg);

    // All patch top-lefts inside the window that contain the anchor pixel,
    // excluding the anchor-centered patch itself.
    const int wt0 = ar - win / 2, wl0 = ac - win / 2;
    std::vector<std::pair<int, int>> tops;
    for (int r = std::max(wt0, ar - h + 1); r <= std::min(wt0 + win - h, ar); ++r)
        for (int c = std::max(wl0, ac - w + 1); c <= std::min(wl0 + win - w, ac); ++c)
            if (!(r == ar - h / 2 && c == ac - w / 2)) tops.emplace_back(r, c);
    CHECK(tops.size() == 255);  // 16x16 positions minus the excluded one

    for (int i = 0; i < h; i += 5)
        for (int j = 0; j < w; j += 5) {
            double s = 0.0, s2 = 0.0;
            for (const auto& [r, c] : tops) {
                const double x = v.at(0, r + i, c + j, 0);
                s += x;
                s2 += x * x;
            }
            const double mu = s / tops.size();
            const double var = s2 / tops.size() - mu * mu;
            CHECK(fd.mean[fd.idx(i, j, 0)] == doctest::Approx(mu).epsilon(1e-9));
            CHECK(fd.var[fd.idx(i, j, 0)] == doctest::Approx(var).epsilon(2e-6));
        }
}

TEST_CASE("fill distribution falls back to window stats at extreme borders") {
    const VideoTensor v = testutil::random_video(2, 40, 40, 1, 43);
    const MaskConfig cfg{8, 36, 36, 0};
    const AnchorTrack tr = straight_track(0, 1, 1, 0, 0, 2);
    const FillDistribution fd = fill_distribution(v, tr, 0, cfg);
    CHECK(fd.scalar_fallback);
    // Fallback stats are window-wide, identical at every patch position.
    for (std::size_t i = 1; i < fd.mean.size(); ++i) {
        CHECK(fd.mean[i] == fd.mean[0]);
        CHECK(fd.var[i] == fd.var[0]);
    }
    CHECK(fd.var[0] >= 0.0);
}

TEST_CASE("fill distribution requires the track to be alive") {
    const VideoTensor v = testutil::random_video(3, 32, 32, 1, 47);
    const MaskConfig cfg{8, 8, 8, 0};
    const AnchorTrack tr = straight_track(0, 16, 16, 0, 0, 2);
    CHECK_THROWS_AS(fill_distribution(v, tr, 2, cfg), ValidationError);
}

}  // TEST_SUITE
