#include "aosa/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "aosa/errors.hpp"
#include "aosa/rng.hpp"

namespace aosa {

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

bool shape_covers(ShapeKind kind, int i, int j, int sh, int sw) {
    if (kind == ShapeKind::Rectangle) return true;
    const double cr = (sh - 1) * 0.5;
    const double cc = (sw - 1) * 0.5;
    const double radius = std::min(sh, sw) * 0.5;
    const double dr = i - cr;
    const double dc = j - cc;
    return dr * dr + dc * dc <= radius * radius;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (frames < 2 || height < 1 || width < 1 || (channels != 1 && channels != 3))
        throw ValidationError("SyntheticSpec: invalid scene dims");
    if (shape_h < 1 || shape_w < 1 || shape_h > height || shape_w > width)
        throw ValidationError("SyntheticSpec: invalid shape size");
    // The shape must be at least partially visible in frame 1.
    const int top = round_half_up(start_row);
    const int left = round_half_up(start_col);
    const bool visible = top + shape_h > 0 && top < height && left + shape_w > 0 && left < width;
    if (!visible)
        throw ValidationError("SyntheticSpec: shape starts fully off-screen");
}

int direction_class(double vel_row, double vel_col) {
    if (vel_row == 0.0 && vel_col == 0.0) return 0;
    // Image rows grow downward; flip to the usual y-up angle convention.
    const double angle = std::atan2(-vel_row, vel_col);
    const long k = std::lround(angle / (M_PI / 4.0));
    return static_cast<int>(((k % kDirectionClasses) + kDirectionClasses) % kDirectionClasses);
}

void direction_velocity(int cls, double& vel_row, double& vel_col) {
    if (cls < 0 || cls >= kDirectionClasses)
        throw ValidationError("direction class out of range");
    const double angle = cls * (M_PI / 4.0);
    vel_col = std::cos(angle);
    vel_row = -std::sin(angle);
}

SyntheticSample generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    const int T = spec.frames, H = spec.height, W = spec.width, C = spec.channels;
    const int sh = spec.shape_h, sw = spec.shape_w;

    // Texture is drawn first so the draw order is independent of geometry.
    std::vector<float> texture(static_cast<std::size_t>(sh) * sw * C);
    if (spec.texture == TextureMode::Flat) {
        std::vector<float> color(C);
        for (int c = 0; c < C; ++c) color[c] = static_cast<float>(rng.uniform(0.55, 0.95));
        for (int i = 0; i < sh * sw; ++i)
            for (int c = 0; c < C; ++c) texture[static_cast<std::size_t>(i) * C + c] = color[c];
    } else {
        for (auto& v : texture) v = static_cast<float>(rng.uniform(0.45, 1.0));
    }

    // Background: flat dark, or a noise field sampled through a drifting window.
    const double bg_drift = 0.5;  // pixels per frame along both axes
    const int pad = static_cast<int>(std::ceil(bg_drift * T)) + 2;
    std::vector<float> field;
    if (spec.background == BackgroundMode::DriftingNoise) {
        field.resize(static_cast<std::size_t>(H + pad) * (W + pad) * C);
        for (auto& v : field) v = static_cast<float>(rng.uniform(0.0, 0.35));
    }

    VideoTensor video(T, H, W, C);
    GroundTruthBoxes boxes;
    boxes.per_frame.assign(T, std::nullopt);

    for (int t = 0; t < T; ++t) {
        if (spec.background == BackgroundMode::Static) {
            const float bg = static_cast<float>(spec.background_level);
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    for (int c = 0; c < C; ++c) video.at(t, h, w, c) = bg;
        } else {
            const double off = bg_drift * t;
            const int o0 = static_cast<int>(std::floor(off));
            const double frac = off - o0;
            const int fw = W + pad;
            for (int h = 0; h < H; ++h) {
                for (int w = 0; w < W; ++w) {
                    for (int c = 0; c < C; ++c) {
                        // Bilinear sample of the field at (h+off, w+off).
                        auto f = [&](int r, int col) {
                            return field[(static_cast<std::size_t>(r) * fw + col) * C + c];
                        };
                        const int r0 = h + o0, c0 = w + o0;
                        const double v00 = f(r0, c0), v01 = f(r0, c0 + 1);
                        const double v10 = f(r0 + 1, c0), v11 = f(r0 + 1, c0 + 1);
                        const double top = v00 * (1 - frac) + v01 * frac;
                        const double bot = v10 * (1 - frac) + v11 * frac;
                        video.at(t, h, w, c) = static_cast<float>(top * (1 - frac) + bot * frac);
                    }
                }
            }
        }

        const int top = round_half_up(spec.start_row + spec.vel_row * t);
        const int left = round_half_up(spec.start_col + spec.vel_col * t);
        int min_r = H, max_r = -1, min_c = W, max_c = -1;
        for (int i = 0; i < sh; ++i) {
            const int r = top + i;
            if (r < 0 || r >= H) continue;
            for (int j = 0; j < sw; ++j) {
                const int col = left + j;
                if (col < 0 || col >= W) continue;
                if (!shape_covers(spec.shape, i, j, sh, sw)) continue;
                for (int c = 0; c < C; ++c)
                    video.at(t, r, col, c) = texture[(static_cast<std::size_t>(i) * sw + j) * C + c];
                min_r = std::min(min_r, r);
                max_r = std::max(max_r, r);
                min_c = std::min(min_c, col);
                max_c = std::max(max_c, col);
            }
        }
        if (max_r >= 0)
            boxes.per_frame[t] = Box{min_r, min_c, max_r - min_r + 1, max_c - min_c + 1};
    }

    SyntheticSample out;
    out.video = std::move(video);
    out.boxes = std::move(boxes);
    out.label = direction_class(spec.vel_row, spec.vel_col);
    return out;
}

SyntheticSample direction_sample(int cls, int frames, int size, int channels,
                                 std::uint64_t seed) {
    SyntheticSpec sp;
    sp.frames = frames;
    sp.height = size;
    sp.width = size;
    sp.channels = channels;
    sp.shape_h = sp.shape_w = std::max(6, size * 3 / 8);
    sp.texture = TextureMode::Noise;
    sp.background = BackgroundMode::Static;
    // Black background: deleting a pixel with the 0 baseline then actually
    // removes it instead of leaving a bright moving silhouette.
    sp.background_level = 0.0;
    direction_velocity(cls, sp.vel_row, sp.vel_col);

    // Start the trajectory so its midpoint sits near the frame center.
    Rng rng(seed ^ 0x94d049bb133111ebull);
    const double cr = (size - sp.shape_h) / 2.0;
    const double cc = (size - sp.shape_w) / 2.0;
    sp.start_row = cr - sp.vel_row * (frames - 1) / 2.0 + rng.uniform(-2.0, 2.0);
    sp.start_col = cc - sp.vel_col * (frames - 1) / 2.0 + rng.uniform(-2.0, 2.0);
    return generate_synthetic(sp, seed);
}

void augment_for_training(VideoTensor& v, Rng& rng) {
    const std::size_t voxels = static_cast<std::size_t>(v.T) * v.H * v.W;

    // Pepper dropout on up to a quarter of the positions, all channels at
    // once.  The direction is still readable from the surviving texture, so
    // the label is preserved, and the model learns to score partially erased
    // inputs by what is left rather than treating them as a class of their
    // own.
    const std::size_t n_pepper = rng.uniform_int(voxels / 4 + 1);
    for (std::size_t k = 0; k < n_pepper; ++k) {
        const std::size_t p = rng.uniform_int(voxels);
        const int t = static_cast<int>(p / (static_cast<std::size_t>(v.H) * v.W));
        const int h = static_cast<int>(p / v.W % v.H);
        const int w = static_cast<int>(p % v.W);
        for (int c = 0; c < v.C; ++c) v.at(t, h, w, c) = 0.0f;
    }

    // Up to two small cutout tubes spanning a short run of frames.
    const int n_cut = static_cast<int>(rng.uniform_int(3));
    for (int k = 0; k < n_cut; ++k) {
        const int h = 4 + static_cast<int>(rng.uniform_int(4));
        const int w = 4 + static_cast<int>(rng.uniform_int(4));
        const int top = static_cast<int>(rng.uniform_int(std::max(1, v.H - h)));
        const int left = static_cast<int>(rng.uniform_int(std::max(1, v.W - w)));
        const int t0 = static_cast<int>(rng.uniform_int(v.T));
        const int t1 = std::min<int>(v.T, t0 + 2 + static_cast<int>(rng.uniform_int(v.T / 2 + 1)));
        for (int t = t0; t < t1; ++t)
            for (int i = top; i < top + h; ++i)
                for (int j = left; j < left + w; ++j)
                    for (int c = 0; c < v.C; ++c) v.at(t, i, j, c) = 0.0f;
    }
}

std::vector<std::pair<VideoTensor, int>> make_direction_dataset(int per_class, int frames,
                                                                int size, int channels,
                                                                std::uint64_t seed,
                                                                bool augment) {
    if (per_class < 1) throw ValidationError("make_direction_dataset: per_class < 1");
    std::vector<std::pair<VideoTensor, int>> data;
    data.reserve(static_cast<std::size_t>(per_class) * kDirectionClasses +
                 (augment ? kDirectionClasses : 0));
    for (int i = 0; i < per_class * kDirectionClasses; ++i) {
        const int cls = i % kDirectionClasses;
        SyntheticSample s =
            direction_sample(cls, frames, size, channels, derive_seed(seed, 0x7EA10000u + i));
        if (augment) {
            Rng aug(derive_seed(seed, 0xA0660000u + i));
            augment_for_training(s.video, aug);
        }
        data.emplace_back(std::move(s.video), s.label);
    }
    if (augment) {
        for (int cls = 0; cls < kDirectionClasses; ++cls)
            data.emplace_back(VideoTensor(frames, size, size, channels), cls);
    }
    return data;
}

}  // namespace aosa
