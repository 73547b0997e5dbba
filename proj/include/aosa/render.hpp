#pragma once

#include <string>
#include <vector>

#include "aosa/tensor.hpp"

namespace aosa {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image8 {
    int height = 0;
    int width = 0;
    std::vector<unsigned char> rgb;

    Image8() = default;
    Image8(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

    unsigned char* pixel(int r, int c) {
        return rgb.data() + (static_cast<std::size_t>(r) * width + c) * 3;
    }
};

// Binary PPM (P6). Written atomically: temp file in the same directory, then rename.
void write_ppm(const std::string& path, const Image8& img);

// Monotone black-red-yellow-white ramp. Each channel is nondecreasing in t,
// so pixel brightness never inverts the underlying saliency ordering.
void hot_color(double t, unsigned char out[3]);

// Largest positive map value across all frames. Zero when the map is
// nonpositive everywhere; callers treat that as "nothing to highlight".
double clip_max(const SaliencyMap& map);

// Blend frame t of the video (as luminance) with the colormapped saliency
// frame. map_max is the clip-wide normalizer from clip_max so that frames of
// one video share a scale. Video values are expected in [0, 1] and are clamped.
Image8 render_overlay_frame(const VideoTensor& video, const SaliencyMap& map, int t,
                            double map_max);

// Write one overlay image per frame as <out_dir>/<prefix>_NNN.ppm and return
// the paths in frame order.
std::vector<std::string> render_overlays(const VideoTensor& video, const SaliencyMap& map,
                                         const std::string& out_dir,
                                         const std::string& prefix = "frame");

}  // namespace aosa
