#include "aosa/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aosa/errors.hpp"

namespace aosa {

namespace {

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

unsigned char to_byte(double x) {
    return static_cast<unsigned char>(std::lround(clamp01(x) * 255.0));
}

double luminance(const VideoTensor& v, int t, int r, int c) {
    if (v.C == 1) return v.at(t, r, c, 0);
    return 0.299 * v.at(t, r, c, 0) + 0.587 * v.at(t, r, c, 1) + 0.114 * v.at(t, r, c, 2);
}

}  // namespace

void write_ppm(const std::string& path, const Image8& img) {
    if (img.height <= 0 || img.width <= 0 ||
        img.rgb.size() != static_cast<std::size_t>(img.height) * img.width * 3)
        throw ValidationError("write_ppm: inconsistent image");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("write_ppm: cannot open " + tmp);
        out << "P6\n" << img.width << " " << img.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(img.rgb.data()),
                  static_cast<std::streamsize>(img.rgb.size()));
        if (!out) throw IoError("write_ppm: short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("write_ppm: rename to " + path + " failed");
    }
}

void hot_color(double t, unsigned char out[3]) {
    t = clamp01(t);
    out[0] = to_byte(3.0 * t);
    out[1] = to_byte(3.0 * t - 1.0);
    out[2] = to_byte(3.0 * t - 2.0);
}

double clip_max(const SaliencyMap& map) {
    double m = 0.0;
    for (double v : map.data) m = std::max(m, v);
    return m;
}

Image8 render_overlay_frame(const VideoTensor& video, const SaliencyMap& map, int t,
                            double map_max) {
    if (video.T != map.T || video.H != map.H || video.W != map.W)
        throw ValidationError("render_overlay_frame: video/map dims differ");
    if (t < 0 || t >= video.T) throw ValidationError("render_overlay_frame: frame index");

    Image8 img(video.H, video.W);
    const std::size_t plane = static_cast<std::size_t>(map.H) * map.W;
    const double* mv = map.data.data() + static_cast<std::size_t>(t) * plane;
    for (int r = 0; r < video.H; ++r) {
        for (int c = 0; c < video.W; ++c) {
            const double gray = clamp01(luminance(video, t, r, c));
            double a = 0.0;
            if (map_max > 0.0)
                a = clamp01(mv[static_cast<std::size_t>(r) * map.W + c] / map_max);
            unsigned char color[3];
            hot_color(a, color);
            unsigned char* px = img.pixel(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double blended = gray * (1.0 - a) + (color[ch] / 255.0) * a;
                px[ch] = to_byte(blended);
            }
        }
    }
    return img;
}

std::vector<std::string> render_overlays(const VideoTensor& video, const SaliencyMap& map,
                                         const std::string& out_dir,
                                         const std::string& prefix) {
    const double m = clip_max(map);
    std::vector<std::string> paths;
    paths.reserve(video.T);
    for (int t = 0; t < video.T; ++t) {
        const Image8 img = render_overlay_frame(video, map, t, m);
        std::ostringstream name;
        name << out_dir << "/" << prefix << "_";
        name.width(3);
        name.fill('0');
        name << t;
        name << ".ppm";
        write_ppm(name.str(), img);
        paths.push_back(name.str());
    }
    return paths;
}

}  // namespace aosa
