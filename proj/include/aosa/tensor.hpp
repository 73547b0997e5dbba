#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace aosa {

// Dense T x H x W x C video volume, t-major row-major layout so a frame is a
// contiguous H*W*C slice. Values are float32; reductions elsewhere accumulate
// in double.
struct VideoTensor {
    int T = 0, H = 0, W = 0, C = 0;
    std::vector<float> data;

    VideoTensor() = default;
    VideoTensor(int t, int h, int w, int c);

    std::size_t size() const { return data.size(); }
    std::size_t index(int t, int h, int w, int c) const {
        return ((static_cast<std::size_t>(t) * H + h) * W + w) * static_cast<std::size_t>(C) + c;
    }
    float at(int t, int h, int w, int c) const { return data[index(t, h, w, c)]; }
    float& at(int t, int h, int w, int c) { return data[index(t, h, w, c)]; }

    // Throws ValidationError on broken invariants (T >= 2, C in {1,3},
    // data length T*H*W*C).
    void validate() const;
};

// T x H x W importance volume. Stored in double so per-pixel comparisons at
// tight tolerances survive aggregation; the on-disk form is float32.
struct SaliencyMap {
    int T = 0, H = 0, W = 0;
    std::vector<double> data;
    std::map<std::string, std::string> meta;

    SaliencyMap() = default;
    SaliencyMap(int t, int h, int w)
        : T(t), H(h), W(w), data(static_cast<std::size_t>(t) * h * w, 0.0) {}

    std::size_t index(int t, int h, int w) const {
        return (static_cast<std::size_t>(t) * H + h) * W + w;
    }
    double at(int t, int h, int w) const { return data[index(t, h, w)]; }
    double& at(int t, int h, int w) { return data[index(t, h, w)]; }
};

// Input-space gradient of a scalar score, same dims as the video it was
// evaluated at.
struct GradTensor {
    int T = 0, H = 0, W = 0, C = 0;
    std::vector<double> data;

    GradTensor() = default;
    GradTensor(int t, int h, int w, int c)
        : T(t), H(h), W(w), C(c),
          data(static_cast<std::size_t>(t) * h * w * c, 0.0) {}

    std::size_t index(int t, int h, int w, int c) const {
        return ((static_cast<std::size_t>(t) * H + h) * W + w) * static_cast<std::size_t>(C) + c;
    }
    double at(int t, int h, int w, int c) const { return data[index(t, h, w, c)]; }
    double& at(int t, int h, int w, int c) { return data[index(t, h, w, c)]; }
};

// ---------------------------------------------------------------------------
// Tensor file format ("AOST")
//
//   bytes 0..3   magic "AOST"
//   byte  4      version = 1
//   byte  5      rank (1..4)
//   bytes 6..7   reserved, zero
//   bytes 8..    dims, u32 little-endian, one per rank
//   ...          zero padding up to byte 32
//   bytes 32..   payload, float32 little-endian, row-major
//
// The header is always exactly 32 bytes, which holds up to four u32 dims.
// ---------------------------------------------------------------------------

constexpr std::size_t kTensorHeaderSize = 32;
constexpr int kTensorMaxRank = 4;

struct TensorFile {
    int rank = 0;
    std::array<std::uint64_t, 4> dims{};  // dims[0..rank-1] valid
    std::vector<float> data;

    std::uint64_t element_count() const;
};

// Stream forms used by both file I/O and the subprocess wire protocol.
void write_tensor(std::ostream& out, const TensorFile& t);
TensorFile read_tensor(std::istream& in);

// File forms; writes go through a temp file + rename so outputs are atomic.
void save_tensor(const TensorFile& t, const std::string& path);
TensorFile load_tensor(const std::string& path);

// Typed wrappers.
TensorFile to_tensor_file(const VideoTensor& v);
TensorFile to_tensor_file(const SaliencyMap& m);
VideoTensor video_from_tensor_file(const TensorFile& t);
SaliencyMap map_from_tensor_file(const TensorFile& t);

void save_video(const VideoTensor& v, const std::string& path);
VideoTensor load_video(const std::string& path);
void save_map(const SaliencyMap& m, const std::string& path);
SaliencyMap load_map(const std::string& path);

// Per-channel affine normalization: out = (in - mean) / std.
VideoTensor normalize(const VideoTensor& v, std::span<const float> mean,
                      std::span<const float> std_dev);
VideoTensor denormalize(const VideoTensor& v, std::span<const float> mean,
                        std::span<const float> std_dev);

// key=value sidecar used for saliency map provenance.
void save_meta(const std::map<std::string, std::string>& meta, const std::string& path);
std::map<std::string, std::string> load_meta(const std::string& path);

}  // namespace aosa
