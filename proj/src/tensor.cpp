#include "aosa/tensor.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "aosa/errors.hpp"

namespace aosa {

namespace {

constexpr char kMagic[4] = {'A', 'O', 'S', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_u32_le(char* p, std::uint32_t v) {
    p[0] = static_cast<char>(v & 0xff);
    p[1] = static_cast<char>((v >> 8) & 0xff);
    p[2] = static_cast<char>((v >> 16) & 0xff);
    p[3] = static_cast<char>((v >> 24) & 0xff);
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

VideoTensor::VideoTensor(int t, int h, int w, int c)
    : T(t), H(h), W(w), C(c) {
    if (t < 2 || h < 1 || w < 1 || (c != 1 && c != 3)) {
        throw ValidationError("VideoTensor dims invalid: T=" + std::to_string(t) +
                              " H=" + std::to_string(h) + " W=" + std::to_string(w) +
                              " C=" + std::to_string(c));
    }
    data.assign(static_cast<std::size_t>(t) * h * w * c, 0.0f);
}

void VideoTensor::validate() const {
    if (T < 2 || H < 1 || W < 1 || (C != 1 && C != 3))
        throw ValidationError("VideoTensor dims invalid");
    if (data.size() != static_cast<std::size_t>(T) * H * W * C)
        throw ValidationError("VideoTensor data length does not match dims");
}

std::uint64_t TensorFile::element_count() const {
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= dims[i];
    return n;
}

void write_tensor(std::ostream& out, const TensorFile& t) {
    if (t.rank < 1 || t.rank > kTensorMaxRank)
        throw FormatError("tensor rank out of range: " + std::to_string(t.rank));
    std::uint64_t n = 1;
    for (int i = 0; i < t.rank; ++i) {
        if (t.dims[i] == 0 || t.dims[i] > std::numeric_limits<std::uint32_t>::max())
            throw FormatError("tensor dim overflow");
        if (n > std::numeric_limits<std::uint64_t>::max() / t.dims[i])
            throw FormatError("tensor dim overflow");
        n *= t.dims[i];
    }
    if (t.data.size() != n)
        throw FormatError("tensor payload length does not match dims");

    char header[kTensorHeaderSize] = {};
    std::memcpy(header, kMagic, 4);
    header[4] = static_cast<char>(kVersion);
    header[5] = static_cast<char>(t.rank);
    for (int i = 0; i < t.rank; ++i)
        put_u32_le(header + 8 + 4 * i, static_cast<std::uint32_t>(t.dims[i]));
    out.write(header, kTensorHeaderSize);

    // float32 little-endian; this targets little-endian hosts.
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("tensor write failed");
}

TensorFile read_tensor(std::istream& in) {
    unsigned char header[kTensorHeaderSize];
    in.read(reinterpret_cast<char*>(header), kTensorHeaderSize);
    if (in.gcount() != static_cast<std::streamsize>(kTensorHeaderSize))
        throw FormatError("tensor header truncated");
    if (std::memcmp(header, kMagic, 4) != 0)
        throw FormatError("bad tensor magic");
    if (header[4] != kVersion)
        throw FormatError("unsupported tensor version " + std::to_string(header[4]));
    int rank = header[5];
    if (rank < 1 || rank > kTensorMaxRank)
        throw FormatError("tensor rank out of range: " + std::to_string(rank));

    TensorFile t;
    t.rank = rank;
    constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        t.dims[i] = get_u32_le(header + 8 + 4 * i);
        if (t.dims[i] == 0) throw FormatError("tensor dim is zero");
        if (n > kMaxElements / t.dims[i])
            throw FormatError("tensor too large");
        n *= t.dims[i];
    }

    t.data.resize(n);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        throw FormatError("tensor payload truncated");
    return t;
}

void save_tensor(const TensorFile& t, const std::string& path) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        write_tensor(out, t);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed for " + path);
    }
}

TensorFile load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    TensorFile t = read_tensor(in);
    // Reject trailing bytes so corrupt files are not silently accepted.
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("trailing bytes after tensor payload: " + path);
    return t;
}

TensorFile to_tensor_file(const VideoTensor& v) {
    v.validate();
    TensorFile t;
    t.rank = 4;
    t.dims = {static_cast<std::uint64_t>(v.T), static_cast<std::uint64_t>(v.H),
              static_cast<std::uint64_t>(v.W), static_cast<std::uint64_t>(v.C)};
    t.data = v.data;
    return t;
}

TensorFile to_tensor_file(const SaliencyMap& m) {
    TensorFile t;
    t.rank = 3;
    t.dims = {static_cast<std::uint64_t>(m.T), static_cast<std::uint64_t>(m.H),
              static_cast<std::uint64_t>(m.W), 0};
    t.data.resize(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i)
        t.data[i] = static_cast<float>(m.data[i]);
    return t;
}

VideoTensor video_from_tensor_file(const TensorFile& t) {
    if (t.rank != 4) throw FormatError("expected rank-4 tensor for video");
    VideoTensor v(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                  static_cast<int>(t.dims[2]), static_cast<int>(t.dims[3]));
    v.data = t.data;
    v.validate();
    return v;
}

SaliencyMap map_from_tensor_file(const TensorFile& t) {
    if (t.rank != 3) throw FormatError("expected rank-3 tensor for saliency map");
    SaliencyMap m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                  static_cast<int>(t.dims[2]));
    for (std::size_t i = 0; i < t.data.size(); ++i)
        m.data[i] = static_cast<double>(t.data[i]);
    return m;
}

void save_video(const VideoTensor& v, const std::string& path) {
    save_tensor(to_tensor_file(v), path);
}

VideoTensor load_video(const std::string& path) {
    return video_from_tensor_file(load_tensor(path));
}

void save_map(const SaliencyMap& m, const std::string& path) {
    save_tensor(to_tensor_file(m), path);
}

SaliencyMap load_map(const std::string& path) {
    return map_from_tensor_file(load_tensor(path));
}

VideoTensor normalize(const VideoTensor& v, std::span<const float> mean,
                      std::span<const float> std_dev) {
    v.validate();
    if (mean.size() != static_cast<std::size_t>(v.C) ||
        std_dev.size() != static_cast<std::size_t>(v.C))
        throw ValidationError("normalize: mean/std size must equal channel count");
    for (float s : std_dev)
        if (!(s > 0.0f)) throw ValidationError("normalize: std must be positive");

    VideoTensor out = v;
    const std::size_t n = v.size();
    const int c_count = v.C;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % c_count);
        out.data[i] = static_cast<float>((static_cast<double>(v.data[i]) - mean[c]) / std_dev[c]);
    }
    return out;
}

VideoTensor denormalize(const VideoTensor& v, std::span<const float> mean,
                        std::span<const float> std_dev) {
    v.validate();
    if (mean.size() != static_cast<std::size_t>(v.C) ||
        std_dev.size() != static_cast<std::size_t>(v.C))
        throw ValidationError("denormalize: mean/std size must equal channel count");
    VideoTensor out = v;
    const std::size_t n = v.size();
    const int c_count = v.C;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % c_count);
        out.data[i] = static_cast<float>(static_cast<double>(v.data[i]) * std_dev[c] + mean[c]);
    }
    return out;
}

void save_meta(const std::map<std::string, std::string>& meta, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        for (const auto& [k, v] : meta) out << k << "=" << v << "\n";
        if (!out) throw IoError("meta write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path);
}

std::map<std::string, std::string> load_meta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::map<std::string, std::string> meta;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("bad meta line: " + line);
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

}  // namespace aosa
