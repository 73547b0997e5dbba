#include "aosa/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "aosa/errors.hpp"
#include "aosa/rng.hpp"

namespace aosa {

std::string score_mode_name(ScoreMode m) {
    return m == ScoreMode::Probability ? "prob" : "logit";
}

ScoreMode score_mode_from_name(const std::string& name) {
    if (name == "prob" || name == "probability") return ScoreMode::Probability;
    if (name == "logit") return ScoreMode::Logit;
    throw ValidationError("unknown score mode: " + name);
}

std::vector<double> softmax(const std::vector<double>& z) {
    if (z.empty()) throw ValidationError("softmax of empty vector");
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

void ScoreModel::check_dims(const VideoTensor& v) const {
    v.validate();
    const Dims4 d = expected_dims();
    auto bad = [](int want, int got) { return want != 0 && want != got; };
    if (bad(d.T, v.T) || bad(d.H, v.H) || bad(d.W, v.W) || bad(d.C, v.C))
        throw ValidationError("input dims do not match model's expected dims");
}

std::vector<double> ScoreModel::forward(const VideoTensor& v) {
    check_dims(v);
    counter_.add_forward();
    return score_impl(v);
}

GradTensor ScoreModel::gradient(const VideoTensor& v, int target_class) {
    check_dims(v);
    // num_classes() may be 0 for adapters that learn it from the first reply.
    if (target_class < 0 || (num_classes() > 0 && target_class >= num_classes()))
        throw ValidationError("target class out of range");
    counter_.add_backward();
    return gradient_impl(v, target_class);
}

int ScoreModel::argmax_class(const VideoTensor& v) {
    const std::vector<double> s = forward(v);
    return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

namespace {

constexpr int kTaps = Tiny3DCNN::kKernel * Tiny3DCNN::kKernel * Tiny3DCNN::kKernel;

// Flat offsets of each parameter group inside the params vector.
struct Off {
    std::size_t c1w, c1b, c2w, c2b, fcw, fcb, total;
};

Off offsets(int in_ch, int classes) {
    Off o{};
    o.c1w = 0;
    o.c1b = o.c1w + static_cast<std::size_t>(Tiny3DCNN::kC1) * in_ch * kTaps;
    o.c2w = o.c1b + Tiny3DCNN::kC1;
    o.c2b = o.c2w + static_cast<std::size_t>(Tiny3DCNN::kC2) * Tiny3DCNN::kC1 * kTaps;
    o.fcw = o.c2b + Tiny3DCNN::kC2;
    o.fcb = o.fcw + static_cast<std::size_t>(classes) * Tiny3DCNN::kC2;
    o.total = o.fcb + classes;
    return o;
}

// Dense 3D convolution, kernel 3, stride 1, zero padding 1, channel-major
// planes. Implemented tap by tap so the innermost loop is a contiguous
// multiply-add over one row.
void conv3(const double* x, int C, int T, int H, int W, const double* w, const double* b, int O,
           double* y) {
    const std::size_t plane = static_cast<std::size_t>(T) * H * W;
    for (int o = 0; o < O; ++o) std::fill(y + o * plane, y + (o + 1) * plane, b[o]);
    for (int o = 0; o < O; ++o) {
        double* yo = y + o * plane;
        for (int c = 0; c < C; ++c) {
            const double* wk = w + (static_cast<std::size_t>(o) * C + c) * kTaps;
            const double* xc = x + c * plane;
            int k = 0;
            for (int dt = -1; dt <= 1; ++dt) {
                for (int dh = -1; dh <= 1; ++dh) {
                    for (int dw = -1; dw <= 1; ++dw, ++k) {
                        const double wt = wk[k];
                        const int t0 = std::max(0, -dt), t1 = std::min(T, T - dt);
                        const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
                        const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
                        for (int t = t0; t < t1; ++t) {
                            for (int h = h0; h < h1; ++h) {
                                const double* xr =
                                    xc + (static_cast<std::size_t>(t + dt) * H + (h + dh)) * W + dw;
                                double* yr = yo + (static_cast<std::size_t>(t) * H + h) * W;
                                for (int ww = w0; ww < w1; ++ww) yr[ww] += wt * xr[ww];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Backward for conv3: accumulates input gradient (when dx is non-null) and
// parameter gradients (when dw_out/db_out are non-null) from upstream dy.
void conv3_backward(const double* x, int C, int T, int H, int W, const double* w, int O,
                    const double* dy, double* dx, double* dw_out, double* db_out) {
    const std::size_t plane = static_cast<std::size_t>(T) * H * W;
    if (db_out) {
        for (int o = 0; o < O; ++o) {
            const double* dyo = dy + o * plane;
            db_out[o] += std::accumulate(dyo, dyo + plane, 0.0);
        }
    }
    for (int o = 0; o < O; ++o) {
        const double* dyo = dy + o * plane;
        for (int c = 0; c < C; ++c) {
            const double* wk = w + (static_cast<std::size_t>(o) * C + c) * kTaps;
            const double* xc = x + c * plane;
            double* dxc = dx ? dx + c * plane : nullptr;
            double* dwk = dw_out ? dw_out + (static_cast<std::size_t>(o) * C + c) * kTaps : nullptr;
            int k = 0;
            for (int dt = -1; dt <= 1; ++dt) {
                for (int dh = -1; dh <= 1; ++dh) {
                    for (int dw = -1; dw <= 1; ++dw, ++k) {
                        const double wt = wk[k];
                        const int t0 = std::max(0, -dt), t1 = std::min(T, T - dt);
                        const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
                        const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
                        double acc = 0.0;
                        for (int t = t0; t < t1; ++t) {
                            for (int h = h0; h < h1; ++h) {
                                const std::size_t in_row =
                                    (static_cast<std::size_t>(t + dt) * H + (h + dh)) * W + dw;
                                const double* dyr = dyo + (static_cast<std::size_t>(t) * H + h) * W;
                                if (dxc) {
                                    double* dxr = dxc + in_row;
                                    for (int ww = w0; ww < w1; ++ww) dxr[ww] += wt * dyr[ww];
                                }
                                if (dwk) {
                                    const double* xr = xc + in_row;
                                    for (int ww = w0; ww < w1; ++ww) acc += xr[ww] * dyr[ww];
                                }
                            }
                        }
                        if (dwk) dwk[k] += acc;
                    }
                }
            }
        }
    }
}

// 2x2x2 max pooling, floor truncation on odd dims; idx records the absolute
// flat offset of each winner for the backward scatter.
void maxpool2(const double* x, int C, int T, int H, int W, double* y, int* idx) {
    const int T2 = T / 2, H2 = H / 2, W2 = W / 2;
    const std::size_t plane = static_cast<std::size_t>(T) * H * W;
    std::size_t out = 0;
    for (int c = 0; c < C; ++c) {
        for (int ot = 0; ot < T2; ++ot) {
            for (int oh = 0; oh < H2; ++oh) {
                for (int ow = 0; ow < W2; ++ow, ++out) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = 0;
                    for (int a = 0; a < 2; ++a) {
                        for (int bm = 0; bm < 2; ++bm) {
                            for (int cc = 0; cc < 2; ++cc) {
                                const std::size_t i =
                                    c * plane +
                                    (static_cast<std::size_t>(2 * ot + a) * H + (2 * oh + bm)) * W +
                                    (2 * ow + cc);
                                if (x[i] > best) {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    y[out] = best;
                    idx[out] = static_cast<int>(best_i);
                }
            }
        }
    }
}

struct Workspace {
    int T = 0, H = 0, W = 0;
    int T1 = 0, H1 = 0, W1 = 0;
    int T2 = 0, H2 = 0, W2 = 0;
    std::vector<double> a1, p1, a2, p2, gap, logits;
    std::vector<int> idx1, idx2;
};

void forward_core(const double* params, const Off& off, int in_ch, int classes, const double* x,
                  int T, int H, int W, Workspace& ws) {
    ws.T = T;
    ws.H = H;
    ws.W = W;
    ws.T1 = T / 2;
    ws.H1 = H / 2;
    ws.W1 = W / 2;
    ws.T2 = ws.T1 / 2;
    ws.H2 = ws.H1 / 2;
    ws.W2 = ws.W1 / 2;
    const std::size_t n1 = static_cast<std::size_t>(Tiny3DCNN::kC1) * T * H * W;
    const std::size_t np1 = static_cast<std::size_t>(Tiny3DCNN::kC1) * ws.T1 * ws.H1 * ws.W1;
    const std::size_t n2 = static_cast<std::size_t>(Tiny3DCNN::kC2) * ws.T1 * ws.H1 * ws.W1;
    const std::size_t np2 = static_cast<std::size_t>(Tiny3DCNN::kC2) * ws.T2 * ws.H2 * ws.W2;
    ws.a1.assign(n1, 0.0);
    ws.p1.assign(np1, 0.0);
    ws.idx1.assign(np1, 0);
    ws.a2.assign(n2, 0.0);
    ws.p2.assign(np2, 0.0);
    ws.idx2.assign(np2, 0);
    ws.gap.assign(Tiny3DCNN::kC2, 0.0);
    ws.logits.assign(classes, 0.0);

    conv3(x, in_ch, T, H, W, params + off.c1w, params + off.c1b, Tiny3DCNN::kC1, ws.a1.data());
    for (double& v : ws.a1) v = v > 0.0 ? v : 0.0;
    maxpool2(ws.a1.data(), Tiny3DCNN::kC1, T, H, W, ws.p1.data(), ws.idx1.data());

    conv3(ws.p1.data(), Tiny3DCNN::kC1, ws.T1, ws.H1, ws.W1, params + off.c2w, params + off.c2b,
          Tiny3DCNN::kC2, ws.a2.data());
    for (double& v : ws.a2) v = v > 0.0 ? v : 0.0;
    maxpool2(ws.a2.data(), Tiny3DCNN::kC2, ws.T1, ws.H1, ws.W1, ws.p2.data(), ws.idx2.data());

    const std::size_t vox = static_cast<std::size_t>(ws.T2) * ws.H2 * ws.W2;
    for (int c = 0; c < Tiny3DCNN::kC2; ++c) {
        const double* pc = ws.p2.data() + c * vox;
        ws.gap[c] = std::accumulate(pc, pc + vox, 0.0) / static_cast<double>(vox);
    }
    for (int cls = 0; cls < classes; ++cls) {
        double z = params[off.fcb + cls];
        const double* wrow = params + off.fcw + static_cast<std::size_t>(cls) * Tiny3DCNN::kC2;
        for (int c = 0; c < Tiny3DCNN::kC2; ++c) z += wrow[c] * ws.gap[c];
        ws.logits[cls] = z;
    }
}

// Backward through the whole net from a logit seed. dx and dparams may each
// be null; dparams has the same layout as params.
void backward_core(const double* params, const Off& off, int in_ch, int classes, const double* x,
                   const Workspace& ws, const std::vector<double>& dlogits, double* dx,
                   double* dparams) {
    const std::size_t vox = static_cast<std::size_t>(ws.T2) * ws.H2 * ws.W2;

    std::vector<double> dgap(Tiny3DCNN::kC2, 0.0);
    for (int cls = 0; cls < classes; ++cls) {
        const double g = dlogits[cls];
        const double* wrow = params + off.fcw + static_cast<std::size_t>(cls) * Tiny3DCNN::kC2;
        for (int c = 0; c < Tiny3DCNN::kC2; ++c) dgap[c] += g * wrow[c];
        if (dparams) {
            double* dwrow = dparams + off.fcw + static_cast<std::size_t>(cls) * Tiny3DCNN::kC2;
            for (int c = 0; c < Tiny3DCNN::kC2; ++c) dwrow[c] += g * ws.gap[c];
            dparams[off.fcb + cls] += g;
        }
    }

    std::vector<double> dp2(ws.p2.size(), 0.0);
    for (int c = 0; c < Tiny3DCNN::kC2; ++c) {
        const double g = dgap[c] / static_cast<double>(vox);
        double* d = dp2.data() + c * vox;
        std::fill(d, d + vox, g);
    }

    std::vector<double> da2(ws.a2.size(), 0.0);
    for (std::size_t i = 0; i < dp2.size(); ++i) da2[ws.idx2[i]] += dp2[i];
    for (std::size_t i = 0; i < da2.size(); ++i)
        if (ws.a2[i] <= 0.0) da2[i] = 0.0;

    std::vector<double> dp1(ws.p1.size(), 0.0);
    conv3_backward(ws.p1.data(), Tiny3DCNN::kC1, ws.T1, ws.H1, ws.W1, params + off.c2w,
                   Tiny3DCNN::kC2, da2.data(), dp1.data(), dparams ? dparams + off.c2w : nullptr,
                   dparams ? dparams + off.c2b : nullptr);

    std::vector<double> da1(ws.a1.size(), 0.0);
    for (std::size_t i = 0; i < dp1.size(); ++i) da1[ws.idx1[i]] += dp1[i];
    for (std::size_t i = 0; i < da1.size(); ++i)
        if (ws.a1[i] <= 0.0) da1[i] = 0.0;

    conv3_backward(x, in_ch, ws.T, ws.H, ws.W, params + off.c1w, Tiny3DCNN::kC1, da1.data(), dx,
                   dparams ? dparams + off.c1w : nullptr, dparams ? dparams + off.c1b : nullptr);
}

void check_f64_dims(Dims4 d, int in_ch, std::size_t n) {
    if (d.C != in_ch) throw ValidationError("Tiny3DCNN: channel count mismatch");
    if (d.T < 4 || d.H < 4 || d.W < 4)
        throw ValidationError("Tiny3DCNN: input must be at least 4 in each of T, H, W");
    if (n != static_cast<std::size_t>(d.T) * d.H * d.W * d.C)
        throw ValidationError("Tiny3DCNN: input size does not match dims");
}

// THWC float video to channel-major double planes.
std::vector<double> to_cthw(const VideoTensor& v) {
    std::vector<double> x(static_cast<std::size_t>(v.C) * v.T * v.H * v.W);
    const std::size_t plane = static_cast<std::size_t>(v.T) * v.H * v.W;
    for (int t = 0; t < v.T; ++t)
        for (int h = 0; h < v.H; ++h)
            for (int w = 0; w < v.W; ++w)
                for (int c = 0; c < v.C; ++c)
                    x[c * plane + (static_cast<std::size_t>(t) * v.H + h) * v.W + w] =
                        v.at(t, h, w, c);
    return x;
}

}  // namespace

Tiny3DCNN::Tiny3DCNN(int in_channels, int n_classes, std::uint64_t seed)
    : in_ch_(in_channels), classes_(n_classes) {
    if (in_channels != 1 && in_channels != 3)
        throw ValidationError("Tiny3DCNN: in_channels must be 1 or 3");
    if (n_classes < 1) throw ValidationError("Tiny3DCNN: need at least one class");
    expected_.C = in_channels;
    const Off off = offsets(in_ch_, classes_);
    params_.assign(off.total, 0.0);
    Rng rng(seed);
    auto glorot = [&](std::size_t lo, std::size_t hi, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (std::size_t i = lo; i < hi; ++i) params_[i] = rng.uniform(-bound, bound);
    };
    glorot(off.c1w, off.c1b, in_ch_ * kTaps, kC1 * kTaps);
    glorot(off.c2w, off.c2b, kC1 * kTaps, kC2 * kTaps);
    glorot(off.fcw, off.fcb, kC2, classes_);
}

std::vector<double> Tiny3DCNN::logits_f64(const std::vector<double>& x, Dims4 d) const {
    check_f64_dims(d, in_ch_, x.size());
    Workspace ws;
    forward_core(params_.data(), offsets(in_ch_, classes_), in_ch_, classes_, x.data(), d.T, d.H,
                 d.W, ws);
    return ws.logits;
}

std::vector<double> Tiny3DCNN::input_grad_f64(const std::vector<double>& x, Dims4 d,
                                              const std::vector<double>& dlogits) const {
    check_f64_dims(d, in_ch_, x.size());
    if (dlogits.size() != static_cast<std::size_t>(classes_))
        throw ValidationError("Tiny3DCNN: dlogits length mismatch");
    const Off off = offsets(in_ch_, classes_);
    Workspace ws;
    forward_core(params_.data(), off, in_ch_, classes_, x.data(), d.T, d.H, d.W, ws);
    std::vector<double> dx(x.size(), 0.0);
    backward_core(params_.data(), off, in_ch_, classes_, x.data(), ws, dlogits, dx.data(),
                  nullptr);
    return dx;
}

std::vector<double> Tiny3DCNN::score_impl(const VideoTensor& v) {
    const std::vector<double> z = logits_f64(to_cthw(v), Dims4{v.T, v.H, v.W, v.C});
    return mode() == ScoreMode::Probability ? softmax(z) : z;
}

GradTensor Tiny3DCNN::gradient_impl(const VideoTensor& v, int target_class) {
    const std::vector<double> x = to_cthw(v);
    const Dims4 d{v.T, v.H, v.W, v.C};
    std::vector<double> seed(classes_, 0.0);
    if (mode() == ScoreMode::Logit) {
        seed[target_class] = 1.0;
    } else {
        const std::vector<double> p = softmax(logits_f64(x, d));
        for (int k = 0; k < classes_; ++k)
            seed[k] = p[target_class] * ((k == target_class ? 1.0 : 0.0) - p[k]);
    }
    const std::vector<double> dx = input_grad_f64(x, d, seed);

    GradTensor g;
    g.T = v.T;
    g.H = v.H;
    g.W = v.W;
    g.C = v.C;
    g.data.resize(dx.size());
    const std::size_t plane = static_cast<std::size_t>(v.T) * v.H * v.W;
    for (int t = 0; t < v.T; ++t)
        for (int h = 0; h < v.H; ++h)
            for (int w = 0; w < v.W; ++w)
                for (int c = 0; c < v.C; ++c)
                    g.data[((static_cast<std::size_t>(t) * v.H + h) * v.W + w) * v.C + c] =
                        dx[c * plane + (static_cast<std::size_t>(t) * v.H + h) * v.W + w];
    return g;
}

std::vector<double> Tiny3DCNN::param_grad(const VideoTensor& v, int label,
                                          double* loss_out) const {
    if (label < 0 || label >= classes_) throw ValidationError("label out of range");
    const std::vector<double> x = to_cthw(v);
    const Off off = offsets(in_ch_, classes_);
    Workspace ws;
    forward_core(params_.data(), off, in_ch_, classes_, x.data(), v.T, v.H, v.W, ws);
    std::vector<double> seed = softmax(ws.logits);
    if (loss_out) *loss_out = -std::log(std::max(seed[label], 1e-300));
    seed[label] -= 1.0;  // d(-log softmax_label)/d logits
    std::vector<double> dparams(params_.size(), 0.0);
    backward_core(params_.data(), off, in_ch_, classes_, x.data(), ws, seed, nullptr,
                  dparams.data());
    return dparams;
}

double Tiny3DCNN::cross_entropy(const VideoTensor& v, int label) const {
    if (label < 0 || label >= classes_) throw ValidationError("label out of range");
    const std::vector<double> p = softmax(logits_f64(to_cthw(v), Dims4{v.T, v.H, v.W, v.C}));
    return -std::log(std::max(p[label], 1e-300));
}

namespace {

constexpr char kModelMagic[4] = {'A', 'O', 'S', 'M'};
constexpr std::uint8_t kModelVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw FormatError("truncated model file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void Tiny3DCNN::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for write: " + tmp);
        out.write(kModelMagic, 4);
        const char ver = static_cast<char>(kModelVersion);
        const char mode_byte = mode() == ScoreMode::Probability ? 0 : 1;
        const char pad[2] = {0, 0};
        out.write(&ver, 1);
        out.write(&mode_byte, 1);
        out.write(pad, 2);
        put_u32(out, static_cast<std::uint32_t>(in_ch_));
        put_u32(out, static_cast<std::uint32_t>(classes_));
        put_u32(out, static_cast<std::uint32_t>(expected_.T));
        put_u32(out, static_cast<std::uint32_t>(expected_.H));
        put_u32(out, static_cast<std::uint32_t>(expected_.W));
        put_u32(out, static_cast<std::uint32_t>(params_.size() & 0xffffffffu));
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(params_.data()),
                  static_cast<std::streamsize>(params_.size() * sizeof(double)));
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("rename failed for " + path);
    }
}

Tiny3DCNN Tiny3DCNN::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kModelMagic, 4) != 0)
        throw FormatError("bad model magic in " + path);
    char ver = 0, mode_byte = 0;
    char pad[2];
    in.read(&ver, 1);
    in.read(&mode_byte, 1);
    in.read(pad, 2);
    if (!in || ver != static_cast<char>(kModelVersion))
        throw FormatError("unsupported model version in " + path);
    const int in_ch = static_cast<int>(get_u32(in));
    const int classes = static_cast<int>(get_u32(in));
    Dims4 exp{};
    exp.T = static_cast<int>(get_u32(in));
    exp.H = static_cast<int>(get_u32(in));
    exp.W = static_cast<int>(get_u32(in));
    exp.C = in_ch;
    const std::uint32_t count = get_u32(in);

    Tiny3DCNN m(in_ch, classes, 0);
    if (count != m.params_.size())
        throw FormatError("model parameter count mismatch in " + path);
    in.read(reinterpret_cast<char*>(m.params_.data()),
            static_cast<std::streamsize>(m.params_.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(m.params_.size() * sizeof(double)))
        throw FormatError("truncated model payload in " + path);
    m.set_expected_dims(exp);
    m.set_mode(mode_byte == 0 ? ScoreMode::Probability : ScoreMode::Logit);
    return m;
}

TrainResult train_toy(const std::vector<std::pair<VideoTensor, int>>& data, int n_classes,
                      const TrainHyper& hyper) {
    if (data.empty()) throw ValidationError("train_toy: empty dataset");
    if (hyper.epochs < 1 || hyper.batch < 1 || !(hyper.lr > 0.0))
        throw ValidationError("train_toy: bad hyperparameters");
    const VideoTensor& first = data.front().first;
    for (const auto& [v, label] : data) {
        if (v.T != first.T || v.H != first.H || v.W != first.W || v.C != first.C)
            throw ValidationError("train_toy: all videos must share dims");
        if (label < 0 || label >= n_classes) throw ValidationError("train_toy: label out of range");
    }

    TrainResult result{Tiny3DCNN(first.C, n_classes, hyper.seed), {}, 0.0};
    Tiny3DCNN& model = result.model;
    model.set_expected_dims(Dims4{first.T, first.H, first.W, first.C});

    Rng rng(hyper.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    // Adam updates; plain SGD is unusable here because the global average
    // pool shrinks conv-layer gradients by the pooled position count while
    // the linear head sees full-sized ones.
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::vector<double> m1(model.param_count(), 0.0);
    std::vector<double> m2(model.param_count(), 0.0);
    long step = 0;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t at = 0;
        while (at < order.size()) {
            const std::size_t end = std::min(at + hyper.batch, order.size());
            std::vector<double> grad(model.param_count(), 0.0);
            for (std::size_t k = at; k < end; ++k) {
                const auto& [v, label] = data[order[k]];
                double loss = 0.0;
                const std::vector<double> g = model.param_grad(v, label, &loss);
                loss_sum += loss;
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
            }
            const double inv_batch = 1.0 / static_cast<double>(end - at);
            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            std::vector<double>& p = model.params();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = grad[i] * inv_batch;
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
                p[i] -= hyper.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + adam_eps);
            }
            at = end;
        }
        result.loss_trace.push_back(loss_sum / static_cast<double>(data.size()));
    }

    std::size_t correct = 0;
    for (const auto& [v, label] : data) {
        const std::vector<double> z = model.logits_f64(to_cthw(v), Dims4{v.T, v.H, v.W, v.C});
        const int pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        if (pred == label) ++correct;
    }
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return result;
}

}  // namespace aosa
