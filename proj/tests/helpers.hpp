#pragma once

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aosa/errors.hpp"
#include "aosa/model.hpp"
#include "aosa/rng.hpp"
#include "aosa/tensor.hpp"

namespace testutil {

// Directory the running test binary lives in; the CLI and stub binaries are
// built next to it.
inline std::string bin_dir() {
    char buf[4096];
    const ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) return ".";
    buf[n] = '\0';
    return std::filesystem::path(buf).parent_path().string();
}

// Self-deleting scratch directory.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "aosa_test_XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

struct RunResult {
    int exit_code = -1;
    std::string output;
};

// Runs a shell command, capturing stdout+stderr together.
inline RunResult run(const std::string& cmd) {
    RunResult r;
    FILE* p = popen((cmd + " 2>&1").c_str(), "r");
    if (p == nullptr) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.output.append(buf, n);
    const int status = pclose(p);
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    return r;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline aosa::VideoTensor random_video(int T, int H, int W, int C, std::uint64_t seed) {
    aosa::VideoTensor v(T, H, W, C);
    aosa::Rng rng(seed);
    for (float& x : v.data) x = static_cast<float>(rng.uniform01());
    return v;
}

// Score model that ignores the input and always returns the same vector.
// The per-call index variant serves stubbed mask-scoring tests: call k gets
// scores[k % scores.size()] as every class score.
class ConstModel : public aosa::ScoreModel {
public:
    explicit ConstModel(std::vector<double> scores) : scores_(std::move(scores)) {}

    int num_classes() const override { return static_cast<int>(scores_.size()); }
    aosa::Dims4 expected_dims() const override { return {}; }

protected:
    std::vector<double> score_impl(const aosa::VideoTensor&) override { return scores_; }
    aosa::GradTensor gradient_impl(const aosa::VideoTensor& v, int) override {
        return aosa::GradTensor(v.T, v.H, v.W, v.C);
    }

private:
    std::vector<double> scores_;
};

// Returns the next scalar from a list on every forward, cycling; used to
// hand masks known occlusion scores in aosa_map_from_masks tests. Class
// count 1.
class SequenceModel : public aosa::ScoreModel {
public:
    explicit SequenceModel(std::vector<double> seq) : seq_(std::move(seq)) {}

    int num_classes() const override { return 1; }
    aosa::Dims4 expected_dims() const override { return {}; }

protected:
    std::vector<double> score_impl(const aosa::VideoTensor&) override {
        const double s = seq_[next_ % seq_.size()];
        ++next_;
        return {s};
    }
    aosa::GradTensor gradient_impl(const aosa::VideoTensor& v, int) override {
        return aosa::GradTensor(v.T, v.H, v.W, v.C);
    }

private:
    std::vector<double> seq_;
    std::size_t next_ = 0;
};

// Affine score z_c = b_c + w_c . x with seeded random weights, evaluated in
// double from the float input. Taylor approximation is exact on this model.
class AffineModel : public aosa::ScoreModel {
public:
    AffineModel(int classes, std::uint64_t seed) : classes_(classes), seed_(seed) {}

    int num_classes() const override { return classes_; }
    aosa::Dims4 expected_dims() const override { return {}; }

    const std::vector<double>& weights(int cls, std::size_t n) {
        auto& w = weights_[cls];
        if (w.size() != n + 1) {
            w.resize(n + 1);
            aosa::Rng rng(aosa::derive_seed(seed_, 0xAFFEull + cls));
            for (double& x : w) x = rng.uniform(-1.0, 1.0);
        }
        return w;
    }

protected:
    std::vector<double> score_impl(const aosa::VideoTensor& v) override {
        std::vector<double> out(classes_);
        for (int c = 0; c < classes_; ++c) {
            const auto& w = weights(c, v.data.size());
            double z = w.back();
            for (std::size_t i = 0; i < v.data.size(); ++i) z += w[i] * v.data[i];
            out[c] = z;
        }
        if (mode() == aosa::ScoreMode::Probability) return aosa::softmax(out);
        return out;
    }
    aosa::GradTensor gradient_impl(const aosa::VideoTensor& v, int cls) override {
        if (mode() == aosa::ScoreMode::Probability)
            throw aosa::ValidationError("AffineModel: probability-mode gradient not implemented");
        aosa::GradTensor g(v.T, v.H, v.W, v.C);
        const auto& w = weights(cls, v.data.size());
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = w[i];
        return g;
    }

private:
    int classes_;
    std::uint64_t seed_;
    std::map<int, std::vector<double>> weights_;
};

// Two-class model scoring the mean of a marked rectangular region of frame 0:
// class 0 = mean, class 1 = 1 - mean. Used for closed-form metric checks.
class RegionMeanModel : public aosa::ScoreModel {
public:
    RegionMeanModel(int top, int left, int h, int w) : top_(top), left_(left), h_(h), w_(w) {}

    int num_classes() const override { return 2; }
    aosa::Dims4 expected_dims() const override { return {}; }

protected:
    std::vector<double> score_impl(const aosa::VideoTensor& v) override {
        double s = 0.0;
        long n = 0;
        for (int t = 0; t < v.T; ++t)
            for (int i = top_; i < top_ + h_; ++i)
                for (int j = left_; j < left_ + w_; ++j)
                    for (int c = 0; c < v.C; ++c) {
                        s += v.at(t, i, j, c);
                        ++n;
                    }
        const double m = n > 0 ? s / n : 0.0;
        return {m, 1.0 - m};
    }
    aosa::GradTensor gradient_impl(const aosa::VideoTensor& v, int) override {
        return aosa::GradTensor(v.T, v.H, v.W, v.C);
    }

private:
    int top_, left_, h_, w_;
};

}  // namespace testutil
