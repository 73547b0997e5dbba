#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aosa/tensor.hpp"

namespace aosa {

enum class ScoreMode { Probability, Logit };

std::string score_mode_name(ScoreMode m);
ScoreMode score_mode_from_name(const std::string& name);

// Numerically stable softmax (subtracts the max logit).
std::vector<double> softmax(const std::vector<double>& z);

struct Dims4 {
    int T = 0;  // 0 means "any" for models without a fixed input size
    int H = 0;
    int W = 0;
    int C = 0;
};

class CallCounter {
public:
    CallCounter() = default;
    CallCounter(const CallCounter& o) : fwd_(o.forwards()), bwd_(o.backwards()) {}
    CallCounter& operator=(const CallCounter& o) {
        fwd_.store(o.forwards(), std::memory_order_relaxed);
        bwd_.store(o.backwards(), std::memory_order_relaxed);
        return *this;
    }

    void add_forward() { fwd_.fetch_add(1, std::memory_order_relaxed); }
    void add_backward() { bwd_.fetch_add(1, std::memory_order_relaxed); }
    void reset() {
        fwd_.store(0, std::memory_order_relaxed);
        bwd_.store(0, std::memory_order_relaxed);
    }
    long forwards() const { return fwd_.load(std::memory_order_relaxed); }
    long backwards() const { return bwd_.load(std::memory_order_relaxed); }

private:
    std::atomic<long> fwd_{0};
    std::atomic<long> bwd_{0};
};

// Score function f over videos: forward produces one score per class in the
// configured mode, gradient produces d f_c / d input. The public entry points
// validate dims and maintain the call counter; implementations provide the
// mode-aware raw computation.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    virtual int num_classes() const = 0;
    virtual Dims4 expected_dims() const = 0;

    ScoreMode mode() const { return mode_; }
    void set_mode(ScoreMode m) { mode_ = m; }

    std::vector<double> forward(const VideoTensor& v);
    GradTensor gradient(const VideoTensor& v, int target_class);

    CallCounter& counter() { return counter_; }
    const CallCounter& counter() const { return counter_; }

    int argmax_class(const VideoTensor& v);  // counts one forward

protected:
    virtual std::vector<double> score_impl(const VideoTensor& v) = 0;
    virtual GradTensor gradient_impl(const VideoTensor& v, int target_class) = 0;
    void check_dims(const VideoTensor& v) const;

private:
    ScoreMode mode_ = ScoreMode::Probability;
    CallCounter counter_;
};

// Two conv3d+ReLU+maxpool blocks, global average pool, then a linear head.
// All arithmetic in float64; backward is hand-written.
class Tiny3DCNN : public ScoreModel {
public:
    static constexpr int kC1 = 8;
    static constexpr int kC2 = 16;
    static constexpr int kKernel = 3;

    Tiny3DCNN(int in_channels, int n_classes, std::uint64_t seed);

    int num_classes() const override { return classes_; }
    Dims4 expected_dims() const override { return expected_; }
    void set_expected_dims(Dims4 d) { expected_ = d; }
    int in_channels() const { return in_ch_; }

    // Double-precision entry for finite-difference checks; x is C-major
    // (c, t, h, w) with the given dims.
    std::vector<double> logits_f64(const std::vector<double>& x, Dims4 d) const;
    std::vector<double> input_grad_f64(const std::vector<double>& x, Dims4 d,
                                       const std::vector<double>& dlogits) const;

    // Flat parameter access, order: conv1 w, conv1 b, conv2 w, conv2 b, fc w, fc b.
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }
    // dCE/dparams; loss_out (optional) receives the sample's cross entropy.
    std::vector<double> param_grad(const VideoTensor& v, int label,
                                   double* loss_out = nullptr) const;
    double cross_entropy(const VideoTensor& v, int label) const;

    void save(const std::string& path) const;
    static Tiny3DCNN load(const std::string& path);

protected:
    std::vector<double> score_impl(const VideoTensor& v) override;
    GradTensor gradient_impl(const VideoTensor& v, int target_class) override;

private:
    int in_ch_ = 0;
    int classes_ = 0;
    Dims4 expected_{};
    std::vector<double> params_;
};

struct TrainHyper {
    double lr = 0.01;  // Adam step size
    int epochs = 20;
    int batch = 8;
    std::uint64_t seed = 1;
};

struct TrainResult {
    Tiny3DCNN model;
    std::vector<double> loss_trace;  // mean cross entropy per epoch
    double train_accuracy = 0.0;
};

TrainResult train_toy(const std::vector<std::pair<VideoTensor, int>>& data, int n_classes,
                      const TrainHyper& hyper);

}  // namespace aosa
