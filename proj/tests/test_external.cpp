#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "aosa/errors.hpp"
#include "aosa/external_model.hpp"
#include "aosa/rng.hpp"
#include "aosa/saliency.hpp"
#include "aosa/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace aosa;
using testutil::bin_dir;
using testutil::random_video;

namespace {

std::string stub_path() { return bin_dir() + "/stub_model"; }

// The weights the stub's linear mode generates for one class.
std::vector<double> stub_weights(std::uint64_t seed, int cls, std::size_t n) {
    Rng rng(seed + 1000003ull * (static_cast<std::uint64_t>(cls) + 1));
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}

// In-process mirror of the stub's linear mode, including the float32
// rounding the wire applies to scores and gradients.
class MirrorLinearModel : public ScoreModel {
public:
    MirrorLinearModel(int classes, std::uint64_t seed) : classes_(classes), seed_(seed) {}
    int num_classes() const override { return classes_; }
    Dims4 expected_dims() const override { return {}; }

protected:
    std::vector<double> score_impl(const VideoTensor& v) override {
        std::vector<double> out(classes_);
        for (int c = 0; c < classes_; ++c) {
            const auto w = stub_weights(seed_, c, v.data.size());
            double acc = 0.0;
            for (std::size_t i = 0; i < v.data.size(); ++i) acc += w[i] * v.data[i];
            out[c] = static_cast<float>(acc);
        }
        return out;
    }
    GradTensor gradient_impl(const VideoTensor& v, int cls) override {
        GradTensor g(v.T, v.H, v.W, v.C);
        const auto w = stub_weights(seed_, cls, v.data.size());
        for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] = static_cast<float>(w[i]);
        return g;
    }

private:
    int classes_;
    std::uint64_t seed_;
};

}  // namespace

TEST_SUITE("external") {

TEST_CASE("fixed stub returns its scores and a zero gradient") {
    ExternalModel m({stub_path(), "fixed", "0.1,0.7,0.2"});
    CHECK(m.num_classes() == 0);  // unknown before the first reply

    const VideoTensor v = random_video(2, 6, 6, 1, 1);
    const std::vector<double> s = m.forward(v);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == doctest::Approx(0.1));
    CHECK(s[1] == doctest::Approx(0.7));
    CHECK(s[2] == doctest::Approx(0.2));
    CHECK(m.num_classes() == 3);

    const GradTensor g = m.gradient(v, 1);
    CHECK(g.T == 2);
    CHECK(g.H == 6);
    CHECK(g.W == 6);
    CHECK(g.C == 1);
    for (float x : g.data) CHECK(x == 0.0f);

    // Repeated calls reuse the same child process.
    const std::vector<double> s2 = m.forward(v);
    CHECK(s2 == s);
    CHECK(m.counter().forwards() == 2);
    CHECK(m.counter().backwards() == 1);
}

TEST_CASE("scores pass through unchanged in either score mode") {
    ExternalModel m({stub_path(), "fixed", "2.5,-1.0"});
    const VideoTensor v = random_video(2, 4, 4, 1, 2);
    m.set_mode(ScoreMode::Probability);
    const auto a = m.forward(v);
    m.set_mode(ScoreMode::Logit);
    const auto b = m.forward(v);
    CHECK(a == b);
    CHECK(a[0] == doctest::Approx(2.5));
}

TEST_CASE("linear stub matches the in-process mirror") {
    const std::uint64_t seed = 9;
    ExternalModel child({stub_path(), "linear", "3", std::to_string(seed)});
    MirrorLinearModel local(3, seed);
    const VideoTensor v = random_video(3, 8, 8, 1, 3);

    const auto sc = child.forward(v);
    const auto sl = local.forward(v);
    REQUIRE(sc.size() == 3);
    for (int c = 0; c < 3; ++c) CHECK(sc[c] == doctest::Approx(sl[c]).epsilon(1e-6));

    const GradTensor gc = child.gradient(v, 2);
    const GradTensor gl = local.gradient(v, 2);
    REQUIRE(gc.data.size() == gl.data.size());
    for (std::size_t i = 0; i < gc.data.size(); ++i) CHECK(gc.data[i] == gl.data[i]);

    // forward is the inner product of the gradient with the input.
    double dot = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i)
        dot += static_cast<double>(gc.data[i]) * v.data[i];
    CHECK(sc[2] == doctest::Approx(dot).epsilon(1e-5));
}

TEST_CASE("saliency maps agree between child process and mirror") {
    const std::uint64_t seed = 21;
    ExternalModel child({stub_path(), "linear", "2", std::to_string(seed)});
    MirrorLinearModel local(2, seed);
    const VideoTensor v = random_video(4, 16, 16, 1, 4);

    SaliencyConfig sc;
    sc.score_mode = ScoreMode::Logit;
    sc.mask.s = 4;
    sc.mask.occ_h = 6;
    sc.mask.occ_w = 6;
    sc.mask.K = 1;
    sc.target_class = 0;

    const SaliencyResult rc = aosa_map(v, child, sc);
    const SaliencyResult rl = aosa_map(v, local, sc);
    REQUIRE(rc.map.data.size() == rl.map.data.size());
    for (std::size_t p = 0; p < rc.map.data.size(); ++p)
        CHECK(rc.map.data[p] == doctest::Approx(rl.map.data[p]).epsilon(1e-6));

    sc.method = SaliencyConfig::Method::Approx;
    const SaliencyResult ac = approx_map(v, child, sc);
    const SaliencyResult al = approx_map(v, local, sc);
    for (std::size_t p = 0; p < ac.map.data.size(); ++p)
        CHECK(ac.map.data[p] == doctest::Approx(al.map.data[p]).epsilon(1e-5));
}

TEST_CASE("empty command line is rejected up front") {
    CHECK_THROWS_AS(ExternalModel({}), ValidationError);
}

TEST_CASE("status byte other than zero raises ModelError") {
    ExternalModel m({stub_path(), "badstatus"});
    const VideoTensor v = random_video(2, 4, 4, 1, 5);
    CHECK_THROWS_AS(m.forward(v), ModelError);
}

TEST_CASE("malformed reply raises ProtocolError") {
    ExternalModel m({stub_path(), "garbage"});
    const VideoTensor v = random_video(2, 4, 4, 1, 6);
    CHECK_THROWS_AS(m.forward(v), ProtocolError);
}

TEST_CASE("child that exits immediately raises ModelError") {
    ExternalModel m({stub_path(), "die", "3"});
    const VideoTensor v = random_video(2, 4, 4, 1, 7);
    CHECK_THROWS_AS(m.forward(v), ModelError);
}

TEST_CASE("missing binary raises ModelError on first use") {
    ExternalModel m({"/nonexistent/model_binary"});
    const VideoTensor v = random_video(2, 4, 4, 1, 8);
    CHECK_THROWS_AS(m.forward(v), ModelError);
}

TEST_CASE("stalled child trips the timeout") {
    ExternalModel m({stub_path(), "stall"}, 300);
    const VideoTensor v = random_video(2, 4, 4, 1, 9);
    const auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(m.forward(v), ModelError);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() < 5000);
}

}  // TEST_SUITE("external")
