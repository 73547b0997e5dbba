// Command-line front end: train the toy direction classifier, explain a video
// with occlusion saliency, evaluate methods over a dataset, render heatmap
// overlays, and self-test the numerical core.
//
// Exit codes: 0 ok, 1 usage or internal error, 2 missing input file or empty
// dataset, 3 model/video dimension mismatch.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "aosa/errors.hpp"
#include "aosa/masks.hpp"
#include "aosa/metrics.hpp"
#include "aosa/model.hpp"
#include "aosa/render.hpp"
#include "aosa/rng.hpp"
#include "aosa/saliency.hpp"
#include "aosa/synthetic.hpp"
#include "aosa/tensor.hpp"

namespace fs = std::filesystem;
using namespace aosa;

namespace {

struct CliExit {
    int code;
    std::string message;
};

[[noreturn]] void die(int code, const std::string& msg) { throw CliExit{code, msg}; }

void require_file(const std::string& path, const std::string& what) {
    if (path.empty() || !fs::exists(path)) die(2, "missing " + what + ": " + path);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& body) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp);
        out << body;
        if (!out) throw IoError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("rename to " + path + " failed");
    }
}

// ---------------------------------------------------------------------------
// Shared saliency flags, plus the metric/worker knobs that ride along in the
// same config file. Defaults here are the documented defaults; a config file
// named by AOSA_CONFIG can override them, and explicit flags beat both.
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string method = "exact";
    std::string fill = "const";
    double fill_value = 0.0;
    int s = 8;
    int occ_h = 16;
    int occ_w = 16;
    int K = 5;
    std::string score = "prob";
    std::string target = "argmax";
    std::uint64_t seed = 0;
    bool normalize_coverage = false;
    bool no_adjust = false;
    int mc_samples = 1;
    int steps = kDefaultCurveSteps;
    int radius = kDefaultSPTRadius;
    int workers = 1;
};

void add_saliency_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--method", o.method, "Scoring method: exact or approx");
    cmd->add_option("--fill", o.fill, "Occlusion fill: const or cond");
    cmd->add_option("--fill-value", o.fill_value, "Constant fill value");
    cmd->add_option("--s", o.s, "Anchor grid stride in pixels");
    cmd->add_option("--occ-h", o.occ_h, "Occlusion rectangle height");
    cmd->add_option("--occ-w", o.occ_w, "Occlusion rectangle width");
    cmd->add_option("--K", o.K, "Co-occurring masks integrated per anchor");
    cmd->add_option("--score", o.score, "Score space: prob or logit");
    cmd->add_option("--class", o.target, "Target class index, or argmax");
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_flag("--normalize-coverage", o.normalize_coverage,
                  "Divide each position by its visible-mask fraction");
    cmd->add_flag("--no-adjust", o.no_adjust, "Disable IQR re-linearization in approx mode");
    cmd->add_option("--mc-samples", o.mc_samples, "Samples per mask for exact conditional fill");
}

const std::set<std::string>& config_keys() {
    static const std::set<std::string> keys = {
        "method", "fill",  "fill-value", "s",       "occ-h",
        "occ-w",  "K",     "score",      "class",   "seed",
        "steps",  "radius", "workers",   "mc-samples", "normalize-coverage",
        "no-adjust"};
    return keys;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) die(2, "missing config file (AOSA_CONFIG): " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string t = strip(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            die(1, path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = strip(t.substr(0, eq));
        const std::string value = strip(t.substr(eq + 1));
        if (!config_keys().count(key))
            die(1, path + ":" + std::to_string(lineno) + ": unknown config key " + key);
        kv[key] = value;
    }
    return kv;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    die(1, "config key " + key + ": expected a boolean, got " + v);
}

// Fill in values from the config file for options the user did not pass on
// the command line. Keys that a given subcommand does not use are ignored so
// one file can serve the whole tool.
void apply_config(CLI::App* cmd, CommonOpts& o) {
    const char* env = std::getenv("AOSA_CONFIG");
    if (!env || !*env) return;
    const auto kv = read_config_file(env);
    for (const auto& [key, value] : kv) {
        const CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (!opt || opt->count() > 0) continue;
        try {
            if (key == "method") o.method = value;
            else if (key == "fill") o.fill = value;
            else if (key == "fill-value") o.fill_value = std::stod(value);
            else if (key == "s") o.s = std::stoi(value);
            else if (key == "occ-h") o.occ_h = std::stoi(value);
            else if (key == "occ-w") o.occ_w = std::stoi(value);
            else if (key == "K") o.K = std::stoi(value);
            else if (key == "score") o.score = value;
            else if (key == "class") o.target = value;
            else if (key == "seed") o.seed = std::stoull(value);
            else if (key == "steps") o.steps = std::stoi(value);
            else if (key == "radius") o.radius = std::stoi(value);
            else if (key == "workers") o.workers = std::stoi(value);
            else if (key == "mc-samples") o.mc_samples = std::stoi(value);
            else if (key == "normalize-coverage") o.normalize_coverage = parse_bool(value, key);
            else if (key == "no-adjust") o.no_adjust = parse_bool(value, key);
        } catch (const std::invalid_argument&) {
            die(1, "config key " + key + ": bad value " + value);
        } catch (const std::out_of_range&) {
            die(1, "config key " + key + ": value out of range " + value);
        }
    }
}

int parse_target_class(const std::string& s) {
    if (s == "argmax") return -1;
    try {
        std::size_t used = 0;
        const int c = std::stoi(s, &used);
        if (used != s.size() || c < 0) throw std::invalid_argument(s);
        return c;
    } catch (const std::exception&) {
        die(1, "--class expects a nonnegative integer or argmax, got " + s);
    }
}

SaliencyConfig make_config(const CommonOpts& o) {
    SaliencyConfig cfg;
    if (o.method == "exact") cfg.method = SaliencyConfig::Method::Exact;
    else if (o.method == "approx") cfg.method = SaliencyConfig::Method::Approx;
    else die(1, "--method expects exact or approx, got " + o.method);

    if (o.fill == "const") cfg.fill = SaliencyConfig::Fill::Constant;
    else if (o.fill == "cond") cfg.fill = SaliencyConfig::Fill::Conditional;
    else die(1, "--fill expects const or cond, got " + o.fill);

    if (o.score == "prob") cfg.score_mode = ScoreMode::Probability;
    else if (o.score == "logit") cfg.score_mode = ScoreMode::Logit;
    else die(1, "--score expects prob or logit, got " + o.score);

    cfg.fill_value = o.fill_value;
    cfg.mask.s = o.s;
    cfg.mask.occ_h = o.occ_h;
    cfg.mask.occ_w = o.occ_w;
    cfg.mask.K = o.K;
    cfg.target_class = parse_target_class(o.target);
    cfg.seed = o.seed;
    cfg.normalize_coverage = o.normalize_coverage;
    cfg.mc_samples = o.mc_samples;
    cfg.adjust = !o.no_adjust;
    try {
        cfg.validate();
    } catch (const Error& e) {
        die(1, e.what());
    }
    return cfg;
}

// Expect nonzero dims to agree; a mismatch is the user pointing the model at
// the wrong clip, reported as exit 3.
void check_model_video(const Tiny3DCNN& m, const VideoTensor& v) {
    const Dims4 e = m.expected_dims();
    bool bad = m.in_channels() != v.C;
    if (e.T && e.T != v.T) bad = true;
    if (e.H && e.H != v.H) bad = true;
    if (e.W && e.W != v.W) bad = true;
    if (v.T < 4 || v.H < 4 || v.W < 4) bad = true;
    if (bad)
        die(3, "model/video dim mismatch: model wants C=" + std::to_string(m.in_channels()) +
                   ", video is " + std::to_string(v.T) + "x" + std::to_string(v.H) + "x" +
                   std::to_string(v.W) + "x" + std::to_string(v.C));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string out;
    int per_class = 16;
    int frames = 16;
    int size = 32;
    int channels = 1;
    int epochs = 14;
    double lr = 0.01;
    int batch = 8;
    std::uint64_t seed = 1;
};

int cmd_train(const TrainOpts& o) {
    if (o.per_class < 1 || o.frames < 4 || o.size < 8 || (o.channels != 1 && o.channels != 3))
        die(1, "train: bad dataset shape");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::pair<VideoTensor, int>> data = make_direction_dataset(
        o.per_class, o.frames, o.size, o.channels, o.seed, /*augment=*/true);
    const int n_scenes = o.per_class * kDirectionClasses;

    TrainHyper hyper;
    hyper.lr = o.lr;
    hyper.epochs = o.epochs;
    hyper.batch = o.batch;
    hyper.seed = o.seed;
    TrainResult result = train_toy(data, kDirectionClasses, hyper);
    result.model.save(o.out);

    // Accuracy over the direction scenes only; the appended calibration
    // videos carry deliberately conflicting labels.
    int correct = 0;
    for (int i = 0; i < n_scenes; ++i)
        if (result.model.argmax_class(data[i].first) == data[i].second) ++correct;
    const double scene_accuracy = static_cast<double>(correct) / n_scenes;

    std::ostringstream losses;
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
        if (i) losses << " ";
        losses << std::fixed << std::setprecision(3) << result.loss_trace[i];
    }
    std::printf("train: videos=%d classes=%d epochs=%d accuracy=%.4f wall_ms=%.1f\n",
                n_scenes, kDirectionClasses, o.epochs, scene_accuracy, elapsed_ms(t0));
    std::printf("train: loss per epoch: %s\n", losses.str().c_str());
    std::printf("train: wrote %s\n", o.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

struct ExplainOpts {
    std::string model;
    std::string video;
    std::string out;
};

int cmd_explain(const ExplainOpts& paths, const CommonOpts& common) {
    require_file(paths.model, "model file");
    require_file(paths.video, "video file");
    const SaliencyConfig cfg = make_config(common);

    Tiny3DCNN model = Tiny3DCNN::load(paths.model);
    const VideoTensor video = load_video(paths.video);
    check_model_video(model, video);

    const auto t0 = std::chrono::steady_clock::now();
    const SaliencyResult result = cfg.method == SaliencyConfig::Method::Exact
                                      ? aosa_map(video, model, cfg)
                                      : approx_map(video, model, cfg);
    const double ms = elapsed_ms(t0);

    save_map(result.map, paths.out);
    save_meta(result.map.meta, paths.out + ".meta");

    std::printf("explain: method=%s fill=%s class=%d base=%.6f forwards=%ld backwards=%ld "
                "wall_ms=%.1f\n",
                method_name(cfg.method).c_str(), fill_name(cfg.fill).c_str(),
                result.target_class, result.base_score, result.forwards, result.backwards, ms);
    std::printf("explain: wrote %s and %s.meta\n", paths.out.c_str(), paths.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string model;
    std::string out;
    std::string data_dir;  // empty = synthetic
    std::string methods = "aosa,cuboid,random";
    int videos = 20;
    int frames = 16;
    int size = 32;
};

struct EvalItem {
    std::string id;
    VideoTensor video;
    std::optional<GroundTruthBoxes> boxes;
};

struct EvalRow {
    std::string method;
    std::string video;
    double auc_del = 0.0;
    double auc_ins = 0.0;
    std::optional<double> spt;
};

std::vector<std::string> parse_methods(const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (item != "aosa" && item != "cuboid" && item != "random")
            die(1, "--methods: unknown method " + item);
        if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    }
    if (out.empty()) die(1, "--methods: empty list");
    return out;
}

SaliencyMap eval_map_for(const std::string& method, const EvalItem& item, Tiny3DCNN& model,
                         const SaliencyConfig& cfg, int video_index) {
    if (method == "aosa") {
        const SaliencyResult r = cfg.method == SaliencyConfig::Method::Exact
                                     ? aosa_map(item.video, model, cfg)
                                     : approx_map(item.video, model, cfg);
        return r.map;
    }
    if (method == "cuboid") {
        CuboidSpec spec;
        spec.occ_t = std::min(8, item.video.T / 2);
        spec.occ_h = cfg.mask.occ_h;
        spec.occ_w = cfg.mask.occ_w;
        spec.stride_s = cfg.mask.s;
        SaliencyConfig base = cfg;
        base.method = SaliencyConfig::Method::Exact;
        base.fill = SaliencyConfig::Fill::Constant;
        const SaliencyResult r = cuboid_osa_map(item.video, model, spec, base);
        return r.map;
    }
    return random_saliency(item.video.T, item.video.H, item.video.W,
                           derive_seed(cfg.seed, 0x4a9d0000u + video_index));
}

int cmd_eval(const EvalOpts& o, const CommonOpts& common) {
    require_file(o.model, "model file");
    const SaliencyConfig cfg = make_config(common);
    const std::vector<std::string> methods = parse_methods(o.methods);

    Tiny3DCNN model = Tiny3DCNN::load(o.model);

    std::vector<EvalItem> items;
    if (!o.data_dir.empty()) {
        if (!fs::is_directory(o.data_dir)) die(2, "missing dataset directory: " + o.data_dir);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(o.data_dir))
            if (entry.is_regular_file() && entry.path().extension() == ".aost")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            items.push_back(EvalItem{f.stem().string(), load_video(f.string()), std::nullopt});
    } else {
        if (o.videos < 1) die(2, "empty dataset: --videos must be at least 1");
        for (int i = 0; i < o.videos; ++i) {
            SyntheticSample s =
                direction_sample(i % kDirectionClasses, o.frames, o.size, model.in_channels(),
                                 derive_seed(cfg.seed, 0xE7A10000u + i));
            std::ostringstream id;
            id << "synthetic-";
            id.width(3);
            id.fill('0');
            id << i;
            items.push_back(EvalItem{id.str(), std::move(s.video), std::move(s.boxes)});
        }
    }
    if (items.empty()) die(2, "empty dataset: no .aost files in " + o.data_dir);
    for (const auto& item : items) check_model_video(model, item.video);

    const auto t0 = std::chrono::steady_clock::now();
    const int n_methods = static_cast<int>(methods.size());
    std::vector<EvalRow> rows(items.size() * methods.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mu;

    const int n_workers =
        std::max(1, std::min(common.workers, static_cast<int>(items.size())));
    auto worker = [&]() {
        Tiny3DCNN local = model;  // private copy so score-mode guards stay thread-local
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= items.size() || failed.load()) break;
            const EvalItem& item = items[i];
            try {
                const int target = cfg.target_class >= 0 ? cfg.target_class
                                                         : local.argmax_class(item.video);
                for (int j = 0; j < n_methods; ++j) {
                    const SaliencyMap map =
                        eval_map_for(methods[j], item, local, cfg, static_cast<int>(i));
                    EvalRow row;
                    row.method = methods[j];
                    row.video = item.id;
                    row.auc_del =
                        deletion_auc(item.video, map, local, target, common.steps).auc;
                    row.auc_ins =
                        insertion_auc(item.video, map, local, target, common.steps).auc;
                    if (item.boxes)
                        row.spt = spt_video(map, *item.boxes, common.radius).hit_rate;
                    rows[i * n_methods + j] = std::move(row);
                }
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_mu);
                failed.store(true);
                if (failure.empty()) failure = e.what();
            }
        }
    };
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw IoError("eval failed: " + failure);

    // Aggregate means per method over the per-video rows.
    std::ostringstream csv;
    csv << "method,video,auc_del,auc_ins,spt\n";
    for (const auto& row : rows) {
        csv << row.method << "," << row.video << "," << fmt9(row.auc_del) << ","
            << fmt9(row.auc_ins) << "," << (row.spt ? fmt9(*row.spt) : std::string()) << "\n";
    }
    for (const std::string& method : methods) {
        double del = 0.0, ins = 0.0, spt = 0.0;
        int n = 0, n_spt = 0;
        for (const auto& row : rows) {
            if (row.method != method) continue;
            del += row.auc_del;
            ins += row.auc_ins;
            ++n;
            if (row.spt) {
                spt += *row.spt;
                ++n_spt;
            }
        }
        csv << method << ",mean," << fmt9(del / n) << "," << fmt9(ins / n) << ","
            << (n_spt ? fmt9(spt / n_spt) : std::string()) << "\n";
        std::printf("eval: %-7s mean auc_del=%.4f auc_ins=%.4f spt=%s over %d videos\n",
                    method.c_str(), del / n, ins / n,
                    n_spt ? fmt9(spt / n_spt).substr(0, 6).c_str() : "-", n);
    }
    write_text_atomic(o.out, csv.str());
    std::printf("eval: wrote %zu rows + %d aggregates to %s (wall_ms=%.1f)\n", rows.size(),
                n_methods, o.out.c_str(), elapsed_ms(t0));
    return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderOpts {
    std::string map;
    std::string video;
    std::string out_dir;
    std::string prefix = "frame";
};

int cmd_render(const RenderOpts& o) {
    require_file(o.map, "map file");
    require_file(o.video, "video file");
    const SaliencyMap map = load_map(o.map);
    const VideoTensor video = load_video(o.video);
    if (map.T != video.T || map.H != video.H || map.W != video.W)
        die(3, "map/video dim mismatch");
    fs::create_directories(o.out_dir);
    const auto paths = render_overlays(video, map, o.out_dir, o.prefix);
    std::printf("render: wrote %zu frames to %s (map max=%.6f)\n", paths.size(),
                o.out_dir.c_str(), clip_max(map));
    return 0;
}

// ---------------------------------------------------------------------------
// selftest: small built-in oracles that cross-check the numerical core.
// ---------------------------------------------------------------------------

// Affine score model: z_c = b_c + sum_i w_ci x_i, with weights drawn once per
// (class, element count). Ignores probability mode so scores stay affine.
class AffineStub : public ScoreModel {
public:
    AffineStub(int classes, std::uint64_t seed) : classes_(classes), seed_(seed) {}

    int num_classes() const override { return classes_; }
    Dims4 expected_dims() const override { return {}; }

    const std::vector<double>& weights(int cls, std::size_t n) const {
        auto& w = cache_[cls];
        if (w.size() != n + 1) {
            Rng rng(derive_seed(seed_, 0xAFF1u + cls));
            w.resize(n + 1);
            for (auto& x : w) x = rng.uniform(-1.0, 1.0);
        }
        return w;
    }

protected:
    std::vector<double> score_impl(const VideoTensor& v) override {
        std::vector<double> z(classes_);
        for (int c = 0; c < classes_; ++c) {
            const auto& w = weights(c, v.size());
            double acc = w.back();
            for (std::size_t i = 0; i < v.size(); ++i) acc += w[i] * v.data[i];
            z[c] = acc;
        }
        return z;
    }
    GradTensor gradient_impl(const VideoTensor& v, int target_class) override {
        const auto& w = weights(target_class, v.size());
        GradTensor g(v.T, v.H, v.W, v.C);
        for (std::size_t i = 0; i < v.size(); ++i) g.data[i] = w[i];
        return g;
    }

private:
    int classes_;
    std::uint64_t seed_;
    mutable std::map<int, std::vector<double>> cache_;
};

bool selftest_gradient(std::uint64_t seed) {
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        const int C = trial % 2 ? 3 : 1;
        Tiny3DCNN m(C, 4, derive_seed(seed, 0x6e0u + trial));
        const Dims4 d{4, 6, 6, C};
        const std::size_t n = static_cast<std::size_t>(d.T) * d.H * d.W * d.C;
        Rng rng(derive_seed(seed, 0x6e100u + trial));
        std::vector<double> x(n);
        for (auto& v : x) v = rng.uniform(0.0, 1.0);

        const int cls = trial % 4;
        std::vector<double> dlogits(4, 0.0);
        dlogits[cls] = 1.0;
        const std::vector<double> g = m.input_grad_f64(x, d, dlogits);

        const double eps = 1e-5;
        for (int probe = 0; probe < 30; ++probe) {
            const std::size_t i = rng.uniform_int(n);
            std::vector<double> xp = x, xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            const double fd =
                (m.logits_f64(xp, d)[cls] - m.logits_f64(xm, d)[cls]) / (2.0 * eps);
            const double rel = std::fabs(fd - g[i]) /
                               std::max({std::fabs(fd), std::fabs(g[i]), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    std::printf("selftest: gradient-check %s (max rel err %.2e)\n",
                worst <= 1e-4 ? "ok" : "FAIL", worst);
    return worst <= 1e-4;
}

bool selftest_affine(std::uint64_t seed) {
    SyntheticSpec sp;
    sp.frames = 8;
    sp.height = 24;
    sp.width = 24;
    sp.channels = 1;
    sp.shape_h = sp.shape_w = 8;
    sp.start_row = 4.0;
    sp.start_col = 2.0;
    sp.vel_row = 0.5;
    sp.vel_col = 1.0;
    const VideoTensor v = generate_synthetic(sp, derive_seed(seed, 0xAF1u)).video;

    AffineStub model(3, derive_seed(seed, 0xAF2u));
    SaliencyConfig cfg;
    cfg.score_mode = ScoreMode::Logit;
    cfg.mask.s = 8;
    cfg.mask.occ_h = 8;
    cfg.mask.occ_w = 8;
    cfg.mask.K = 2;
    cfg.seed = seed;

    cfg.method = SaliencyConfig::Method::Exact;
    const SaliencyResult exact = aosa_map(v, model, cfg);
    cfg.method = SaliencyConfig::Method::Approx;
    const SaliencyResult approx = approx_map(v, model, cfg);

    double worst = 0.0;
    for (std::size_t i = 0; i < exact.map.data.size(); ++i)
        worst = std::max(worst, std::fabs(exact.map.data[i] - approx.map.data[i]));
    for (std::size_t i = 0; i < exact.records.size(); ++i)
        worst = std::max(worst,
                         std::fabs(exact.records[i].score - approx.records[i].score));
    std::printf("selftest: affine-equivalence %s (max diff %.2e)\n",
                worst <= 1e-9 ? "ok" : "FAIL", worst);
    return worst <= 1e-9;
}

bool selftest_conditional(std::uint64_t seed) {
    // For an affine model the infinite-sample conditional importance equals
    // f(x) minus the score of the mean-filled input; the closed form must hit
    // it exactly.
    SyntheticSpec sp;
    sp.frames = 6;
    sp.height = 24;
    sp.width = 24;
    sp.channels = 1;
    sp.shape_h = sp.shape_w = 8;
    sp.start_row = 6.0;
    sp.start_col = 4.0;
    sp.vel_col = 1.0;
    const VideoTensor v = generate_synthetic(sp, derive_seed(seed, 0xC01u)).video;

    AffineStub model(2, derive_seed(seed, 0xC02u));
    model.set_mode(ScoreMode::Logit);

    MaskConfig mc;
    mc.s = 8;
    mc.occ_h = 8;
    mc.occ_w = 8;
    mc.K = 1;
    const auto grid = place_anchor_grid(v.H, v.W, mc.s);
    FlowParams fp;
    const auto tracks = track_anchors(v, grid, fp);
    std::vector<SpatioTemporalMask> singles;
    for (const auto& tr : tracks)
        singles.push_back(build_mask(tr, mc, MaskDims{v.T, v.H, v.W, v.C}));
    const auto dists = all_fill_distributions(v, tracks, mc);

    const GradTensor J = model.gradient(v, 0);
    // Oracle in pure double: build the mean-filled input without the float32
    // round trip, then take the affine score difference directly.
    const auto& w = model.weights(0, v.size());
    double worst = 0.0;
    for (const auto& mask : singles) {
        const double closed = conditional_approx_score(J, v, mask, dists);
        std::vector<double> g(v.data.begin(), v.data.end());
        for (int t = 0; t < v.T; ++t) {
            for (std::size_t j = 0; j < mask.rects[t].size(); ++j) {
                const Rect& r = mask.rects[t][j];
                const auto& fd = dists.at(mask.rect_src[t][j])[t];
                for (int row = r.top; row < r.bottom(); ++row)
                    for (int col = r.left; col < r.right(); ++col)
                        g[v.index(t, row, col, 0)] =
                            fd.mean[fd.idx(row - fd.top, col - fd.left, 0)];
            }
        }
        double analytic = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            analytic += w[i] * (static_cast<double>(v.data[i]) - g[i]);
        worst = std::max(worst, std::fabs(closed - analytic));
    }
    std::printf("selftest: conditional closed form %s (max diff %.2e)\n",
                worst <= 1e-9 ? "ok" : "FAIL", worst);
    return worst <= 1e-9;
}

bool selftest_brute_force(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xB4Fu));
    VideoTensor v(2, 8, 8, 1);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(0.0, 1.0));

    // Four hand-built masks with one rectangle per frame.
    const MaskDims dims{2, 8, 8, 1};
    std::vector<SpatioTemporalMask> masks;
    const int specs[4][4] = {{0, 0, 3, 3}, {2, 4, 4, 3}, {4, 1, 3, 5}, {3, 4, 4, 4}};
    for (int i = 0; i < 4; ++i) {
        SpatioTemporalMask m;
        m.dims = dims;
        m.source_ids = {i};
        m.rects.resize(2);
        m.rect_src.resize(2);
        for (int t = 0; t < 2; ++t) {
            m.rects[t].push_back(Rect{specs[i][0] + t, specs[i][1], specs[i][2], specs[i][3]});
            m.rect_src[t].push_back(i);
        }
        masks.push_back(std::move(m));
    }

    AffineStub model(2, derive_seed(seed, 0xB4F2u));
    SaliencyConfig cfg;
    cfg.score_mode = ScoreMode::Logit;
    cfg.target_class = 0;
    const SaliencyResult got = aosa_map_from_masks(v, model, masks, cfg);

    // Dense oracle: rasterize every mask and sum explicitly.
    model.set_mode(ScoreMode::Logit);
    SaliencyMap want(2, 8, 8);
    for (const auto& mask : masks) {
        VideoTensor g = v;
        for (int t = 0; t < 2; ++t)
            for (const Rect& r : mask.rects[t])
                for (int i = r.top; i < r.bottom(); ++i)
                    for (int j = r.left; j < r.right(); ++j) g.at(t, i, j, 0) = 0.0f;
        const double score = model.forward(g)[0];
        const auto raster = mask.rasterize_thw();
        for (std::size_t p = 0; p < want.data.size(); ++p)
            want.data[p] += score * raster[p];
    }
    for (auto& x : want.data) x /= static_cast<double>(masks.size());

    bool exact = got.map.data.size() == want.data.size();
    double worst = 0.0;
    for (std::size_t p = 0; exact && p < want.data.size(); ++p) {
        worst = std::max(worst, std::fabs(got.map.data[p] - want.data[p]));
        if (got.map.data[p] != want.data[p]) exact = false;
    }
    std::printf("selftest: brute-force map %s (max diff %.2e)\n", exact ? "ok" : "FAIL",
                worst);
    return exact;
}

int cmd_selftest(std::uint64_t seed) {
    bool ok = true;
    ok &= selftest_gradient(seed);
    ok &= selftest_affine(seed);
    ok &= selftest_conditional(seed);
    ok &= selftest_brute_force(seed);
    std::printf("selftest: %s\n", ok ? "all checks passed" : "FAILED");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-adaptive occlusion saliency for video classifiers"};
    app.require_subcommand(1);

    TrainOpts train_opts;
    CLI::App* train = app.add_subcommand("train", "Train the toy direction classifier");
    train->add_option("--out", train_opts.out, "Model file to write")->required();
    train->add_option("--per-class", train_opts.per_class, "Training videos per class");
    train->add_option("--frames", train_opts.frames, "Frames per video");
    train->add_option("--size", train_opts.size, "Square frame size");
    train->add_option("--channels", train_opts.channels, "1 or 3");
    train->add_option("--epochs", train_opts.epochs, "Training epochs");
    train->add_option("--lr", train_opts.lr, "Learning rate");
    train->add_option("--batch", train_opts.batch, "Minibatch size");
    train->add_option("--seed", train_opts.seed, "Random seed");

    ExplainOpts explain_opts;
    CommonOpts explain_common;
    CLI::App* explain = app.add_subcommand("explain", "Write a saliency map for one video");
    explain->add_option("--model", explain_opts.model, "Model file")->required();
    explain->add_option("--video", explain_opts.video, "Video tensor file")->required();
    explain->add_option("--out", explain_opts.out, "Saliency tensor file to write")->required();
    add_saliency_flags(explain, explain_common);

    EvalOpts eval_opts;
    CommonOpts eval_common;
    CLI::App* eval = app.add_subcommand("eval", "Score methods over a dataset");
    eval->add_option("--model", eval_opts.model, "Model file")->required();
    eval->add_option("--out", eval_opts.out, "CSV file to write")->required();
    eval->add_option("--data", eval_opts.data_dir, "Directory of .aost videos");
    eval->add_option("--methods", eval_opts.methods, "Comma list: aosa,cuboid,random");
    eval->add_option("--videos", eval_opts.videos, "Synthetic videos to generate");
    eval->add_option("--frames", eval_opts.frames, "Frames per synthetic video");
    eval->add_option("--size", eval_opts.size, "Synthetic frame size");
    add_saliency_flags(eval, eval_common);
    eval->add_option("--steps", eval_common.steps, "Deletion/insertion curve steps");
    eval->add_option("--radius", eval_common.radius, "Pointing-game radius in pixels");
    eval->add_option("--workers", eval_common.workers, "Parallel workers across videos");

    RenderOpts render_opts;
    CLI::App* render = app.add_subcommand("render", "Write per-frame overlay images");
    render->add_option("--map", render_opts.map, "Saliency tensor file")->required();
    render->add_option("--video", render_opts.video, "Video tensor file")->required();
    render->add_option("--out-dir", render_opts.out_dir, "Output directory")->required();
    render->add_option("--prefix", render_opts.prefix, "Image filename prefix");

    std::uint64_t selftest_seed = 0;
    CLI::App* selftest = app.add_subcommand("selftest", "Run built-in numerical oracles");
    selftest->add_option("--seed", selftest_seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) return cmd_train(train_opts);
        if (explain->parsed()) {
            apply_config(explain, explain_common);
            return cmd_explain(explain_opts, explain_common);
        }
        if (eval->parsed()) {
            apply_config(eval, eval_common);
            return cmd_eval(eval_opts, eval_common);
        }
        if (render->parsed()) return cmd_render(render_opts);
        if (selftest->parsed()) return cmd_selftest(selftest_seed);
    } catch (const CliExit& e) {
        std::fprintf(stderr, "error: %s\n", e.message.c_str());
        return e.code;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
