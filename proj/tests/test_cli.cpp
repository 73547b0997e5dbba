#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aosa/model.hpp"
#include "aosa/synthetic.hpp"
#include "aosa/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace aosa;
using testutil::bin_dir;
using testutil::read_file;
using testutil::run;
using testutil::RunResult;
using testutil::TempDir;

namespace {

std::string cli() { return bin_dir() + "/aosa"; }

// One tiny trained model shared by the whole suite; 6-frame 16x16 videos
// keep every invocation fast.
struct Fixture {
    TempDir dir;
    std::string model = dir.file("toy.aosm");
    std::string video = dir.file("clip.aost");

    Fixture() {
        const RunResult r = run(cli() + " train --out " + model +
                                " --per-class 1 --frames 6 --size 16 --epochs 2 --seed 1");
        if (r.exit_code != 0) throw std::runtime_error("fixture train failed: " + r.output);
        const SyntheticSample s = direction_sample(2, 6, 16, 1, 77);
        save_video(s.video, video);
    }
};

Fixture& fx() {
    static Fixture f;
    return f;
}

// Parse one CSV cell by row/column, zero-based, header excluded.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train writes a loadable model and reports accuracy") {
    Fixture& f = fx();
    CHECK(std::filesystem::exists(f.model));

    const Tiny3DCNN m = Tiny3DCNN::load(f.model);
    CHECK(m.in_channels() == 1);
    CHECK(m.num_classes() == kDirectionClasses);

    // Re-running training is deterministic: same bytes for the same seed.
    const std::string copy = f.dir.file("toy2.aosm");
    const RunResult r = run(cli() + " train --out " + copy +
                            " --per-class 1 --frames 6 --size 16 --epochs 2 --seed 1");
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("accuracy=") != std::string::npos);
    CHECK(r.output.find("loss per epoch") != std::string::npos);
    CHECK(read_file(copy) == read_file(f.model));
}

TEST_CASE("train rejects a bad dataset shape") {
    TempDir tmp;
    const RunResult r = run(cli() + " train --out " + tmp.file("m.aosm") + " --frames 2");
    CHECK(r.exit_code == 1);
}

TEST_CASE("explain runs are byte-identical") {
    Fixture& f = fx();
    const std::string flags = " --s 4 --occ-h 6 --occ-w 6 --K 1 --seed 5";
    const std::string out1 = f.dir.file("map1.aosm.aost");
    const std::string out2 = f.dir.file("map2.aosm.aost");
    const RunResult r1 = run(cli() + " explain --model " + f.model + " --video " + f.video +
                             " --out " + out1 + flags);
    REQUIRE(r1.exit_code == 0);
    CHECK(r1.output.find("explain: wrote") != std::string::npos);
    const RunResult r2 = run(cli() + " explain --model " + f.model + " --video " + f.video +
                             " --out " + out2 + flags);
    REQUIRE(r2.exit_code == 0);
    CHECK(read_file(out1) == read_file(out2));
    CHECK(read_file(out1).size() > 32);

    const SaliencyMap map = load_map(out1);
    CHECK(map.T == 6);
    CHECK(map.H == 16);
    CHECK(map.W == 16);

    const auto meta = load_meta(out1 + ".meta");
    CHECK(meta.at("method") == "exact");
    CHECK(meta.at("s") == "4");
    CHECK(meta.at("seed") == "5");
}

TEST_CASE("explain approx stays within its call budget") {
    Fixture& f = fx();
    const std::string out = f.dir.file("approx.aost");
    const RunResult r = run(cli() + " explain --model " + f.model + " --video " + f.video +
                            " --out " + out +
                            " --method approx --s 4 --occ-h 6 --occ-w 6 --K 1");
    REQUIRE(r.exit_code == 0);
    const auto meta = load_meta(out + ".meta");
    CHECK(meta.at("method") == "approx");
    const int fwd = std::stoi(meta.at("forwards"));
    const int bwd = std::stoi(meta.at("backwards"));
    CHECK(fwd >= 1);
    CHECK(fwd <= 3);
    CHECK(bwd >= 1);
    CHECK(bwd <= 3);
}

TEST_CASE("explain exits 2 on missing inputs") {
    Fixture& f = fx();
    RunResult r = run(cli() + " explain --model /no/such.aosm --video " + f.video +
                      " --out /tmp/x.aost");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("missing") != std::string::npos);
    r = run(cli() + " explain --model " + f.model + " --video /no/such.aost --out /tmp/x.aost");
    CHECK(r.exit_code == 2);
}

TEST_CASE("explain exits 3 on a model/video dim mismatch") {
    Fixture& f = fx();
    const std::string small = f.dir.file("small.aost");
    save_video(testutil::random_video(6, 8, 8, 1, 3), small);
    const RunResult r = run(cli() + " explain --model " + f.model + " --video " + small +
                            " --out " + f.dir.file("bad.aost"));
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("mismatch") != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands fail") {
    CHECK(run(cli() + " explain --frobnicate 1").exit_code != 0);
    CHECK(run(cli()).exit_code != 0);
    CHECK(run(cli() + " no_such_command").exit_code != 0);
}

TEST_CASE("eval writes per-video rows plus per-method means") {
    Fixture& f = fx();
    const std::string out = f.dir.file("eval.csv");
    const std::string cmd = cli() + " eval --model " + f.model + " --out " + out +
                            " --videos 2 --frames 6 --size 16 --methods aosa,random" +
                            " --s 4 --occ-h 6 --occ-w 6 --K 1 --steps 8 --seed 3";
    const RunResult r = run(cmd);
    REQUIRE(r.exit_code == 0);

    const auto rows = parse_csv(read_file(out));
    REQUIRE(rows.size() == 1 + 4 + 2);  // header, 2 videos x 2 methods, 2 means
    CHECK(rows[0] == std::vector<std::string>{"method", "video", "auc_del", "auc_ins", "spt"});

    std::map<std::string, std::vector<double>> del_by_method;
    for (std::size_t i = 1; i <= 4; ++i) {
        REQUIRE(rows[i].size() == 5);
        CHECK((rows[i][0] == "aosa" || rows[i][0] == "random"));
        CHECK(rows[i][1].rfind("synthetic-", 0) == 0);
        del_by_method[rows[i][0]].push_back(std::stod(rows[i][2]));
        CHECK_FALSE(rows[i][4].empty());  // synthetic clips carry boxes
        const double spt = std::stod(rows[i][4]);
        CHECK(spt >= 0.0);
        CHECK(spt <= 1.0);
    }
    // Mean rows recompute from the individual rows.
    for (std::size_t i = 5; i <= 6; ++i) {
        REQUIRE(rows[i].size() == 5);
        CHECK(rows[i][1] == "mean");
        const auto& del = del_by_method[rows[i][0]];
        REQUIRE(del.size() == 2);
        CHECK(std::stod(rows[i][2]) == doctest::Approx((del[0] + del[1]) / 2).epsilon(1e-8));
    }

    // Byte-level determinism across runs.
    const std::string out2 = f.dir.file("eval2.csv");
    std::string cmd2 = cmd;
    cmd2.replace(cmd2.find(out), out.size(), out2);
    REQUIRE(run(cmd2).exit_code == 0);
    CHECK(read_file(out) == read_file(out2));
}

TEST_CASE("eval reads videos from a directory in sorted order") {
    Fixture& f = fx();
    TempDir data;
    save_video(direction_sample(0, 6, 16, 1, 5).video, data.file("b_clip.aost"));
    save_video(direction_sample(4, 6, 16, 1, 6).video, data.file("a_clip.aost"));
    save_video(testutil::random_video(4, 4, 4, 1, 1), data.file("ignored.bin"));

    const std::string out = f.dir.file("dir_eval.csv");
    const RunResult r = run(cli() + " eval --model " + f.model + " --out " + out +
                            " --data " + data.path() + " --methods random --steps 8");
    REQUIRE(r.exit_code == 0);
    const auto rows = parse_csv(read_file(out));
    REQUIRE(rows.size() == 1 + 2 + 1);
    CHECK(rows[1][1] == "a_clip");
    CHECK(rows[2][1] == "b_clip");
    // Files on disk carry no box annotations, so the spt column is empty.
    CHECK(rows[1][4].empty());
    CHECK(rows[3][1] == "mean");
    CHECK(rows[3][4].empty());
}

TEST_CASE("eval exits 2 when the dataset is missing or empty") {
    Fixture& f = fx();
    RunResult r = run(cli() + " eval --model " + f.model + " --out /tmp/x.csv" +
                      " --data /no/such/dir --methods random");
    CHECK(r.exit_code == 2);

    TempDir empty;
    r = run(cli() + " eval --model " + f.model + " --out /tmp/x.csv --data " + empty.path() +
            " --methods random");
    CHECK(r.exit_code == 2);

    r = run(cli() + " eval --model " + f.model + " --out /tmp/x.csv --videos 0");
    CHECK(r.exit_code == 2);
}

TEST_CASE("eval rejects unknown methods") {
    Fixture& f = fx();
    const RunResult r = run(cli() + " eval --model " + f.model +
                            " --out /tmp/x.csv --methods aosa,magic");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("magic") != std::string::npos);
}

TEST_CASE("render writes one image per frame") {
    Fixture& f = fx();
    const std::string map = f.dir.file("rmap.aost");
    REQUIRE(run(cli() + " explain --model " + f.model + " --video " + f.video + " --out " +
                map + " --s 8 --occ-h 8 --occ-w 8 --K 0")
                .exit_code == 0);

    const std::string out_dir = f.dir.file("frames");
    const RunResult r = run(cli() + " render --map " + map + " --video " + f.video +
                            " --out-dir " + out_dir + " --prefix ov");
    REQUIRE(r.exit_code == 0);
    for (int t = 0; t < 6; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "/ov_%03d.ppm", t);
        const std::string body = read_file(out_dir + name);
        REQUIRE(body.size() > 11);
        CHECK(body.compare(0, 3, "P6\n") == 0);
    }
    CHECK_FALSE(std::filesystem::exists(out_dir + "/ov_006.ppm"));
}

TEST_CASE("render exits 3 when map and video disagree") {
    Fixture& f = fx();
    const std::string other = f.dir.file("other.aost");
    save_video(testutil::random_video(6, 32, 32, 1, 9), other);
    const std::string map = f.dir.file("rmap2.aost");
    REQUIRE(run(cli() + " explain --model " + f.model + " --video " + f.video + " --out " +
                map + " --s 8 --occ-h 8 --occ-w 8 --K 0")
                .exit_code == 0);
    const RunResult r = run(cli() + " render --map " + map + " --video " + other +
                            " --out-dir " + f.dir.file("x"));
    CHECK(r.exit_code == 3);

    CHECK(run(cli() + " render --map /no/file --video " + f.video + " --out-dir /tmp/y")
              .exit_code == 2);
}

TEST_CASE("config file fills unset options and flags override it") {
    Fixture& f = fx();
    const std::string conf = f.dir.file("aosa.conf");
    {
        std::ofstream out(conf);
        out << "# shared defaults\n"
            << "s = 8\n"
            << "occ-h = 8\n"
            << "occ-w= 8  # inline comment\n"
            << "K = 0\n"
            << "seed = 11\n";
    }
    const std::string out1 = f.dir.file("confmap.aost");
    const RunResult r = run("AOSA_CONFIG=" + conf + " " + cli() + " explain --model " +
                            f.model + " --video " + f.video + " --out " + out1 + " --s 4");
    REQUIRE(r.exit_code == 0);
    const auto meta = load_meta(out1 + ".meta");
    CHECK(meta.at("s") == "4");    // explicit flag wins
    CHECK(meta.at("h") == "8");    // config value applied
    CHECK(meta.at("K") == "0");
    CHECK(meta.at("seed") == "11");
}

TEST_CASE("config file errors are reported with exit codes") {
    Fixture& f = fx();
    const std::string base = " " + cli() + " explain --model " + f.model + " --video " +
                             f.video + " --out /tmp/z.aost";

    RunResult r = run("AOSA_CONFIG=/no/such.conf" + base);
    CHECK(r.exit_code == 2);

    const std::string bad_key = f.dir.file("bad_key.conf");
    {
        std::ofstream out(bad_key);
        out << "banana = 1\n";
    }
    r = run("AOSA_CONFIG=" + bad_key + base);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("banana") != std::string::npos);

    const std::string bad_line = f.dir.file("bad_line.conf");
    {
        std::ofstream out(bad_line);
        out << "s 8\n";
    }
    r = run("AOSA_CONFIG=" + bad_line + base);
    CHECK(r.exit_code == 1);

    const std::string bad_value = f.dir.file("bad_value.conf");
    {
        std::ofstream out(bad_value);
        out << "s = abc\n";
    }
    r = run("AOSA_CONFIG=" + bad_value + base);
    CHECK(r.exit_code == 1);
}

TEST_CASE("selftest oracles pass") {
    const RunResult r = run(cli() + " selftest");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("all checks passed") != std::string::npos);
    CHECK(r.output.find("FAIL") == std::string::npos);
}

}  // TEST_SUITE("cli")
