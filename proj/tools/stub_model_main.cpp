// Test double for the external-model wire protocol. Reads requests from
// stdin and answers on stdout until EOF. The mode argument selects behavior:
//
//   fixed S1,S2,...     forward returns the listed scores, gradient is zero
//   linear N SEED       affine model with N classes and seeded weights
//   badstatus           replies status 1 with no payload
//   garbage             replies status 0 followed by junk bytes
//   stall               reads a request and never answers
//   die CODE            exits immediately with the given code

#include <chrono>
#include <cstdint>
#include <cstring>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aosa/rng.hpp"
#include "aosa/tensor.hpp"

namespace {

using aosa::Rng;
using aosa::TensorFile;

std::vector<float> parse_scores(const std::string& arg) {
    std::vector<float> out;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
    if (out.empty()) {
        std::cerr << "stub_model: no scores given\n";
        std::exit(2);
    }
    return out;
}

void reply_tensor(const TensorFile& t) {
    std::cout.put(0);
    aosa::write_tensor(std::cout, t);
    std::cout.flush();
}

// One weight tensor per class, reproducible from (seed, class).
std::vector<double> linear_weights(std::uint64_t seed, int cls, std::size_t n) {
    Rng rng(seed + 1000003ull * (static_cast<std::uint64_t>(cls) + 1));
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}

struct Request {
    std::uint8_t opcode = 0;
    std::uint32_t cls = 0;
    TensorFile input;
};

bool read_request(Request& req) {
    const int op = std::cin.get();
    if (op == EOF) return false;
    req.opcode = static_cast<std::uint8_t>(op);
    if (req.opcode == 0x02) {
        unsigned char b[4];
        std::cin.read(reinterpret_cast<char*>(b), 4);
        if (std::cin.gcount() != 4) return false;
        req.cls = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                  (static_cast<std::uint32_t>(b[2]) << 16) |
                  (static_cast<std::uint32_t>(b[3]) << 24);
    }
    req.input = aosa::read_tensor(std::cin);
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: stub_model MODE [ARGS]\n";
        return 2;
    }
    const std::string mode = argv[1];

    if (mode == "die") {
        return argc > 2 ? std::atoi(argv[2]) : 1;
    }

    std::vector<float> fixed_scores;
    int classes = 0;
    std::uint64_t seed = 0;
    if (mode == "fixed") {
        if (argc < 3) {
            std::cerr << "stub_model fixed needs a score list\n";
            return 2;
        }
        fixed_scores = parse_scores(argv[2]);
    } else if (mode == "linear") {
        if (argc < 3) {
            std::cerr << "stub_model linear needs a class count\n";
            return 2;
        }
        classes = std::atoi(argv[2]);
        seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 7;
    }

    Request req;
    while (read_request(req)) {
        if (mode == "stall") {
            std::this_thread::sleep_for(std::chrono::hours(1));
            return 0;
        }
        if (mode == "badstatus") {
            std::cout.put(1);
            std::cout.flush();
            continue;
        }
        if (mode == "garbage") {
            std::cout.put(0);
            std::cout.write("not a tensor at all, sorry!!!!!!", 32);
            std::cout.flush();
            continue;
        }
        if (mode == "fixed") {
            if (req.opcode == 0x01) {
                TensorFile t;
                t.rank = 1;
                t.dims = {fixed_scores.size(), 0, 0, 0};
                t.data = fixed_scores;
                reply_tensor(t);
            } else {
                TensorFile g = req.input;  // same dims, zero payload
                std::fill(g.data.begin(), g.data.end(), 0.0f);
                reply_tensor(g);
            }
            continue;
        }
        if (mode == "linear") {
            const std::size_t n = req.input.data.size();
            if (req.opcode == 0x01) {
                TensorFile t;
                t.rank = 1;
                t.dims = {static_cast<std::uint64_t>(classes), 0, 0, 0};
                t.data.resize(classes);
                for (int c = 0; c < classes; ++c) {
                    const std::vector<double> w = linear_weights(seed, c, n);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += w[i] * req.input.data[i];
                    t.data[c] = static_cast<float>(acc);
                }
                reply_tensor(t);
            } else {
                const std::vector<double> w =
                    linear_weights(seed, static_cast<int>(req.cls), n);
                TensorFile g = req.input;
                for (std::size_t i = 0; i < n; ++i) g.data[i] = static_cast<float>(w[i]);
                reply_tensor(g);
            }
            continue;
        }
        std::cerr << "stub_model: unknown mode " << mode << "\n";
        return 2;
    }
    return 0;
}
