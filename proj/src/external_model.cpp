#include "aosa/external_model.hpp"

#include <csignal>
#include <cstring>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "aosa/errors.hpp"

namespace aosa {

namespace {

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void ignore_sigpipe_once() {
    static const bool done = [] {
        struct sigaction sa{};
        sa.sa_handler = SIG_IGN;
        sigaction(SIGPIPE, &sa, nullptr);
        return true;
    }();
    (void)done;
}

}  // namespace

ExternalModel::ExternalModel(std::vector<std::string> argv, int timeout_ms)
    : timeout_ms_(timeout_ms) {
    if (argv.empty()) throw ValidationError("external model: empty command line");
    ignore_sigpipe_once();

    int to_child[2] = {-1, -1};
    int from_child[2] = {-1, -1};
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
        throw ModelError("external model: pipe() failed");

    const pid_t pid = fork();
    if (pid < 0) throw ModelError("external model: fork() failed");
    if (pid == 0) {
        dup2(to_child[0], STDIN_FILENO);
        dup2(from_child[1], STDOUT_FILENO);
        close(to_child[0]);
        close(to_child[1]);
        close(from_child[0]);
        close(from_child[1]);
        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (std::string& a : argv) args.push_back(a.data());
        args.push_back(nullptr);
        execvp(args[0], args.data());
        _exit(127);
    }
    pid_ = pid;
    to_child_ = to_child[1];
    from_child_ = from_child[0];
    close(to_child[0]);
    close(from_child[1]);
}

ExternalModel::~ExternalModel() { shutdown(); }

void ExternalModel::shutdown() noexcept {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
        kill(static_cast<pid_t>(pid_), SIGKILL);
        int status = 0;
        waitpid(static_cast<pid_t>(pid_), &status, 0);
        pid_ = -1;
    }
}

void ExternalModel::fail_dead(const std::string& why) {
    int status = 0;
    std::string detail = why;
    if (pid_ > 0 && waitpid(static_cast<pid_t>(pid_), &status, WNOHANG) == pid_) {
        pid_ = -1;
        if (WIFEXITED(status))
            detail += " (child exited with status " + std::to_string(WEXITSTATUS(status)) + ")";
        else if (WIFSIGNALED(status))
            detail += " (child killed by signal " + std::to_string(WTERMSIG(status)) + ")";
    }
    shutdown();
    throw ModelError("external model: " + detail);
}

void ExternalModel::send_request(std::uint8_t opcode, const int* target_class,
                                 const VideoTensor& v) {
    std::ostringstream buf(std::ios::binary);
    buf.put(static_cast<char>(opcode));
    if (target_class) {
        const std::uint32_t c = static_cast<std::uint32_t>(*target_class);
        char b[4] = {static_cast<char>(c & 0xff), static_cast<char>((c >> 8) & 0xff),
                     static_cast<char>((c >> 16) & 0xff), static_cast<char>((c >> 24) & 0xff)};
        buf.write(b, 4);
    }
    write_tensor(buf, to_tensor_file(v));
    const std::string payload = buf.str();

    std::size_t sent = 0;
    while (sent < payload.size()) {
        const ssize_t n = write(to_child_, payload.data() + sent, payload.size() - sent);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail_dead("write to child failed");
        }
        sent += static_cast<std::size_t>(n);
    }
}

TensorFile ExternalModel::read_response() {
    auto read_exact = [&](unsigned char* out, std::size_t n) {
        std::size_t got = 0;
        while (got < n) {
            struct pollfd pfd{from_child_, POLLIN, 0};
            const int pr = poll(&pfd, 1, timeout_ms_);
            if (pr == 0) fail_dead("timed out waiting for response");
            if (pr < 0) {
                if (errno == EINTR) continue;
                fail_dead("poll failed");
            }
            const ssize_t r = read(from_child_, out + got, n - got);
            if (r == 0) fail_dead("child closed the pipe mid-response");
            if (r < 0) {
                if (errno == EINTR) continue;
                fail_dead("read from child failed");
            }
            got += static_cast<std::size_t>(r);
        }
    };

    unsigned char status = 0;
    read_exact(&status, 1);
    if (status != 0)
        throw ModelError("external model reported status " + std::to_string(status));

    unsigned char header[kTensorHeaderSize];
    read_exact(header, sizeof(header));
    if (std::memcmp(header, "AOST", 4) != 0)
        throw ProtocolError("external model: bad tensor magic in response");
    const int rank = header[5];
    if (rank < 1 || rank > kTensorMaxRank)
        throw ProtocolError("external model: bad tensor rank in response");
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        const std::uint32_t d = get_u32_le(header + 8 + 4 * i);
        if (d == 0) throw ProtocolError("external model: zero dim in response");
        n *= d;
    }
    if (n > (std::uint64_t{1} << 34))
        throw ProtocolError("external model: response tensor too large");
    std::vector<unsigned char> payload(n * sizeof(float));
    read_exact(payload.data(), payload.size());

    std::string full(reinterpret_cast<const char*>(header), sizeof(header));
    full.append(reinterpret_cast<const char*>(payload.data()), payload.size());
    std::istringstream in(full, std::ios::binary);
    try {
        return read_tensor(in);
    } catch (const FormatError& e) {
        throw ProtocolError(std::string("external model: malformed response tensor: ") +
                            e.what());
    }
}

std::vector<double> ExternalModel::score_impl(const VideoTensor& v) {
    std::lock_guard<std::mutex> lock(io_mutex_);
    if (pid_ <= 0) throw ModelError("external model: child process is gone");
    send_request(0x01, nullptr, v);
    const TensorFile t = read_response();
    if (t.rank != 1) throw ProtocolError("external model: forward response must be rank 1");
    classes_ = static_cast<int>(t.dims[0]);
    return std::vector<double>(t.data.begin(), t.data.end());
}

GradTensor ExternalModel::gradient_impl(const VideoTensor& v, int target_class) {
    std::lock_guard<std::mutex> lock(io_mutex_);
    if (pid_ <= 0) throw ModelError("external model: child process is gone");
    send_request(0x02, &target_class, v);
    const TensorFile t = read_response();
    if (t.rank != 4) throw ProtocolError("external model: gradient response must be rank 4");
    if (static_cast<int>(t.dims[0]) != v.T || static_cast<int>(t.dims[1]) != v.H ||
        static_cast<int>(t.dims[2]) != v.W || static_cast<int>(t.dims[3]) != v.C)
        throw ProtocolError("external model: gradient dims do not match input");
    GradTensor g(v.T, v.H, v.W, v.C);
    for (std::size_t i = 0; i < t.data.size(); ++i) g.data[i] = t.data[i];
    return g;
}

}  // namespace aosa
