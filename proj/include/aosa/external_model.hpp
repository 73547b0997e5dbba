#pragma once

#include <mutex>
#include <string>
#include <vector>

#include "aosa/model.hpp"

namespace aosa {

// ScoreModel backed by a child process speaking the binary wire protocol on
// its stdin/stdout:
//   request  = opcode u8 (0x01 forward, 0x02 gradient)
//            | class id u32 LE (gradient only)
//            | input tensor in the tensor file format
//   response = status u8 (0 = ok)
//            | rank-1 score tensor (forward) or rank-4 gradient tensor
// One request is in flight at a time. Scores pass through untouched; the
// child owns their semantics (probabilities vs logits).
class ExternalModel : public ScoreModel {
public:
    explicit ExternalModel(std::vector<std::string> argv, int timeout_ms = 10000);
    ~ExternalModel() override;
    ExternalModel(const ExternalModel&) = delete;
    ExternalModel& operator=(const ExternalModel&) = delete;

    // Class count is learned from the first forward response; 0 until then.
    int num_classes() const override { return classes_; }
    Dims4 expected_dims() const override { return Dims4{}; }

protected:
    std::vector<double> score_impl(const VideoTensor& v) override;
    GradTensor gradient_impl(const VideoTensor& v, int target_class) override;

private:
    long pid_ = -1;
    int to_child_ = -1;    // child's stdin
    int from_child_ = -1;  // child's stdout
    int timeout_ms_;
    int classes_ = 0;
    std::mutex io_mutex_;

    void send_request(std::uint8_t opcode, const int* target_class, const VideoTensor& v);
    TensorFile read_response();
    void shutdown() noexcept;
    [[noreturn]] void fail_dead(const std::string& why);
};

}  // namespace aosa
