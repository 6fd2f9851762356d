#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hpipe {

enum class KernelKind { spin_calibrated, matmul };

KernelKind kernel_kind_from_string(const std::string& s);
std::string to_string(KernelKind kind);

/// A synthetic stand-in for one stage's compute: either a busy arithmetic
/// loop or a square matrix multiply, sized so one execute() takes
/// target_latency_s within ±5% under the conditions it was calibrated in.
struct StageKernel {
    KernelKind kind = KernelKind::spin_calibrated;
    double target_latency_s = 0.0;
    uint32_t payload_out = 0;  // activation bytes forwarded to a child
    uint64_t work_units = 0;   // spin chunks, or matrix dimension for matmul

    void execute() const;
};

constexpr double kCalibrationTolerance = 0.05;

/// Sizes kernels against the current host. Measures the unit cost once and
/// refines each kernel's work_units until a timed probe lands within
/// tolerance of the target.
class KernelCalibrator {
  public:
    explicit KernelCalibrator(KernelKind kind);

    StageKernel calibrate(double target_latency_s, uint32_t payload_out) const;

  private:
    KernelKind kind_;
    double unit_cost_s_ = 0.0;  // seconds per spin chunk / per matmul macc
};

/// Median wall-clock duration of `repetitions` executions, excluding one
/// warm-up run. repetitions must be >= 3.
double profile_stage(const StageKernel& kernel, int repetitions);

/// Median of a sample; the caller keeps ownership of the vector.
double median_of(std::vector<double> values);

}  // namespace hpipe
