#include "hpipe/kernel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hpipe/error.hpp"

namespace hpipe {

KernelKind kernel_kind_from_string(const std::string& s) {
    if (s == "spin" || s == "spin-calibrated") return KernelKind::spin_calibrated;
    if (s == "matmul") return KernelKind::matmul;
    throw ConfigError("unknown kernel kind \"" + s + "\" (expected spin|matmul)");
}

std::string to_string(KernelKind kind) {
    return kind == KernelKind::spin_calibrated ? "spin-calibrated" : "matmul";
}

namespace {

volatile double g_sink = 0.0;

// ~64 dependent flops; small enough that work_units resolves latencies well
// below the calibration tolerance.
double spin_chunk(double v) {
    for (int i = 0; i < 64; ++i) {
        v = v * 1.0000001 + 1e-9;
    }
    return v;
}

void run_spin(uint64_t chunks) {
    double acc = 1.0;
    for (uint64_t i = 0; i < chunks; ++i) {
        acc = spin_chunk(acc);
    }
    g_sink = acc;
}

void run_matmul(uint64_t n) {
    const size_t dim = static_cast<size_t>(n);
    std::vector<double> a(dim * dim), b(dim * dim), c(dim * dim, 0.0);
    for (size_t i = 0; i < dim * dim; ++i) {
        a[i] = 1.0 + static_cast<double>(i % 7) * 0.01;
        b[i] = 1.0 - static_cast<double>(i % 5) * 0.01;
    }
    for (size_t i = 0; i < dim; ++i) {
        for (size_t k = 0; k < dim; ++k) {
            const double aik = a[i * dim + k];
            for (size_t j = 0; j < dim; ++j) {
                c[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    g_sink = c[dim * dim / 2];
}

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double time_execution(const StageKernel& kernel) {
    const double t0 = now_s();
    kernel.execute();
    return now_s() - t0;
}

}  // namespace

void StageKernel::execute() const {
    if (kind == KernelKind::spin_calibrated) {
        run_spin(work_units);
    } else {
        run_matmul(work_units);
    }
}

KernelCalibrator::KernelCalibrator(KernelKind kind) : kind_(kind) {
    // Unit cost from a probe big enough to dominate timer noise.
    if (kind_ == KernelKind::spin_calibrated) {
        const uint64_t probe = 1 << 16;
        StageKernel k{kind_, 0.0, 0, probe};
        k.execute();  // warm up
        double best = 1e9;
        for (int i = 0; i < 3; ++i) {
            best = std::min(best, time_execution(k));
        }
        unit_cost_s_ = best / static_cast<double>(probe);
    } else {
        const uint64_t probe = 96;
        StageKernel k{kind_, 0.0, 0, probe};
        k.execute();
        double best = 1e9;
        for (int i = 0; i < 3; ++i) {
            best = std::min(best, time_execution(k));
        }
        // cost per multiply-accumulate, n^3 of them
        unit_cost_s_ = best / static_cast<double>(probe * probe * probe);
    }
}

StageKernel KernelCalibrator::calibrate(double target_latency_s, uint32_t payload_out) const {
    if (target_latency_s <= 0.0) {
        throw DomainError("kernel target latency must be positive");
    }
    StageKernel kernel;
    kernel.kind = kind_;
    kernel.target_latency_s = target_latency_s;
    kernel.payload_out = payload_out;

    if (kind_ == KernelKind::spin_calibrated) {
        kernel.work_units = std::max<uint64_t>(
            1, static_cast<uint64_t>(target_latency_s / unit_cost_s_));
    } else {
        kernel.work_units = std::max<uint64_t>(
            2, static_cast<uint64_t>(std::cbrt(target_latency_s / unit_cost_s_)));
    }

    // Multiplicative refinement on the measured median; converges in a couple
    // of rounds unless the host is heavily loaded.
    for (int round = 0; round < 8; ++round) {
        std::vector<double> probes;
        for (int i = 0; i < 3; ++i) {
            probes.push_back(time_execution(kernel));
        }
        const double measured = median_of(std::move(probes));
        const double err = (measured - target_latency_s) / target_latency_s;
        if (std::abs(err) <= kCalibrationTolerance * 0.6) {
            break;
        }
        const double ratio = target_latency_s / measured;
        if (kind_ == KernelKind::spin_calibrated) {
            kernel.work_units = std::max<uint64_t>(
                1, static_cast<uint64_t>(static_cast<double>(kernel.work_units) * ratio));
        } else {
            kernel.work_units = std::max<uint64_t>(
                2, static_cast<uint64_t>(static_cast<double>(kernel.work_units) * std::cbrt(ratio)));
        }
    }
    return kernel;
}

double profile_stage(const StageKernel& kernel, int repetitions) {
    if (repetitions < 3) {
        throw DomainError("profile_stage needs at least 3 repetitions");
    }
    kernel.execute();  // warm-up excluded from the sample
    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(repetitions));
    for (int i = 0; i < repetitions; ++i) {
        samples.push_back(time_execution(kernel));
    }
    return median_of(std::move(samples));
}

double median_of(std::vector<double> values) {
    if (values.empty()) {
        throw DomainError("median of empty sample");
    }
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n % 2 == 1) {
        return values[n / 2];
    }
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace hpipe
