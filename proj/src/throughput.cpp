#include "hpipe/throughput.hpp"

#include <cmath>

#include "hpipe/error.hpp"

namespace hpipe {

namespace {

void check_common(double frames, int devices, double bottleneck_s, double transfer_s) {
    if (!std::isinf(frames) && frames < 1.0) {
        throw DomainError("frame count must be >= 1");
    }
    if (devices < 1) {
        throw DomainError("device count must be >= 1");
    }
    if (bottleneck_s < 0.0 || transfer_s < 0.0) {
        throw DomainError("time quantities must be nonnegative");
    }
}

}  // namespace

ModelParams ModelParams::from_products(double frames, int devices, double bottleneck_s,
                                       double transfer_s, int max_depth) {
    check_common(frames, devices, bottleneck_s, transfer_s);
    if (max_depth < 1) {
        throw DomainError("hierarchy depth must be >= 1");
    }
    ModelParams p;
    p.frames = frames;
    p.devices = devices;
    p.bottleneck_s = bottleneck_s;
    p.transfer_s = transfer_s;
    p.max_depth = max_depth;
    return p;
}

ModelParams ModelParams::from_factors(double frames, int devices, double lambda_s, double tau_s,
                                      int max_depth, double cuts_h, double sequential_m) {
    check_common(frames, devices, lambda_s, tau_s);
    if (max_depth < 1) {
        throw DomainError("hierarchy depth must be >= 1");
    }
    if (sequential_m < 1.0) {
        throw DomainError("sequential stages per device (M) must be >= 1");
    }
    if (cuts_h < 0.0 || cuts_h > static_cast<double>(max_depth - 1)) {
        throw DomainError("avg edge cuts (H) must lie in [0, depth-1]");
    }
    ModelParams p = from_products(frames, devices, sequential_m * lambda_s, cuts_h * tau_s, max_depth);
    p.avg_stage_latency_s = lambda_s;
    p.avg_transfer_s = tau_s;
    p.sequential_stages = sequential_m;
    p.avg_cuts = cuts_h;
    return p;
}

double processing_time(const ModelParams& params) {
    if (std::isinf(params.frames)) {
        throw DomainError("processing time undefined at the steady-state limit; "
                          "use steady_state_throughput");
    }
    return (params.frames + static_cast<double>(params.devices - 1)) * params.bottleneck_s +
           params.frames * params.transfer_s;
}

double estimate_throughput(const ModelParams& params) {
    if (std::isinf(params.frames)) {
        return steady_state_throughput(params);
    }
    const double total = processing_time(params);
    if (total <= 0.0) {
        throw DomainError("throughput undefined: zero processing and communication time");
    }
    return params.frames / total;
}

double steady_state_throughput(const ModelParams& params) {
    const double denom = params.bottleneck_s + params.transfer_s;
    if (denom <= 0.0) {
        throw DomainError("steady-state throughput undefined: zero per-frame time");
    }
    return 1.0 / denom;
}

ModelParams params_from_partition(const Hierarchy& h, const UsageRates& rates,
                                  const PartitionEval& eval, double frames, int devices) {
    ModelParams p = ModelParams::from_products(frames, devices, eval.max_load, eval.comm_cost,
                                               depth(h));
    // The products are normative; the factors behind them are informational.
    // H is the expected number of cut edges a frame crosses, so tau = b / H
    // keeps H * tau == b exactly.
    if (eval.devices_used > 0) {
        const double m = static_cast<double>(h.size()) / static_cast<double>(eval.devices_used);
        p.sequential_stages = m;
        p.avg_stage_latency_s = eval.max_load / m;
    }
    double cuts = 0.0;
    for (const auto& [parent, child] : eval.cut_edges) {
        (void)parent;
        cuts += rates.of(child);
    }
    p.avg_cuts = cuts;
    if (cuts > 0.0) {
        p.avg_transfer_s = eval.comm_cost / cuts;
    }
    return p;
}

double speedup(double parallel_fps, double single_fps) {
    if (single_fps <= 0.0) {
        throw DomainError("speedup undefined for nonpositive single-device throughput");
    }
    return parallel_fps / single_fps;
}

}  // namespace hpipe
