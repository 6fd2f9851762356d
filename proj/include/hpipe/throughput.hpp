#pragma once

#include <optional>

#include "hpipe/hierarchy.hpp"
#include "hpipe/partition.hpp"

namespace hpipe {

/// Closed-form pipeline timing parameters. The products `bottleneck_s`
/// (avg stages-per-device work, M*lambda) and `transfer_s` (avg per-frame
/// cut communication, H*tau) are the authoritative fields; the individual
/// factors are carried alongside when they came from measurement or
/// configuration so reports can surface them.
struct ModelParams {
    double frames = 1.0;       // F, may be kSteadyState
    int devices = 1;           // N
    double bottleneck_s = 0.0; // M * lambda
    double transfer_s = 0.0;   // H * tau
    int max_depth = 1;         // K

    std::optional<double> avg_stage_latency_s;  // lambda
    std::optional<double> avg_transfer_s;       // tau
    std::optional<double> sequential_stages;    // M
    std::optional<double> avg_cuts;             // H

    static ModelParams from_products(double frames, int devices, double bottleneck_s,
                                     double transfer_s, int max_depth);
    static ModelParams from_factors(double frames, int devices, double lambda_s, double tau_s,
                                    int max_depth, double cuts_h, double sequential_m);
};

/// Total seconds to push F frames through the pipeline:
/// (F + N - 1) * bottleneck + F * transfer. Requires finite F.
double processing_time(const ModelParams& params);

/// F / processing_time; at F = kSteadyState returns the steady-state limit.
double estimate_throughput(const ModelParams& params);

/// 1 / (bottleneck + transfer), the F -> infinity limit.
double steady_state_throughput(const ModelParams& params);

/// Substitutes a partition evaluation into the model: bottleneck <- max(a_j),
/// transfer <- b, so estimate_throughput reproduces the partition's
/// throughput estimate exactly.
ModelParams params_from_partition(const Hierarchy& h, const UsageRates& rates,
                                  const PartitionEval& eval, double frames, int devices);

/// parallel / single throughput ratio.
double speedup(double parallel_fps, double single_fps);

}  // namespace hpipe
