#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

#include "hpipe/hierarchy.hpp"
#include "hpipe/kernel.hpp"
#include "hpipe/net.hpp"
#include "hpipe/partition.hpp"
#include "hpipe/sim.hpp"

namespace hpipe {

/// Everything a worker needs to participate in a run: the hierarchy (with
/// per-stage kernel targets), the partition, one endpoint per device, the
/// coordinator's result endpoint, and payload sizing for the synthetic
/// activations.
struct DeploymentPlan {
    Hierarchy hierarchy;
    Partition partition;
    std::vector<std::string> endpoints;  // indexed by device
    std::string coordinator_endpoint;
    KernelKind kernel_kind = KernelKind::spin_calibrated;
    bool faithful = true;  // outbound transfer blocks the next kernel
    uint32_t input_bytes = 3072;
    uint32_t default_payload_bytes = 3072;
    std::map<StageId, uint32_t> payload_bytes;

    static DeploymentPlan from_json(const nlohmann::json& doc);
    static DeploymentPlan load(const std::string& path);
    nlohmann::json to_json() const;

    int device_of(StageId s) const { return partition.device_of(s); }
    uint32_t payload_of(StageId s) const;
    /// Consistency checks (endpoint per device, partition covers hierarchy).
    void verify() const;
};

struct WorkerOptions {
    net::RetryPolicy retry;   // connection establishment and reconnect
    bool quiet = false;
};

/// Runs one device's event loop until SHUTDOWN: executes local stage kernels
/// for each incoming frame, forwards cut-edge frames to the owning peer,
/// reports leaf completions to the coordinator, and answers profile pings.
/// The listener is taken pre-bound so callers can use ephemeral ports.
void run_worker(net::TcpListener listener, const DeploymentPlan& plan, int device_index,
                const WorkerOptions& options = {});

struct CoordinatorOptions {
    double result_timeout_s = 30.0;  // abort after this long with no RESULT progress
    int inflight_window = 0;         // 0 -> 2 * device count
    net::RetryPolicy retry;
    bool quiet = false;
};

struct RunReport {
    bool complete = false;
    uint64_t frames_completed = 0;
    uint64_t frames_injected = 0;
    double total_time_s = 0.0;  // last RESULT - first injection
    double throughput_fps = 0.0;
    std::vector<double> frame_latency_s;
    double latency_mean_s = 0.0;
    double latency_p50_s = 0.0;
    double latency_p99_s = 0.0;
    std::vector<double> device_busy_s;
    std::vector<double> device_utilization;
    std::vector<StageId> frame_leaf;
    std::map<StageId, double> measured_stage_latency_s;  // median per stage
    std::map<StageId, double> measured_edge_transfer_s;  // median per cut edge (keyed by child)
    std::map<int, nlohmann::json> worker_metrics;
    double wall_clock_s = 0.0;

    nlohmann::json to_json(bool include_per_frame = true) const;
};

/// Injects frames at the root's device (leaf routing sampled exactly like the
/// simulator), collects RESULTs, then shuts the workers down and gathers
/// their metrics. The in-flight window bounds injected-but-unfinished frames.
RunReport run_coordinator(const DeploymentPlan& plan, const Hierarchy& hierarchy,
                          const WorkloadSpec& spec, const CoordinatorOptions& options = {});
RunReport run_coordinator(net::TcpListener listener, const DeploymentPlan& plan,
                          const Hierarchy& hierarchy, const WorkloadSpec& spec,
                          const CoordinatorOptions& options = {});

/// Median one-way transfer estimate (RTT/2) for `payload_bytes` over
/// `repetitions` ping/pong round trips. With an empty `via_endpoint` the
/// calling process probes `target_endpoint` directly; otherwise the worker at
/// `via_endpoint` runs the probe against the target and reports the median.
double profile_link(const std::string& via_endpoint, const std::string& target_endpoint,
                    uint32_t payload_bytes, int repetitions);

}  // namespace hpipe
