#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

#include "hpipe/hierarchy.hpp"
#include "hpipe/partition.hpp"
#include "hpipe/throughput.hpp"

namespace hpipe {

/// How frames enter the pipeline. Back-to-back models a saturated video
/// source: the next frame is available the moment the root stage of the
/// previous one has been executed. Fixed-interval releases frame k at
/// k * interval_s regardless of pipeline state.
struct ArrivalPolicy {
    enum class Kind { back_to_back, fixed_interval };
    Kind kind = Kind::back_to_back;
    double interval_s = 0.0;

    static ArrivalPolicy back_to_back() { return {}; }
    static ArrivalPolicy every(double interval_s) {
        return {Kind::fixed_interval, interval_s};
    }
};

struct WorkloadSpec {
    uint64_t frame_count = 1;
    ArrivalPolicy arrival;
    uint64_t seed = 0;
};

enum class SimMode { model_faithful, overlapped };

SimMode sim_mode_from_string(const std::string& s);
std::string to_string(SimMode mode);

struct TraceEvent {
    double time_s;
    std::string kind;  // inject | exec_start | exec_end | xfer_start | xfer_end | complete
    uint64_t frame;
    StageId stage;
    int device;
};

struct SimReport {
    uint64_t frames_completed = 0;
    double total_time_s = 0.0;
    double throughput_fps = 0.0;
    std::vector<double> frame_latency_s;  // indexed by frame id
    double latency_mean_s = 0.0;
    double latency_p50_s = 0.0;
    double latency_p99_s = 0.0;
    std::vector<double> device_busy_s;
    std::vector<double> device_utilization;
    std::vector<StageId> frame_leaf;  // routed leaf per frame

    nlohmann::json to_json(bool include_per_frame = true) const;
};

/// Deterministic discrete-event simulation of the partitioned pipeline.
/// Devices are unit-capacity FIFO resources; a frame follows the root-leaf
/// path sampled for it (LeafSampler keyed by spec.seed). Consecutive stages
/// on one device run as a single occupancy. In model_faithful mode an
/// outbound transfer over a cut edge keeps the sending device busy for the
/// transfer time; in overlapped mode it occupies only the ordered
/// device-pair link and the sender is immediately free.
SimReport simulate(const Hierarchy& h, const Partition& partition, const WorkloadSpec& spec,
                   SimMode mode, std::vector<TraceEvent>* trace = nullptr);

struct DeviationReport {
    double throughput_rel_err = 0.0;  // (sim - model) / model
    double total_time_rel_err = 0.0;
};

/// Relative deviation of the measured report from the model estimate for the
/// same scenario. Requires finite params.frames.
DeviationReport compare_to_model(const SimReport& report, const ModelParams& params);

}  // namespace hpipe
