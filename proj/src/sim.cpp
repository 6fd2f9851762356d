#include "hpipe/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <queue>

#include "hpipe/error.hpp"
#include "hpipe/rng.hpp"

namespace hpipe {

using nlohmann::json;

SimMode sim_mode_from_string(const std::string& s) {
    if (s == "faithful" || s == "model-faithful") return SimMode::model_faithful;
    if (s == "overlapped") return SimMode::overlapped;
    throw ConfigError("unknown simulation mode \"" + s + "\" (expected faithful|overlapped)");
}

std::string to_string(SimMode mode) {
    return mode == SimMode::model_faithful ? "model-faithful" : "overlapped";
}

namespace {

// Event kinds, ranked for the deterministic tie-break (time, kind, frame, stage):
// in-flight arrivals land before fresh injections, and a device only scans its
// queue after every same-instant enqueue has happened.
enum EvKind : int { kArrive = 0, kInject = 1, kDevFree = 2 };

struct Event {
    double time;
    int kind;
    uint64_t frame;
    StageId stage;
    int device;  // kDevFree only

    bool operator>(const Event& o) const {
        return std::tie(time, kind, frame, stage) > std::tie(o.time, o.kind, o.frame, o.stage);
    }
};

struct QueuedJob {
    uint64_t frame;
    StageId stage;
};

struct DeviceState {
    bool busy = false;
    std::deque<QueuedJob> fifo;
    double busy_s = 0.0;
};

double percentile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return 0.0;
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<size_t>(std::ceil(q * n));
    if (rank == 0) rank = 1;
    if (rank > sorted.size()) rank = sorted.size();
    return sorted[rank - 1];
}

}  // namespace

SimReport simulate(const Hierarchy& h, const Partition& partition, const WorkloadSpec& spec,
                   SimMode mode, std::vector<TraceEvent>* trace) {
    require_valid(h);
    if (static_cast<int>(partition.assignment.size()) != h.size()) {
        throw DomainError("partition does not cover every stage");
    }
    for (int d : partition.assignment) {
        if (d < 0 || d >= partition.device_count) {
            throw DomainError("partition assigns a stage to a device outside the partition");
        }
    }
    if (spec.frame_count == 0) {
        throw DomainError("frame count must be >= 1");
    }

    const uint64_t F = spec.frame_count;
    const LeafSampler sampler(h);
    const auto paths = root_leaf_paths(h);
    std::map<StageId, std::vector<StageId>> path_by_leaf;
    for (const auto& p : paths) path_by_leaf[p.back()] = p;

    // next stage on the path to `leaf` after `stage`; -1 when stage is the leaf
    std::vector<StageId> parents = parent_map(h);
    auto next_on_path = [&](StageId stage, StageId leaf) -> StageId {
        const auto& path = path_by_leaf.at(leaf);
        for (size_t i = 0; i + 1 < path.size(); ++i) {
            if (path[i] == stage) return path[i + 1];
        }
        return -1;
    };

    std::vector<DeviceState> devices(static_cast<size_t>(partition.device_count));
    std::map<std::pair<int, int>, double> link_free_at;  // overlapped mode

    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events;

    SimReport report;
    report.frame_latency_s.assign(F, 0.0);
    report.frame_leaf.assign(F, -1);
    std::vector<double> inject_time(F, 0.0);
    uint64_t completed = 0;
    double last_completion = 0.0;

    auto emit = [&](double t, const char* kind, uint64_t frame, StageId stage, int device) {
        if (trace) trace->push_back({t, kind, frame, stage, device});
    };

    for (uint64_t f = 0; f < F; ++f) {
        report.frame_leaf[f] = sampler.leaf_for_frame(spec.seed, f);
    }

    // Executes the maximal run of consecutive same-device stages starting at
    // (frame, stage), then either hands the frame to the next device or
    // completes it. Returns the time at which the device becomes free.
    auto run_on_device = [&](double t0, uint64_t frame, StageId stage) -> double {
        const int dev = partition.device_of(stage);
        DeviceState& ds = devices[static_cast<size_t>(dev)];
        double t = t0;
        StageId s = stage;
        const StageId leaf = report.frame_leaf[frame];
        while (true) {
            emit(t, "exec_start", frame, s, dev);
            t += h.stage(s).latency_s;
            ds.busy_s += h.stage(s).latency_s;
            emit(t, "exec_end", frame, s, dev);
            if (s == path_by_leaf.at(leaf).front() && frame + 1 < F &&
                spec.arrival.kind == ArrivalPolicy::Kind::back_to_back) {
                // saturated source: release the next frame once the root
                // stage of this one has executed
                events.push({t, kInject, frame + 1, 0, 0});
            }
            if (s == leaf) {
                report.frame_latency_s[frame] = t - inject_time[frame];
                ++completed;
                last_completion = std::max(last_completion, t);
                emit(t, "complete", frame, s, dev);
                return t;
            }
            const StageId next = next_on_path(s, leaf);
            const int next_dev = partition.device_of(next);
            if (next_dev == dev) {
                s = next;
                continue;
            }
            const double transfer = h.stage(next).transfer_s;
            if (mode == SimMode::model_faithful) {
                emit(t, "xfer_start", frame, next, dev);
                ds.busy_s += transfer;
                t += transfer;
                emit(t, "xfer_end", frame, next, dev);
                events.push({t, kArrive, frame, next, 0});
                return t;
            }
            // overlapped: the ordered link is its own FIFO resource
            double& free_at = link_free_at[{dev, next_dev}];
            const double start = std::max(t, free_at);
            emit(start, "xfer_start", frame, next, dev);
            free_at = start + transfer;
            emit(free_at, "xfer_end", frame, next, dev);
            events.push({free_at, kArrive, frame, next, 0});
            return t;
        }
    };

    auto offer = [&](double t, uint64_t frame, StageId stage) {
        const int dev = partition.device_of(stage);
        DeviceState& ds = devices[static_cast<size_t>(dev)];
        if (ds.busy) {
            ds.fifo.push_back({frame, stage});
            return;
        }
        ds.busy = true;
        const double free_t = run_on_device(t, frame, stage);
        events.push({free_t, kDevFree, 0, 0, dev});
    };

    // Prime the arrival process.
    if (spec.arrival.kind == ArrivalPolicy::Kind::back_to_back) {
        events.push({0.0, kInject, 0, 0, 0});
    } else {
        for (uint64_t f = 0; f < F; ++f) {
            events.push({static_cast<double>(f) * spec.arrival.interval_s, kInject, f, 0, 0});
        }
    }

    const StageId root = 0;
    while (!events.empty()) {
        const Event ev = events.top();
        events.pop();
        switch (ev.kind) {
            case kInject: {
                inject_time[ev.frame] = ev.time;
                emit(ev.time, "inject", ev.frame, root, partition.device_of(root));
                offer(ev.time, ev.frame, root);
                break;
            }
            case kArrive: {
                offer(ev.time, ev.frame, ev.stage);
                break;
            }
            case kDevFree: {
                DeviceState& ds = devices[static_cast<size_t>(ev.device)];
                if (ds.fifo.empty()) {
                    ds.busy = false;
                    break;
                }
                const QueuedJob job = ds.fifo.front();
                ds.fifo.pop_front();
                const double free_t = run_on_device(ev.time, job.frame, job.stage);
                events.push({free_t, kDevFree, 0, 0, ev.device});
                break;
            }
        }
    }

    if (completed != F) {
        throw DomainError("simulation lost frames: completed " + std::to_string(completed) +
                          " of " + std::to_string(F));
    }

    report.frames_completed = completed;
    report.total_time_s = last_completion;
    report.throughput_fps = static_cast<double>(F) / last_completion;
    double sum = 0.0;
    for (double l : report.frame_latency_s) sum += l;
    report.latency_mean_s = sum / static_cast<double>(F);
    std::vector<double> sorted = report.frame_latency_s;
    std::sort(sorted.begin(), sorted.end());
    report.latency_p50_s = percentile(sorted, 0.50);
    report.latency_p99_s = percentile(sorted, 0.99);
    for (const auto& ds : devices) {
        report.device_busy_s.push_back(ds.busy_s);
        report.device_utilization.push_back(last_completion > 0.0 ? ds.busy_s / last_completion
                                                                  : 0.0);
    }
    return report;
}

json SimReport::to_json(bool include_per_frame) const {
    json doc{{"frames_completed", frames_completed},
             {"total_time_s", total_time_s},
             {"throughput_fps", throughput_fps},
             {"latency_s",
              {{"mean", latency_mean_s}, {"p50", latency_p50_s}, {"p99", latency_p99_s}}},
             {"device_busy_s", device_busy_s},
             {"device_utilization", device_utilization}};
    if (include_per_frame) {
        doc["per_frame_latency_s"] = frame_latency_s;
        doc["frame_leaf"] = frame_leaf;
    }
    return doc;
}

DeviationReport compare_to_model(const SimReport& report, const ModelParams& params) {
    DeviationReport out;
    const double model_fps = estimate_throughput(params);
    out.throughput_rel_err = (report.throughput_fps - model_fps) / model_fps;
    const double model_time = processing_time(params);
    out.total_time_rel_err = (report.total_time_s - model_time) / model_time;
    return out;
}

}  // namespace hpipe
