#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "nlohmann/json.hpp"

#include "hpipe/hierarchy.hpp"

namespace hpipe {

/// Pass as the frame count to optimize/evaluate at the steady-state limit.
constexpr double kSteadyState = std::numeric_limits<double>::infinity();

/// Assignment of every stage to one of `device_count` interchangeable
/// devices. Canonical form labels groups by first appearance in stage-id
/// order (stage 0 is always on device 0), which makes partitions that differ
/// only by device relabeling compare equal.
struct Partition {
    std::vector<int> assignment;  // indexed by StageId
    int device_count = 1;

    int device_of(StageId id) const { return assignment.at(static_cast<size_t>(id)); }
};

/// Relabels devices by order of first appearance. Empty device indices
/// disappear; device_count is preserved.
Partition canonicalized(const Partition& p);
bool is_canonical(const Partition& p);

struct PartitionEval {
    std::vector<double> device_loads;               // a_j, expected seconds per frame
    double max_load = 0.0;                          // max(a_j)
    double comm_cost = 0.0;                         // b, expected seconds per frame
    std::vector<std::pair<StageId, StageId>> cut_edges;  // (parent, child), sorted
    double throughput_fps = 0.0;                    // at the eval's frame count
    double imbalance = 1.0;                         // max load / min nonzero load
    int devices_used = 0;                           // devices holding at least one stage
    double frame_count = 0.0;                       // F used for throughput (may be inf)
};

/// Expected per-device load, cut-edge communication cost, and estimated
/// pipeline throughput for `frames` frames:
///
///   T = F / ((F + N - 1) * max(a_j) + F * b)
///
/// with N the number of devices actually holding stages. `frames` may be
/// kSteadyState, in which case T = 1 / (max(a_j) + b).
PartitionEval evaluate_partition(const Hierarchy& h, const UsageRates& rates,
                                 const Partition& partition, double frames);

/// max(a_j) / min(a_j) over devices with nonzero load. Throws DomainError
/// when every device load is zero.
double workload_imbalance(const PartitionEval& eval);

/// Streams every set partition of the stages into at most `max_devices`
/// unlabeled groups, exactly once, in lexicographic order of the canonical
/// assignment vector. Total count is sum over k<=N of Stirling2(n, k).
class PartitionEnumerator {
  public:
    PartitionEnumerator(int stage_count, int max_devices);
    std::optional<Partition> next();

  private:
    int n_;
    int max_devices_;
    bool done_ = false;
    bool first_ = true;
    std::vector<int> assignment_;  // restricted growth string
    std::vector<int> prefix_max_;
};

/// Saturating sum over k<=max_devices of Stirling2(n, k); values above
/// 10^18 clamp so budget comparisons stay well-defined.
uint64_t stirling_partition_count(int stage_count, int max_devices);

struct SearchOptions {
    double frames = 1000.0;          // F for the throughput objective
    uint64_t budget = 10'000'000;    // max partitions an exhaustive search may evaluate
    bool heuristic_fallback = true;  // over budget: fall back (true) or throw SearchIncomplete
};

struct SearchResult {
    Partition partition;
    PartitionEval eval;
    bool exhaustive = true;  // false when the heuristic produced the result
    uint64_t evaluated = 0;
};

/// Exhaustive branch-and-bound over canonical partitions, maximizing the
/// estimated throughput. Ties break toward smaller comm cost, then the
/// lexicographically smallest canonical assignment. Instances whose
/// enumeration exceeds options.budget fall back to heuristic_partition (with
/// a stderr warning) or throw SearchIncomplete when fallback is disabled.
SearchResult select_best(const Hierarchy& h, const UsageRates& rates, int devices,
                         const SearchOptions& options = {});

/// Deterministic greedy seed (largest expected load first) plus local search
/// over single-stage moves and pairwise swaps until no move improves the
/// objective. Returns a local optimum.
SearchResult heuristic_partition(const Hierarchy& h, const UsageRates& rates, int devices,
                                 double frames = 1000.0);

/// { "devices": [[stage ids]...], "eval": {...} } per the partition output schema.
nlohmann::json partition_to_json(const Partition& partition, const PartitionEval& eval);
Partition partition_from_json(const nlohmann::json& doc, int stage_count);

}  // namespace hpipe
