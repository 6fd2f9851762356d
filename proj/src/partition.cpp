#include "hpipe/partition.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "hpipe/error.hpp"

namespace hpipe {

using nlohmann::json;

namespace {

constexpr uint64_t kCountCap = 1'000'000'000'000'000'000ULL;  // 10^18

// Objective denominator of the throughput estimate. Comparing denominators
// (smaller is better) is equivalent to comparing T for a fixed F, and stays
// meaningful at the steady-state limit where T = 1 / (max_load + b).
double pipeline_denominator(double frames, int devices_used, double max_load, double comm) {
    if (std::isinf(frames)) {
        return max_load + comm;
    }
    return (frames + static_cast<double>(devices_used - 1)) * max_load + frames * comm;
}

double throughput_from_denominator(double frames, double denominator) {
    if (denominator <= 0.0) {
        throw DomainError("throughput undefined: zero processing and communication time");
    }
    if (std::isinf(frames)) {
        return 1.0 / denominator;
    }
    return frames / denominator;
}

// Edge contributions in "decision order": edge (p, c) is charged when the
// larger stage id of the two is assigned. evaluate_partition and the
// branch-and-bound accumulate b with the same operation sequence so their
// doubles agree bit for bit.
struct EdgeAt {
    StageId other;   // already-assigned endpoint
    double cost;     // transfer_s(child) * rate(child)
    StageId parent;  // for cut-edge reporting
    StageId child;
};

struct EvalContext {
    int n = 0;
    std::vector<double> stage_load;           // L * R per stage
    std::vector<std::vector<EdgeAt>> edges_at;  // indexed by deciding stage

    EvalContext(const Hierarchy& h, const UsageRates& rates) {
        n = h.size();
        stage_load.resize(static_cast<size_t>(n));
        edges_at.resize(static_cast<size_t>(n));
        for (StageId s = 0; s < n; ++s) {
            stage_load[static_cast<size_t>(s)] = h.stage(s).latency_s * rates.of(s);
        }
        const auto parents = parent_map(h);
        for (StageId s = 0; s < n; ++s) {
            const StageId p = parents[static_cast<size_t>(s)];
            if (p >= 0) {
                const StageId deciding = std::max(p, s);
                const StageId other = std::min(p, s);
                edges_at[static_cast<size_t>(deciding)].push_back(
                    {other, h.stage(s).transfer_s * rates.of(s), p, s});
            }
        }
        // Within one deciding stage, charge edges in (parent, child) order.
        for (auto& v : edges_at) {
            std::sort(v.begin(), v.end(), [](const EdgeAt& a, const EdgeAt& b) {
                return std::tie(a.parent, a.child) < std::tie(b.parent, b.child);
            });
        }
    }
};

void check_partition_shape(const Hierarchy& h, const Partition& p) {
    if (p.device_count < 1) {
        throw DomainError("partition needs at least one device");
    }
    if (static_cast<int>(p.assignment.size()) != h.size()) {
        throw DomainError("partition assigns " + std::to_string(p.assignment.size()) +
                          " stages but hierarchy has " + std::to_string(h.size()));
    }
    for (StageId s = 0; s < h.size(); ++s) {
        const int d = p.assignment[static_cast<size_t>(s)];
        if (d < 0 || d >= p.device_count) {
            throw DomainError("stage " + std::to_string(s) + " assigned to device " +
                              std::to_string(d) + " outside 0.." + std::to_string(p.device_count - 1));
        }
    }
}

}  // namespace

Partition canonicalized(const Partition& p) {
    Partition out;
    out.device_count = p.device_count;
    out.assignment.assign(p.assignment.size(), -1);
    std::vector<int> relabel(static_cast<size_t>(p.device_count), -1);
    int next = 0;
    for (size_t s = 0; s < p.assignment.size(); ++s) {
        int& label = relabel[static_cast<size_t>(p.assignment[s])];
        if (label == -1) label = next++;
        out.assignment[s] = label;
    }
    return out;
}

bool is_canonical(const Partition& p) {
    int seen = 0;
    for (int d : p.assignment) {
        if (d > seen) return false;
        if (d == seen) ++seen;
    }
    return true;
}

PartitionEval evaluate_partition(const Hierarchy& h, const UsageRates& rates,
                                 const Partition& partition, double frames) {
    require_valid(h);
    check_partition_shape(h, partition);
    if (!std::isinf(frames) && frames < 1.0) {
        throw DomainError("frame count must be >= 1");
    }

    const EvalContext ctx(h, rates);
    PartitionEval eval;
    eval.frame_count = frames;
    eval.device_loads.assign(static_cast<size_t>(partition.device_count), 0.0);

    double comm = 0.0;
    for (StageId s = 0; s < ctx.n; ++s) {
        eval.device_loads[static_cast<size_t>(partition.device_of(s))] +=
            ctx.stage_load[static_cast<size_t>(s)];
        for (const EdgeAt& e : ctx.edges_at[static_cast<size_t>(s)]) {
            if (partition.device_of(e.other) != partition.device_of(s)) {
                comm += e.cost;
                eval.cut_edges.emplace_back(e.parent, e.child);
            }
        }
    }
    std::sort(eval.cut_edges.begin(), eval.cut_edges.end());
    eval.comm_cost = comm;

    std::vector<int> stages_on(static_cast<size_t>(partition.device_count), 0);
    for (int d : partition.assignment) ++stages_on[static_cast<size_t>(d)];
    eval.devices_used = static_cast<int>(std::count_if(stages_on.begin(), stages_on.end(),
                                                       [](int c) { return c > 0; }));

    eval.max_load = *std::max_element(eval.device_loads.begin(), eval.device_loads.end());
    eval.throughput_fps = throughput_from_denominator(
        frames, pipeline_denominator(frames, eval.devices_used, eval.max_load, comm));
    eval.imbalance = workload_imbalance(eval);
    return eval;
}

double workload_imbalance(const PartitionEval& eval) {
    double min_nonzero = 0.0;
    double max_load = 0.0;
    for (double a : eval.device_loads) {
        max_load = std::max(max_load, a);
        if (a > 0.0 && (min_nonzero == 0.0 || a < min_nonzero)) min_nonzero = a;
    }
    if (min_nonzero == 0.0) {
        throw DomainError("workload imbalance undefined: all device loads are zero");
    }
    return max_load / min_nonzero;
}

PartitionEnumerator::PartitionEnumerator(int stage_count, int max_devices)
    : n_(stage_count), max_devices_(max_devices) {
    if (n_ < 1 || max_devices_ < 1) {
        done_ = true;
        return;
    }
    assignment_.assign(static_cast<size_t>(n_), 0);
    prefix_max_.assign(static_cast<size_t>(n_), 0);
}

std::optional<Partition> PartitionEnumerator::next() {
    if (done_) return std::nullopt;
    if (first_) {
        first_ = false;
        return Partition{assignment_, max_devices_};
    }
    // Lexicographic successor of a restricted growth string capped at
    // max_devices groups: bump the rightmost position that can grow, zero the
    // tail.
    for (int i = n_ - 1; i >= 1; --i) {
        const int cap = std::min(prefix_max_[static_cast<size_t>(i - 1)] + 1, max_devices_ - 1);
        if (assignment_[static_cast<size_t>(i)] < cap) {
            ++assignment_[static_cast<size_t>(i)];
            for (int j = i + 1; j < n_; ++j) assignment_[static_cast<size_t>(j)] = 0;
            for (int j = i; j < n_; ++j) {
                prefix_max_[static_cast<size_t>(j)] =
                    std::max(prefix_max_[static_cast<size_t>(j - 1)], assignment_[static_cast<size_t>(j)]);
            }
            return Partition{assignment_, max_devices_};
        }
    }
    done_ = true;
    return std::nullopt;
}

uint64_t stirling_partition_count(int stage_count, int max_devices) {
    if (stage_count < 1 || max_devices < 1) return 0;
    const int k_max = std::min(stage_count, max_devices);
    // S(n, k) by the usual recurrence with saturation.
    std::vector<uint64_t> row(static_cast<size_t>(k_max) + 1, 0);
    row[static_cast<size_t>(std::min(1, k_max))] = stage_count >= 1 ? 1 : 0;
    std::vector<uint64_t> prev;
    for (int n = 2; n <= stage_count; ++n) {
        prev = row;
        for (int k = std::min(n, k_max); k >= 1; --k) {
            const uint64_t below = prev[static_cast<size_t>(k)];
            const uint64_t diag = prev[static_cast<size_t>(k - 1)];
            uint64_t v = below;
            if (v > kCountCap / static_cast<uint64_t>(k)) {
                v = kCountCap;
            } else {
                v *= static_cast<uint64_t>(k);
            }
            v = (v > kCountCap - diag) ? kCountCap : v + diag;
            row[static_cast<size_t>(k)] = v;
        }
    }
    uint64_t total = 0;
    for (int k = 1; k <= k_max; ++k) {
        const uint64_t v = row[static_cast<size_t>(k)];
        total = (total > kCountCap - v) ? kCountCap : total + v;
    }
    return total;
}

namespace {

struct BestState {
    bool found = false;
    double denominator = 0.0;
    double comm = 0.0;
    std::vector<int> assignment;
    int devices_used = 0;
};

struct SearchState {
    const EvalContext* ctx;
    double frames;
    int max_devices;
    std::vector<int> assignment;
    std::vector<double> loads;
    uint64_t evaluated = 0;
    BestState best;

    // Slack keeps the bound valid under floating-point accumulation; a bound
    // this close to the incumbent is explored rather than pruned so exact
    // ties survive for the deterministic tie-break.
    static constexpr double kPruneSlack = 1.0 + 1e-12;

    void dfs(int s, int groups, double comm) {
        const int n = ctx->n;
        if (s == n) {
            ++evaluated;
            double max_load = 0.0;
            for (int d = 0; d < groups; ++d) max_load = std::max(max_load, loads[static_cast<size_t>(d)]);
            const double denom = pipeline_denominator(frames, groups, max_load, comm);
            if (!best.found || denom < best.denominator ||
                (denom == best.denominator && comm < best.comm)) {
                best.found = true;
                best.denominator = denom;
                best.comm = comm;
                best.assignment = assignment;
                best.devices_used = groups;
            }
            return;
        }
        const double contrib = ctx->stage_load[static_cast<size_t>(s)];
        const int device_limit = std::min(groups, max_devices - 1);
        for (int d = 0; d <= device_limit; ++d) {
            const int next_groups = (d == groups) ? groups + 1 : groups;
            double next_comm = comm;
            for (const EdgeAt& e : ctx->edges_at[static_cast<size_t>(s)]) {
                if (assignment[static_cast<size_t>(e.other)] != d) next_comm += e.cost;
            }
            const double saved = loads[static_cast<size_t>(d)];
            loads[static_cast<size_t>(d)] = saved + contrib;

            if (best.found) {
                double partial_max = 0.0;
                for (int g = 0; g < next_groups; ++g) {
                    partial_max = std::max(partial_max, loads[static_cast<size_t>(g)]);
                }
                const double lower = pipeline_denominator(frames, next_groups, partial_max, next_comm);
                if (lower > best.denominator * kPruneSlack) {
                    loads[static_cast<size_t>(d)] = saved;
                    continue;
                }
            }
            assignment[static_cast<size_t>(s)] = d;
            dfs(s + 1, next_groups, next_comm);
            loads[static_cast<size_t>(d)] = saved;
        }
        assignment[static_cast<size_t>(s)] = 0;
    }
};

}  // namespace

SearchResult select_best(const Hierarchy& h, const UsageRates& rates, int devices,
                         const SearchOptions& options) {
    require_valid(h);
    if (devices < 1) {
        throw DomainError("device count must be >= 1");
    }
    const uint64_t count = stirling_partition_count(h.size(), devices);
    if (count > options.budget) {
        if (!options.heuristic_fallback) {
            throw SearchIncomplete("search incomplete: " + std::to_string(count) +
                                   " canonical partitions exceed budget " +
                                   std::to_string(options.budget));
        }
        std::cerr << "warning: " << count << " canonical partitions exceed budget "
                  << options.budget << "; falling back to heuristic search\n";
        return heuristic_partition(h, rates, devices, options.frames);
    }

    const EvalContext ctx(h, rates);
    SearchState state;
    state.ctx = &ctx;
    state.frames = options.frames;
    state.max_devices = devices;
    state.assignment.assign(static_cast<size_t>(h.size()), 0);
    state.loads.assign(static_cast<size_t>(devices), 0.0);
    state.dfs(0, 0, 0.0);

    SearchResult result;
    result.partition = Partition{state.best.assignment, devices};
    result.eval = evaluate_partition(h, rates, result.partition, options.frames);
    result.exhaustive = true;
    result.evaluated = state.evaluated;
    return result;
}

SearchResult heuristic_partition(const Hierarchy& h, const UsageRates& rates, int devices,
                                 double frames) {
    require_valid(h);
    if (devices < 1) {
        throw DomainError("device count must be >= 1");
    }
    const int n = h.size();
    const EvalContext ctx(h, rates);

    // Largest-expected-load-first greedy seed.
    std::vector<StageId> order(static_cast<size_t>(n));
    for (StageId s = 0; s < n; ++s) order[static_cast<size_t>(s)] = s;
    std::sort(order.begin(), order.end(), [&](StageId a, StageId b) {
        const double la = ctx.stage_load[static_cast<size_t>(a)];
        const double lb = ctx.stage_load[static_cast<size_t>(b)];
        if (la != lb) return la > lb;
        return a < b;
    });
    Partition current;
    current.device_count = devices;
    current.assignment.assign(static_cast<size_t>(n), 0);
    std::vector<double> bin(static_cast<size_t>(devices), 0.0);
    for (StageId s : order) {
        const int d = static_cast<int>(std::min_element(bin.begin(), bin.end()) - bin.begin());
        current.assignment[static_cast<size_t>(s)] = d;
        bin[static_cast<size_t>(d)] += ctx.stage_load[static_cast<size_t>(s)];
    }

    auto objective = [&](const Partition& p) {
        const PartitionEval e = evaluate_partition(h, rates, p, frames);
        return std::make_pair(pipeline_denominator(frames, e.devices_used, e.max_load, e.comm_cost),
                              e.comm_cost);
    };

    auto best_score = objective(current);
    bool improved = true;
    while (improved) {
        improved = false;
        Partition best_candidate = current;
        auto candidate_score = best_score;

        auto consider = [&](Partition&& p) {
            const auto score = objective(p);
            if (score < candidate_score) {
                candidate_score = score;
                best_candidate = std::move(p);
            }
        };

        for (StageId s = 0; s < n; ++s) {
            for (int d = 0; d < devices; ++d) {
                if (d == current.device_of(s)) continue;
                Partition moved = current;
                moved.assignment[static_cast<size_t>(s)] = d;
                consider(std::move(moved));
            }
        }
        for (StageId a = 0; a < n; ++a) {
            for (StageId b = a + 1; b < n; ++b) {
                if (current.device_of(a) == current.device_of(b)) continue;
                Partition swapped = current;
                std::swap(swapped.assignment[static_cast<size_t>(a)],
                          swapped.assignment[static_cast<size_t>(b)]);
                consider(std::move(swapped));
            }
        }
        if (candidate_score < best_score) {
            current = best_candidate;
            best_score = candidate_score;
            improved = true;
        }
    }

    SearchResult result;
    result.partition = canonicalized(current);
    result.eval = evaluate_partition(h, rates, result.partition, frames);
    result.exhaustive = false;
    result.evaluated = 0;
    return result;
}

json partition_to_json(const Partition& partition, const PartitionEval& eval) {
    std::vector<std::vector<StageId>> devices(static_cast<size_t>(partition.device_count));
    for (StageId s = 0; s < static_cast<StageId>(partition.assignment.size()); ++s) {
        devices[static_cast<size_t>(partition.device_of(s))].push_back(s);
    }
    while (!devices.empty() && devices.back().empty()) devices.pop_back();

    json cut = json::array();
    for (const auto& [p, c] : eval.cut_edges) cut.push_back({p, c});
    return json{{"devices", devices},
                {"eval",
                 {{"loads_s", eval.device_loads},
                  {"comm_s", eval.comm_cost},
                  {"throughput_fps", eval.throughput_fps},
                  {"imbalance", eval.imbalance},
                  {"cut_edges", cut}}}};
}

Partition partition_from_json(const json& doc, int stage_count) {
    if (!doc.is_object() || !doc.contains("devices") || !doc["devices"].is_array()) {
        throw ConfigError("partition document requires a \"devices\" array of stage-id lists");
    }
    Partition p;
    p.device_count = static_cast<int>(doc["devices"].size());
    if (p.device_count == 0) {
        throw ConfigError("partition document lists no devices");
    }
    p.assignment.assign(static_cast<size_t>(stage_count), -1);
    int device = 0;
    for (const auto& group : doc["devices"]) {
        if (!group.is_array()) {
            throw ConfigError("each device entry must be an array of stage ids");
        }
        for (const auto& sid : group) {
            if (!sid.is_number_integer()) {
                throw ConfigError("stage ids in partition must be integers");
            }
            const StageId s = sid.get<StageId>();
            if (s < 0 || s >= stage_count) {
                throw ConfigError("partition references unknown stage " + std::to_string(s));
            }
            if (p.assignment[static_cast<size_t>(s)] != -1) {
                throw ConfigError("stage " + std::to_string(s) + " assigned to two devices");
            }
            p.assignment[static_cast<size_t>(s)] = device;
        }
        ++device;
    }
    for (StageId s = 0; s < stage_count; ++s) {
        if (p.assignment[static_cast<size_t>(s)] == -1) {
            throw ConfigError("stage " + std::to_string(s) + " missing from partition");
        }
    }
    return p;
}

}  // namespace hpipe
