#pragma once

// Test-only reference implementations, kept independent of the library's
// search path: a plain recursive set-partition enumerator, a from-scratch
// partition evaluation, and a Stirling-number table. Summation order matches
// the documented contract (stage-id order for loads, deciding-stage order for
// communication) so equality checks against the library are exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hpipe/hierarchy.hpp"

namespace hpipe::test {

struct OracleEval {
    std::vector<double> loads;
    double max_load = 0.0;
    double comm = 0.0;
    int used = 0;
    double denominator = 0.0;  // (F + used - 1) * max + F * comm, or max + comm at F = inf
    double throughput = 0.0;
};

inline OracleEval oracle_evaluate(const Hierarchy& h, const UsageRates& rates,
                                  const std::vector<int>& assignment, int device_count,
                                  double frames) {
    OracleEval out;
    out.loads.assign(static_cast<size_t>(device_count), 0.0);
    const auto parents = parent_map(h);
    for (StageId s = 0; s < h.size(); ++s) {
        out.loads[static_cast<size_t>(assignment[static_cast<size_t>(s)])] +=
            h.stage(s).latency_s * rates.of(s);
        // edges charged when their larger endpoint is placed, parent edge
        // before child edges of the same deciding stage, children ascending
        const StageId p = parents[static_cast<size_t>(s)];
        if (p >= 0 && p < s &&
            assignment[static_cast<size_t>(p)] != assignment[static_cast<size_t>(s)]) {
            out.comm += h.stage(s).transfer_s * rates.of(s);
        }
        std::vector<StageId> early_children;
        for (StageId c : h.stage(s).children) {
            if (c < s) early_children.push_back(c);
        }
        std::sort(early_children.begin(), early_children.end());
        for (StageId c : early_children) {
            if (assignment[static_cast<size_t>(c)] != assignment[static_cast<size_t>(s)]) {
                out.comm += h.stage(c).transfer_s * rates.of(c);
            }
        }
    }
    for (int d = 0; d < device_count; ++d) {
        if (out.loads[static_cast<size_t>(d)] > out.max_load) {
            out.max_load = out.loads[static_cast<size_t>(d)];
        }
    }
    std::vector<bool> nonempty(static_cast<size_t>(device_count), false);
    for (int d : assignment) nonempty[static_cast<size_t>(d)] = true;
    for (bool b : nonempty) out.used += b ? 1 : 0;
    out.denominator = std::isinf(frames)
                          ? out.max_load + out.comm
                          : (frames + static_cast<double>(out.used - 1)) * out.max_load +
                                frames * out.comm;
    out.throughput = std::isinf(frames) ? 1.0 / out.denominator : frames / out.denominator;
    return out;
}

struct OracleBest {
    bool found = false;
    double denominator = 0.0;
    double comm = 0.0;
    double throughput = 0.0;
    std::vector<int> assignment;
};

/// Unpruned exhaustive maximum over canonical set partitions, with the same
/// tie-break (smaller comm, then first in lexicographic order).
inline OracleBest oracle_select(const Hierarchy& h, const UsageRates& rates, int max_devices,
                                double frames) {
    OracleBest best;
    std::vector<int> assignment(static_cast<size_t>(h.size()), 0);
    const auto recurse = [&](auto&& self, int s, int groups) -> void {
        if (s == h.size()) {
            const OracleEval eval = oracle_evaluate(h, rates, assignment, max_devices, frames);
            if (!best.found || eval.denominator < best.denominator ||
                (eval.denominator == best.denominator && eval.comm < best.comm)) {
                best.found = true;
                best.denominator = eval.denominator;
                best.comm = eval.comm;
                best.throughput = eval.throughput;
                best.assignment = assignment;
            }
            return;
        }
        const int limit = std::min(groups, max_devices - 1);
        for (int d = 0; d <= limit; ++d) {
            assignment[static_cast<size_t>(s)] = d;
            self(self, s + 1, d == groups ? groups + 1 : groups);
        }
        assignment[static_cast<size_t>(s)] = 0;
    };
    recurse(recurse, 0, 0);
    return best;
}

/// Stirling numbers of the second kind, summed over k <= max_devices.
inline uint64_t oracle_partition_count(int n, int max_devices) {
    std::vector<std::vector<uint64_t>> s(static_cast<size_t>(n) + 1,
                                         std::vector<uint64_t>(static_cast<size_t>(n) + 1, 0));
    s[0][0] = 1;
    for (int i = 1; i <= n; ++i) {
        for (int k = 1; k <= i; ++k) {
            s[static_cast<size_t>(i)][static_cast<size_t>(k)] =
                static_cast<uint64_t>(k) * s[static_cast<size_t>(i - 1)][static_cast<size_t>(k)] +
                s[static_cast<size_t>(i - 1)][static_cast<size_t>(k - 1)];
        }
    }
    uint64_t total = 0;
    for (int k = 1; k <= std::min(n, max_devices); ++k) {
        total += s[static_cast<size_t>(n)][static_cast<size_t>(k)];
    }
    return total;
}

}  // namespace hpipe::test
