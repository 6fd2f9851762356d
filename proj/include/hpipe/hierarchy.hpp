#pragma once

#include <map>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace hpipe {

using StageId = int;

/// One compute stage of a hierarchy. `latency_s` is the time one device
/// needs to push a single frame through the stage; `transfer_s` is the time
/// to ship this stage's input from its parent's device when the parent-child
/// edge ends up on different devices (0 for the root, frames originate there).
struct Stage {
    StageId id = 0;
    double latency_s = 0.0;
    double transfer_s = 0.0;
    std::vector<StageId> children;

    bool is_leaf() const { return children.empty(); }
};

/// A rooted tree of stages plus the probability that a frame terminates at
/// each leaf. An empty probability map means uniform over the leaves.
/// Instances are plain data and may be in an invalid state; `validate()`
/// reports every violation, and the analysis operations require a clean
/// report before doing any work.
struct Hierarchy {
    std::vector<Stage> stages;
    std::map<StageId, double> leaf_probabilities;

    static Hierarchy from_json(const nlohmann::json& doc);
    static Hierarchy parse(const std::string& text);
    static Hierarchy load(const std::string& path);
    nlohmann::json to_json() const;

    int size() const { return static_cast<int>(stages.size()); }
    const Stage& stage(StageId id) const;  // requires dense ids
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

/// Checks every structural invariant: dense ids with a single root, exactly
/// one parent per non-root stage, no cycles, positive latencies, nonnegative
/// transfer times, and leaf probabilities over exactly the leaves summing to
/// 1 within 1e-9.
ValidationReport validate(const Hierarchy& h);

/// Throws DomainError with the joined violation list if `h` is invalid.
void require_valid(const Hierarchy& h);

constexpr double kProbabilitySumTolerance = 1e-9;

/// Fraction of frames that each stage processes: a leaf's rate is its
/// (renormalized) probability, an internal stage's rate is the probability
/// mass of the leaves in its subtree. rate(root) == 1.
struct UsageRates {
    std::vector<double> rate;  // indexed by StageId

    double of(StageId id) const { return rate.at(static_cast<size_t>(id)); }
};

UsageRates compute_rates(const Hierarchy& h);

/// Number of stages on the longest root-to-leaf path; a lone root has depth 1.
int depth(const Hierarchy& h);

/// One stage-id sequence per leaf, each from the root to that leaf, in
/// depth-first order with children visited in stored order.
std::vector<std::vector<StageId>> root_leaf_paths(const Hierarchy& h);

/// Parent id per stage, -1 for the root. Requires a valid hierarchy.
std::vector<StageId> parent_map(const Hierarchy& h);

/// Leaf ids in increasing order, paired with the renormalized probabilities
/// used by every downstream consumer (rates, simulator, coordinator).
std::vector<std::pair<StageId, double>> normalized_leaf_probabilities(const Hierarchy& h);

}  // namespace hpipe
