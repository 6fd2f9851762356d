#pragma once

#include <random>
#include <string>
#include <vector>

#include "hpipe/hierarchy.hpp"

namespace hpipe::test {

inline std::string fixture_path(const std::string& name) {
    return std::string(HPIPE_SOURCE_DIR) + "/data/" + name;
}

struct StageSpec {
    double latency_s;
    double transfer_s;
    std::vector<int> children;
};

inline Hierarchy make_tree(const std::vector<StageSpec>& specs,
                           const std::map<int, double>& probs = {}) {
    Hierarchy h;
    for (size_t i = 0; i < specs.size(); ++i) {
        Stage s;
        s.id = static_cast<int>(i);
        s.latency_s = specs[i].latency_s;
        s.transfer_s = specs[i].transfer_s;
        s.children = specs[i].children;
        h.stages.push_back(std::move(s));
    }
    for (const auto& [id, p] : probs) h.leaf_probabilities[id] = p;
    return h;
}

/// Random rooted tree with dense ids (parent of i drawn from 0..i-1),
/// latencies in [lat_lo, lat_hi], transfers in [tr_lo, tr_hi], and random
/// normalized leaf probabilities.
inline Hierarchy random_hierarchy(std::mt19937_64& rng, int n, double lat_lo = 0.001,
                                  double lat_hi = 0.1, double tr_lo = 0.0, double tr_hi = 0.05) {
    std::uniform_real_distribution<double> lat(lat_lo, lat_hi);
    std::uniform_real_distribution<double> tr(tr_lo, tr_hi);
    std::uniform_real_distribution<double> mass(0.05, 1.0);

    std::vector<StageSpec> specs(static_cast<size_t>(n));
    specs[0] = {lat(rng), 0.0, {}};
    for (int i = 1; i < n; ++i) {
        std::uniform_int_distribution<int> pick(0, i - 1);
        const int parent = pick(rng);
        specs[static_cast<size_t>(i)] = {lat(rng), tr(rng), {}};
        specs[static_cast<size_t>(parent)].children.push_back(i);
    }
    Hierarchy h = make_tree(specs);

    std::vector<int> leaves;
    for (int i = 0; i < n; ++i) {
        if (h.stage(i).is_leaf()) leaves.push_back(i);
    }
    double total = 0.0;
    std::vector<double> weights;
    for (size_t i = 0; i < leaves.size(); ++i) {
        weights.push_back(mass(rng));
        total += weights.back();
    }
    for (size_t i = 0; i < leaves.size(); ++i) {
        h.leaf_probabilities[leaves[i]] = weights[i] / total;
    }
    return h;
}

inline Hierarchy cifar_fixture() { return Hierarchy::load(fixture_path("cifar10.json")); }
inline Hierarchy svhn_fixture() { return Hierarchy::load(fixture_path("svhn.json")); }
inline Hierarchy caltech_fixture() { return Hierarchy::load(fixture_path("caltech256.json")); }

}  // namespace hpipe::test
