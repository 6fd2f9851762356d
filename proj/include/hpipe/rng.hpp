#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hpipe/hierarchy.hpp"

namespace hpipe {

/// splitmix64 finalizer. Statistically strong enough for routing draws and
/// stateless, so a (seed, counter) pair always maps to the same value no
/// matter which process or thread asks.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t counter_rng(uint64_t seed, uint64_t counter) {
    return mix64(seed ^ mix64(counter));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(uint64_t seed, uint64_t counter) {
    return static_cast<double>(counter_rng(seed, counter) >> 11) * 0x1.0p-53;
}

/// Per-frame leaf routing shared by the simulator and the live coordinator:
/// frame k draws uniform01(seed, k) and inverts the CDF over leaves in
/// increasing id order. Identical seeds give identical routing everywhere.
class LeafSampler {
  public:
    explicit LeafSampler(const Hierarchy& h) {
        double acc = 0.0;
        for (const auto& [leaf, p] : normalized_leaf_probabilities(h)) {
            acc += p;
            leaves_.push_back(leaf);
            cdf_.push_back(acc);
        }
        if (!cdf_.empty()) cdf_.back() = 1.0;  // guard against rounding
    }

    StageId leaf_for_frame(uint64_t seed, uint64_t frame) const {
        const double u = uniform01(seed, frame);
        for (size_t i = 0; i < cdf_.size(); ++i) {
            if (u < cdf_[i]) return leaves_[i];
        }
        return leaves_.back();
    }

    const std::vector<StageId>& leaves() const { return leaves_; }

  private:
    std::vector<StageId> leaves_;
    std::vector<double> cdf_;
};

}  // namespace hpipe
