#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridcascade/cascade.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/rng.hpp"

namespace gridcascade {

/// One simulated cascade: the initial contingency, the scaled injections it
/// ran with, and the resulting failure steps.
struct CascadeSample {
    std::vector<std::uint8_t> contingency;  ///< s[0], 1 = active
    double alpha = 1.0;
    std::vector<double> injections;
    std::vector<int> failure_step;
    int length = 0;  ///< cascade horizon T

    bool operator==(const CascadeSample&) const = default;
};

enum class SplitTag { all, train, test };

std::string to_string(SplitTag tag);
SplitTag split_tag_from_string(const std::string& s);

struct DataPool {
    std::string grid_id;
    std::uint64_t seed = 0;
    SplitTag split = SplitTag::all;
    std::vector<CascadeSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

struct PoolConfig {
    int contingency_size = 2;
    double alpha_lo = 1.0;
    double alpha_hi = 2.0;
    SlackPolicy slack_policy = SlackPolicy::max_injection;
    int workers = 1;
};

/// Fails exactly k distinct branches, chosen uniformly without replacement.
ActiveSet random_contingency(Rng& rng, const Grid& grid, int k = 2);

/// Simulates M samples: per sample an independent RNG stream derived from
/// (seed, index) draws the contingency and alpha ~ Unif[alpha_lo, alpha_hi],
/// injections are alpha times the grid defaults, and the CFS oracle supplies
/// failure steps. Output order is by sample index for any worker count.
DataPool generate_pool(const Grid& grid, int num_samples, std::uint64_t seed,
                       const PoolConfig& config = {});

/// Disjoint random split into floor(f*M) train / rest test samples.
std::pair<DataPool, DataPool> split_pool(const DataPool& pool, double train_fraction,
                                         std::uint64_t seed);

/// JSON-Lines pool file: a header line then one line per sample. Paths ending
/// in .gz (or compress=true) are gzip-compressed.
void save_pool(const DataPool& pool, const std::string& path, bool compress = false);
DataPool load_pool(const std::string& path);

}  // namespace gridcascade
