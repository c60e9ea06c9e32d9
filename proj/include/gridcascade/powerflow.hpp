#pragma once

#include <cstdint>
#include <vector>

#include "gridcascade/grid.hpp"

namespace gridcascade {

/// Per-branch on/off mask, indexed by Branch::index. 1 = active.
struct ActiveSet {
    std::vector<std::uint8_t> mask;

    ActiveSet() = default;
    explicit ActiveSet(int num_branches, bool active = true)
        : mask(static_cast<std::size_t>(num_branches), active ? 1 : 0) {}

    static ActiveSet all_active(const Grid& grid) { return ActiveSet(grid.num_branches(), true); }

    int size() const { return static_cast<int>(mask.size()); }
    bool active(int branch) const { return mask[static_cast<std::size_t>(branch)] != 0; }
    void set(int branch, bool value) { mask[static_cast<std::size_t>(branch)] = value ? 1 : 0; }
    int count_active() const;

    bool operator==(const ActiveSet& other) const = default;
};

/// Result of one DC solve. Angles are per-unit radians with the slack at 0;
/// flows are MW, signed along the branch direction. Buses and branches
/// outside the solved island keep zeros.
struct FlowSolution {
    std::vector<double> theta;
    std::vector<double> flow;
    ActiveSet solved_set;
};

struct PowerflowOptions {
    double tolerance_rel = 1e-9;  ///< relative residual bound for balance checks
};

/// DC power flow on one island. `members` lists the bus ids of a connected
/// component of the active-branch graph; injections (MW, full-length per bus
/// position) must sum to zero over the island. Solves B'theta = P with the
/// slack angle pinned at 0 and fills flows (theta_u - theta_v)/x_e * base_mva
/// for active branches internal to the island.
FlowSolution solve_dc(const Grid& grid, const ActiveSet& active,
                      const std::vector<double>& injections, int slack_bus,
                      const std::vector<int>& members,
                      const PowerflowOptions& options = {});

namespace detail {

// Island solve with everything pre-resolved to bus positions. `from_pos` /
// `to_pos` map branch index -> endpoint bus positions; `island_branches`
// must list exactly the active branches internal to the island. Writes theta
// for member buses and flow for island branches into `out`; other entries
// are left as the caller initialized them.
void solve_dc_positions(const Grid& grid, const std::vector<int>& from_pos,
                        const std::vector<int>& to_pos, const std::vector<double>& injections,
                        int slack_pos, const std::vector<int>& member_positions,
                        const std::vector<int>& island_branches,
                        const PowerflowOptions& options, FlowSolution& out);

}  // namespace detail

}  // namespace gridcascade
