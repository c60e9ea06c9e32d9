#pragma once

#include <cstdint>
#include <vector>

#include "gridcascade/grid.hpp"
#include "gridcascade/powerflow.hpp"

namespace gridcascade {

/// Slack selection rule applied per island.
enum class SlackPolicy {
    max_injection,  ///< bus with the largest injection, ties to the smallest id
    smallest_id,
};

/// Outcome of one cascade simulation. failure_step[e] counts the steps branch
/// e stayed active; it equals `length` exactly when the branch never failed.
struct CascadeResult {
    std::vector<int> failure_step;
    int length = 0;                                  ///< number of distinct network states
    std::vector<std::vector<std::uint8_t>> states;   ///< s[t] rows, only when requested
};

/// Connected components of the active-branch graph, as sorted bus-id sets,
/// ordered by smallest member id.
std::vector<std::vector<int>> find_islands(const Grid& grid, const ActiveSet& active);

/// Balances injections over one island: excess generation scales all positive
/// injections down, excess load scales all negative injections down, and an
/// island with no counterpart to scale (load-only or generation-only) blacks
/// out to all zeros. Entries outside the island are returned untouched.
std::vector<double> rebalance_island(const std::vector<int>& members,
                                     const std::vector<double>& injections, const Grid& grid);

/// Quasi-static cascade: repeatedly island, rebalance, re-solve DC flows, and
/// trip every branch whose |flow| exceeds its capacity, until the network
/// state repeats. Terminates within |E|+1 iterations.
CascadeResult simulate_cascade(const Grid& grid, const ActiveSet& s0,
                               const std::vector<double>& injections,
                               SlackPolicy slack_policy = SlackPolicy::max_injection,
                               bool keep_states = false);

/// Rebuilds the per-step state rows from failure steps: s_e[t] = 1 iff t < f_e.
std::vector<std::vector<std::uint8_t>> states_from_steps(const std::vector<int>& failure_step,
                                                         int length);

/// Reusable simulator with the grid topology resolved once. One instance per
/// thread; `run` mutates internal scratch buffers.
class CascadeSimulator {
  public:
    explicit CascadeSimulator(const Grid& grid,
                              SlackPolicy slack_policy = SlackPolicy::max_injection,
                              PowerflowOptions options = {});

    CascadeResult run(const ActiveSet& s0, const std::vector<double>& injections,
                      bool keep_states = false);

    const Grid& grid() const { return *grid_; }

  private:
    const Grid* grid_;
    SlackPolicy slack_policy_;
    PowerflowOptions options_;
    std::vector<int> from_pos_;
    std::vector<int> to_pos_;
    // scratch
    std::vector<int> dsu_parent_;
    std::vector<int> component_of_;
    std::vector<double> balanced_;
    FlowSolution solution_;
};

}  // namespace gridcascade
