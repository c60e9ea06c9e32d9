#include "gridcascade/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gridcascade/error.hpp"

namespace gridcascade {

namespace {

int dsu_find(std::vector<int>& parent, int x) {
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

// Rebalance in position space, in place. Members are bus positions.
void rebalance_positions(const std::vector<int>& members, std::vector<double>& injections) {
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    double max_abs = 0.0;
    for (int p : members) {
        const double x = injections[p];
        if (x > 0.0) pos_sum += x;
        if (x < 0.0) neg_sum += x;
        max_abs = std::max(max_abs, std::abs(x));
    }
    const double total = pos_sum + neg_sum;
    if (std::abs(total) <= 1e-12 * std::max(1.0, max_abs)) return;

    double factor;
    bool scale_positive;
    if (total > 0.0) {
        factor = (pos_sum - total) / pos_sum;
        scale_positive = true;
    } else {
        factor = (neg_sum - total) / neg_sum;
        scale_positive = false;
    }
    if (!(factor > 0.0)) {
        // Load-only or generation-only island: nothing to serve, black out.
        for (int p : members) injections[p] = 0.0;
        return;
    }
    for (int p : members) {
        const double x = injections[p];
        if (scale_positive ? (x > 0.0) : (x < 0.0)) injections[p] = x * factor;
    }
}

int pick_slack(const std::vector<int>& members, const std::vector<double>& injections,
               const Grid& grid, SlackPolicy policy) {
    int best = members.front();
    if (policy == SlackPolicy::smallest_id) {
        for (int p : members) {
            if (grid.buses[p].id < grid.buses[best].id) best = p;
        }
        return best;
    }
    for (int p : members) {
        if (injections[p] > injections[best] ||
            (injections[p] == injections[best] && grid.buses[p].id < grid.buses[best].id)) {
            best = p;
        }
    }
    return best;
}

}  // namespace

std::vector<std::vector<int>> find_islands(const Grid& grid, const ActiveSet& active) {
    if (active.size() != grid.num_branches()) {
        throw ValidationError("find_islands: active mask length does not match branch count");
    }
    const int n = grid.num_buses();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    for (int i = 0; i < grid.num_branches(); ++i) {
        if (!active.active(i)) continue;
        const int u = grid.bus_position(grid.branches[i].from_bus);
        const int v = grid.bus_position(grid.branches[i].to_bus);
        parent[dsu_find(parent, u)] = dsu_find(parent, v);
    }
    std::vector<std::vector<int>> groups(n);
    for (int p = 0; p < n; ++p) groups[dsu_find(parent, p)].push_back(grid.buses[p].id);
    std::vector<std::vector<int>> islands;
    for (auto& g : groups) {
        if (g.empty()) continue;
        std::sort(g.begin(), g.end());
        islands.push_back(std::move(g));
    }
    std::sort(islands.begin(), islands.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return islands;
}

std::vector<double> rebalance_island(const std::vector<int>& members,
                                     const std::vector<double>& injections, const Grid& grid) {
    if (members.empty()) throw ValidationError("rebalance_island: empty member set");
    if (static_cast<int>(injections.size()) != grid.num_buses()) {
        throw ValidationError("rebalance_island: injection vector length does not match bus count");
    }
    std::vector<int> positions;
    positions.reserve(members.size());
    for (int id : members) {
        const int p = grid.bus_position(id);
        if (p < 0) throw ValidationError("rebalance_island: unknown bus " + std::to_string(id));
        positions.push_back(p);
    }
    std::vector<double> out = injections;
    rebalance_positions(positions, out);
    return out;
}

std::vector<std::vector<std::uint8_t>> states_from_steps(const std::vector<int>& failure_step,
                                                         int length) {
    for (std::size_t e = 0; e < failure_step.size(); ++e) {
        if (failure_step[e] < 0 || failure_step[e] > length) {
            throw ValidationError("states_from_steps: failure step " +
                                  std::to_string(failure_step[e]) + " of branch " +
                                  std::to_string(e) + " outside [0, " + std::to_string(length) +
                                  "]");
        }
    }
    std::vector<std::vector<std::uint8_t>> states(
        static_cast<std::size_t>(length),
        std::vector<std::uint8_t>(failure_step.size(), 0));
    for (int t = 0; t < length; ++t) {
        for (std::size_t e = 0; e < failure_step.size(); ++e) {
            states[t][e] = t < failure_step[e] ? 1 : 0;
        }
    }
    return states;
}

CascadeSimulator::CascadeSimulator(const Grid& grid, SlackPolicy slack_policy,
                                   PowerflowOptions options)
    : grid_(&grid), slack_policy_(slack_policy), options_(options) {
    const int num_branches = grid.num_branches();
    from_pos_.resize(num_branches);
    to_pos_.resize(num_branches);
    for (int i = 0; i < num_branches; ++i) {
        from_pos_[i] = grid.bus_position(grid.branches[i].from_bus);
        to_pos_[i] = grid.bus_position(grid.branches[i].to_bus);
        if (from_pos_[i] < 0 || to_pos_[i] < 0) {
            throw ValidationError("cascade: branch " + std::to_string(i) +
                                  " references an unknown bus");
        }
    }
    dsu_parent_.resize(grid.num_buses());
    component_of_.resize(grid.num_buses());
    solution_.theta.resize(grid.num_buses());
    solution_.flow.resize(num_branches);
}

CascadeResult CascadeSimulator::run(const ActiveSet& s0, const std::vector<double>& injections,
                                    bool keep_states) {
    const Grid& grid = *grid_;
    const int num_branches = grid.num_branches();
    const int num_buses = grid.num_buses();
    if (s0.size() != num_branches) {
        throw ValidationError("simulate_cascade: contingency mask length does not match branch count");
    }
    if (static_cast<int>(injections.size()) != num_buses) {
        throw ValidationError("simulate_cascade: injection vector length does not match bus count");
    }
    if (!grid.capacities_filled()) {
        throw ValidationError("simulate_cascade: grid has unset branch capacities");
    }

    CascadeResult result;
    result.failure_step.assign(num_branches, 0);

    ActiveSet active = s0;
    std::vector<int> island_branches;
    std::vector<std::vector<int>> component_members(num_buses);

    for (int iteration = 0; iteration <= num_branches + 1; ++iteration) {
        if (iteration == num_branches + 1) {
            throw NumericsError("simulate_cascade: did not reach a fixed point in |E|+1 iterations");
        }
        if (keep_states) result.states.push_back(active.mask);
        for (int e = 0; e < num_branches; ++e) result.failure_step[e] += active.mask[e];

        // Islands of the current active-branch graph.
        std::iota(dsu_parent_.begin(), dsu_parent_.end(), 0);
        for (int e = 0; e < num_branches; ++e) {
            if (active.mask[e]) {
                dsu_parent_[dsu_find(dsu_parent_, from_pos_[e])] = dsu_find(dsu_parent_, to_pos_[e]);
            }
        }
        for (auto& m : component_members) m.clear();
        for (int p = 0; p < num_buses; ++p) {
            const int root = dsu_find(dsu_parent_, p);
            component_of_[p] = root;
            component_members[root].push_back(p);
        }

        balanced_ = injections;
        std::fill(solution_.flow.begin(), solution_.flow.end(), 0.0);
        std::fill(solution_.theta.begin(), solution_.theta.end(), 0.0);

        for (int root = 0; root < num_buses; ++root) {
            const std::vector<int>& members = component_members[root];
            if (members.size() <= 1) {
                if (!members.empty()) balanced_[members[0]] = 0.0;
                continue;
            }
            rebalance_positions(members, balanced_);
            bool all_zero = true;
            for (int p : members) {
                if (balanced_[p] != 0.0) {
                    all_zero = false;
                    break;
                }
            }
            if (all_zero) continue;  // nothing flows in a blacked-out island

            const int slack = pick_slack(members, injections, grid, slack_policy_);
            island_branches.clear();
            for (int e = 0; e < num_branches; ++e) {
                if (active.mask[e] && component_of_[from_pos_[e]] == root) {
                    island_branches.push_back(e);
                }
            }
            detail::solve_dc_positions(grid, from_pos_, to_pos_, balanced_, slack, members,
                                       island_branches, options_, solution_);
        }

        bool changed = false;
        for (int e = 0; e < num_branches; ++e) {
            if (active.mask[e] && std::abs(solution_.flow[e]) > grid.branches[e].capacity) {
                active.mask[e] = 0;
                changed = true;
            }
        }
        if (!changed) {
            result.length = iteration + 1;
            break;
        }
    }
    return result;
}

CascadeResult simulate_cascade(const Grid& grid, const ActiveSet& s0,
                               const std::vector<double>& injections, SlackPolicy slack_policy,
                               bool keep_states) {
    CascadeSimulator sim(grid, slack_policy);
    return sim.run(s0, injections, keep_states);
}

}  // namespace gridcascade
