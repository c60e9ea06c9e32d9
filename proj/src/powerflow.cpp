#include "gridcascade/powerflow.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "gridcascade/error.hpp"

namespace gridcascade {

int ActiveSet::count_active() const {
    int n = 0;
    for (std::uint8_t m : mask) n += m;
    return n;
}

namespace detail {

void solve_dc_positions(const Grid& grid, const std::vector<int>& from_pos,
                        const std::vector<int>& to_pos, const std::vector<double>& injections,
                        int slack_pos, const std::vector<int>& member_positions,
                        const std::vector<int>& island_branches,
                        const PowerflowOptions& options, FlowSolution& out) {
    const int n = static_cast<int>(member_positions.size());

    double max_abs_p = 0.0;
    double sum_p = 0.0;
    for (int pos : member_positions) {
        max_abs_p = std::max(max_abs_p, std::abs(injections[pos]));
        sum_p += injections[pos];
    }
    const double scale = std::max(1.0, max_abs_p);
    if (std::abs(sum_p) > options.tolerance_rel * scale) {
        throw NumericsError("solve_dc: island injections are unbalanced (sum " +
                            std::to_string(sum_p) + " MW)");
    }

    if (n == 1) {
        out.theta[member_positions[0]] = 0.0;
        return;
    }

    // Local index: slack last so the reduced system is rows/cols 0..n-2.
    std::vector<int> local(grid.num_buses(), -1);
    int next = 0;
    for (int pos : member_positions) {
        if (pos != slack_pos) local[pos] = next++;
    }
    if (next != n - 1) throw NumericsError("solve_dc: slack bus not among island members");

    const int m = n - 1;
    Eigen::MatrixXd b_reduced = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd p_reduced = Eigen::VectorXd::Zero(m);
    for (int pos : member_positions) {
        if (pos != slack_pos) p_reduced[local[pos]] = injections[pos] / grid.base_mva;
    }
    for (int idx : island_branches) {
        const double susceptance = 1.0 / grid.branches[idx].reactance;
        const int lu = local[from_pos[idx]];
        const int lv = local[to_pos[idx]];
        if (lu >= 0) b_reduced(lu, lu) += susceptance;
        if (lv >= 0) b_reduced(lv, lv) += susceptance;
        if (lu >= 0 && lv >= 0) {
            b_reduced(lu, lv) -= susceptance;
            b_reduced(lv, lu) -= susceptance;
        }
    }

    Eigen::LDLT<Eigen::MatrixXd> factor(b_reduced);
    if (factor.info() != Eigen::Success) {
        throw NumericsError("solve_dc: reduced nodal matrix factorization failed");
    }
    const Eigen::VectorXd theta = factor.solve(p_reduced);

    for (int pos : member_positions) {
        out.theta[pos] = (pos == slack_pos) ? 0.0 : theta[local[pos]];
    }
    for (int idx : island_branches) {
        out.flow[idx] = (out.theta[from_pos[idx]] - out.theta[to_pos[idx]]) /
                        grid.branches[idx].reactance * grid.base_mva;
    }

    // Balance residuals double as the singularity check: a defective island
    // cannot satisfy them.
    std::vector<double> net(member_positions.size(), 0.0);
    std::vector<int> member_slot(grid.num_buses(), -1);
    for (int i = 0; i < n; ++i) member_slot[member_positions[i]] = i;
    for (int idx : island_branches) {
        net[member_slot[from_pos[idx]]] += out.flow[idx];
        net[member_slot[to_pos[idx]]] -= out.flow[idx];
    }
    for (int i = 0; i < n; ++i) {
        const double residual = net[i] - injections[member_positions[i]];
        if (std::abs(residual) > options.tolerance_rel * scale) {
            throw NumericsError("solve_dc: bus balance residual " + std::to_string(residual) +
                                " MW exceeds tolerance (singular island system?)");
        }
    }
}

}  // namespace detail

FlowSolution solve_dc(const Grid& grid, const ActiveSet& active,
                      const std::vector<double>& injections, int slack_bus,
                      const std::vector<int>& members, const PowerflowOptions& options) {
    if (active.size() != grid.num_branches()) {
        throw ValidationError("solve_dc: active mask length does not match branch count");
    }
    if (static_cast<int>(injections.size()) != grid.num_buses()) {
        throw ValidationError("solve_dc: injection vector length does not match bus count");
    }

    FlowSolution out;
    out.theta.assign(static_cast<std::size_t>(grid.num_buses()), 0.0);
    out.flow.assign(static_cast<std::size_t>(grid.num_branches()), 0.0);
    out.solved_set = active;

    std::vector<int> member_positions;
    member_positions.reserve(members.size());
    std::vector<std::uint8_t> in_island(static_cast<std::size_t>(grid.num_buses()), 0);
    for (int id : members) {
        const int pos = grid.bus_position(id);
        if (pos < 0) throw ValidationError("solve_dc: unknown member bus " + std::to_string(id));
        member_positions.push_back(pos);
        in_island[pos] = 1;
    }
    const int slack_pos = grid.bus_position(slack_bus);
    if (slack_pos < 0 || !in_island[slack_pos]) {
        throw ValidationError("solve_dc: slack bus " + std::to_string(slack_bus) +
                              " is not an island member");
    }

    std::vector<int> from_pos(grid.num_branches());
    std::vector<int> to_pos(grid.num_branches());
    for (int i = 0; i < grid.num_branches(); ++i) {
        from_pos[i] = grid.bus_position(grid.branches[i].from_bus);
        to_pos[i] = grid.bus_position(grid.branches[i].to_bus);
    }

    std::vector<int> island_branches;
    for (int i = 0; i < grid.num_branches(); ++i) {
        if (!active.active(i)) continue;
        if (in_island[from_pos[i]] && in_island[to_pos[i]]) island_branches.push_back(i);
    }

    detail::solve_dc_positions(grid, from_pos, to_pos, injections, slack_pos, member_positions,
                               island_branches, options, out);
    return out;
}

}  // namespace gridcascade
