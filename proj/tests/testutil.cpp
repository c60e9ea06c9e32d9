#include "testutil.hpp"

#include <cmath>
#include <stdexcept>

#include "gridcascade/case_io.hpp"
#include "gridcascade/error.hpp"

namespace gridcascade::testutil {

Grid tri3() {
    Grid g;
    g.id = "tri3";
    g.base_mva = 1.0;
    g.buses = {{1, 1.0, true}, {2, -0.5, false}, {3, -0.5, false}};
    g.branches = {{0, 1, 2, 1.0, 0.0}, {1, 1, 3, 1.0, 0.0}, {2, 2, 3, 1.0, 0.0}};
    return g;
}

Grid tri3_with_capacities(double c12, double c13, double c23) {
    Grid g = tri3();
    g.branches[0].capacity = c12;
    g.branches[1].capacity = c13;
    g.branches[2].capacity = c23;
    return g;
}

Grid tri3_default_caps() {
    Grid g = tri3();
    std::vector<double> base;
    for (const Bus& b : g.buses) base.push_back(b.p_default);
    return default_capacities(g, base);
}

std::string tri3_matpower() {
    return R"(function mpc = tri3
mpc.version = '2';
mpc.baseMVA = 1;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
    1 3 0   0 0 0 1 1 0 1 1 1.1 0.9;
    2 1 0.5 0 0 0 1 1 0 1 1 1.1 0.9;
    3 1 0.5 0 0 0 1 1 0 1 1 1.1 0.9;
];
%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin
mpc.gen = [
    1 1.0 0 0 0 1 1 1 2 0;
];
%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
mpc.branch = [
    1 2 0 1 0 0 0 0 0 0 1 -360 360;
    1 3 0 1 0 0 0 0 0 0 1 -360 360;
    2 3 0 1 0 0 0 0 0 0 1 -360 360;
];
)";
}

Grid random_connected_grid(Rng& rng, int max_buses) {
    const int n = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_buses - 1)));
    Grid g;
    g.id = "random";
    g.base_mva = 1.0;

    const int gens = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, n / 3))));
    for (int i = 0; i < n; ++i) {
        Bus b;
        b.id = i + 1;
        if (i < gens) {
            b.is_generator = true;
            b.p_default = rng.uniform(0.5, 2.0);
        } else {
            b.p_default = -rng.uniform(0.1, 1.0);
        }
        g.buses.push_back(b);
    }

    for (int i = 1; i < n; ++i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
        g.branches.push_back({g.num_branches(), j + 1, i + 1, rng.uniform(0.1, 2.0), 0.0});
    }
    const int extras = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    for (int k = 0; k < extras; ++k) {
        const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        if (a == b) continue;
        g.branches.push_back({g.num_branches(), a + 1, b + 1, rng.uniform(0.1, 2.0), 0.0});
    }

    std::vector<double> base;
    for (const Bus& b : g.buses) base.push_back(b.p_default);
    return default_capacities(g, base);
}

Grid grid30() {
    Grid g;
    g.id = "grid30";
    g.base_mva = 1.0;

    const std::vector<int> gen_buses = {1, 6, 11, 16, 21, 26};
    const std::vector<double> gen_power = {2.0, 1.5, 2.0, 1.6, 1.9, 1.5};
    double gen_total = 0.0;
    for (double p : gen_power) gen_total += p;

    Rng rng(20240817);
    std::vector<double> load_weight(30, 0.0);
    double weight_total = 0.0;
    for (int i = 0; i < 30; ++i) {
        bool is_gen = false;
        for (int gb : gen_buses) is_gen |= gb == i + 1;
        if (!is_gen) {
            load_weight[i] = rng.uniform(0.5, 1.5);
            weight_total += load_weight[i];
        }
    }
    for (int i = 0; i < 30; ++i) {
        Bus b;
        b.id = i + 1;
        for (std::size_t k = 0; k < gen_buses.size(); ++k) {
            if (gen_buses[k] == b.id) {
                b.is_generator = true;
                b.p_default = gen_power[k];
            }
        }
        if (!b.is_generator) b.p_default = -gen_total * load_weight[i] / weight_total;
        g.buses.push_back(b);
    }

    auto add = [&](int from, int to) {
        g.branches.push_back({g.num_branches(), from, to, rng.uniform(0.08, 0.2), 0.0});
    };
    for (int i = 1; i <= 29; ++i) add(i, i + 1);
    add(30, 1);
    const int chords[][2] = {{1, 15}, {5, 20},  {8, 25},  {3, 12},  {10, 22}, {17, 28},
                             {2, 7},  {13, 19}, {24, 29}, {6, 27},  {4, 18},  {11, 26},
                             {7, 23}, {9, 19},  {14, 27}, {5, 12},  {18, 29}, {2, 24}};
    for (const auto& c : chords) add(c[0], c[1]);

    // Ratings: twice the base flow, floored at 1.7x the median rating the way
    // real rating tables avoid tiny limits on lightly loaded lines. Half of
    // all two-branch contingencies still cascade under Unif[1,2] scaling.
    std::vector<double> base;
    for (const Bus& b : g.buses) base.push_back(b.p_default);
    g = default_capacities(g, base);
    std::vector<double> caps;
    for (const Branch& br : g.branches) caps.push_back(br.capacity);
    std::sort(caps.begin(), caps.end());
    const double floor_cap = 1.7 * caps[caps.size() / 2];
    for (Branch& br : g.branches) br.capacity = std::max(br.capacity, floor_cap);
    return g;
}

std::vector<double> oracle_dc_flows(const Grid& grid, const ActiveSet& active,
                                    const std::vector<double>& injections, int slack_bus,
                                    const std::vector<int>& members) {
    const int n = grid.num_buses();
    std::vector<std::vector<double>> a(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n) + 1, 0.0));
    std::vector<bool> in_island(static_cast<std::size_t>(n), false);
    for (int id : members) in_island[static_cast<std::size_t>(grid.bus_position(id))] = true;
    const int slack_pos = grid.bus_position(slack_bus);

    for (int p = 0; p < n; ++p) {
        if (!in_island[static_cast<std::size_t>(p)] || p == slack_pos) {
            a[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)] = 1.0;  // theta pinned at 0
        } else {
            a[static_cast<std::size_t>(p)][static_cast<std::size_t>(n)] =
                injections[static_cast<std::size_t>(p)] / grid.base_mva;
        }
    }
    for (const Branch& br : grid.branches) {
        if (!active.active(br.index)) continue;
        const int u = grid.bus_position(br.from_bus);
        const int v = grid.bus_position(br.to_bus);
        if (!in_island[static_cast<std::size_t>(u)] || !in_island[static_cast<std::size_t>(v)]) {
            continue;
        }
        const double s = 1.0 / br.reactance;
        if (u != slack_pos) {
            a[static_cast<std::size_t>(u)][static_cast<std::size_t>(u)] += s;
            a[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] -= s;
        }
        if (v != slack_pos) {
            a[static_cast<std::size_t>(v)][static_cast<std::size_t>(v)] += s;
            a[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] -= s;
        }
    }

    // Gauss-Jordan with partial pivoting.
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) >
                std::abs(a[static_cast<std::size_t>(pivot)][static_cast<std::size_t>(col)])) {
                pivot = r;
            }
        }
        std::swap(a[static_cast<std::size_t>(col)], a[static_cast<std::size_t>(pivot)]);
        const double diag = a[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
        if (std::abs(diag) < 1e-13) throw std::runtime_error("oracle_dc_flows: singular system");
        for (int c = col; c <= n; ++c) a[static_cast<std::size_t>(col)][static_cast<std::size_t>(c)] /= diag;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double factor = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)];
            if (factor == 0.0) continue;
            for (int c = col; c <= n; ++c) {
                a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] -=
                    factor * a[static_cast<std::size_t>(col)][static_cast<std::size_t>(c)];
            }
        }
    }

    std::vector<double> theta(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) theta[static_cast<std::size_t>(p)] = a[static_cast<std::size_t>(p)][static_cast<std::size_t>(n)];

    std::vector<double> flows(static_cast<std::size_t>(grid.num_branches()), 0.0);
    for (const Branch& br : grid.branches) {
        if (!active.active(br.index)) continue;
        const int u = grid.bus_position(br.from_bus);
        const int v = grid.bus_position(br.to_bus);
        if (!in_island[static_cast<std::size_t>(u)] || !in_island[static_cast<std::size_t>(v)]) {
            continue;
        }
        flows[static_cast<std::size_t>(br.index)] =
            (theta[static_cast<std::size_t>(u)] - theta[static_cast<std::size_t>(v)]) /
            br.reactance * grid.base_mva;
    }
    return flows;
}

}  // namespace gridcascade::testutil
