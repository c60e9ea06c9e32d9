#include "gridcascade/grid.hpp"

#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "gridcascade/error.hpp"

namespace gridcascade {

int Grid::bus_position(int bus_id) const {
    for (int i = 0; i < num_buses(); ++i) {
        if (buses[i].id == bus_id) return i;
    }
    return -1;
}

bool Grid::capacities_filled() const {
    for (const Branch& br : branches) {
        if (br.capacity <= 0.0) return false;
    }
    return true;
}

namespace {

struct Dsu {
    std::vector<int> parent;
    explicit Dsu(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

bool is_connected(const Grid& grid) {
    const int n = grid.num_buses();
    if (n <= 1) return true;
    std::unordered_map<int, int> pos;
    pos.reserve(n);
    for (int i = 0; i < n; ++i) pos.emplace(grid.buses[i].id, i);
    Dsu dsu(n);
    for (const Branch& br : grid.branches) {
        auto a = pos.find(br.from_bus);
        auto b = pos.find(br.to_bus);
        if (a == pos.end() || b == pos.end()) return false;
        dsu.unite(a->second, b->second);
    }
    const int root = dsu.find(0);
    for (int i = 1; i < n; ++i) {
        if (dsu.find(i) != root) return false;
    }
    return true;
}

void validate_grid(const Grid& grid, bool require_capacities) {
    if (grid.buses.empty()) throw ValidationError("grid '" + grid.id + "': no buses");
    if (grid.base_mva <= 0.0) throw ValidationError("grid '" + grid.id + "': base_mva must be positive");

    std::unordered_set<int> ids;
    for (const Bus& bus : grid.buses) {
        if (!ids.insert(bus.id).second) {
            throw ValidationError("grid '" + grid.id + "': duplicate bus id " + std::to_string(bus.id));
        }
    }

    for (int i = 0; i < grid.num_branches(); ++i) {
        const Branch& br = grid.branches[i];
        if (br.index != i) {
            throw ValidationError("grid '" + grid.id + "': branch index " + std::to_string(br.index) +
                                  " at position " + std::to_string(i) + " is not dense");
        }
        if (!ids.count(br.from_bus)) {
            throw ValidationError("grid '" + grid.id + "': branch " + std::to_string(i) +
                                  ": unknown bus " + std::to_string(br.from_bus));
        }
        if (!ids.count(br.to_bus)) {
            throw ValidationError("grid '" + grid.id + "': branch " + std::to_string(i) +
                                  ": unknown bus " + std::to_string(br.to_bus));
        }
        if (br.from_bus == br.to_bus) {
            throw ValidationError("grid '" + grid.id + "': branch " + std::to_string(i) + " is a self-loop");
        }
        if (!(br.reactance > 0.0)) {
            throw ValidationError("grid '" + grid.id + "': branch " + std::to_string(i) +
                                  ": reactance must be positive");
        }
        if (br.capacity < 0.0 || (require_capacities && br.capacity <= 0.0)) {
            throw ValidationError("grid '" + grid.id + "': branch " + std::to_string(i) +
                                  ": capacity not set");
        }
    }

    bool has_generation = false;
    for (const Bus& bus : grid.buses) {
        if (bus.p_default > 0.0) {
            has_generation = true;
            break;
        }
    }
    if (!has_generation) {
        throw ValidationError("grid '" + grid.id + "': no bus with positive generation");
    }

    if (!is_connected(grid)) {
        throw ValidationError("grid '" + grid.id + "': branch graph is not connected");
    }
}

}  // namespace gridcascade
