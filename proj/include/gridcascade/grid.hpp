#pragma once

#include <string>
#include <vector>

namespace gridcascade {

struct Bus {
    int id = 0;
    double p_default = 0.0;  ///< net injection, MW; positive = generation surplus
    bool is_generator = false;
};

struct Branch {
    int index = 0;  ///< dense 0..|E|-1, defined by file order
    int from_bus = 0;
    int to_bus = 0;
    double reactance = 0.0;  ///< p.u., > 0
    double capacity = 0.0;   ///< MW; 0 means "not set yet", see default_capacities
};

/// Immutable grid description: topology plus the electrical parameters the
/// DC model needs. Branches are directed (from -> to fixes the flow sign).
struct Grid {
    std::string id;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;

    int num_buses() const { return static_cast<int>(buses.size()); }
    int num_branches() const { return static_cast<int>(branches.size()); }

    /// Position of a bus id inside `buses`, or -1 if absent.
    int bus_position(int bus_id) const;

    bool capacities_filled() const;
};

/// Checks all structural invariants: unique bus ids, valid branch endpoints,
/// positive reactances, connectivity, presence of generation. When
/// `require_capacities` is set, also demands every capacity > 0.
/// Throws ValidationError on the first violation.
void validate_grid(const Grid& grid, bool require_capacities = false);

/// True when the undirected graph over all branches connects every bus.
bool is_connected(const Grid& grid);

}  // namespace gridcascade
