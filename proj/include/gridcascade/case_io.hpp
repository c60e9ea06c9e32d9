#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gridcascade/grid.hpp"

namespace gridcascade {

/// Parses the MATPOWER case subset needed for DC analysis: bus id/type/Pd,
/// branch from/to/x/rateA/status, gen bus/Pg, and baseMVA. rateA of 0 leaves
/// the branch capacity unset (0); fill it with default_capacities before
/// simulating. Out-of-service branches (status 0) are dropped.
Grid parse_matpower_case(const std::string& text);

nlohmann::ordered_json grid_to_json(const Grid& grid);
Grid grid_from_json(const nlohmann::json& j);

/// Reads a grid from disk; `.m`/`.case` files go through the MATPOWER parser,
/// anything else through the native JSON schema.
Grid load_grid(const std::string& path);
void save_grid(const Grid& grid, const std::string& path);

/// Fills every unset capacity with twice the branch's |flow| under the given
/// base injections (one DC solve on the intact grid, rebalanced). Branches
/// carrying no flow get floor_ratio times the median of the nonzero
/// capacities so they stay trippable. Already-set capacities are untouched.
Grid default_capacities(Grid grid, const std::vector<double>& base_injections,
                        double floor_ratio = 0.1);

}  // namespace gridcascade
