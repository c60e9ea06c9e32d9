#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gridcascade/datapool.hpp"
#include "gridcascade/gnn.hpp"
#include "gridcascade/grid.hpp"

namespace gridcascade {

/// Pairwise influence baseline, fitted per load scaling: a ridge-regressed
/// next-state matrix plus per-branch trip thresholds. It never sees power
/// injections, only branch states.
struct InfluenceParams {
    std::string grid_id;
    double alpha_tag = 1.0;  ///< the load scaling this instance was fitted for
    int horizon = 1;
    double ridge = 1e-3;
    Eigen::MatrixXd influence;  ///< |E| x |E|
    Eigen::VectorXd threshold;  ///< per branch; scores >= threshold stay active
};

/// Least-squares fit of s[t+1] from s[t] over every one-step transition in
/// the pool (states rebuilt from failure steps), followed by a per-branch
/// threshold sweep maximizing balanced accuracy. All samples must share one
/// alpha value.
InfluenceParams fit_influence(const Grid& grid, const DataPool& pool, double ridge = 1e-3);

/// Iterated thresholding from the initial contingency until a fixed point or
/// the fitted horizon; failure steps count the recorded states, so the
/// returned length is the survivor marker.
CascadePrediction predict_influence(const InfluenceParams& params, const ActiveSet& s0);

std::vector<CascadePrediction> predict_influence_pool(const InfluenceParams& params,
                                                      const DataPool& pool);

void save_influence(const InfluenceParams& params, const std::string& path);
InfluenceParams load_influence(const std::string& path);

}  // namespace gridcascade
