#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gridcascade/error.hpp"
#include "gridcascade/influence.hpp"
#include "testutil.hpp"

using namespace gridcascade;

namespace {

// Pool over a 4-branch star-ish grid where branch 1 always fails exactly one
// step after branch 0, and branches 2, 3 never fail in-cascade.
DataPool lagged_pool(const Grid& grid) {
    DataPool pool;
    pool.grid_id = grid.id;
    pool.seed = 0;
    const int num_edges = grid.num_branches();
    for (int rep = 0; rep < 30; ++rep) {
        CascadeSample s;
        s.alpha = 1.5;
        s.contingency.assign(static_cast<std::size_t>(num_edges), 1);
        s.contingency[0] = 0;
        for (const Bus& b : grid.buses) s.injections.push_back(1.5 * b.p_default);
        // branch 0 down at t0, branch 1 follows at step 1, the rest survive
        s.failure_step = {0, 1, 2, 2};
        s.length = 2;
        pool.samples.push_back(std::move(s));

        // contrast samples where branch 0 stays up and nothing fails
        CascadeSample calm;
        calm.alpha = 1.5;
        calm.contingency.assign(static_cast<std::size_t>(num_edges), 1);
        calm.contingency[2] = 0;
        for (const Bus& b : grid.buses) calm.injections.push_back(1.5 * b.p_default);
        calm.failure_step = {1, 1, 0, 1};
        calm.length = 1;
        pool.samples.push_back(std::move(calm));
    }
    return pool;
}

Grid four_branch_grid() {
    Grid g;
    g.id = "star4";
    g.base_mva = 1.0;
    g.buses = {{1, 1.0, true}, {2, -0.3, false}, {3, -0.4, false}, {4, -0.3, false}};
    g.branches = {{0, 1, 2, 1.0, 1.0}, {1, 1, 3, 1.0, 1.0}, {2, 1, 4, 1.0, 1.0}, {3, 2, 3, 1.0, 1.0}};
    return g;
}

}  // namespace

TEST_CASE("a learned lag is reproduced on held-out contingencies") {
    const Grid g = four_branch_grid();
    const InfluenceParams params = fit_influence(g, lagged_pool(g));
    CHECK(params.alpha_tag == 1.5);
    CHECK(params.horizon == 2);

    ActiveSet s0(g.num_branches(), true);
    s0.set(0, false);
    const CascadePrediction pred = predict_influence(params, s0);
    CHECK(pred.failure_step[0] == 0);
    CHECK(pred.failure_step[1] == 1);  // fails one step after branch 0
    CHECK(pred.failure_step[2] == pred.length);
    CHECK(pred.failure_step[3] == pred.length);
}

TEST_CASE("a pool without propagation fits an all-survive predictor") {
    const Grid g = four_branch_grid();
    DataPool pool;
    pool.grid_id = g.id;
    for (int rep = 0; rep < 10; ++rep) {
        CascadeSample s;
        s.alpha = 1.2;
        s.contingency = {1, 0, 1, 1};
        for (const Bus& b : g.buses) s.injections.push_back(1.2 * b.p_default);
        s.failure_step = {1, 0, 1, 1};
        s.length = 1;
        pool.samples.push_back(std::move(s));
    }
    const InfluenceParams params = fit_influence(g, pool);
    ActiveSet s0(g.num_branches(), true);
    s0.set(2, false);
    const CascadePrediction pred = predict_influence(params, s0);
    for (int e = 0; e < g.num_branches(); ++e) {
        if (e == 2) {
            CHECK(pred.failure_step[e] == 0);
        } else {
            CHECK(pred.failure_step[e] == pred.length);
        }
    }
}

TEST_CASE("refitting the same pool gives identical parameters") {
    const Grid g = four_branch_grid();
    const DataPool pool = lagged_pool(g);
    const InfluenceParams a = fit_influence(g, pool);
    const InfluenceParams b = fit_influence(g, pool);
    CHECK(a.influence == b.influence);
    CHECK(a.threshold == b.threshold);
}

TEST_CASE("mixed alpha pools are rejected") {
    const Grid g = four_branch_grid();
    DataPool pool = lagged_pool(g);
    pool.samples[1].alpha = 1.7;
    CHECK_THROWS_WITH_AS(fit_influence(g, pool), doctest::Contains("mixed alpha"),
                         ValidationError);
}

TEST_CASE("predictions are monotone and terminate within |E|+1 states") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 300, 8, {2, 1.5, 1.5});
    const InfluenceParams params = fit_influence(g, pool);
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        ActiveSet s0 = ActiveSet::all_active(g);
        for (int idx : rng.choose(g.num_branches(), 2)) s0.set(idx, false);
        const CascadePrediction pred = predict_influence(params, s0);
        CHECK(pred.length <= g.num_branches() + 1);
        CHECK(pred.length <= params.horizon);
        // monotone: reconstructing states from the steps must be consistent
        for (int e = 0; e < g.num_branches(); ++e) {
            CHECK(pred.failure_step[e] >= 0);
            CHECK(pred.failure_step[e] <= pred.length);
            if (!s0.active(e)) CHECK(pred.failure_step[e] == 0);
        }
    }
}

TEST_CASE("fit beats the majority-class floor on its own training transitions") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 400, 15, {2, 1.5, 1.5});
    const InfluenceParams params = fit_influence(g, pool);

    long correct = 0, total = 0, majority_ones = 0;
    for (const CascadeSample& s : pool.samples) {
        const auto states = states_from_steps(s.failure_step, s.length);
        for (std::size_t t = 0; t + 1 < states.size(); ++t) {
            Eigen::VectorXd cur(g.num_branches());
            for (int e = 0; e < g.num_branches(); ++e) cur[e] = states[t][e];
            const Eigen::VectorXd scores = params.influence * cur;
            for (int e = 0; e < g.num_branches(); ++e) {
                if (!states[t][e]) continue;  // forced prediction, skip
                const bool predicted = scores[e] >= params.threshold[e];
                const bool actual = states[t + 1][e];
                correct += predicted == actual;
                majority_ones += actual;
                ++total;
            }
        }
    }
    REQUIRE(total > 0);
    const double floor =
        std::max(majority_ones, total - majority_ones) / static_cast<double>(total);
    CHECK(static_cast<double>(correct) / total >= floor - 1e-12);
}

TEST_CASE("influence params round-trip through json") {
    const Grid g = four_branch_grid();
    const InfluenceParams params = fit_influence(g, lagged_pool(g));
    const std::string path =
        (std::filesystem::temp_directory_path() / "influence_roundtrip.json").string();
    save_influence(params, path);
    const InfluenceParams back = load_influence(path);
    CHECK(back.grid_id == params.grid_id);
    CHECK(back.alpha_tag == params.alpha_tag);
    CHECK(back.horizon == params.horizon);
    CHECK(back.influence == params.influence);
    CHECK(back.threshold == params.threshold);
    std::filesystem::remove(path);
}
