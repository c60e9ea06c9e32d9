#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridcascade/error.hpp"
#include "gridcascade/metrics.hpp"
#include "testutil.hpp"

using namespace gridcascade;

namespace {

CascadeSample make_sample(double alpha, std::vector<std::uint8_t> s0, std::vector<int> f, int t) {
    CascadeSample s;
    s.alpha = alpha;
    s.contingency = std::move(s0);
    s.injections = {0.0, 0.0, 0.0};
    s.failure_step = std::move(f);
    s.length = t;
    return s;
}

DataPool three_branch_pool() {
    DataPool pool;
    pool.grid_id = "toy";
    // sample 0: branch 0 in contingency, branch 1 fails at 1, branch 2 survives
    pool.samples.push_back(make_sample(1.2, {0, 1, 1}, {0, 1, 2}, 2));
    // sample 1: branch 2 in contingency, nothing propagates
    pool.samples.push_back(make_sample(1.8, {1, 1, 0}, {1, 1, 0}, 1));
    return pool;
}

std::vector<CascadePrediction> oracle_predictions(const DataPool& pool) {
    std::vector<CascadePrediction> preds;
    for (const auto& s : pool.samples) preds.push_back({s.failure_step, s.length});
    return preds;
}

double only_value(const std::vector<std::optional<BinStat>>& stats) {
    double value = -1.0;
    int filled = 0;
    for (const auto& s : stats) {
        if (s) {
            value = s->value;
            ++filled;
        }
    }
    REQUIRE(filled >= 1);
    return value;
}

}  // namespace

TEST_CASE("binning respects the closed right edge") {
    const Binning b{1.0, 2.0, 21};
    CHECK(bin_index(b, 1.0) == 0);
    CHECK(bin_index(b, 2.0) == 20);
    CHECK(bin_index(b, 1.5) == 10);
    CHECK(bin_center(b, 0) == doctest::Approx(1.0 + 0.5 / 21));
}

TEST_CASE("bin_report averages within bins and leaves empty bins absent") {
    const Binning b{0.0, 1.0, 4};
    const auto stats = bin_report({1.0, 3.0, 10.0}, {0.1, 0.2, 0.9}, b);
    REQUIRE(stats.size() == 4);
    CHECK(stats[0]->value == doctest::Approx(2.0));
    CHECK(stats[0]->count == 2);
    CHECK_FALSE(stats[1].has_value());
    CHECK_FALSE(stats[2].has_value());
    CHECK(stats[3]->value == doctest::Approx(10.0));
}

TEST_CASE("reconcile_steps maps survivors onto the common horizon") {
    const auto [pred, truth] = reconcile_steps({3, 1, 0}, 3, {5, 1, 0}, 5);
    CHECK(pred == std::vector<int>{5, 1, 0});   // survivor moves 3 -> 5
    CHECK(truth == std::vector<int>{5, 1, 0});
}

TEST_CASE("failure size error formula") {
    DataPool pool;
    pool.grid_id = "toy";
    // truth: 4 failed of 6; prediction: 3 failed
    pool.samples.push_back(
        make_sample(1.5, {0, 0, 1, 1, 1, 1}, {0, 0, 1, 2, 3, 3}, 3));
    pool.samples[0].injections = {0.0};
    std::vector<CascadePrediction> preds = {{{0, 0, 1, 3, 3, 3}, 3}};
    const auto stats = failure_size_error(preds, pool, {1.0, 2.0, 1});
    CHECK(only_value(stats) == doctest::Approx(0.25));
}

TEST_CASE("two samples in one bin average their size errors") {
    DataPool pool;
    pool.grid_id = "toy";
    // errors 0.2 (|5-4|/5) and 0.4 (|5-3|/5)
    pool.samples.push_back(make_sample(1.5, {0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}, 2));
    pool.samples.push_back(make_sample(1.52, {0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}, 2));
    std::vector<CascadePrediction> preds = {
        {{0, 0, 1, 1, 2}, 2},  // 4 failed vs 5 -> 0.2
        {{0, 0, 2, 2, 1}, 2},  // 3 failed vs 5 -> 0.4
    };
    const auto stats = failure_size_error(preds, pool, {1.0, 2.0, 1});
    CHECK(only_value(stats) == doctest::Approx(0.3));
}

TEST_CASE("final state error counts disagreeing branches") {
    const DataPool pool = three_branch_pool();
    SUBCASE("perfect predictions") {
        const auto stats = final_state_error(oracle_predictions(pool), pool, {1.0, 2.0, 1});
        CHECK(only_value(stats) == 0.0);
    }
    SUBCASE("one branch wrong is one third") {
        auto preds = oracle_predictions(pool);
        preds[0].failure_step[2] = 1;  // branch 2 now predicted failed
        const auto stats = final_state_error(preds, pool, {1.0, 2.0, 1});
        // sample 0 contributes 1/3, sample 1 contributes 0 -> mean 1/6
        CHECK(only_value(stats) == doctest::Approx(1.0 / 6.0));
    }
    SUBCASE("everything wrong is one") {
        std::vector<CascadePrediction> preds = {{{2, 2, 0}, 2}, {{0, 0, 1}, 1}};
        const auto stats = final_state_error(preds, pool, {1.0, 2.0, 1});
        CHECK(only_value(stats) == doctest::Approx(1.0));
    }
}

TEST_CASE("failure step error is symmetric and measured in generations") {
    const DataPool pool = three_branch_pool();
    auto preds = oracle_predictions(pool);
    SUBCASE("perfect") {
        const auto stats = failure_step_error(preds, pool, {1.0, 2.0, 1});
        CHECK(only_value(stats) == 0.0);
    }
    SUBCASE("one branch off by two") {
        preds[0].failure_step[1] = 3;
        preds[0].length = 4;           // longer horizon on the prediction side
        preds[0].failure_step[2] = 4;  // still a survivor under that horizon
        const auto with_pred = failure_step_error(preds, pool, {1.0, 2.0, 1});
        // branch1: |3-1| = 2; survivors land on the common horizon both ways
        double total = 0.0;
        long count = 0;
        for (const auto& s : with_pred) {
            if (s) {
                total += s->value * s->count;
                count += s->count;
            }
        }
        REQUIRE(count == 2);
        CHECK(total / count == doctest::Approx((2.0 / 3.0) / 2.0));
    }
}

TEST_CASE("branch failure frequency counts in-cascade failures only") {
    const DataPool pool = three_branch_pool();
    const auto freq = branch_failure_frequency(pool);
    CHECK(freq[0] == 0.0);                      // only failed as contingency
    CHECK(freq[1] == doctest::Approx(0.5));     // failed in-cascade in sample 0
    CHECK(freq[2] == 0.0);                      // contingency or survivor
}

TEST_CASE("branch final state error excludes contingency samples from the denominator") {
    DataPool pool;
    pool.grid_id = "toy";
    for (int i = 0; i < 100; ++i) {
        // branch 0 is in the contingency for the first 10 samples
        const bool in_contingency = i < 10;
        pool.samples.push_back(make_sample(
            1.5, {in_contingency ? std::uint8_t{0} : std::uint8_t{1}, 1, 0},
            {in_contingency ? 0 : 1, 1, 0}, 1));
    }
    auto preds = oracle_predictions(pool);
    // five wrong predictions for branch 0 among the 90 eligible samples
    for (int i = 10; i < 15; ++i) preds[i].failure_step[0] = 0;
    const auto stats = branch_final_state_error(preds, pool);
    REQUIRE(stats[0].has_value());
    CHECK(stats[0]->value == doctest::Approx(5.0 / 90.0));
    CHECK(stats[0]->count == 90);
}

TEST_CASE("a branch that is always in the contingency has an absent state cell") {
    DataPool pool;
    pool.grid_id = "toy";
    pool.samples.push_back(make_sample(1.5, {0, 1, 1}, {0, 1, 1}, 1));
    const auto stats = branch_final_state_error(oracle_predictions(pool), pool);
    CHECK_FALSE(stats[0].has_value());
    CHECK(stats[1].has_value());
}

TEST_CASE("branch failure step error averages in-cascade samples and marks absent cells") {
    DataPool pool;
    pool.grid_id = "toy";
    pool.samples.push_back(make_sample(1.5, {0, 1, 1}, {0, 1, 3}, 3));
    pool.samples.push_back(make_sample(1.5, {0, 1, 1}, {0, 2, 3}, 3));
    auto preds = oracle_predictions(pool);
    SUBCASE("perfect") {
        const auto stats = branch_failure_step_error(preds, pool);
        REQUIRE(stats[1].has_value());
        CHECK(stats[1]->value == 0.0);
        CHECK_FALSE(stats[2].has_value());  // branch 2 never failed in-cascade
    }
    SUBCASE("errors of 1 and 3 average to 2") {
        preds[0].failure_step[1] = 2;  // off by 1
        preds[1].failure_step[1] = 5;
        preds[1].length = 6;           // off by 3 after reconciliation
        const auto stats = branch_failure_step_error(preds, pool);
        REQUIRE(stats[1].has_value());
        CHECK(stats[1]->value == doctest::Approx(2.0));
    }
}

TEST_CASE("the oracle as its own predictor zeroes the whole report") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 400, 33, {2, 1.0, 2.0});
    const auto preds = oracle_predictions(pool);
    const MetricsReport report = evaluate_predictions(preds, pool, pool, "oracle");
    for (const auto& cell : report.size_error) {
        if (cell) CHECK(cell->value == 0.0);
    }
    for (const auto& cell : report.state_error) {
        if (cell) CHECK(cell->value == 0.0);
    }
    for (const auto& cell : report.step_error) {
        if (cell) CHECK(cell->value == 0.0);
    }
    for (const auto& cell : report.branch_state_error) {
        if (cell) CHECK(cell->value == 0.0);
    }
    for (const auto& cell : report.branch_step_error) {
        if (cell) CHECK(cell->value == 0.0);
    }
}

TEST_CASE("state error equals a brute-force recount from raw states") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 100, 44, {2, 1.0, 2.0});
    // a deliberately imperfect predictor: survive everything
    std::vector<CascadePrediction> preds;
    for (const auto& s : pool.samples) {
        CascadePrediction p;
        p.length = 1;
        p.failure_step.assign(s.failure_step.size(), 1);
        for (std::size_t e = 0; e < s.contingency.size(); ++e) {
            if (!s.contingency[e]) p.failure_step[e] = 0;
        }
        preds.push_back(std::move(p));
    }
    const Binning one_bin{1.0, 2.0, 1};
    const auto stats = final_state_error(preds, pool, one_bin);

    double expected = 0.0;
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        const auto& s = pool.samples[i];
        const auto states = states_from_steps(s.failure_step, s.length);
        int wrong = 0;
        for (std::size_t e = 0; e < s.failure_step.size(); ++e) {
            const bool truly_failed = states.back()[e] == 0;
            const bool predicted_failed = !s.contingency[e];
            wrong += truly_failed != predicted_failed;
        }
        expected += static_cast<double>(wrong) / s.failure_step.size();
    }
    expected /= pool.samples.size();
    CHECK(only_value(stats) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("metric values are invariant to sample order") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 60, 3, {2, 1.0, 2.0});
    std::vector<CascadePrediction> preds;
    for (const auto& s : pool.samples) {
        CascadePrediction p{s.failure_step, s.length};
        if (p.failure_step[5] >= 1) p.failure_step[5] = std::max(1, p.failure_step[5] - 1);
        preds.push_back(std::move(p));
    }
    DataPool reversed = pool;
    std::reverse(reversed.samples.begin(), reversed.samples.end());
    std::vector<CascadePrediction> reversed_preds(preds.rbegin(), preds.rend());

    const Binning bins{1.0, 2.0, 7};
    const auto a = final_state_error(preds, pool, bins);
    const auto b = final_state_error(reversed_preds, reversed, bins);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].has_value() == b[i].has_value());
        if (a[i]) CHECK(a[i]->value == doctest::Approx(b[i]->value).epsilon(1e-12));
    }
}

TEST_CASE("csv emission writes one file per metric") {
    const Grid g = testutil::grid30();
    const DataPool pool = generate_pool(g, 50, 12, {2, 1.0, 2.0});
    const auto preds = oracle_predictions(pool);
    const MetricsReport report = evaluate_predictions(preds, pool, pool, "oracle");
    const auto dir = std::filesystem::temp_directory_path() / "gridcascade_metrics_csv";
    write_metrics_csv(report, dir.string());
    for (const char* name : {"l_size.csv", "l_state.csv", "l_failure_step.csv",
                             "branch_state_error.csv", "branch_step_error.csv"}) {
        const auto path = dir / name;
        REQUIRE(std::filesystem::exists(path));
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK((header == "bin,value,count" || header == "branch,freq,value,count"));
    }
    std::filesystem::remove_all(dir);
}
