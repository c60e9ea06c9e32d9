#include "gridcascade/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gridcascade/cascade.hpp"
#include "gridcascade/error.hpp"

namespace gridcascade {

namespace {

// JSON-safe stand-ins for "always survive" / "always trip".
constexpr double kThresholdLowest = -1e30;
constexpr double kThresholdHighest = 1e30;

// Threshold over (score, label) pairs maximizing balanced accuracy of
// "predict 1 iff score >= threshold"; ties resolve to the smallest threshold.
double sweep_threshold(std::vector<std::pair<double, int>>& rows) {
    if (rows.empty()) return kThresholdLowest;
    int positives = 0;
    for (const auto& r : rows) positives += r.second;
    const int negatives = static_cast<int>(rows.size()) - positives;
    if (positives == 0) return kThresholdHighest;
    if (negatives == 0) return kThresholdLowest;

    std::sort(rows.begin(), rows.end());
    double best_tau = kThresholdLowest;
    double best_acc = -1.0;
    std::size_t i = 0;
    int neg_below = 0;
    int pos_below = 0;
    while (i <= rows.size()) {
        const double tau = i < rows.size() ? rows[i].first : rows.back().first + 1.0;
        const double tpr = static_cast<double>(positives - pos_below) / positives;
        const double tnr = static_cast<double>(neg_below) / negatives;
        const double acc = 0.5 * (tpr + tnr);
        if (acc > best_acc) {
            best_acc = acc;
            best_tau = tau;
        }
        if (i == rows.size()) break;
        // advance past this distinct score
        const double score = rows[i].first;
        while (i < rows.size() && rows[i].first == score) {
            pos_below += rows[i].second;
            neg_below += 1 - rows[i].second;
            ++i;
        }
    }
    return best_tau;
}

}  // namespace

InfluenceParams fit_influence(const Grid& grid, const DataPool& pool, double ridge) {
    if (pool.samples.empty()) throw ValidationError("fit_influence: empty pool");
    const int num_edges = grid.num_branches();

    InfluenceParams params;
    params.grid_id = grid.id;
    params.ridge = ridge;
    params.alpha_tag = pool.samples.front().alpha;
    params.horizon = 1;
    for (const CascadeSample& s : pool.samples) {
        if (s.alpha != params.alpha_tag) {
            throw ValidationError("fit_influence: mixed alpha values in pool (" +
                                  std::to_string(params.alpha_tag) + " vs " +
                                  std::to_string(s.alpha) + "); fit one instance per scaling");
        }
        if (static_cast<int>(s.failure_step.size()) != num_edges) {
            throw ValidationError("fit_influence: sample does not match the grid");
        }
        params.horizon = std::max(params.horizon, s.length);
    }

    // Gather one-step transitions.
    std::vector<std::vector<std::vector<std::uint8_t>>> all_states;
    all_states.reserve(pool.samples.size());
    std::size_t num_transitions = 0;
    for (const CascadeSample& s : pool.samples) {
        all_states.push_back(states_from_steps(s.failure_step, s.length));
        num_transitions += all_states.back().size() - 1;
    }

    params.influence = Eigen::MatrixXd::Zero(num_edges, num_edges);
    params.threshold = Eigen::VectorXd::Constant(num_edges, kThresholdLowest);
    if (num_transitions == 0) return params;  // no cascade ever progressed

    Eigen::MatrixXd x(num_edges, static_cast<Eigen::Index>(num_transitions));
    Eigen::MatrixXd y(num_edges, static_cast<Eigen::Index>(num_transitions));
    Eigen::Index col = 0;
    for (const auto& states : all_states) {
        for (std::size_t t = 0; t + 1 < states.size(); ++t) {
            for (int e = 0; e < num_edges; ++e) {
                x(e, col) = states[t][static_cast<std::size_t>(e)];
                y(e, col) = states[t + 1][static_cast<std::size_t>(e)];
            }
            ++col;
        }
    }

    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += ridge;
    params.influence = gram.ldlt().solve(x * y.transpose()).transpose();

    // Per-branch thresholds on the decision-relevant transitions (branch
    // still active at t).
    const Eigen::MatrixXd scores = params.influence * x;
    std::vector<std::pair<double, int>> rows;
    for (int e = 0; e < num_edges; ++e) {
        rows.clear();
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (x(e, j) != 0.0) rows.emplace_back(scores(e, j), static_cast<int>(y(e, j)));
        }
        params.threshold[e] = sweep_threshold(rows);
    }
    return params;
}

CascadePrediction predict_influence(const InfluenceParams& params, const ActiveSet& s0) {
    const int num_edges = static_cast<int>(params.influence.rows());
    if (s0.size() != num_edges) {
        throw ValidationError("predict_influence: contingency mask does not match the model");
    }
    CascadePrediction out;
    out.failure_step.assign(static_cast<std::size_t>(num_edges), 0);

    Eigen::VectorXd state(num_edges);
    for (int e = 0; e < num_edges; ++e) state[e] = s0.mask[static_cast<std::size_t>(e)];
    Eigen::VectorXd scores(num_edges);

    int recorded = 0;
    while (true) {
        for (int e = 0; e < num_edges; ++e) {
            out.failure_step[static_cast<std::size_t>(e)] += state[e] != 0.0;
        }
        ++recorded;
        if (recorded >= params.horizon) break;

        scores.noalias() = params.influence * state;
        bool changed = false;
        for (int e = 0; e < num_edges; ++e) {
            if (state[e] != 0.0 && scores[e] < params.threshold[e]) {
                state[e] = 0.0;
                changed = true;
            }
        }
        if (!changed) break;
    }
    out.length = recorded;
    return out;
}

std::vector<CascadePrediction> predict_influence_pool(const InfluenceParams& params,
                                                      const DataPool& pool) {
    std::vector<CascadePrediction> out;
    out.reserve(pool.samples.size());
    for (const CascadeSample& s : pool.samples) {
        ActiveSet s0;
        s0.mask = s.contingency;
        out.push_back(predict_influence(params, s0));
    }
    return out;
}

void save_influence(const InfluenceParams& params, const std::string& path) {
    nlohmann::ordered_json j;
    j["schema"] = "gridcascade.influence/1";
    j["grid_id"] = params.grid_id;
    j["alpha_tag"] = params.alpha_tag;
    j["T"] = params.horizon;
    j["ridge"] = params.ridge;
    auto d = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < params.influence.rows(); ++r) {
        auto row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < params.influence.cols(); ++c) {
            row.push_back(params.influence(r, c));
        }
        d.push_back(std::move(row));
    }
    j["D"] = std::move(d);
    auto tau = nlohmann::ordered_json::array();
    for (Eigen::Index e = 0; e < params.threshold.size(); ++e) tau.push_back(params.threshold[e]);
    j["tau"] = std::move(tau);

    std::ofstream out(path);
    if (!out) throw IoError("cannot write influence params: " + path);
    out << j.dump() << '\n';
}

InfluenceParams load_influence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open influence params: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("influence params " + path + ": " + e.what());
    }
    if (!j.contains("schema") || j["schema"] != "gridcascade.influence/1") {
        throw IoError("influence params " + path + ": missing or unsupported schema");
    }
    for (const char* key : {"grid_id", "alpha_tag", "T", "ridge", "D", "tau"}) {
        if (!j.contains(key)) {
            throw IoError("influence params " + path + ": missing '" + std::string(key) + "'");
        }
    }
    InfluenceParams p;
    p.grid_id = j["grid_id"].get<std::string>();
    p.alpha_tag = j["alpha_tag"].get<double>();
    p.horizon = j["T"].get<int>();
    p.ridge = j["ridge"].get<double>();
    const auto& d = j["D"];
    const int num_edges = static_cast<int>(d.size());
    p.influence.resize(num_edges, num_edges);
    for (int r = 0; r < num_edges; ++r) {
        const auto& row = d[static_cast<std::size_t>(r)];
        if (static_cast<int>(row.size()) != num_edges) {
            throw IoError("influence params: D is not square");
        }
        for (int c = 0; c < num_edges; ++c) {
            p.influence(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    const auto& tau = j["tau"];
    if (static_cast<int>(tau.size()) != num_edges) {
        throw IoError("influence params: tau length does not match D");
    }
    p.threshold.resize(num_edges);
    for (int e = 0; e < num_edges; ++e) {
        p.threshold[e] = tau[static_cast<std::size_t>(e)].get<double>();
    }
    return p;
}

}  // namespace gridcascade
