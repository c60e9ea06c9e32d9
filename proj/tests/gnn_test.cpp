#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gridcascade/error.hpp"
#include "gridcascade/gnn.hpp"
#include "testutil.hpp"

using namespace gridcascade;

namespace {

// Literal single-sample reference: iterates the active edge set directly,
// fetching raw attention coefficients through the flat layout. No fixed-shape
// masking anywhere; edges failed at t0 simply do not exist.
Eigen::MatrixXd reference_forward(const GnnParams& params, const EdgeAdjacency& adj,
                                  const std::vector<std::uint8_t>& s0,
                                  const std::vector<double>& injections) {
    const int num_edges = params.num_edges;
    const int feat = params.feature_dim;

    std::vector<Eigen::VectorXd> node_features;
    for (double p : injections) {
        Eigen::MatrixXd x(1, 1);
        x(0, 0) = p;
        node_features.push_back(params.h_initial.forward(x).col(0));
    }

    Eigen::VectorXd s0_vec(num_edges);
    for (int e = 0; e < num_edges; ++e) s0_vec[e] = s0[static_cast<std::size_t>(e)];
    const Eigen::VectorXd a = params.attn_edge_edge.forward(s0_vec).col(0);
    const Eigen::VectorXd b = params.attn_node_edge.forward(s0_vec).col(0);

    // coefficient lookup for the ordered pair (e, d)
    auto coeff_of = [&](int e, int d) {
        for (const auto& pr : adj.pairs) {
            if (pr.edge == e && pr.neighbor == d) return a[pr.coeff];
        }
        REQUIRE(false);
        return 0.0;
    };

    std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(num_edges));
    for (int e = 0; e < num_edges; ++e) {
        if (!s0[static_cast<std::size_t>(e)]) continue;
        h[static_cast<std::size_t>(e)] =
            node_features[static_cast<std::size_t>(adj.from_pos[e])] -
            node_features[static_cast<std::size_t>(adj.to_pos[e])];
    }

    for (int k = 0; k < params.averaging_steps; ++k) {
        std::vector<Eigen::VectorXd> next(static_cast<std::size_t>(num_edges));
        for (int e = 0; e < num_edges; ++e) {
            if (!s0[static_cast<std::size_t>(e)]) continue;
            Eigen::VectorXd msg = Eigen::VectorXd::Zero(feat);
            for (int d : adj.neighbors[static_cast<std::size_t>(e)]) {
                if (d == e || !s0[static_cast<std::size_t>(d)]) continue;
                msg += coeff_of(e, d) * adj.inv_sqrt_count[static_cast<std::size_t>(e)] *
                       adj.inv_sqrt_count[static_cast<std::size_t>(d)] *
                       h[static_cast<std::size_t>(d)];
            }
            const Eigen::VectorXd pair_input =
                0.5 * (b[2 * e] * node_features[static_cast<std::size_t>(adj.from_pos[e])] +
                       b[2 * e + 1] * node_features[static_cast<std::size_t>(adj.to_pos[e])]);
            const double inv_count = adj.inv_sqrt_count[static_cast<std::size_t>(e)] *
                                     adj.inv_sqrt_count[static_cast<std::size_t>(e)];
            next[static_cast<std::size_t>(e)] =
                inv_count * h[static_cast<std::size_t>(e)] +
                params.h_edge_edge[static_cast<std::size_t>(k)].forward(msg).col(0) +
                params.h_node_edge[static_cast<std::size_t>(k)].forward(pair_input).col(0);
        }
        h = std::move(next);
    }

    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(params.horizon + 1, num_edges);
    for (int e = 0; e < num_edges; ++e) {
        if (!s0[static_cast<std::size_t>(e)]) continue;
        probs.col(e) = softmax(params.h_final.forward(h[static_cast<std::size_t>(e)]).col(0));
    }
    return probs;
}

GnnParams small_params(const Grid& grid, const EdgeAdjacency& adj, int L, int K, int T,
                       std::uint64_t seed) {
    Rng rng(seed);
    return GnnParams::create(grid, adj, L, K, T, rng);
}

CascadeSample sample_for(const Grid& grid, std::vector<int> failed, double alpha,
                         const std::vector<int>& failure_step, int length) {
    CascadeSample s;
    s.contingency.assign(static_cast<std::size_t>(grid.num_branches()), 1);
    for (int e : failed) s.contingency[static_cast<std::size_t>(e)] = 0;
    s.alpha = alpha;
    for (const Bus& b : grid.buses) s.injections.push_back(alpha * b.p_default);
    s.failure_step = failure_step;
    s.length = length;
    return s;
}

}  // namespace

TEST_CASE("tri3 edge adjacency follows the literal directed rule") {
    const Grid g = testutil::tri3();
    const EdgeAdjacency adj = build_adjacency(g);
    // e0=(1,2), e1=(1,3), e2=(2,3)
    CHECK(adj.neighbors[0] == std::vector<int>{0, 1});
    CHECK(adj.neighbors[1] == std::vector<int>{0, 1, 2});
    CHECK(adj.neighbors[2] == std::vector<int>{1, 2});
    CHECK(adj.coeff_count == 4);  // (0,1), (1,0), (1,2), (2,1)
}

TEST_CASE("undirected adjacency counts any shared endpoint") {
    const Grid g = testutil::tri3();
    const EdgeAdjacency adj = build_adjacency(g, AdjacencyMode::undirected);
    for (int e = 0; e < 3; ++e) CHECK(adj.neighbors[e] == std::vector<int>{0, 1, 2});
    CHECK(adj.coeff_count == 6);
}

TEST_CASE("every edge is its own neighbor") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const Grid g = testutil::random_connected_grid(rng, 12);
        for (AdjacencyMode mode : {AdjacencyMode::directed, AdjacencyMode::undirected}) {
            const EdgeAdjacency adj = build_adjacency(g, mode);
            for (int e = 0; e < g.num_branches(); ++e) {
                CHECK(std::find(adj.neighbors[e].begin(), adj.neighbors[e].end(), e) !=
                      adj.neighbors[e].end());
            }
        }
    }
}

TEST_CASE("a single-branch grid has only the self neighbor") {
    Grid g;
    g.id = "pair";
    g.base_mva = 1.0;
    g.buses = {{1, 1.0, true}, {2, -1.0, false}};
    g.branches = {{0, 1, 2, 1.0, 2.0}};
    const EdgeAdjacency adj = build_adjacency(g);
    CHECK(adj.neighbors[0] == std::vector<int>{0});
    CHECK(adj.coeff_count == 0);
}

TEST_CASE("active-edge probabilities form a simplex") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 6, 3, 4, 17);
    ActiveSet s0 = ActiveSet::all_active(g);
    s0.set(1, false);
    const Eigen::MatrixXd probs = edge_probabilities(params, adj, g, s0, {1.3, -0.65, -0.65});
    for (int e = 0; e < 3; ++e) {
        if (e == 1) {
            CHECK(probs.col(e).norm() == 0.0);
        } else {
            CHECK(std::abs(probs.col(e).sum() - 1.0) <= 1e-12);
            CHECK(probs.col(e).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("uniform injections zero the seed edge features") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 5, 2, 3, 23);
    CascadeSample s = sample_for(g, {}, 1.0, {1, 1, 1}, 1);
    s.injections = {0.7, 0.7, 0.7};
    const GnnBatch batch = make_batch(g, std::span<const CascadeSample>(&s, 1));
    const GnnForwardTrace trace = forward_gnn(params, adj, batch);
    CHECK(trace.hidden[0].norm() == 0.0);
}

TEST_CASE("fixed-shape masked forward equals the literal variable-set formulation") {
    const Grid g = testutil::grid30();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 8, 3, 5, 41);
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::uint8_t> s0(static_cast<std::size_t>(g.num_branches()), 1);
        for (int idx : rng.choose(g.num_branches(), 2 + static_cast<int>(rng.below(3)))) {
            s0[static_cast<std::size_t>(idx)] = 0;
        }
        std::vector<double> inj;
        const double alpha = rng.uniform(1.0, 2.0);
        for (const Bus& b : g.buses) inj.push_back(alpha * b.p_default);

        ActiveSet active;
        active.mask = s0;
        const Eigen::MatrixXd fast = edge_probabilities(params, adj, g, active, inj);
        const Eigen::MatrixXd reference = reference_forward(params, adj, s0, inj);
        CHECK((fast - reference).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("batched forward equals per-sample forwards") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 4, 2, 3, 7);
    std::vector<CascadeSample> samples = {
        sample_for(g, {0, 1}, 1.2, {0, 0, 1}, 1),
        sample_for(g, {2}, 1.8, {1, 1, 0}, 1),
        sample_for(g, {1}, 1.5, {2, 0, 2}, 2),
    };
    const GnnBatch batch = make_batch(g, samples);
    const Eigen::MatrixXd logits = gnn_logits(params, adj, batch);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const GnnBatch single = make_batch(g, std::span<const CascadeSample>(&samples[i], 1));
        const Eigen::MatrixXd one = gnn_logits(params, adj, single);
        for (int e = 0; e < g.num_branches(); ++e) {
            if (!samples[i].contingency[static_cast<std::size_t>(e)]) continue;
            const Eigen::VectorXd batched =
                logits.col(static_cast<Eigen::Index>(e) * batch.batch_size +
                           static_cast<Eigen::Index>(i));
            CHECK((batched - one.col(e)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("argmax decode breaks ties toward the smaller step and zeroes contingencies") {
    const Grid g = testutil::tri3_default_caps();
    std::vector<CascadeSample> samples = {sample_for(g, {1}, 1.0, {1, 0, 1}, 1)};
    const GnnBatch batch = make_batch(g, samples);
    Eigen::MatrixXd logits(3, 3);  // horizon 2, three edges, batch of one
    logits.col(0) << 0.1, 0.7, 0.2;   // clear winner at step 1
    logits.col(1) << 9.0, 9.0, 9.0;   // contingency edge, ignored anyway
    logits.col(2) << 0.5, 0.5, 0.1;   // tie between 0 and 1 -> 0
    const auto preds = predictions_from_logits(logits, batch);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0] == std::vector<int>{1, 0, 0});
}

TEST_CASE("adding a constant to an edge's logits leaves its argmax unchanged") {
    const Grid g = testutil::tri3_default_caps();
    std::vector<CascadeSample> samples = {sample_for(g, {}, 1.0, {1, 1, 1}, 1)};
    const GnnBatch batch = make_batch(g, samples);
    Eigen::MatrixXd logits = Eigen::MatrixXd::Random(4, 3);
    const auto before = predictions_from_logits(logits, batch);
    logits.col(1).array() += 123.25;
    const auto after = predictions_from_logits(logits, batch);
    CHECK(before == after);
}

TEST_CASE("target classes reconcile survivors onto the model horizon") {
    CHECK(target_class(0, 1, 3) == 0);   // contingency branch
    CHECK(target_class(1, 1, 3) == 3);   // survived a T=1 cascade
    CHECK(target_class(2, 4, 3) == 2);   // failed at step 2
    CHECK(target_class(4, 4, 3) == 3);   // survived a T=4 cascade
    CHECK(target_class(5, 9, 3) == 3);   // failed beyond the horizon, clipped
}

TEST_CASE("loss is the mean cross entropy over surviving edges and samples") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 4, 2, 3, 3);
    std::vector<CascadeSample> samples = {
        sample_for(g, {0, 1}, 1.1, {0, 0, 1}, 1),
        sample_for(g, {0}, 1.9, {0, 1, 1}, 2),
    };
    const GnnLoss loss = loss_batch(params, adj, g, samples);

    const GnnBatch batch = make_batch(g, samples);
    const Eigen::MatrixXd logits = gnn_logits(params, adj, batch);
    double expected = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double sample_loss = 0.0;
        int active = 0;
        for (int e = 0; e < 3; ++e) {
            if (!samples[i].contingency[static_cast<std::size_t>(e)]) continue;
            const int target = target_class(samples[i].failure_step[static_cast<std::size_t>(e)],
                                            samples[i].length, params.horizon);
            sample_loss += softmax_xent(logits.col(static_cast<Eigen::Index>(e) * 2 +
                                                   static_cast<Eigen::Index>(i)),
                                        target)
                               .loss;
            ++active;
        }
        expected += sample_loss / active;
    }
    expected /= static_cast<double>(samples.size());
    CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));

    // batch order invariance
    std::vector<CascadeSample> swapped = {samples[1], samples[0]};
    const GnnLoss loss2 = loss_batch(params, adj, g, swapped);
    CHECK(loss2.value == doctest::Approx(loss.value).epsilon(1e-12));
}

TEST_CASE("full-model gradients match finite differences on tri3") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    GnnParams params = small_params(g, adj, 4, 2, 3, 101);
    // Evaluate at a generic point: fresh zero biases sit exactly on relu
    // kinks (an active edge with no active neighbors feeds an all-zero
    // message), where central differences straddle the corner.
    {
        Rng noise(555);
        Eigen::VectorXd flat = params.flatten();
        for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += noise.uniform(-0.05, 0.05);
        params.unflatten(flat);
    }
    std::vector<CascadeSample> samples = {
        sample_for(g, {0}, 1.4, {0, 1, 1}, 2),
        sample_for(g, {1, 2}, 1.9, {1, 0, 0}, 1),
        sample_for(g, {2}, 1.05, {3, 3, 0}, 3),
    };

    const GnnLoss loss = loss_batch(params, adj, g, samples);
    const Eigen::VectorXd analytic = flatten_grads(params, loss.grads);

    auto loss_of = [&](const Eigen::VectorXd& flat) {
        GnnParams probe = params;
        probe.unflatten(flat);
        return loss_batch(probe, adj, g, samples).value;
    };
    const Eigen::VectorXd numeric = finite_difference_gradient(loss_of, params.flatten());

    REQUIRE(analytic.size() == numeric.size());
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
        CHECK(std::abs(analytic[i] - numeric[i]) / denom < 1e-4);
    }
}

TEST_CASE("training is reproducible and reduces the loss on a small pool") {
    const Grid g = testutil::tri3_with_capacities(0.6, 0.6, 0.3);
    const EdgeAdjacency adj = build_adjacency(g);
    const DataPool pool = generate_pool(g, 60, 19);

    TrainConfig config;
    config.epochs = 30;
    config.batch_size = 16;
    config.seed = 5;

    Rng rng_a(1), rng_b(1);
    GnnParams a = GnnParams::create(g, adj, 8, 2, max_cascade_length(pool), rng_a);
    GnnParams b = GnnParams::create(g, adj, 8, 2, max_cascade_length(pool), rng_b);
    const TrainResult ra = train_gnn(a, adj, g, pool, config);
    const TrainResult rb = train_gnn(b, adj, g, pool, config);
    CHECK(ra.loss_curve == rb.loss_curve);
    CHECK(ra.loss_curve.back() < ra.loss_curve.front());
    CHECK(ra.skipped_steps == 0);
    CHECK(a.flatten() == b.flatten());
}

TEST_CASE("checkpoints round-trip bit-exactly and guard the grid identity") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 5, 2, 4, 77);
    const std::string path =
        (std::filesystem::temp_directory_path() / "gnn_roundtrip.json").string();
    save_gnn(params, path);
    const GnnParams back = load_gnn(path);
    check_grid_match(back, g);

    std::vector<CascadeSample> samples = {sample_for(g, {0}, 1.5, {0, 1, 1}, 2)};
    const GnnBatch batch = make_batch(g, samples);
    const Eigen::MatrixXd l1 = gnn_logits(params, adj, batch);
    const Eigen::MatrixXd l2 = gnn_logits(back, adj, batch);
    CHECK(l1 == l2);

    Grid other = g;
    other.id = "different";
    CHECK_THROWS_AS(check_grid_match(back, other), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("loading a truncated checkpoint names the missing tensor") {
    const Grid g = testutil::tri3_default_caps();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 4, 2, 3, 13);
    const std::string path =
        (std::filesystem::temp_directory_path() / "gnn_truncated.json").string();
    save_gnn(params, path);
    // drop one tensor
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    in.close();
    j["nets"].erase("attn_node_edge");
    std::ofstream out(path);
    out << j.dump();
    out.close();
    CHECK_THROWS_WITH_AS(load_gnn(path), doctest::Contains("attn_node_edge"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("the batched inference engine matches the reference forward exactly") {
    const Grid g = testutil::grid30();
    const EdgeAdjacency adj = build_adjacency(g);
    const GnnParams params = small_params(g, adj, 8, 3, 6, 2024);
    const DataPool pool = generate_pool(g, 70, 5);

    // block path (64) plus a tail handled by the plain forward
    const auto fast = predict_gnn(params, adj, g, pool, 64);
    REQUIRE(fast.size() == pool.samples.size());
    for (std::size_t i = 0; i < pool.samples.size(); ++i) {
        const GnnBatch single =
            make_batch(g, std::span<const CascadeSample>(&pool.samples[i], 1));
        const Eigen::MatrixXd logits = gnn_logits(params, adj, single);
        const auto preds = predictions_from_logits(logits, single);
        CHECK(fast[i].failure_step == preds[0]);
        CHECK(fast[i].length == params.horizon);
    }
}
