#include "gridcascade/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridcascade/error.hpp"

namespace gridcascade {

std::string to_string(AdjacencyMode mode) {
    return mode == AdjacencyMode::directed ? "directed" : "undirected";
}

AdjacencyMode adjacency_mode_from_string(const std::string& s) {
    if (s == "directed") return AdjacencyMode::directed;
    if (s == "undirected") return AdjacencyMode::undirected;
    throw ValidationError("unknown adjacency mode '" + s + "'");
}

EdgeAdjacency build_adjacency(const Grid& grid, AdjacencyMode mode) {
    EdgeAdjacency adj;
    adj.mode = mode;
    adj.num_edges = grid.num_branches();
    adj.num_buses = grid.num_buses();
    adj.from_pos.resize(adj.num_edges);
    adj.to_pos.resize(adj.num_edges);
    for (int e = 0; e < adj.num_edges; ++e) {
        adj.from_pos[e] = grid.bus_position(grid.branches[e].from_bus);
        adj.to_pos[e] = grid.bus_position(grid.branches[e].to_bus);
    }

    adj.neighbors.resize(static_cast<std::size_t>(adj.num_edges));
    for (int e = 0; e < adj.num_edges; ++e) {
        std::set<int> n;
        for (int d = 0; d < adj.num_edges; ++d) {
            if (mode == AdjacencyMode::directed) {
                if (adj.from_pos[d] == adj.from_pos[e] || adj.to_pos[d] == adj.to_pos[e]) {
                    n.insert(d);
                }
            } else {
                const bool shares = adj.from_pos[d] == adj.from_pos[e] ||
                                    adj.from_pos[d] == adj.to_pos[e] ||
                                    adj.to_pos[d] == adj.from_pos[e] ||
                                    adj.to_pos[d] == adj.to_pos[e];
                if (shares) n.insert(d);
            }
        }
        n.insert(e);
        adj.neighbors[static_cast<std::size_t>(e)].assign(n.begin(), n.end());
    }

    adj.inv_sqrt_count.resize(static_cast<std::size_t>(adj.num_edges));
    for (int e = 0; e < adj.num_edges; ++e) {
        adj.inv_sqrt_count[static_cast<std::size_t>(e)] =
            1.0 / std::sqrt(static_cast<double>(adj.neighbors[static_cast<std::size_t>(e)].size()));
    }

    adj.coeff_count = 0;
    for (int e = 0; e < adj.num_edges; ++e) {
        for (int d : adj.neighbors[static_cast<std::size_t>(e)]) {
            if (d == e) continue;
            adj.pairs.push_back({e, d, adj.coeff_count++});
        }
    }
    return adj;
}

GnnParams GnnParams::create(const Grid& grid, const EdgeAdjacency& adj, int feature_dim,
                            int averaging_steps, int horizon, Rng& rng, int attn_hidden) {
    if (feature_dim < 1 || averaging_steps < 1 || horizon < 1) {
        throw ValidationError("GnnParams: feature_dim, averaging_steps, and horizon must be >= 1");
    }
    const int num_edges = grid.num_branches();
    if (adj.num_edges != num_edges) {
        throw ValidationError("GnnParams: adjacency does not match the grid");
    }
    GnnParams p;
    p.grid_id = grid.id;
    p.num_buses = grid.num_buses();
    p.num_edges = num_edges;
    p.feature_dim = feature_dim;
    p.averaging_steps = averaging_steps;
    p.horizon = horizon;
    p.adjacency = adj.mode;

    const int L = feature_dim;
    const int attn_width = attn_hidden > 0 ? attn_hidden : 2 * num_edges;
    p.h_initial = DenseNet({1, L, L}, rng);
    p.attn_edge_edge = DenseNet({num_edges, attn_width, adj.coeff_count}, rng);
    p.attn_node_edge = DenseNet({num_edges, attn_width, 2 * num_edges}, rng);
    for (int k = 0; k < averaging_steps; ++k) {
        p.h_edge_edge.emplace_back(std::vector<int>{L, L, L}, rng);
        p.h_node_edge.emplace_back(std::vector<int>{L, L, L}, rng);
    }
    p.h_final = DenseNet({L, L, horizon + 1}, rng);
    return p;
}

std::size_t GnnParams::param_count() const {
    std::size_t n = h_initial.param_count() + attn_edge_edge.param_count() +
                    attn_node_edge.param_count() + h_final.param_count();
    for (const auto& net : h_edge_edge) n += net.param_count();
    for (const auto& net : h_node_edge) n += net.param_count();
    return n;
}

Eigen::VectorXd GnnParams::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count()));
    double* out = flat.data();
    h_initial.flatten_params(out);
    out += h_initial.param_count();
    attn_edge_edge.flatten_params(out);
    out += attn_edge_edge.param_count();
    attn_node_edge.flatten_params(out);
    out += attn_node_edge.param_count();
    for (const auto& net : h_edge_edge) {
        net.flatten_params(out);
        out += net.param_count();
    }
    for (const auto& net : h_node_edge) {
        net.flatten_params(out);
        out += net.param_count();
    }
    h_final.flatten_params(out);
    return flat;
}

void GnnParams::unflatten(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(param_count())) {
        throw ValidationError("GnnParams::unflatten: size mismatch");
    }
    const double* in = flat.data();
    h_initial.unflatten_params(in);
    in += h_initial.param_count();
    attn_edge_edge.unflatten_params(in);
    in += attn_edge_edge.param_count();
    attn_node_edge.unflatten_params(in);
    in += attn_node_edge.param_count();
    for (auto& net : h_edge_edge) {
        net.unflatten_params(in);
        in += net.param_count();
    }
    for (auto& net : h_node_edge) {
        net.unflatten_params(in);
        in += net.param_count();
    }
    h_final.unflatten_params(in);
}

GnnGrads GnnGrads::zeros(const GnnParams& params) {
    GnnGrads g;
    g.h_initial = params.h_initial.zero_grads();
    g.attn_edge_edge = params.attn_edge_edge.zero_grads();
    g.attn_node_edge = params.attn_node_edge.zero_grads();
    g.h_final = params.h_final.zero_grads();
    for (const auto& net : params.h_edge_edge) g.h_edge_edge.push_back(net.zero_grads());
    for (const auto& net : params.h_node_edge) g.h_node_edge.push_back(net.zero_grads());
    return g;
}

Eigen::VectorXd flatten_grads(const GnnParams& params, const GnnGrads& grads) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(params.param_count()));
    double* out = flat.data();
    params.h_initial.flatten_grads(grads.h_initial, out);
    out += params.h_initial.param_count();
    params.attn_edge_edge.flatten_grads(grads.attn_edge_edge, out);
    out += params.attn_edge_edge.param_count();
    params.attn_node_edge.flatten_grads(grads.attn_node_edge, out);
    out += params.attn_node_edge.param_count();
    for (std::size_t k = 0; k < params.h_edge_edge.size(); ++k) {
        params.h_edge_edge[k].flatten_grads(grads.h_edge_edge[k], out);
        out += params.h_edge_edge[k].param_count();
    }
    for (std::size_t k = 0; k < params.h_node_edge.size(); ++k) {
        params.h_node_edge[k].flatten_grads(grads.h_node_edge[k], out);
        out += params.h_node_edge[k].param_count();
    }
    params.h_final.flatten_grads(grads.h_final, out);
    return flat;
}

GnnBatch make_batch(const Grid& grid, std::span<const CascadeSample> samples) {
    const int num_edges = grid.num_branches();
    const int num_buses = grid.num_buses();
    const int batch = static_cast<int>(samples.size());
    if (batch == 0) throw ValidationError("make_batch: empty batch");

    GnnBatch b;
    b.batch_size = batch;
    b.s0 = Eigen::MatrixXd::Zero(num_edges, batch);
    b.injections = Eigen::MatrixXd::Zero(num_buses, batch);
    b.active.assign(static_cast<std::size_t>(num_edges) * batch, 0);
    b.active_count.assign(static_cast<std::size_t>(batch), 0);

    for (int i = 0; i < batch; ++i) {
        const CascadeSample& s = samples[static_cast<std::size_t>(i)];
        if (static_cast<int>(s.contingency.size()) != num_edges ||
            static_cast<int>(s.injections.size()) != num_buses) {
            throw ValidationError("make_batch: sample " + std::to_string(i) +
                                  " does not match the grid dimensions");
        }
        for (int e = 0; e < num_edges; ++e) {
            if (s.contingency[static_cast<std::size_t>(e)]) {
                b.s0(e, i) = 1.0;
                b.active[static_cast<std::size_t>(e) * batch + i] = 1;
                ++b.active_count[static_cast<std::size_t>(i)];
            }
        }
        for (int v = 0; v < num_buses; ++v) b.injections(v, i) = s.injections[static_cast<std::size_t>(v)];
    }
    return b;
}

GnnBatch make_batch(const Grid& grid, const ActiveSet& s0, const std::vector<double>& injections) {
    CascadeSample s;
    s.contingency = s0.mask;
    s.injections = injections;
    s.failure_step.assign(static_cast<std::size_t>(grid.num_branches()), 0);
    s.length = 1;
    return make_batch(grid, std::span<const CascadeSample>(&s, 1));
}

namespace {

void check_dims(const GnnParams& params, const EdgeAdjacency& adj, const GnnBatch& batch) {
    if (adj.num_edges != params.num_edges || adj.num_buses != params.num_buses) {
        throw ValidationError("gnn: adjacency does not match the model dimensions");
    }
    if (adj.mode != params.adjacency) {
        throw ValidationError("gnn: adjacency mode does not match the model");
    }
    if (params.attn_edge_edge.output_dim() != adj.coeff_count) {
        throw ValidationError("gnn: edge-to-edge attention output does not match the layout size");
    }
    if (batch.s0.rows() != params.num_edges || batch.injections.rows() != params.num_buses) {
        throw ValidationError("gnn: batch does not match the model dimensions");
    }
}

void require_finite(const Eigen::MatrixXd& m, const char* stage) {
    if (!m.allFinite()) {
        throw NumericsError(std::string("gnn forward: non-finite values after ") + stage);
    }
}

// Zero the feature columns of initially-failed edges.
void mask_edge_columns(Eigen::MatrixXd& m, const GnnBatch& batch, int num_edges) {
    const int b = batch.batch_size;
    for (int e = 0; e < num_edges; ++e) {
        for (int i = 0; i < b; ++i) {
            if (!batch.active[static_cast<std::size_t>(e) * b + i]) {
                m.col(static_cast<Eigen::Index>(e) * b + i).setZero();
            }
        }
    }
}

// Flatten injections to the 1 x (V*B) layout the initial net consumes.
Eigen::MatrixXd node_input(const GnnBatch& batch) {
    const Eigen::Index v = batch.injections.rows();
    const Eigen::Index b = batch.injections.cols();
    Eigen::MatrixXd flat(1, v * b);
    for (Eigen::Index n = 0; n < v; ++n) {
        flat.block(0, n * b, 1, b) = batch.injections.row(n);
    }
    return flat;
}

struct ForwardBuffers {
    Eigen::MatrixXd node_features;   // L x V*B
    Eigen::MatrixXd coeff_ee;        // coeff_count x B
    Eigen::MatrixXd coeff_ne;        // 2E x B
    Eigen::MatrixXd node_pair;       // L x E*B
    Eigen::MatrixXd h;               // L x E*B, current step
    Eigen::MatrixXd msg;             // L x E*B
};

// The shared forward skeleton. When `trace` is non-null every intermediate is
// retained for the backward pass.
Eigen::MatrixXd run_forward(const GnnParams& params, const EdgeAdjacency& adj,
                            const GnnBatch& batch, GnnForwardTrace* trace) {
    check_dims(params, adj, batch);
    const int b = batch.batch_size;
    const int num_edges = params.num_edges;
    const int feat = params.feature_dim;

    ForwardBuffers w;

    // Initial stage: per-node feature lift.
    const Eigen::MatrixXd flat_p = node_input(batch);
    w.node_features = trace ? params.h_initial.forward(flat_p, trace->initial_trace)
                            : params.h_initial.forward(flat_p);
    require_finite(w.node_features, "the initial stage");

    // Attention stage: both coefficient families from the contingency vector.
    w.coeff_ee = trace ? params.attn_edge_edge.forward(batch.s0, trace->attn_ee_trace)
                       : params.attn_edge_edge.forward(batch.s0);
    w.coeff_ne = trace ? params.attn_node_edge.forward(batch.s0, trace->attn_ne_trace)
                       : params.attn_node_edge.forward(batch.s0);
    require_finite(w.coeff_ee, "the attention stage");
    require_finite(w.coeff_ne, "the attention stage");
    // Coefficients touching an initially-failed edge are dead.
    for (const auto& pr : adj.pairs) {
        for (int i = 0; i < b; ++i) {
            if (!batch.active[static_cast<std::size_t>(pr.edge) * b + i] ||
                !batch.active[static_cast<std::size_t>(pr.neighbor) * b + i]) {
                w.coeff_ee(pr.coeff, i) = 0.0;
            }
        }
    }
    for (int e = 0; e < num_edges; ++e) {
        for (int i = 0; i < b; ++i) {
            if (!batch.active[static_cast<std::size_t>(e) * b + i]) {
                w.coeff_ne(2 * e, i) = 0.0;
                w.coeff_ne(2 * e + 1, i) = 0.0;
            }
        }
    }

    // Edge feature seed: difference of endpoint features.
    w.h.resize(feat, static_cast<Eigen::Index>(num_edges) * b);
    for (int e = 0; e < num_edges; ++e) {
        w.h.middleCols(static_cast<Eigen::Index>(e) * b, b) =
            w.node_features.middleCols(static_cast<Eigen::Index>(adj.from_pos[e]) * b, b) -
            w.node_features.middleCols(static_cast<Eigen::Index>(adj.to_pos[e]) * b, b);
    }
    mask_edge_columns(w.h, batch, num_edges);

    // Weighted endpoint average fed to every node-edge net.
    w.node_pair.resize(feat, static_cast<Eigen::Index>(num_edges) * b);
    for (int e = 0; e < num_edges; ++e) {
        w.node_pair.middleCols(static_cast<Eigen::Index>(e) * b, b) =
            0.5 * (w.node_features.middleCols(static_cast<Eigen::Index>(adj.from_pos[e]) * b, b) *
                       w.coeff_ne.row(2 * e).asDiagonal() +
                   w.node_features.middleCols(static_cast<Eigen::Index>(adj.to_pos[e]) * b, b) *
                       w.coeff_ne.row(2 * e + 1).asDiagonal());
    }

    if (trace) {
        trace->batch_size = b;
        trace->node_features = w.node_features;
        trace->coeff_edge_edge = w.coeff_ee;
        trace->coeff_node_edge = w.coeff_ne;
        trace->node_pair = w.node_pair;
        trace->hidden.clear();
        trace->messages.clear();
        trace->ee_traces.assign(static_cast<std::size_t>(params.averaging_steps), NetTrace{});
        trace->ne_traces.assign(static_cast<std::size_t>(params.averaging_steps), NetTrace{});
        trace->hidden.push_back(w.h);
    }

    // Averaging stages.
    for (int k = 0; k < params.averaging_steps; ++k) {
        w.msg.setZero(feat, static_cast<Eigen::Index>(num_edges) * b);
        for (const auto& pr : adj.pairs) {
            const double scale = adj.inv_sqrt_count[static_cast<std::size_t>(pr.edge)] *
                                 adj.inv_sqrt_count[static_cast<std::size_t>(pr.neighbor)];
            w.msg.middleCols(static_cast<Eigen::Index>(pr.edge) * b, b).noalias() +=
                w.h.middleCols(static_cast<Eigen::Index>(pr.neighbor) * b, b) *
                (scale * w.coeff_ee.row(pr.coeff)).asDiagonal();
        }

        Eigen::MatrixXd ee_out =
            trace ? params.h_edge_edge[static_cast<std::size_t>(k)].forward(
                        w.msg, trace->ee_traces[static_cast<std::size_t>(k)])
                  : params.h_edge_edge[static_cast<std::size_t>(k)].forward(w.msg);
        Eigen::MatrixXd ne_out =
            trace ? params.h_node_edge[static_cast<std::size_t>(k)].forward(
                        w.node_pair, trace->ne_traces[static_cast<std::size_t>(k)])
                  : params.h_node_edge[static_cast<std::size_t>(k)].forward(w.node_pair);

        Eigen::MatrixXd next(feat, static_cast<Eigen::Index>(num_edges) * b);
        for (int e = 0; e < num_edges; ++e) {
            const double inv_count = adj.inv_sqrt_count[static_cast<std::size_t>(e)] *
                                     adj.inv_sqrt_count[static_cast<std::size_t>(e)];
            next.middleCols(static_cast<Eigen::Index>(e) * b, b) =
                inv_count * w.h.middleCols(static_cast<Eigen::Index>(e) * b, b) +
                ee_out.middleCols(static_cast<Eigen::Index>(e) * b, b) +
                ne_out.middleCols(static_cast<Eigen::Index>(e) * b, b);
        }
        mask_edge_columns(next, batch, num_edges);
        require_finite(next, "an averaging step");

        if (trace) {
            trace->messages.push_back(w.msg);
            trace->hidden.push_back(next);
        }
        w.h = std::move(next);
    }

    // Final stage.
    Eigen::MatrixXd logits = trace ? params.h_final.forward(w.h, trace->final_trace)
                                   : params.h_final.forward(w.h);
    require_finite(logits, "the final stage");
    if (trace) trace->logits = logits;
    return logits;
}

}  // namespace

GnnForwardTrace forward_gnn(const GnnParams& params, const EdgeAdjacency& adj,
                            const GnnBatch& batch) {
    GnnForwardTrace trace;
    run_forward(params, adj, batch, &trace);
    return trace;
}

Eigen::MatrixXd gnn_logits(const GnnParams& params, const EdgeAdjacency& adj,
                           const GnnBatch& batch) {
    return run_forward(params, adj, batch, nullptr);
}

Eigen::MatrixXd edge_probabilities(const GnnParams& params, const EdgeAdjacency& adj,
                                   const Grid& grid, const ActiveSet& s0,
                                   const std::vector<double>& injections) {
    const GnnBatch batch = make_batch(grid, s0, injections);
    const Eigen::MatrixXd logits = gnn_logits(params, adj, batch);
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(params.horizon + 1, params.num_edges);
    for (int e = 0; e < params.num_edges; ++e) {
        if (batch.active[static_cast<std::size_t>(e)]) probs.col(e) = softmax(logits.col(e));
    }
    return probs;
}

std::vector<std::vector<int>> predictions_from_logits(const Eigen::MatrixXd& logits,
                                                      const GnnBatch& batch) {
    const int b = batch.batch_size;
    const int num_edges = static_cast<int>(batch.s0.rows());
    std::vector<std::vector<int>> preds(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        preds[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(num_edges), 0);
    }
    for (int e = 0; e < num_edges; ++e) {
        for (int i = 0; i < b; ++i) {
            if (!batch.active[static_cast<std::size_t>(e) * b + i]) continue;
            const auto col = logits.col(static_cast<Eigen::Index>(e) * b + i);
            int best = 0;
            for (Eigen::Index t = 1; t < col.size(); ++t) {
                if (col[t] > col[best]) best = static_cast<int>(t);
            }
            preds[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)] = best;
        }
    }
    return preds;
}

int target_class(int failure_step, int sample_length, int horizon) {
    if (failure_step >= sample_length) return horizon;  // survived its cascade
    return std::min(failure_step, horizon);
}

GnnLoss loss_batch(const GnnParams& params, const EdgeAdjacency& adj, const Grid& grid,
                   std::span<const CascadeSample> samples) {
    if (samples.empty()) throw ValidationError("loss_batch: empty batch");
    const GnnBatch batch = make_batch(grid, samples);
    const int b = batch.batch_size;
    const int num_edges = params.num_edges;

    GnnForwardTrace trace;
    run_forward(params, adj, batch, &trace);

    GnnLoss result;
    result.grads = GnnGrads::zeros(params);

    // Loss and upstream logits gradient: mean over samples of the per-sample
    // mean over surviving-at-t0 edges.
    Eigen::MatrixXd g_logits =
        Eigen::MatrixXd::Zero(params.horizon + 1, static_cast<Eigen::Index>(num_edges) * b);
    for (int i = 0; i < b; ++i) {
        const CascadeSample& s = samples[static_cast<std::size_t>(i)];
        if (batch.active_count[static_cast<std::size_t>(i)] == 0) continue;
        const double weight = 1.0 / (static_cast<double>(b) *
                                     batch.active_count[static_cast<std::size_t>(i)]);
        for (int e = 0; e < num_edges; ++e) {
            if (!batch.active[static_cast<std::size_t>(e) * b + i]) continue;
            const int target =
                target_class(s.failure_step[static_cast<std::size_t>(e)], s.length, params.horizon);
            const XentResult x = softmax_xent(trace.logits.col(static_cast<Eigen::Index>(e) * b + i),
                                              target);
            result.value += weight * x.loss;
            g_logits.col(static_cast<Eigen::Index>(e) * b + i) = weight * x.grad;
        }
    }

    // ----- reverse mode through the stages -----
    const int feat = params.feature_dim;
    Eigen::MatrixXd g_h = params.h_final.backward(trace.final_trace, g_logits, result.grads.h_final);

    Eigen::MatrixXd g_node_pair =
        Eigen::MatrixXd::Zero(feat, static_cast<Eigen::Index>(num_edges) * b);
    Eigen::MatrixXd g_coeff_ee = Eigen::MatrixXd::Zero(adj.coeff_count, b);
    Eigen::MatrixXd g_coeff_ne = Eigen::MatrixXd::Zero(2 * num_edges, b);

    for (int k = params.averaging_steps - 1; k >= 0; --k) {
        const Eigen::MatrixXd& h_prev = trace.hidden[static_cast<std::size_t>(k)];

        const Eigen::MatrixXd g_msg = params.h_edge_edge[static_cast<std::size_t>(k)].backward(
            trace.ee_traces[static_cast<std::size_t>(k)], g_h,
            result.grads.h_edge_edge[static_cast<std::size_t>(k)]);
        g_node_pair += params.h_node_edge[static_cast<std::size_t>(k)].backward(
            trace.ne_traces[static_cast<std::size_t>(k)], g_h,
            result.grads.h_node_edge[static_cast<std::size_t>(k)]);

        Eigen::MatrixXd g_prev(feat, static_cast<Eigen::Index>(num_edges) * b);
        for (int e = 0; e < num_edges; ++e) {
            const double inv_count = adj.inv_sqrt_count[static_cast<std::size_t>(e)] *
                                     adj.inv_sqrt_count[static_cast<std::size_t>(e)];
            g_prev.middleCols(static_cast<Eigen::Index>(e) * b, b) =
                inv_count * g_h.middleCols(static_cast<Eigen::Index>(e) * b, b);
        }
        for (const auto& pr : adj.pairs) {
            const double scale = adj.inv_sqrt_count[static_cast<std::size_t>(pr.edge)] *
                                 adj.inv_sqrt_count[static_cast<std::size_t>(pr.neighbor)];
            g_prev.middleCols(static_cast<Eigen::Index>(pr.neighbor) * b, b).noalias() +=
                g_msg.middleCols(static_cast<Eigen::Index>(pr.edge) * b, b) *
                (scale * trace.coeff_edge_edge.row(pr.coeff)).asDiagonal();
            g_coeff_ee.row(pr.coeff) +=
                scale * (g_msg.middleCols(static_cast<Eigen::Index>(pr.edge) * b, b)
                             .cwiseProduct(h_prev.middleCols(
                                 static_cast<Eigen::Index>(pr.neighbor) * b, b)))
                            .colwise()
                            .sum();
        }
        g_h = std::move(g_prev);
    }

    // h^0 = P_u - P_v and the node-pair input both feed the node features.
    Eigen::MatrixXd g_nodes =
        Eigen::MatrixXd::Zero(feat, static_cast<Eigen::Index>(params.num_buses) * b);
    for (int e = 0; e < num_edges; ++e) {
        const auto g_edge = g_h.middleCols(static_cast<Eigen::Index>(e) * b, b);
        g_nodes.middleCols(static_cast<Eigen::Index>(adj.from_pos[e]) * b, b) += g_edge;
        g_nodes.middleCols(static_cast<Eigen::Index>(adj.to_pos[e]) * b, b) -= g_edge;

        const auto g_pair = g_node_pair.middleCols(static_cast<Eigen::Index>(e) * b, b);
        g_nodes.middleCols(static_cast<Eigen::Index>(adj.from_pos[e]) * b, b).noalias() +=
            0.5 * g_pair * trace.coeff_node_edge.row(2 * e).asDiagonal();
        g_nodes.middleCols(static_cast<Eigen::Index>(adj.to_pos[e]) * b, b).noalias() +=
            0.5 * g_pair * trace.coeff_node_edge.row(2 * e + 1).asDiagonal();
        g_coeff_ne.row(2 * e) +=
            0.5 * (g_pair.cwiseProduct(trace.node_features.middleCols(
                       static_cast<Eigen::Index>(adj.from_pos[e]) * b, b)))
                      .colwise()
                      .sum();
        g_coeff_ne.row(2 * e + 1) +=
            0.5 * (g_pair.cwiseProduct(trace.node_features.middleCols(
                       static_cast<Eigen::Index>(adj.to_pos[e]) * b, b)))
                      .colwise()
                      .sum();
    }

    params.h_initial.backward(trace.initial_trace, g_nodes, result.grads.h_initial);
    params.attn_edge_edge.backward(trace.attn_ee_trace, g_coeff_ee, result.grads.attn_edge_edge);
    params.attn_node_edge.backward(trace.attn_ne_trace, g_coeff_ne, result.grads.attn_node_edge);
    return result;
}

int max_cascade_length(const DataPool& pool) {
    int t = 1;
    for (const CascadeSample& s : pool.samples) t = std::max(t, s.length);
    return t;
}

TrainResult train_gnn(GnnParams& params, const EdgeAdjacency& adj, const Grid& grid,
                      const DataPool& pool, const TrainConfig& config) {
    if (pool.samples.empty()) throw ValidationError("train_gnn: empty pool");
    if (config.epochs < 1 || config.batch_size < 1) {
        throw ValidationError("train_gnn: epochs and batch_size must be >= 1");
    }

    TrainResult result;
    Eigen::VectorXd flat = params.flatten();
    AdamConfig adam_config;
    adam_config.lr = config.lr;
    Adam adam(flat.size(), adam_config);
    Rng rng(config.seed);

    std::vector<int> order(pool.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    std::vector<CascadeSample> batch;
    batch.reserve(static_cast<std::size_t>(config.batch_size));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            batch.clear();
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(pool.samples[static_cast<std::size_t>(order[i])]);
            }
            const GnnLoss loss = loss_batch(params, adj, grid, batch);
            const Eigen::VectorXd grad_flat = flatten_grads(params, loss.grads);
            if (!adam.step(flat, grad_flat)) {
                ++result.skipped_steps;
            } else {
                params.unflatten(flat);
            }
            epoch_loss += loss.value;
            ++batches;
        }
        result.loss_curve.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    }
    return result;
}

namespace {

// Fixed-width inference engine: every buffer is allocated once and reused
// across blocks, so steady-state prediction is GEMM-bound.
class InferenceEngine {
  public:
    InferenceEngine(const GnnParams& params, const EdgeAdjacency& adj, int block)
        : params_(params), adj_(adj), block_(block) {
        const int feat = params.feature_dim;
        const Eigen::Index eb = static_cast<Eigen::Index>(params.num_edges) * block;
        s0_.resize(params.num_edges, block);
        flat_p_.resize(1, static_cast<Eigen::Index>(params.num_buses) * block);
        node_pair_.resize(feat, eb);
        h_.resize(feat, eb);
        next_.resize(feat, eb);
        msg_.resize(feat, eb);
        active_.assign(static_cast<std::size_t>(eb), 0);
        ws_ee_.resize(params.h_edge_edge.size());
        ws_ne_.resize(params.h_node_edge.size());
    }

    void predict_block(std::span<const CascadeSample> samples,
                       std::vector<CascadePrediction>& out) {
        const int b = block_;
        if (static_cast<int>(samples.size()) != b) {
            throw ValidationError("InferenceEngine: block size mismatch");
        }
        const int num_edges = params_.num_edges;
        const int num_buses = params_.num_buses;

        for (int i = 0; i < b; ++i) {
            const CascadeSample& s = samples[static_cast<std::size_t>(i)];
            for (int e = 0; e < num_edges; ++e) {
                const std::uint8_t on = s.contingency[static_cast<std::size_t>(e)];
                s0_(e, i) = on;
                active_[static_cast<std::size_t>(e) * b + i] = on;
            }
            for (int v = 0; v < num_buses; ++v) {
                flat_p_(0, static_cast<Eigen::Index>(v) * b + i) =
                    s.injections[static_cast<std::size_t>(v)];
            }
        }

        const Eigen::MatrixXd& nodes = params_.h_initial.forward_reuse(flat_p_, ws_init_);
        Eigen::MatrixXd& coeff_ee =
            const_cast<Eigen::MatrixXd&>(params_.attn_edge_edge.forward_reuse(s0_, ws_attn_ee_));
        Eigen::MatrixXd& coeff_ne =
            const_cast<Eigen::MatrixXd&>(params_.attn_node_edge.forward_reuse(s0_, ws_attn_ne_));
        for (const auto& pr : adj_.pairs) {
            for (int i = 0; i < b; ++i) {
                if (!active_[static_cast<std::size_t>(pr.edge) * b + i] ||
                    !active_[static_cast<std::size_t>(pr.neighbor) * b + i]) {
                    coeff_ee(pr.coeff, i) = 0.0;
                }
            }
        }
        for (int e = 0; e < num_edges; ++e) {
            for (int i = 0; i < b; ++i) {
                if (!active_[static_cast<std::size_t>(e) * b + i]) {
                    coeff_ne(2 * e, i) = 0.0;
                    coeff_ne(2 * e + 1, i) = 0.0;
                }
            }
        }

        for (int e = 0; e < num_edges; ++e) {
            h_.middleCols(static_cast<Eigen::Index>(e) * b, b) =
                nodes.middleCols(static_cast<Eigen::Index>(adj_.from_pos[e]) * b, b) -
                nodes.middleCols(static_cast<Eigen::Index>(adj_.to_pos[e]) * b, b);
            node_pair_.middleCols(static_cast<Eigen::Index>(e) * b, b) =
                0.5 * (nodes.middleCols(static_cast<Eigen::Index>(adj_.from_pos[e]) * b, b) *
                           coeff_ne.row(2 * e).asDiagonal() +
                       nodes.middleCols(static_cast<Eigen::Index>(adj_.to_pos[e]) * b, b) *
                           coeff_ne.row(2 * e + 1).asDiagonal());
        }
        mask_columns(h_);

        for (int k = 0; k < params_.averaging_steps; ++k) {
            msg_.setZero();
            for (const auto& pr : adj_.pairs) {
                const double scale = adj_.inv_sqrt_count[static_cast<std::size_t>(pr.edge)] *
                                     adj_.inv_sqrt_count[static_cast<std::size_t>(pr.neighbor)];
                msg_.middleCols(static_cast<Eigen::Index>(pr.edge) * b, b).noalias() +=
                    h_.middleCols(static_cast<Eigen::Index>(pr.neighbor) * b, b) *
                    (scale * coeff_ee.row(pr.coeff)).asDiagonal();
            }
            const Eigen::MatrixXd& ee_out = params_.h_edge_edge[static_cast<std::size_t>(k)]
                                                .forward_reuse(msg_, ws_ee_[static_cast<std::size_t>(k)]);
            const Eigen::MatrixXd& ne_out =
                params_.h_node_edge[static_cast<std::size_t>(k)].forward_reuse(
                    node_pair_, ws_ne_[static_cast<std::size_t>(k)]);
            for (int e = 0; e < num_edges; ++e) {
                const double inv_count = adj_.inv_sqrt_count[static_cast<std::size_t>(e)] *
                                         adj_.inv_sqrt_count[static_cast<std::size_t>(e)];
                next_.middleCols(static_cast<Eigen::Index>(e) * b, b) =
                    inv_count * h_.middleCols(static_cast<Eigen::Index>(e) * b, b) +
                    ee_out.middleCols(static_cast<Eigen::Index>(e) * b, b) +
                    ne_out.middleCols(static_cast<Eigen::Index>(e) * b, b);
            }
            mask_columns(next_);
            h_.swap(next_);
        }

        const Eigen::MatrixXd& logits = params_.h_final.forward_reuse(h_, ws_final_);
        if (!logits.allFinite()) {
            throw NumericsError("gnn inference: non-finite logits");
        }
        for (int i = 0; i < b; ++i) {
            CascadePrediction p;
            p.length = params_.horizon;
            p.failure_step.assign(static_cast<std::size_t>(num_edges), 0);
            for (int e = 0; e < num_edges; ++e) {
                if (!active_[static_cast<std::size_t>(e) * b + i]) continue;
                const auto col = logits.col(static_cast<Eigen::Index>(e) * b + i);
                int best = 0;
                for (Eigen::Index t = 1; t < col.size(); ++t) {
                    if (col[t] > col[best]) best = static_cast<int>(t);
                }
                p.failure_step[static_cast<std::size_t>(e)] = best;
            }
            out.push_back(std::move(p));
        }
    }

  private:
    void mask_columns(Eigen::MatrixXd& m) {
        const int b = block_;
        for (int e = 0; e < params_.num_edges; ++e) {
            for (int i = 0; i < b; ++i) {
                if (!active_[static_cast<std::size_t>(e) * b + i]) {
                    m.col(static_cast<Eigen::Index>(e) * b + i).setZero();
                }
            }
        }
    }

    const GnnParams& params_;
    const EdgeAdjacency& adj_;
    int block_;
    Eigen::MatrixXd s0_, flat_p_, node_pair_, h_, next_, msg_;
    std::vector<std::uint8_t> active_;
    NetWorkspace ws_init_, ws_attn_ee_, ws_attn_ne_, ws_final_;
    std::vector<NetWorkspace> ws_ee_, ws_ne_;
};

}  // namespace

std::vector<CascadePrediction> predict_gnn(const GnnParams& params, const EdgeAdjacency& adj,
                                           const Grid& grid, const DataPool& pool,
                                           int batch_size) {
    if (batch_size < 1) throw ValidationError("predict_gnn: batch_size must be >= 1");
    std::vector<CascadePrediction> out;
    out.reserve(pool.samples.size());

    const std::size_t block = static_cast<std::size_t>(batch_size);
    const std::size_t full_blocks = pool.samples.size() / block;
    if (full_blocks > 0) {
        InferenceEngine engine(params, adj, batch_size);
        for (std::size_t chunk = 0; chunk < full_blocks; ++chunk) {
            engine.predict_block(
                std::span<const CascadeSample>(&pool.samples[chunk * block], block), out);
        }
    }
    const std::size_t tail_start = full_blocks * block;
    if (tail_start < pool.samples.size()) {
        const std::size_t count = pool.samples.size() - tail_start;
        const GnnBatch batch =
            make_batch(grid, std::span<const CascadeSample>(&pool.samples[tail_start], count));
        const Eigen::MatrixXd logits = gnn_logits(params, adj, batch);
        for (auto& f : predictions_from_logits(logits, batch)) {
            out.push_back({std::move(f), params.horizon});
        }
    }
    return out;
}

namespace {

nlohmann::ordered_json net_to_json(const DenseNet& net) {
    nlohmann::ordered_json j;
    j["widths"] = net.widths();
    auto layers = nlohmann::ordered_json::array();
    for (int i = 0; i < net.num_layers(); ++i) {
        nlohmann::ordered_json layer;
        auto weight = nlohmann::ordered_json::array();
        const Eigen::MatrixXd& w = net.weight(i);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            auto row = nlohmann::ordered_json::array();
            for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
            weight.push_back(std::move(row));
        }
        layer["W"] = std::move(weight);
        auto bias = nlohmann::ordered_json::array();
        for (Eigen::Index r = 0; r < net.bias(i).size(); ++r) bias.push_back(net.bias(i)[r]);
        layer["b"] = std::move(bias);
        layers.push_back(std::move(layer));
    }
    j["layers"] = std::move(layers);
    return j;
}

DenseNet net_from_json(const nlohmann::json& j, const std::string& name) {
    if (!j.contains("widths") || !j.contains("layers")) {
        throw IoError("gnn checkpoint: missing tensor " + name);
    }
    const std::vector<int> widths = j["widths"].get<std::vector<int>>();
    Rng rng(0);
    DenseNet net(widths, rng);
    const auto& layers = j["layers"];
    if (static_cast<int>(layers.size()) != net.num_layers()) {
        throw IoError("gnn checkpoint: tensor " + name + " has wrong layer count");
    }
    for (int i = 0; i < net.num_layers(); ++i) {
        const auto& layer = layers[static_cast<std::size_t>(i)];
        if (!layer.contains("W") || !layer.contains("b")) {
            throw IoError("gnn checkpoint: missing tensor " + name + ".layers[" +
                          std::to_string(i) + "]");
        }
        Eigen::MatrixXd& w = net.weight(i);
        const auto& jw = layer["W"];
        if (static_cast<Eigen::Index>(jw.size()) != w.rows()) {
            throw IoError("gnn checkpoint: tensor " + name + ".layers[" + std::to_string(i) +
                          "].W has wrong shape");
        }
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            const auto& row = jw[static_cast<std::size_t>(r)];
            if (static_cast<Eigen::Index>(row.size()) != w.cols()) {
                throw IoError("gnn checkpoint: tensor " + name + ".layers[" + std::to_string(i) +
                              "].W has wrong shape");
            }
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                w(r, c) = row[static_cast<std::size_t>(c)].get<double>();
            }
        }
        Eigen::VectorXd& bias = net.bias(i);
        const auto& jb = layer["b"];
        if (static_cast<Eigen::Index>(jb.size()) != bias.size()) {
            throw IoError("gnn checkpoint: tensor " + name + ".layers[" + std::to_string(i) +
                          "].b has wrong shape");
        }
        for (Eigen::Index r = 0; r < bias.size(); ++r) {
            bias[r] = jb[static_cast<std::size_t>(r)].get<double>();
        }
    }
    return net;
}

}  // namespace

void save_gnn(const GnnParams& params, const std::string& path) {
    nlohmann::ordered_json j;
    j["schema"] = "gridcascade.gnn/1";
    j["grid_id"] = params.grid_id;
    j["num_buses"] = params.num_buses;
    j["num_edges"] = params.num_edges;
    j["L"] = params.feature_dim;
    j["K"] = params.averaging_steps;
    j["T"] = params.horizon;
    j["adjacency"] = to_string(params.adjacency);
    nlohmann::ordered_json nets;
    nets["h_initial"] = net_to_json(params.h_initial);
    nets["attn_edge_edge"] = net_to_json(params.attn_edge_edge);
    nets["attn_node_edge"] = net_to_json(params.attn_node_edge);
    auto ee = nlohmann::ordered_json::array();
    for (const auto& net : params.h_edge_edge) ee.push_back(net_to_json(net));
    nets["h_edge_edge"] = std::move(ee);
    auto ne = nlohmann::ordered_json::array();
    for (const auto& net : params.h_node_edge) ne.push_back(net_to_json(net));
    nets["h_node_edge"] = std::move(ne);
    nets["h_final"] = net_to_json(params.h_final);
    j["nets"] = std::move(nets);

    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << j.dump() << '\n';
}

GnnParams load_gnn(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("gnn checkpoint " + path + ": " + e.what());
    }
    if (!j.contains("schema") || j["schema"] != "gridcascade.gnn/1") {
        throw IoError("gnn checkpoint " + path + ": missing or unsupported schema");
    }
    for (const char* key : {"grid_id", "num_buses", "num_edges", "L", "K", "T", "adjacency", "nets"}) {
        if (!j.contains(key)) {
            throw IoError("gnn checkpoint " + path + ": missing '" + std::string(key) + "'");
        }
    }
    GnnParams p;
    p.grid_id = j["grid_id"].get<std::string>();
    p.num_buses = j["num_buses"].get<int>();
    p.num_edges = j["num_edges"].get<int>();
    p.feature_dim = j["L"].get<int>();
    p.averaging_steps = j["K"].get<int>();
    p.horizon = j["T"].get<int>();
    p.adjacency = adjacency_mode_from_string(j["adjacency"].get<std::string>());

    const auto& nets = j["nets"];
    for (const char* key : {"h_initial", "attn_edge_edge", "attn_node_edge", "h_edge_edge",
                            "h_node_edge", "h_final"}) {
        if (!nets.contains(key)) {
            throw IoError("gnn checkpoint: missing tensor " + std::string(key));
        }
    }
    p.h_initial = net_from_json(nets["h_initial"], "h_initial");
    p.attn_edge_edge = net_from_json(nets["attn_edge_edge"], "attn_edge_edge");
    p.attn_node_edge = net_from_json(nets["attn_node_edge"], "attn_node_edge");
    if (static_cast<int>(nets["h_edge_edge"].size()) != p.averaging_steps ||
        static_cast<int>(nets["h_node_edge"].size()) != p.averaging_steps) {
        throw IoError("gnn checkpoint: averaging-step net count does not match K");
    }
    for (int k = 0; k < p.averaging_steps; ++k) {
        p.h_edge_edge.push_back(net_from_json(nets["h_edge_edge"][static_cast<std::size_t>(k)],
                                              "h_edge_edge[" + std::to_string(k) + "]"));
        p.h_node_edge.push_back(net_from_json(nets["h_node_edge"][static_cast<std::size_t>(k)],
                                              "h_node_edge[" + std::to_string(k) + "]"));
    }
    p.h_final = net_from_json(nets["h_final"], "h_final");
    return p;
}

void check_grid_match(const GnnParams& params, const Grid& grid) {
    if (params.grid_id != grid.id) {
        throw ValidationError("checkpoint was trained on grid '" + params.grid_id +
                              "', not '" + grid.id + "'");
    }
    if (params.num_buses != grid.num_buses() || params.num_edges != grid.num_branches()) {
        throw ValidationError("checkpoint dimensions do not match grid '" + grid.id + "'");
    }
}

}  // namespace gridcascade
