#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridcascade/datapool.hpp"
#include "gridcascade/grid.hpp"
#include "gridcascade/nn.hpp"
#include "gridcascade/powerflow.hpp"

namespace gridcascade {

/// Which edges count as adjacent. `directed` is the literal rule used by the
/// model: (u,v) neighbors every edge leaving u and every edge entering v.
/// `undirected` treats any shared endpoint as adjacency.
enum class AdjacencyMode { directed, undirected };

std::string to_string(AdjacencyMode mode);
AdjacencyMode adjacency_mode_from_string(const std::string& s);

/// Edge-to-edge neighborhood structure over the full edge set, with the flat
/// layout that addresses one attention coefficient per ordered (e, d) pair.
struct EdgeAdjacency {
    AdjacencyMode mode = AdjacencyMode::directed;
    int num_edges = 0;
    int num_buses = 0;
    std::vector<int> from_pos, to_pos;        ///< endpoint bus positions per edge
    std::vector<std::vector<int>> neighbors;  ///< N_e including e, ascending
    std::vector<double> inv_sqrt_count;       ///< 1/sqrt(|N_e|)

    struct CoeffPair {
        int edge;       ///< e
        int neighbor;   ///< d in N_e, d != e
        int coeff;      ///< row in the edge-to-edge coefficient layout
    };
    std::vector<CoeffPair> pairs;
    int coeff_count = 0;  ///< sum over e of |N_e| - 1
};

EdgeAdjacency build_adjacency(const Grid& grid, AdjacencyMode mode = AdjacencyMode::directed);

/// All trainable state of the failure-step predictor plus its dimensions.
/// feature_dim = width of node/edge hidden features, averaging_steps = number
/// of neighborhood averaging rounds, horizon = cascade length the classifier
/// covers (classes 0..horizon, the last one meaning "never fails").
struct GnnParams {
    std::string grid_id;
    int num_buses = 0;
    int num_edges = 0;
    int feature_dim = 32;
    int averaging_steps = 10;
    int horizon = 1;
    AdjacencyMode adjacency = AdjacencyMode::directed;

    DenseNet h_initial;                  ///< 1 -> L -> L
    DenseNet attn_edge_edge;             ///< |E| -> 2|E| -> coeff_count
    DenseNet attn_node_edge;             ///< |E| -> 2|E| -> 2|E|
    std::vector<DenseNet> h_edge_edge;   ///< K nets, L -> L -> L
    std::vector<DenseNet> h_node_edge;   ///< K nets, L -> L -> L
    DenseNet h_final;                    ///< L -> L -> horizon+1

    /// attn_hidden <= 0 means the default single hidden layer of width 2|E|.
    static GnnParams create(const Grid& grid, const EdgeAdjacency& adj, int feature_dim,
                            int averaging_steps, int horizon, Rng& rng, int attn_hidden = 0);

    std::size_t param_count() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& flat);
};

struct GnnGrads {
    NetGrads h_initial, attn_edge_edge, attn_node_edge, h_final;
    std::vector<NetGrads> h_edge_edge, h_node_edge;

    static GnnGrads zeros(const GnnParams& params);
};
Eigen::VectorXd flatten_grads(const GnnParams& params, const GnnGrads& grads);

/// A batch of model inputs. Edge-major column layout: edge blocks of B
/// consecutive columns, so edge e of sample b lives in column e*B + b; node
/// quantities use v*B + b.
struct GnnBatch {
    int batch_size = 0;
    Eigen::MatrixXd s0;                ///< |E| x B, 0/1
    Eigen::MatrixXd injections;        ///< |V| x B
    std::vector<std::uint8_t> active;  ///< length |E|*B, index e*B + b
    std::vector<int> active_count;     ///< per sample
};

GnnBatch make_batch(const Grid& grid, std::span<const CascadeSample> samples);
GnnBatch make_batch(const Grid& grid, const ActiveSet& s0, const std::vector<double>& injections);

/// Full forward pass with everything backward needs. Hidden feature columns
/// of initially-failed edges are exactly zero, as are all attention
/// coefficients touching them.
struct GnnForwardTrace {
    int batch_size = 0;
    NetTrace initial_trace;
    Eigen::MatrixXd node_features;          ///< L x |V|B
    NetTrace attn_ee_trace, attn_ne_trace;
    Eigen::MatrixXd coeff_edge_edge;        ///< coeff_count x B, masked
    Eigen::MatrixXd coeff_node_edge;        ///< 2|E| x B, masked
    Eigen::MatrixXd node_pair;              ///< L x |E|B, the averaged endpoint features
    std::vector<Eigen::MatrixXd> hidden;    ///< K+1 entries, L x |E|B, masked
    std::vector<Eigen::MatrixXd> messages;  ///< K entries, inputs to the edge-edge nets
    std::vector<NetTrace> ee_traces, ne_traces;
    NetTrace final_trace;
    Eigen::MatrixXd logits;                 ///< (horizon+1) x |E|B
};

GnnForwardTrace forward_gnn(const GnnParams& params, const EdgeAdjacency& adj,
                            const GnnBatch& batch);

/// Inference-only forward: logits, no traces kept.
Eigen::MatrixXd gnn_logits(const GnnParams& params, const EdgeAdjacency& adj,
                           const GnnBatch& batch);

/// Per-edge class probabilities of one sample (horizon+1 rows, |E| cols;
/// zero columns on initially-failed edges).
Eigen::MatrixXd edge_probabilities(const GnnParams& params, const EdgeAdjacency& adj,
                                   const Grid& grid, const ActiveSet& s0,
                                   const std::vector<double>& injections);

/// Argmax decode, ties to the smaller class; initially-failed edges get 0.
std::vector<std::vector<int>> predictions_from_logits(const Eigen::MatrixXd& logits,
                                                      const GnnBatch& batch);

/// Class index a branch should be trained toward: `horizon` when it survived
/// its cascade, otherwise its failure step clipped to the horizon.
int target_class(int failure_step, int sample_length, int horizon);

struct GnnLoss {
    double value = 0.0;
    GnnGrads grads;
};

/// Mean cross entropy over batch samples and their surviving-at-t0 edges,
/// with reverse-mode gradients for every parameter group.
GnnLoss loss_batch(const GnnParams& params, const EdgeAdjacency& adj, const Grid& grid,
                   std::span<const CascadeSample> samples);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> loss_curve;  ///< mean batch loss per epoch
    int skipped_steps = 0;           ///< steps dropped due to non-finite gradients
};

TrainResult train_gnn(GnnParams& params, const EdgeAdjacency& adj, const Grid& grid,
                      const DataPool& pool, const TrainConfig& config);

int max_cascade_length(const DataPool& pool);

/// Batched inference over a pool; returns per-sample failure steps with the
/// model horizon as the survivor marker.
struct CascadePrediction {
    std::vector<int> failure_step;
    int length = 0;
};
std::vector<CascadePrediction> predict_gnn(const GnnParams& params, const EdgeAdjacency& adj,
                                           const Grid& grid, const DataPool& pool,
                                           int batch_size = 256);

void save_gnn(const GnnParams& params, const std::string& path);
GnnParams load_gnn(const std::string& path);
/// Throws unless the checkpoint was built for this grid (id and sizes).
void check_grid_match(const GnnParams& params, const Grid& grid);

}  // namespace gridcascade
