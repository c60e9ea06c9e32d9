#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "gridcascade/rng.hpp"

namespace gridcascade {

enum class Activation { relu, identity };

/// Post-activation values retained by a traced forward pass.
/// activations[0] is the input; activations[i+1] the output of layer i.
struct NetTrace {
    std::vector<Eigen::MatrixXd> activations;
};

/// Reusable layer buffers for repeated untraced forwards of one net.
struct NetWorkspace {
    std::vector<Eigen::MatrixXd> activations;
};

struct NetGrads {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
};

/// Fully connected net: affine layers with relu on hidden layers and an
/// identity final layer. Columns of the input matrix are independent samples.
class DenseNet {
  public:
    DenseNet() = default;

    /// Widths from input to output; weights drawn uniform in
    /// +-sqrt(6/(fan_in+fan_out)), biases zero.
    DenseNet(const std::vector<int>& widths, Rng& rng);

    int input_dim() const { return weights_.empty() ? 0 : static_cast<int>(weights_.front().cols()); }
    int output_dim() const { return weights_.empty() ? 0 : static_cast<int>(weights_.back().rows()); }
    int num_layers() const { return static_cast<int>(weights_.size()); }
    std::vector<int> widths() const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, NetTrace& trace) const;
    /// Allocation-free after the first call with a given batch width.
    const Eigen::MatrixXd& forward_reuse(const Eigen::MatrixXd& input, NetWorkspace& ws) const;

    /// Reverse-mode pass for a traced forward. Adds parameter gradients into
    /// `grads` (which must match this net's shape) and returns dLoss/dInput.
    Eigen::MatrixXd backward(const NetTrace& trace, const Eigen::MatrixXd& upstream,
                             NetGrads& grads) const;

    NetGrads zero_grads() const;
    std::size_t param_count() const;
    // Fixed flattening order: per layer, row-major weights then bias.
    void flatten_params(double* out) const;
    void unflatten_params(const double* in);
    void flatten_grads(const NetGrads& grads, double* out) const;

    const Eigen::MatrixXd& weight(int layer) const { return weights_[static_cast<std::size_t>(layer)]; }
    Eigen::MatrixXd& weight(int layer) { return weights_[static_cast<std::size_t>(layer)]; }
    const Eigen::VectorXd& bias(int layer) const { return biases_[static_cast<std::size_t>(layer)]; }
    Eigen::VectorXd& bias(int layer) { return biases_[static_cast<std::size_t>(layer)]; }

  private:
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct XentResult {
    double loss = 0.0;
    Eigen::VectorXd grad;  ///< dLoss/dLogits = softmax(logits) - one_hot(target)
};

/// Cross entropy of softmax(logits) against a class index, stabilized by
/// max subtraction.
XentResult softmax_xent(const Eigen::VectorXd& logits, int target);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a flat parameter vector.
class Adam {
  public:
    explicit Adam(Eigen::Index dim, AdamConfig config = {});

    /// One update in place. Returns false and leaves everything untouched
    /// (including the step counter) when the gradient has non-finite entries.
    bool step(Eigen::VectorXd& params, const Eigen::VectorXd& grads);

    int step_count() const { return step_; }

  private:
    AdamConfig config_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    int step_ = 0;
};

/// Central finite differences of a scalar function, the reference gradient
/// for checking reverse-mode results.
Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double step = 1e-5);

}  // namespace gridcascade
