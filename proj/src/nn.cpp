#include "gridcascade/nn.hpp"

#include <cmath>
#include <string>

#include "gridcascade/error.hpp"

namespace gridcascade {

DenseNet::DenseNet(const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) throw ValidationError("DenseNet: need at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const int fan_in = widths[i];
        const int fan_out = widths[i + 1];
        if (fan_in <= 0 || fan_out <= 0) throw ValidationError("DenseNet: widths must be positive");
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r) {
            for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
        }
        weights_.push_back(std::move(w));
        biases_.push_back(Eigen::VectorXd::Zero(fan_out));
    }
}

std::vector<int> DenseNet::widths() const {
    std::vector<int> w;
    if (weights_.empty()) return w;
    w.push_back(input_dim());
    for (const auto& m : weights_) w.push_back(static_cast<int>(m.rows()));
    return w;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& input) const {
    if (input.rows() != input_dim()) {
        throw ValidationError("DenseNet::forward: input has " + std::to_string(input.rows()) +
                              " rows, expected " + std::to_string(input_dim()));
    }
    Eigen::MatrixXd a = input;
    for (int i = 0; i < num_layers(); ++i) {
        Eigen::MatrixXd z = (weights_[i] * a).colwise() + biases_[i];
        a = (i + 1 < num_layers()) ? z.cwiseMax(0.0) : std::move(z);
    }
    return a;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& input, NetTrace& trace) const {
    if (input.rows() != input_dim()) {
        throw ValidationError("DenseNet::forward: input has " + std::to_string(input.rows()) +
                              " rows, expected " + std::to_string(input_dim()));
    }
    trace.activations.clear();
    trace.activations.reserve(static_cast<std::size_t>(num_layers()) + 1);
    trace.activations.push_back(input);
    for (int i = 0; i < num_layers(); ++i) {
        Eigen::MatrixXd z = (weights_[i] * trace.activations.back()).colwise() + biases_[i];
        trace.activations.push_back((i + 1 < num_layers()) ? z.cwiseMax(0.0) : std::move(z));
    }
    return trace.activations.back();
}

const Eigen::MatrixXd& DenseNet::forward_reuse(const Eigen::MatrixXd& input,
                                               NetWorkspace& ws) const {
    if (input.rows() != input_dim()) {
        throw ValidationError("DenseNet::forward_reuse: input has " +
                              std::to_string(input.rows()) + " rows, expected " +
                              std::to_string(input_dim()));
    }
    ws.activations.resize(static_cast<std::size_t>(num_layers()));
    const Eigen::MatrixXd* prev = &input;
    for (int i = 0; i < num_layers(); ++i) {
        Eigen::MatrixXd& act = ws.activations[static_cast<std::size_t>(i)];
        act.resize(weights_[static_cast<std::size_t>(i)].rows(), input.cols());
        act.noalias() = weights_[static_cast<std::size_t>(i)] * (*prev);
        act.colwise() += biases_[static_cast<std::size_t>(i)];
        if (i + 1 < num_layers()) act = act.cwiseMax(0.0);
        prev = &act;
    }
    return ws.activations.back();
}

Eigen::MatrixXd DenseNet::backward(const NetTrace& trace, const Eigen::MatrixXd& upstream,
                                   NetGrads& grads) const {
    if (trace.activations.size() != static_cast<std::size_t>(num_layers()) + 1) {
        throw ValidationError("DenseNet::backward: trace does not match this net");
    }
    if (upstream.rows() != output_dim() || upstream.cols() != trace.activations.back().cols()) {
        throw ValidationError("DenseNet::backward: upstream gradient shape mismatch");
    }
    if (grads.weight.size() != weights_.size()) {
        throw ValidationError("DenseNet::backward: gradient accumulator shape mismatch");
    }
    Eigen::MatrixXd g = upstream;
    for (int i = num_layers() - 1; i >= 0; --i) {
        if (i + 1 < num_layers()) {
            // relu: the post-activation value is positive iff the unit was live
            g = g.cwiseProduct((trace.activations[static_cast<std::size_t>(i) + 1].array() > 0.0)
                                   .cast<double>()
                                   .matrix());
        }
        grads.weight[static_cast<std::size_t>(i)].noalias() +=
            g * trace.activations[static_cast<std::size_t>(i)].transpose();
        grads.bias[static_cast<std::size_t>(i)] += g.rowwise().sum();
        g = weights_[static_cast<std::size_t>(i)].transpose() * g;
    }
    return g;
}

NetGrads DenseNet::zero_grads() const {
    NetGrads g;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        g.weight.push_back(Eigen::MatrixXd::Zero(weights_[i].rows(), weights_[i].cols()));
        g.bias.push_back(Eigen::VectorXd::Zero(biases_[i].size()));
    }
    return g;
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        n += static_cast<std::size_t>(weights_[i].size()) + static_cast<std::size_t>(biases_[i].size());
    }
    return n;
}

void DenseNet::flatten_params(double* out) const {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const Eigen::MatrixXd& w = weights_[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) *out++ = w(r, c);
        }
        for (Eigen::Index r = 0; r < biases_[i].size(); ++r) *out++ = biases_[i][r];
    }
}

void DenseNet::unflatten_params(const double* in) {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        Eigen::MatrixXd& w = weights_[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = *in++;
        }
        for (Eigen::Index r = 0; r < biases_[i].size(); ++r) biases_[i][r] = *in++;
    }
}

void DenseNet::flatten_grads(const NetGrads& grads, double* out) const {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const Eigen::MatrixXd& w = grads.weight[i];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) *out++ = w(r, c);
        }
        for (Eigen::Index r = 0; r < grads.bias[i].size(); ++r) *out++ = grads.bias[i][r];
    }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double peak = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - peak).exp();
    return e / e.sum();
}

XentResult softmax_xent(const Eigen::VectorXd& logits, int target) {
    if (target < 0 || target >= logits.size()) {
        throw ValidationError("softmax_xent: target class " + std::to_string(target) +
                              " outside [0, " + std::to_string(logits.size()) + ")");
    }
    const double peak = logits.maxCoeff();
    const Eigen::ArrayXd shifted = logits.array() - peak;
    const double log_sum = std::log(shifted.exp().sum());
    XentResult r;
    r.loss = log_sum - shifted[target];
    r.grad = (shifted - log_sum).exp().matrix();
    r.grad[target] -= 1.0;
    return r;
}

Adam::Adam(Eigen::Index dim, AdamConfig config)
    : config_(config), m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim)) {}

bool Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ValidationError("Adam::step: parameter/gradient size mismatch");
    }
    if (!grads.allFinite()) return false;
    ++step_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grads;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grads.cwiseProduct(grads);
    const double m_corr = 1.0 - std::pow(config_.beta1, step_);
    const double v_corr = 1.0 - std::pow(config_.beta2, step_);
    params.array() -=
        config_.lr * (m_.array() / m_corr) / ((v_.array() / v_corr).sqrt() + config_.eps);
    return true;
}

Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double step) {
    Eigen::VectorXd grad(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double up = f(probe);
        probe[i] = x[i] - step;
        const double down = f(probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace gridcascade
