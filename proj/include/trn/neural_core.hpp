#pragma once

// Q-network used by each transition agent: a stacked LSTM over the window
// sequence, then fc1 (ReLU) and fc2 producing Q(Right), Q(Left).
// Everything is double precision with hand-written backpropagation.

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace trn {

struct NetDims {
    std::size_t input = 16;
    std::size_t hidden = 64;
    std::size_t layers = 2;
    std::size_t fc = 50;

    friend bool operator==(const NetDims&, const NetDims&) = default;
};

/// Gate rows are stacked in the order input, forget, cell, output; columns
/// are [layer input | previous hidden].
struct LstmLayer {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct Dense {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct QNetwork {
    NetDims dims;
    std::vector<LstmLayer> lstm;
    Dense fc1;
    Dense fc2;
    // Bumped whenever parameters change so stale caches can be detected.
    std::uint64_t generation = 0;

    static constexpr std::size_t kActions = 2;

    /// Zero-initialized network of the given shape.
    static QNetwork zeros(const NetDims& dims);
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    static QNetwork random(const NetDims& dims, std::mt19937_64& rng);

    std::size_t parameter_count() const;
    bool all_finite() const;
    void set_zero();
};

/// Gradient blocks share the network layout.
using QGradients = QNetwork;

/// Parameter tensors in declaration order: per LSTM layer weight then bias,
/// fc1 weight, fc1 bias, fc2 weight, fc2 bias.
std::vector<std::span<double>> parameter_blocks(QNetwork& net);
std::vector<std::span<const double>> parameter_blocks(const QNetwork& net);

/// 2L x D window contents, begin window first. Rows marked padded are zeros.
struct StateTensor {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;
    std::vector<bool> padded;

    std::size_t steps() const noexcept { return static_cast<std::size_t>(rows.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(rows.cols()); }
    friend bool operator==(const StateTensor&, const StateTensor&) = default;
};

/// Time-major batch: inputs[t] is D x B, one column per sample.
struct StateBatch {
    std::vector<Eigen::MatrixXd> inputs;

    std::size_t steps() const noexcept { return inputs.size(); }
    std::size_t batch() const noexcept {
        return inputs.empty() ? 0 : static_cast<std::size_t>(inputs.front().cols());
    }
};

StateBatch make_batch(std::span<const StateTensor* const> states);
StateBatch make_batch(const StateTensor& state);

struct ForwardCache {
    const QNetwork* net = nullptr;
    std::uint64_t generation = 0;
    std::size_t batch = 0;
    // [layer][t]
    std::vector<std::vector<Eigen::MatrixXd>> concat;  // [x_t; h_{t-1}]
    std::vector<std::vector<Eigen::MatrixXd>> gates;   // activated i, f, g, o stacked (4H x B)
    std::vector<std::vector<Eigen::MatrixXd>> cell;    // c_t
    std::vector<std::vector<Eigen::MatrixXd>> cell_tanh;
    Eigen::MatrixXd top_hidden;  // H x B, final hidden state of the last layer
    Eigen::MatrixXd fc1_out;     // post-ReLU
};

/// Q-values for a batch (2 x B) with the activation record needed by backward().
Eigen::MatrixXd forward(const QNetwork& net, const StateBatch& batch, ForwardCache& cache);
/// Q-values without building a cache.
Eigen::MatrixXd forward(const QNetwork& net, const StateBatch& batch);
std::array<double, 2> q_values(const QNetwork& net, const StateTensor& state);

/// Gradients of the loss w.r.t. every parameter given dL/dq (2 x B).
QGradients backward(const QNetwork& net, const ForwardCache& cache, const Eigen::MatrixXd& dq);

struct HuberResult {
    double loss;
    double grad;  // d loss / d pred
};
HuberResult huber_loss(double pred, double target, double delta = 1.0);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    static AdamState for_network(const QNetwork& net, const AdamConfig& config);
};

/// One bias-corrected Adam step over matching parameter/gradient blocks.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state);
void adam_step(QNetwork& net, const QGradients& grads, AdamState& state);

QNetwork clone_params(const QNetwork& net);

void save_checkpoint(const QNetwork& net, const std::filesystem::path& path);
QNetwork load_checkpoint(const std::filesystem::path& path);
/// Loads and rejects files whose dimensions differ from `expected`.
QNetwork load_checkpoint(const std::filesystem::path& path, const NetDims& expected);

}  // namespace trn
