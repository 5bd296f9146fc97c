#include "trn/neural_core.hpp"

#include "trn/binary_io.hpp"
#include "trn/error.hpp"

#include <cmath>

namespace trn {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;

constexpr char kCheckpointMagic[4] = {'T', 'R', 'N', 'Q'};
constexpr std::uint32_t kCheckpointVersion = 1;

Index idx(std::size_t n) { return static_cast<Index>(n); }

void fill_uniform(Eigen::Ref<MatrixXd> m, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
}

void fill_uniform(Eigen::VectorXd& v, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
}

MatrixXd sigmoid(const MatrixXd& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

void validate_dims(const NetDims& d) {
    if (d.input < 1 || d.hidden < 1 || d.layers < 1 || d.fc < 1)
        throw Error(ErrorCode::InvalidArgument, "network dimensions must all be >= 1");
}

// Shared forward pass; stores activations when `cache` is non-null.
MatrixXd run_forward(const QNetwork& net, const StateBatch& batch, ForwardCache* cache) {
    const std::size_t steps = batch.steps();
    if (steps == 0) throw Error(ErrorCode::DimensionMismatch, "empty state sequence");
    const Index b = batch.inputs.front().cols();
    const Index hdim = idx(net.dims.hidden);
    for (const auto& x : batch.inputs)
        if (x.rows() != idx(net.dims.input) || x.cols() != b)
            throw Error(ErrorCode::DimensionMismatch, "state feature dim does not match network input");

    if (cache) {
        cache->net = &net;
        cache->generation = net.generation;
        cache->batch = static_cast<std::size_t>(b);
        cache->concat.assign(net.lstm.size(), std::vector<MatrixXd>(steps));
        cache->gates.assign(net.lstm.size(), std::vector<MatrixXd>(steps));
        cache->cell.assign(net.lstm.size(), std::vector<MatrixXd>(steps));
        cache->cell_tanh.assign(net.lstm.size(), std::vector<MatrixXd>(steps));
    }

    std::vector<MatrixXd> below = batch.inputs;
    std::vector<MatrixXd> outputs(steps);
    for (std::size_t l = 0; l < net.lstm.size(); ++l) {
        const LstmLayer& layer = net.lstm[l];
        const Index in_dim = layer.weight.cols() - hdim;
        MatrixXd h = MatrixXd::Zero(hdim, b);
        MatrixXd c = MatrixXd::Zero(hdim, b);
        MatrixXd concat(in_dim + hdim, b);
        MatrixXd z(4 * hdim, b);
        for (std::size_t t = 0; t < steps; ++t) {
            concat.topRows(in_dim) = below[t];
            concat.bottomRows(hdim) = h;
            z.noalias() = layer.weight * concat;
            z.colwise() += layer.bias;
            MatrixXd act(4 * hdim, b);
            act.topRows(2 * hdim) = sigmoid(z.topRows(2 * hdim));
            act.middleRows(2 * hdim, hdim) = z.middleRows(2 * hdim, hdim).array().tanh().matrix();
            act.bottomRows(hdim) = sigmoid(z.bottomRows(hdim));
            c = (act.middleRows(hdim, hdim).array() * c.array() +
                 act.topRows(hdim).array() * act.middleRows(2 * hdim, hdim).array())
                    .matrix();
            MatrixXd tc = c.array().tanh().matrix();
            h = (act.bottomRows(hdim).array() * tc.array()).matrix();
            outputs[t] = h;
            if (cache) {
                cache->concat[l][t] = concat;
                cache->gates[l][t] = std::move(act);
                cache->cell[l][t] = c;
                cache->cell_tanh[l][t] = std::move(tc);
            }
        }
        std::swap(below, outputs);
    }

    const MatrixXd& top = below.back();
    MatrixXd a1 = net.fc1.weight * top;
    a1.colwise() += net.fc1.bias;
    a1 = a1.cwiseMax(0.0);
    MatrixXd q = net.fc2.weight * a1;
    q.colwise() += net.fc2.bias;
    if (cache) {
        cache->top_hidden = top;
        cache->fc1_out = std::move(a1);
    }
    return q;
}

}  // namespace

QNetwork QNetwork::zeros(const NetDims& dims) {
    validate_dims(dims);
    QNetwork net;
    net.dims = dims;
    const Index h = idx(dims.hidden);
    for (std::size_t l = 0; l < dims.layers; ++l) {
        const Index in = l == 0 ? idx(dims.input) : h;
        net.lstm.push_back({MatrixXd::Zero(4 * h, in + h), Eigen::VectorXd::Zero(4 * h)});
    }
    net.fc1 = {MatrixXd::Zero(idx(dims.fc), h), Eigen::VectorXd::Zero(idx(dims.fc))};
    net.fc2 = {MatrixXd::Zero(idx(kActions), idx(dims.fc)), Eigen::VectorXd::Zero(idx(kActions))};
    return net;
}

QNetwork QNetwork::random(const NetDims& dims, std::mt19937_64& rng) {
    QNetwork net = zeros(dims);
    for (auto& layer : net.lstm) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        fill_uniform(layer.weight, bound, rng);
        fill_uniform(layer.bias, bound, rng);
    }
    for (Dense* d : {&net.fc1, &net.fc2}) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d->weight.cols()));
        fill_uniform(d->weight, bound, rng);
        fill_uniform(d->bias, bound, rng);
    }
    return net;
}

std::size_t QNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : parameter_blocks(*this)) n += b.size();
    return n;
}

bool QNetwork::all_finite() const {
    for (const auto& b : parameter_blocks(*this))
        for (double v : b)
            if (!std::isfinite(v)) return false;
    return true;
}

void QNetwork::set_zero() {
    for (auto& b : parameter_blocks(*this)) std::fill(b.begin(), b.end(), 0.0);
    ++generation;
}

std::vector<std::span<double>> parameter_blocks(QNetwork& net) {
    std::vector<std::span<double>> out;
    auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
    for (auto& layer : net.lstm) {
        add(layer.weight);
        add(layer.bias);
    }
    add(net.fc1.weight);
    add(net.fc1.bias);
    add(net.fc2.weight);
    add(net.fc2.bias);
    return out;
}

std::vector<std::span<const double>> parameter_blocks(const QNetwork& net) {
    auto blocks = parameter_blocks(const_cast<QNetwork&>(net));
    return {blocks.begin(), blocks.end()};
}

StateBatch make_batch(std::span<const StateTensor* const> states) {
    if (states.empty()) throw Error(ErrorCode::DimensionMismatch, "empty batch");
    const std::size_t steps = states.front()->steps();
    const Index dim = static_cast<Index>(states.front()->dim());
    const Index b = static_cast<Index>(states.size());
    StateBatch out;
    out.inputs.assign(steps, MatrixXd(dim, b));
    for (Index j = 0; j < b; ++j) {
        const StateTensor& s = *states[static_cast<std::size_t>(j)];
        if (s.steps() != steps || static_cast<Index>(s.dim()) != dim)
            throw Error(ErrorCode::DimensionMismatch, "states in a batch must share shape");
        for (std::size_t t = 0; t < steps; ++t) out.inputs[t].col(j) = s.rows.row(static_cast<Index>(t)).transpose();
    }
    return out;
}

StateBatch make_batch(const StateTensor& state) {
    const StateTensor* p = &state;
    return make_batch(std::span<const StateTensor* const>(&p, 1));
}

MatrixXd forward(const QNetwork& net, const StateBatch& batch, ForwardCache& cache) {
    return run_forward(net, batch, &cache);
}

MatrixXd forward(const QNetwork& net, const StateBatch& batch) { return run_forward(net, batch, nullptr); }

std::array<double, 2> q_values(const QNetwork& net, const StateTensor& state) {
    const MatrixXd q = forward(net, make_batch(state));
    return {q(0, 0), q(1, 0)};
}

QGradients backward(const QNetwork& net, const ForwardCache& cache, const MatrixXd& dq) {
    if (cache.net != &net || cache.generation != net.generation)
        throw Error(ErrorCode::StaleCache, "activation cache does not belong to this network state");
    const Index b = static_cast<Index>(cache.batch);
    if (dq.rows() != idx(QNetwork::kActions) || dq.cols() != b)
        throw Error(ErrorCode::DimensionMismatch, "upstream gradient must be 2 x batch");

    QGradients g = QNetwork::zeros(net.dims);
    const Index hdim = idx(net.dims.hidden);
    const std::size_t steps = cache.concat.front().size();

    g.fc2.weight.noalias() = dq * cache.fc1_out.transpose();
    g.fc2.bias = dq.rowwise().sum();
    MatrixXd dz1 = net.fc2.weight.transpose() * dq;
    dz1.array() *= (cache.fc1_out.array() > 0.0).cast<double>();
    g.fc1.weight.noalias() = dz1 * cache.top_hidden.transpose();
    g.fc1.bias = dz1.rowwise().sum();
    const MatrixXd dh_top = net.fc1.weight.transpose() * dz1;

    std::vector<MatrixXd> from_above;  // dL/dh_t of the current layer coming from the layer above
    for (std::size_t l = net.lstm.size(); l-- > 0;) {
        const LstmLayer& layer = net.lstm[l];
        LstmLayer& grad = g.lstm[l];
        const Index in_dim = layer.weight.cols() - hdim;
        std::vector<MatrixXd> to_below(steps);
        MatrixXd dh_next = MatrixXd::Zero(hdim, b);
        MatrixXd dc_next = MatrixXd::Zero(hdim, b);
        MatrixXd dz(4 * hdim, b);
        MatrixXd dconcat(in_dim + hdim, b);
        for (std::size_t t = steps; t-- > 0;) {
            MatrixXd dh = dh_next;
            if (l + 1 == net.lstm.size()) {
                if (t + 1 == steps) dh += dh_top;
            } else {
                dh += from_above[t];
            }
            const MatrixXd& act = cache.gates[l][t];
            const auto i = act.topRows(hdim).array();
            const auto f = act.middleRows(hdim, hdim).array();
            const auto gg = act.middleRows(2 * hdim, hdim).array();
            const auto o = act.bottomRows(hdim).array();
            const auto tc = cache.cell_tanh[l][t].array();

            const MatrixXd dc = (dc_next.array() + dh.array() * o * (1.0 - tc.square())).matrix();
            if (t > 0) {
                dz.middleRows(hdim, hdim) = (dc.array() * cache.cell[l][t - 1].array() * f * (1.0 - f)).matrix();
            } else {
                dz.middleRows(hdim, hdim).setZero();
            }
            dz.topRows(hdim) = (dc.array() * gg * i * (1.0 - i)).matrix();
            dz.middleRows(2 * hdim, hdim) = (dc.array() * i * (1.0 - gg.square())).matrix();
            dz.bottomRows(hdim) = (dh.array() * tc * o * (1.0 - o)).matrix();

            grad.weight.noalias() += dz * cache.concat[l][t].transpose();
            grad.bias += dz.rowwise().sum();
            dconcat.noalias() = layer.weight.transpose() * dz;
            if (l > 0) to_below[t] = dconcat.topRows(in_dim);
            dh_next = dconcat.bottomRows(hdim);
            dc_next = (dc.array() * f).matrix();
        }
        from_above = std::move(to_below);
    }
    return g;
}

HuberResult huber_loss(double pred, double target, double delta) {
    const double diff = pred - target;
    const double a = std::abs(diff);
    if (a <= delta) return {0.5 * diff * diff, diff};
    return {delta * (a - 0.5 * delta), diff > 0.0 ? delta : -delta};
}

AdamState AdamState::for_network(const QNetwork& net, const AdamConfig& config) {
    AdamState s;
    s.config = config;
    for (const auto& b : parameter_blocks(net)) {
        s.m.emplace_back(b.size(), 0.0);
        s.v.emplace_back(b.size(), 0.0);
    }
    return s;
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw Error(ErrorCode::ShapeMismatch, "Adam parameter/gradient block count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k)
        if (params[k].size() != grads[k].size() || params[k].size() != state.m[k].size())
            throw Error(ErrorCode::ShapeMismatch, "Adam block size mismatch at block " + std::to_string(k));

    const AdamConfig& c = state.config;
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double corr2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double g = grads[k][i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double m_hat = m[i] / corr1;
            const double v_hat = v[i] / corr2;
            params[k][i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

void adam_step(QNetwork& net, const QGradients& grads, AdamState& state) {
    if (!(net.dims == grads.dims)) throw Error(ErrorCode::ShapeMismatch, "gradient dims differ from network");
    const auto p = parameter_blocks(net);
    const auto g = parameter_blocks(grads);
    adam_step(p, g, state);
    ++net.generation;
}

QNetwork clone_params(const QNetwork& net) {
    QNetwork copy = net;
    copy.generation = 0;
    return copy;
}

void save_checkpoint(const QNetwork& net, const std::filesystem::path& path) {
    std::string out(kCheckpointMagic, 4);
    io::put_u32(out, kCheckpointVersion);
    io::put_u32(out, static_cast<std::uint32_t>(net.dims.input));
    io::put_u32(out, static_cast<std::uint32_t>(net.dims.hidden));
    io::put_u32(out, static_cast<std::uint32_t>(net.dims.layers));
    io::put_u32(out, static_cast<std::uint32_t>(net.dims.fc));
    io::put_u64(out, net.parameter_count());
    for (const auto& block : parameter_blocks(net))
        for (double v : block) io::put_f64(out, v);
    io::write_file(path, out);
}

QNetwork load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin()))
        throw Error(ErrorCode::BadMagic, path.string());
    constexpr std::size_t header = 32;
    if (bytes.size() < header) throw Error(ErrorCode::Truncated, "checkpoint header " + path.string());
    if (io::get_u32(bytes, 4) != kCheckpointVersion) throw Error(ErrorCode::BadVersion, path.string());
    NetDims dims{io::get_u32(bytes, 8), io::get_u32(bytes, 12), io::get_u32(bytes, 16), io::get_u32(bytes, 20)};
    QNetwork net = QNetwork::zeros(dims);
    if (io::get_u64(bytes, 24) != net.parameter_count())
        throw Error(ErrorCode::DimensionMismatch, "parameter count disagrees with dims in " + path.string());
    if (bytes.size() < header + 8 * net.parameter_count())
        throw Error(ErrorCode::Truncated, "checkpoint payload " + path.string());
    std::size_t off = header;
    for (auto& block : parameter_blocks(net))
        for (double& v : block) {
            v = io::get_f64(bytes, off);
            off += 8;
        }
    if (!net.all_finite()) throw Error(ErrorCode::NonFinite, path.string());
    return net;
}

QNetwork load_checkpoint(const std::filesystem::path& path, const NetDims& expected) {
    QNetwork net = load_checkpoint(path);
    if (!(net.dims == expected))
        throw Error(ErrorCode::DimensionMismatch, "checkpoint dims differ from configuration: " + path.string());
    return net;
}

}  // namespace trn
