#include "gradcheck.hpp"
#include "test_util.hpp"

#include "trn/error.hpp"
#include "trn/neural_core.hpp"

#include <doctest.h>

#include <cmath>

using namespace trn;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

StateTensor state_from(std::initializer_list<double> values) {
    StateTensor s;
    s.rows.resize(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) s.rows(i++, 0) = v;
    s.padded.assign(values.size(), false);
    return s;
}

}  // namespace

TEST_CASE("zero network gives zero Q-values") {
    const QNetwork net = QNetwork::zeros({3, 4, 2, 5});
    StateTensor s;
    s.rows = Eigen::MatrixXd::Random(6, 3);
    s.padded.assign(6, false);
    const auto q = q_values(net, s);
    CHECK(q[0] == 0.0);
    CHECK(q[1] == 0.0);
}

TEST_CASE("forward is deterministic and independent of the cache") {
    std::mt19937_64 rng(4);
    const QNetwork net = QNetwork::random({4, 8, 2, 6}, rng);
    const StateBatch batch = test::random_batch(6, 4, 3, rng);
    const Eigen::MatrixXd a = forward(net, batch);
    const Eigen::MatrixXd b = forward(net, batch);
    ForwardCache cache;
    const Eigen::MatrixXd c = forward(net, batch, cache);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(a.allFinite());
}

TEST_CASE("forward of a 1-unit LSTM matches a hand-unrolled cell") {
    QNetwork net = QNetwork::zeros({1, 1, 1, 2});
    // Gate rows i, f, g, o; columns [x | h].
    net.lstm[0].weight << 0.5, -0.3,
                          0.2, 0.4,
                          0.9, 0.1,
                          -0.6, 0.7;
    net.lstm[0].bias << 0.1, 0.2, -0.1, 0.3;
    net.fc1.weight << 1.0, -1.0;
    net.fc1.bias << 0.25, 0.0;
    net.fc2.weight << 2.0, 0.5,
                      -1.0, 3.0;
    net.fc2.bias << 0.1, -0.2;

    const double xs[2] = {1.0, -2.0};
    double h = 0.0, c = 0.0;
    for (double x : xs) {
        const double i = sigmoid(0.5 * x - 0.3 * h + 0.1);
        const double f = sigmoid(0.2 * x + 0.4 * h + 0.2);
        const double g = std::tanh(0.9 * x + 0.1 * h - 0.1);
        const double o = sigmoid(-0.6 * x + 0.7 * h + 0.3);
        c = f * c + i * g;
        h = o * std::tanh(c);
    }
    const double a0 = std::max(0.0, h + 0.25);
    const double a1 = std::max(0.0, -h);
    const double q_right = 2.0 * a0 + 0.5 * a1 + 0.1;
    const double q_left = -1.0 * a0 + 3.0 * a1 - 0.2;

    const auto q = q_values(net, state_from({1.0, -2.0}));
    CHECK(q[0] == doctest::Approx(q_right).epsilon(1e-14));
    CHECK(q[1] == doctest::Approx(q_left).epsilon(1e-14));
}

TEST_CASE("forward rejects mismatched input dimension") {
    const QNetwork net = QNetwork::zeros({3, 2, 1, 2});
    CHECK(test::error_code_of([&] { q_values(net, state_from({1.0, 2.0})); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("backward with zero upstream gradient is zero everywhere") {
    std::mt19937_64 rng(5);
    const QNetwork net = QNetwork::random({2, 3, 2, 4}, rng);
    ForwardCache cache;
    forward(net, test::random_batch(4, 2, 2, rng), cache);
    const QGradients g = backward(net, cache, Eigen::MatrixXd::Zero(2, 2));
    for (const auto& block : parameter_blocks(g))
        for (double v : block) CHECK(v == 0.0);
}

TEST_CASE("fc2 bias gradient equals the upstream gradient") {
    std::mt19937_64 rng(6);
    const QNetwork net = QNetwork::random({2, 3, 1, 4}, rng);
    ForwardCache cache;
    forward(net, test::random_batch(4, 2, 1, rng), cache);
    Eigen::MatrixXd dq(2, 1);
    dq << 0.7, -1.3;
    const QGradients g = backward(net, cache, dq);
    CHECK(g.fc2.bias[0] == 0.7);
    CHECK(g.fc2.bias[1] == -1.3);
}

TEST_CASE("backward agrees with central finite differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const QNetwork net = QNetwork::random({2, 3, 2, 4}, rng);
        const auto batch = test::random_batch(4, 2, 3, rng);
        const auto res = test::gradient_check(net, batch, test::random_upstream(3, rng));
        CHECK(res.parameters == net.parameter_count());
        CHECK(res.max_relative_error <= 1e-4);
    }
}

TEST_CASE("backward rejects a stale cache") {
    std::mt19937_64 rng(7);
    QNetwork net = QNetwork::random({2, 3, 1, 4}, rng);
    ForwardCache cache;
    const auto batch = test::random_batch(4, 2, 1, rng);
    forward(net, batch, cache);
    AdamState adam = AdamState::for_network(net, {});
    adam_step(net, backward(net, cache, Eigen::MatrixXd::Ones(2, 1)), adam);
    CHECK(test::error_code_of([&] { backward(net, cache, Eigen::MatrixXd::Ones(2, 1)); }) == ErrorCode::StaleCache);

    const QNetwork other = clone_params(net);
    ForwardCache fresh;
    forward(net, batch, fresh);
    CHECK(test::error_code_of([&] { backward(other, fresh, Eigen::MatrixXd::Ones(2, 1)); }) == ErrorCode::StaleCache);
}

TEST_CASE("huber_loss branches") {
    auto r = huber_loss(0.0, 0.5);
    CHECK(r.loss == 0.125);
    CHECK(r.grad == -0.5);
    r = huber_loss(0.0, 2.0);
    CHECK(r.loss == 1.5);
    CHECK(r.grad == -1.0);
    r = huber_loss(3.0, 3.0);
    CHECK(r.loss == 0.0);
    CHECK(r.grad == 0.0);
}

TEST_CASE("huber_loss and its derivative are continuous at the threshold") {
    for (double sign : {-1.0, 1.0}) {
        const auto below = huber_loss(sign * (1.0 - 1e-9), 0.0);
        const auto above = huber_loss(sign * (1.0 + 1e-9), 0.0);
        CHECK(std::abs(below.loss - above.loss) < 1e-8);
        CHECK(std::abs(below.grad - above.grad) < 1e-8);
    }
}

TEST_CASE("adam_step") {
    SUBCASE("first bias-corrected step") {
        std::vector<double> p{0.0};
        const std::vector<double> g{1.0};
        std::vector<std::span<double>> params{p};
        std::vector<std::span<const double>> grads{g};
        AdamState s;
        s.config.learning_rate = 0.001;
        s.m = {{0.0}};
        s.v = {{0.0}};
        adam_step(params, grads, s);
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        CHECK(p[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(s.t == 1);
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::mt19937_64 rng(1);
        QNetwork net = QNetwork::random({2, 3, 1, 4}, rng);
        const QNetwork before = clone_params(net);
        AdamState s = AdamState::for_network(net, {});
        adam_step(net, QNetwork::zeros(net.dims), s);
        const auto a = parameter_blocks(net);
        const auto b = parameter_blocks(before);
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::equal(a[k].begin(), a[k].end(), b[k].begin()));
    }
    SUBCASE("positive gradient decreases the parameter monotonically") {
        std::vector<double> p{1.0};
        const std::vector<double> g{0.3};
        std::vector<std::span<double>> params{p};
        std::vector<std::span<const double>> grads{g};
        AdamState s;
        s.m = {{0.0}};
        s.v = {{0.0}};
        double prev = p[0];
        for (int i = 0; i < 5; ++i) {
            adam_step(params, grads, s);
            CHECK(p[0] < prev);
            prev = p[0];
        }
    }
    SUBCASE("shape mismatch") {
        QNetwork a = QNetwork::zeros({2, 3, 1, 4});
        AdamState s = AdamState::for_network(a, {});
        CHECK(test::error_code_of([&] { adam_step(a, QNetwork::zeros({2, 3, 2, 4}), s); }) ==
              ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("clone_params is value-equal and independent") {
    std::mt19937_64 rng(8);
    QNetwork net = QNetwork::random({2, 3, 2, 4}, rng);
    const QNetwork copy = clone_params(net);
    const auto batch = test::random_batch(4, 2, 2, rng);
    CHECK(forward(net, batch) == forward(copy, batch));
    net.fc2.bias[0] += 1.0;
    CHECK_FALSE(forward(net, batch) == forward(copy, batch));

    const QNetwork z = clone_params(QNetwork::zeros({2, 3, 1, 4}));
    for (const auto& block : parameter_blocks(z))
        for (double v : block) CHECK(v == 0.0);
}

TEST_CASE("random initialization respects the fan-in bound") {
    std::mt19937_64 rng(2);
    const QNetwork net = QNetwork::random({16, 64, 2, 50}, rng);
    CHECK(net.lstm[0].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(80.0));
    CHECK(net.lstm[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(128.0));
    CHECK(net.fc1.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(64.0));
    CHECK(net.fc2.weight.rows() == 2);
}

TEST_CASE("checkpoint round trip and dimension validation") {
    test::TempDir dir;
    std::mt19937_64 rng(12);
    const QNetwork net = QNetwork::random({3, 5, 2, 7}, rng);
    save_checkpoint(net, dir.path() / "n.qnet");
    const QNetwork back = load_checkpoint(dir.path() / "n.qnet", net.dims);
    const auto a = parameter_blocks(net);
    const auto b = parameter_blocks(back);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::equal(a[k].begin(), a[k].end(), b[k].begin()));
    CHECK(std::filesystem::file_size(dir.path() / "n.qnet") == 32 + 8 * net.parameter_count());
    CHECK(test::error_code_of([&] { load_checkpoint(dir.path() / "n.qnet", NetDims{3, 6, 2, 7}); }) ==
          ErrorCode::DimensionMismatch);
}
