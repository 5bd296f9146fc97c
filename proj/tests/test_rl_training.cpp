#include "test_util.hpp"

#include "trn/error.hpp"
#include "trn/rl_training.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <fstream>
#include <numeric>
#include <set>

using namespace trn;

namespace {

FeatureSequence index_features(std::size_t length, std::size_t dim = 2) {
    FeatureMatrix m(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).setConstant(static_cast<double>(i + 1));
    return FeatureSequence(std::move(m));
}

bool same_params(const QNetwork& a, const QNetwork& b) {
    const auto x = parameter_blocks(a);
    const auto y = parameter_blocks(b);
    if (x.size() != y.size()) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
        if (x[k].size() != y[k].size() || !std::equal(x[k].begin(), x[k].end(), y[k].begin())) return false;
    return true;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.episodes_max = 2;
    cfg.max_steps_per_video = 30;
    cfg.batch = 8;
    cfg.memory_capacity = 50;
    cfg.window = 3;
    cfg.net = {4, 6, 1, 8};
    cfg.target_sync_period = 10;
    cfg.seed = 17;
    return cfg;
}

std::vector<TrainingVideo> tiny_dataset() {
    SynthConfig sc;
    sc.num_phases = 3;
    sc.min_len = 10;
    sc.max_len = 16;
    sc.dim = 4;
    sc.prototype_seed = 3;
    std::vector<TrainingVideo> out;
    for (int v = 0; v < 3; ++v) {
        auto [f, l] = synth_generate(sc, 100 + static_cast<std::uint64_t>(v));
        out.push_back({"v" + std::to_string(v), f, labels_to_transitions(l)});
    }
    return out;
}

PositionInitializer middle_init() {
    return [](std::size_t, const FeatureSequence& seq) {
        return WindowPair{seq.length() / 3, 2 * seq.length() / 3};
    };
}

}  // namespace

TEST_CASE("build_state layout") {
    const auto seq = index_features(10);
    SUBCASE("two centred windows") {
        const StateTensor s = build_state(seq, 1, 8, 3);
        REQUIRE(s.rows.rows() == 6);
        const double expected[6] = {1, 2, 3, 8, 9, 10};
        for (int r = 0; r < 6; ++r) CHECK(s.rows(r, 0) == expected[r]);
        CHECK(std::none_of(s.padded.begin(), s.padded.end(), [](bool p) { return p; }));
    }
    SUBCASE("left padding") {
        const StateTensor s = build_state(seq, 0, 5, 3);
        CHECK(s.padded[0]);
        CHECK(s.rows.row(0).isZero());
        CHECK(s.rows(1, 0) == 1.0);
    }
    SUBCASE("right padding") {
        const StateTensor s = build_state(seq, 5, 9, 3);
        CHECK(s.padded[5]);
        CHECK(s.rows.row(5).isZero());
    }
    SUBCASE("window of one") {
        const StateTensor s = build_state(seq, 4, 6, 1);
        REQUIRE(s.rows.rows() == 2);
        CHECK(s.rows(0, 1) == 5.0);
        CHECK(s.rows(1, 1) == 7.0);
    }
    SUBCASE("errors") {
        CHECK(test::error_code_of([&] { build_state(seq, 6, 5, 3); }) == ErrorCode::InvalidArgument);
        CHECK(test::error_code_of([&] { build_state(seq, 1, 5, 4); }) == ErrorCode::InvalidArgument);
        CHECK(test::error_code_of([&] { build_state(seq, 1, 10, 3); }) == ErrorCode::InvalidArgument);
    }
}

TEST_CASE("build_state through a ClipReader logs every in-range read") {
    const auto seq = index_features(10);
    ClipReader reader(seq);
    build_state(reader, 0, 8, 3);
    CHECK(reader.distinct_reads() == 5);
    const auto clips = window_clips(0, 8, 3, 10);
    CHECK(clips == std::vector<std::size_t>{0, 1, 7, 8, 9});
}

TEST_CASE("apply_action") {
    CHECK(apply_action(5, Action::Right, 100, AgentRole::Begin, 50) == 6);
    CHECK(apply_action(5, Action::Left, 100, AgentRole::Begin, 50) == 4);
    CHECK(apply_action(0, Action::Left, 100, AgentRole::Begin, 50) == 0);
    CHECK(apply_action(99, Action::Right, 100, AgentRole::End, 50) == 99);
    CHECK(apply_action(7, Action::Right, 100, AgentRole::Begin, 7) == 7);
    CHECK(apply_action(7, Action::Left, 100, AgentRole::End, 7) == 7);
    CHECK(apply_action(7, Action::Left, 100, AgentRole::Begin, 7) == 6);
}

TEST_CASE("compute_reward") {
    CHECK(compute_reward(8, 9, 10) == 1);
    CHECK(compute_reward(10, 11, 10) == -1);
    CHECK(compute_reward(4, 4, 10) == -1);
    CHECK(compute_reward(10, 10, 10) == -1);
    CHECK(compute_reward(12, 11, 10) == 1);
}

TEST_CASE("greedy_action and select_action") {
    CHECK(greedy_action({2.0, 1.0}) == Action::Right);
    CHECK(greedy_action({1.0, 2.0}) == Action::Left);
    CHECK(greedy_action({1.0, 1.0}) == Action::Right);

    // A zero network has tied Q-values, so greedy selection always goes Right.
    const QNetwork zero = QNetwork::zeros({2, 3, 1, 4});
    const StateTensor s = build_state(index_features(10), 2, 6, 3);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) CHECK(select_action(zero, s, 0.0, rng) == Action::Right);

    QNetwork left = QNetwork::zeros({2, 3, 1, 4});
    left.fc2.bias << 1.0, 2.0;
    CHECK(select_action(left, s, 0.0, rng) == Action::Left);

    const int n = 10000;
    int rights = 0;
    for (int i = 0; i < n; ++i) rights += select_action(left, s, 1.0, rng) == Action::Right;
    const double sigma = std::sqrt(n * 0.25);
    CHECK(std::abs(rights - n / 2.0) <= 3.0 * sigma);
}

TEST_CASE("ReplayMemory capacity and eviction") {
    ReplayMemory mem(3);
    const StateTensor s = build_state(index_features(4), 1, 2, 1);
    for (int i = 0; i < 5; ++i) {
        ExperienceRecord rec{s, s, i % 2 ? Action::Left : Action::Right, i % 2 ? 1 : -1};
        rec.s.rows(0, 0) = i;
        mem.push(std::move(rec));
        CHECK(mem.size() == std::min<std::size_t>(i + 1, 3));
    }
    CHECK(mem[0].s.rows(0, 0) == 2.0);
    CHECK(mem[2].s.rows(0, 0) == 4.0);
    CHECK(test::error_code_of([&] { mem.push({s, s, Action::Right, 0}); }) == ErrorCode::InvalidArgument);

    std::mt19937_64 rng(2);
    const auto picked = mem.sample(3, rng);
    std::set<const ExperienceRecord*> unique(picked.begin(), picked.end());
    CHECK(unique.size() == 3);
    CHECK(test::error_code_of([&] { mem.sample(4, rng); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("dqn_update") {
    const StateTensor s = build_state(index_features(6, 2), 1, 4, 3);
    std::mt19937_64 rng(3);

    SUBCASE("memory smaller than batch gives no update") {
        QNetwork net = QNetwork::random({2, 4, 1, 6}, rng);
        const QNetwork target = clone_params(net);
        AdamState adam = AdamState::for_network(net, {});
        ReplayMemory mem;
        for (int i = 0; i < 10; ++i) mem.push({s, s, Action::Right, 1});
        const QNetwork before = clone_params(net);
        CHECK_FALSE(dqn_update(net, target, mem, 128, 0.9, adam, rng).has_value());
        CHECK(same_params(net, before));
        CHECK(adam.t == 0);
    }
    SUBCASE("zero target net makes the Bellman target equal the reward") {
        QNetwork net = QNetwork::random({2, 4, 1, 6}, rng);
        const QNetwork target = QNetwork::zeros(net.dims);
        AdamState adam = AdamState::for_network(net, {});
        ReplayMemory mem;
        for (int i = 0; i < 8; ++i) mem.push({s, s, Action::Left, -1});
        const double q = q_values(net, s)[1];
        const HuberResult expected = huber_loss(q, -1.0);
        const auto loss = dqn_update(net, target, mem, 8, 0.9, adam, rng);
        REQUIRE(loss.has_value());
        CHECK(*loss == doctest::Approx(expected.loss).epsilon(1e-12));
    }
    SUBCASE("gamma zero converges to the reward") {
        QNetwork net = QNetwork::random({2, 4, 1, 6}, rng);
        const QNetwork target = clone_params(net);
        AdamState adam = AdamState::for_network(net, AdamConfig{1e-2});
        ReplayMemory mem;
        for (int i = 0; i < 4; ++i) mem.push({s, s, Action::Right, 1});
        double last = 0.0;
        for (int i = 0; i < 400; ++i) last = *dqn_update(net, target, mem, 4, 0.0, adam, rng);
        CHECK(last < 1e-4);
        CHECK(q_values(net, s)[0] == doctest::Approx(1.0).epsilon(0.02));
    }
}

TEST_CASE("train with zero episodes returns the initial pair") {
    TrainConfig cfg = tiny_config();
    cfg.episodes_max = 0;
    const TrainResult res = train(tiny_dataset(), 1, cfg, middle_init());
    std::mt19937_64 rng(cfg.seed);
    const AgentPair fresh = AgentPair::create(cfg, rng);
    CHECK(same_params(res.agents.begin.net, fresh.begin.net));
    CHECK(same_params(res.agents.end.net, fresh.end.net));
    CHECK(res.agents.begin.memory.size() == 0);
    CHECK(res.log.empty());
}

TEST_CASE("train loop invariants") {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_dataset();
    const int phase = 1;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> steps;
    std::size_t last_mem_b = 0, last_mem_e = 0, events = 0;
    bool safe = true, rewards_ok = true, replay_ok = true;

    const TrainResult res = train(data, phase, cfg, middle_init(), [&](const StepEvent& e) {
        ++events;
        ++steps[{e.episode, e.video}];
        const auto& t = *data[e.video].transitions.phases[phase];
        safe &= e.after.begin <= e.after.end && e.before.begin <= e.before.end;
        auto reward = [](std::size_t o, std::size_t n, std::size_t g) {
            const auto d = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
            return d(n, g) < d(o, g) ? 1 : -1;
        };
        rewards_ok &= e.reward_begin == reward(e.before.begin, e.after.begin, t.begin);
        rewards_ok &= e.reward_end == reward(e.before.end, e.after.end, t.end);
        replay_ok &= e.memory_begin == std::min(last_mem_b + 1, cfg.memory_capacity);
        replay_ok &= e.memory_end == std::min(last_mem_e + 1, cfg.memory_capacity);
        last_mem_b = e.memory_begin;
        last_mem_e = e.memory_end;
    });

    CHECK(safe);
    CHECK(rewards_ok);
    CHECK(replay_ok);
    CHECK(events == cfg.episodes_max * data.size() * cfg.max_steps_per_video);
    for (const auto& [key, n] : steps) CHECK(n == cfg.max_steps_per_video);
    CHECK(res.log.size() == cfg.episodes_max * data.size());
    CHECK(res.agents.begin.memory.size() == cfg.memory_capacity);
    for (const auto* mem : {&res.agents.begin.memory, &res.agents.end.memory})
        for (std::size_t i = 0; i < mem->size(); ++i) CHECK(std::abs((*mem)[i].r) == 1);
}

TEST_CASE("train is deterministic for a fixed seed") {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_dataset();
    const TrainResult a = train(data, 0, cfg, middle_init());
    const TrainResult b = train(data, 0, cfg, middle_init());
    CHECK(same_params(a.agents.begin.net, b.agents.begin.net));
    CHECK(same_params(a.agents.end.net, b.agents.end.net));
    CHECK(a.agents.begin.updates == b.agents.begin.updates);
    CHECK(a.agents.begin.updates > 0);

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    const TrainResult c = train(data, 0, other, middle_init());
    CHECK_FALSE(same_params(a.agents.begin.net, c.agents.begin.net));
}

TEST_CASE("train skips videos without the phase") {
    auto data = tiny_dataset();
    data[1].transitions.phases[2].reset();
    TrainConfig cfg = tiny_config();
    cfg.episodes_max = 1;
    const TrainResult res = train(data, 2, cfg, middle_init());
    CHECK(res.skipped_videos == std::vector<std::string>{"v1"});
    CHECK(res.log.size() == 2);

    for (auto& v : data) v.transitions.phases[2].reset();
    CHECK(test::error_code_of([&] { train(data, 2, cfg, middle_init()); }) == ErrorCode::MissingData);
    CHECK(test::error_code_of([&] { train({}, 0, cfg, middle_init()); }) == ErrorCode::MissingData);
}

TEST_CASE("TrainConfig validation and epsilon schedule") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.epsilon_for_episode(0) == 0.9);
    CHECK(cfg.epsilon_for_episode(1) == doctest::Approx(0.9 * 0.995));
    CHECK(cfg.epsilon_for_episode(100000) == 0.05);
    cfg.max_steps_per_video = 201;
    CHECK(test::error_code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("write_train_log leaves missing losses empty") {
    test::TempDir dir;
    TrainLogRow row;
    row.video_id = "a";
    row.mean_loss_begin = std::nan("");
    row.mean_loss_end = 0.25;
    row.terminal_error_begin = 3;
    row.terminal_error_end = 1;
    write_train_log({row}, dir.path() / "log.csv");
    std::ifstream in(dir.path() / "log.csv");
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "episode,video_id,mean_loss_begin,mean_loss_end,terminal_error_begin,terminal_error_end");
    CHECK(line == "0,a,,0.25,3,1");
}
