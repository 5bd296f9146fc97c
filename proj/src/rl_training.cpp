#include "trn/rl_training.hpp"

#include "trn/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace trn {

namespace {

using Eigen::Index;

void check_window(std::size_t window) {
    if (window == 0 || window % 2 == 0)
        throw Error(ErrorCode::InvalidArgument, "window length must be a positive odd number");
}

template <class ReadRow>
StateTensor assemble_state(std::size_t length, std::size_t dim, std::size_t p_b, std::size_t p_e,
                           std::size_t window, ReadRow&& read_row) {
    check_window(window);
    if (p_b > p_e) throw Error(ErrorCode::InvalidArgument, "begin window must not be right of end window");
    if (p_e >= length) throw Error(ErrorCode::InvalidArgument, "window position outside the sequence");
    StateTensor s;
    s.rows.setZero(static_cast<Index>(2 * window), static_cast<Index>(dim));
    s.padded.assign(2 * window, false);
    const auto half = static_cast<std::ptrdiff_t>(window / 2);
    const std::size_t centers[2] = {p_b, p_e};
    for (std::size_t w = 0; w < 2; ++w) {
        for (std::ptrdiff_t off = -half; off <= half; ++off) {
            const std::size_t row = w * window + static_cast<std::size_t>(off + half);
            const auto clip = static_cast<std::ptrdiff_t>(centers[w]) + off;
            if (clip < 0 || clip >= static_cast<std::ptrdiff_t>(length)) {
                s.padded[row] = true;
                continue;
            }
            const std::span<const double> src = read_row(static_cast<std::size_t>(clip));
            for (std::size_t j = 0; j < dim; ++j) s.rows(static_cast<Index>(row), static_cast<Index>(j)) = src[j];
        }
    }
    return s;
}

}  // namespace

std::vector<std::size_t> window_clips(std::size_t p_b, std::size_t p_e, std::size_t window, std::size_t length) {
    check_window(window);
    const std::size_t half = window / 2;
    std::vector<std::size_t> out;
    for (std::size_t c : {p_b, p_e}) {
        const std::size_t lo = c >= half ? c - half : 0;
        const std::size_t hi = std::min(c + half, length - 1);
        for (std::size_t i = lo; i <= hi; ++i) out.push_back(i);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

StateTensor build_state(const FeatureSequence& seq, std::size_t p_b, std::size_t p_e, std::size_t window) {
    return assemble_state(seq.length(), seq.dim(), p_b, p_e, window, [&](std::size_t i) { return seq.row(i); });
}

StateTensor build_state(ClipReader& reader, std::size_t p_b, std::size_t p_e, std::size_t window) {
    const FeatureSequence& seq = reader.sequence();
    return assemble_state(seq.length(), seq.dim(), p_b, p_e, window,
                          [&](std::size_t i) { return reader.read(i); });
}

std::size_t apply_action(std::size_t p, Action a, std::size_t length, AgentRole role, std::size_t partner) {
    std::size_t next = p;
    if (a == Action::Right) {
        if (p + 1 < length) next = p + 1;
    } else if (p > 0) {
        next = p - 1;
    }
    if (role == AgentRole::Begin) return std::min(next, partner);
    return std::max(next, partner);
}

int compute_reward(std::size_t old_center, std::size_t new_center, std::size_t gt) {
    auto dist = [gt](std::size_t p) { return p > gt ? p - gt : gt - p; };
    return dist(new_center) < dist(old_center) ? 1 : -1;
}

Action greedy_action(const std::array<double, 2>& q) { return q[0] >= q[1] ? Action::Right : Action::Left; }

Action select_action(const QNetwork& net, const StateTensor& s, double epsilon, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < epsilon) return u(rng) < 0.5 ? Action::Right : Action::Left;
    return greedy_action(q_values(net, s));
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw Error(ErrorCode::InvalidArgument, "replay capacity must be positive");
}

void ReplayMemory::push(ExperienceRecord rec) {
    if (rec.r != 1 && rec.r != -1) throw Error(ErrorCode::InvalidArgument, "reward must be +1 or -1");
    if (records_.size() == capacity_) records_.pop_front();
    records_.push_back(std::move(rec));
}

std::vector<const ExperienceRecord*> ReplayMemory::sample(std::size_t count, std::mt19937_64& rng) const {
    if (count > records_.size()) throw Error(ErrorCode::InvalidArgument, "sample larger than memory");
    // Partial Fisher-Yates over the index range.
    std::vector<std::size_t> idx(records_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<const ExperienceRecord*> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.push_back(&records_[idx[i]]);
    }
    return out;
}

void TrainConfig::validate() const {
    check_window(window);
    if (max_steps_per_video == 0 || batch == 0 || memory_capacity == 0 || target_sync_period == 0)
        throw Error(ErrorCode::InvalidArgument, "step cap, batch, memory and sync period must be positive");
    if (max_steps_per_video > 200)
        throw Error(ErrorCode::InvalidArgument, "agents explore at most 200 steps per video");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be in [0, 1)");
    for (double e : {epsilon_start, epsilon_min})
        if (!(e >= 0.0 && e <= 1.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be in [0, 1]");
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "epsilon decay must be in (0, 1]");
}

double TrainConfig::epsilon_for_episode(std::size_t episode) const {
    return std::max(epsilon_min, epsilon_start * std::pow(epsilon_decay, static_cast<double>(episode)));
}

AgentPair AgentPair::create(const TrainConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const AdamConfig adam{cfg.learning_rate};
    auto make = [&] {
        QNetwork net = QNetwork::random(cfg.net, rng);
        QNetwork target = clone_params(net);
        AdamState state = AdamState::for_network(net, adam);
        return AgentState{std::move(net), std::move(target), std::move(state), ReplayMemory(cfg.memory_capacity), 0};
    };
    AgentPair pair;
    pair.window = cfg.window;
    pair.begin = make();
    pair.end = make();
    return pair;
}

std::optional<double> dqn_update(QNetwork& net, const QNetwork& target, const ReplayMemory& memory,
                                 std::size_t batch, double gamma, AdamState& adam, std::mt19937_64& rng) {
    if (batch == 0 || memory.size() < batch) return std::nullopt;
    const auto records = memory.sample(batch, rng);
    std::vector<const StateTensor*> states, next_states;
    states.reserve(batch);
    next_states.reserve(batch);
    for (const auto* r : records) {
        states.push_back(&r->s);
        next_states.push_back(&r->s_next);
    }

    const Eigen::MatrixXd q_next = forward(target, make_batch(next_states));
    ForwardCache cache;
    const Eigen::MatrixXd q = forward(net, make_batch(states), cache);

    const double inv_b = 1.0 / static_cast<double>(batch);
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(2, static_cast<Index>(batch));
    double loss = 0.0;
    for (std::size_t j = 0; j < batch; ++j) {
        const auto col = static_cast<Index>(j);
        const double y = records[j]->r + gamma * std::max(q_next(0, col), q_next(1, col));
        const auto a = static_cast<Index>(records[j]->a);
        const HuberResult h = huber_loss(q(a, col), y);
        loss += h.loss;
        dq(a, col) = h.grad * inv_b;
    }
    const QGradients grads = backward(net, cache, dq);
    adam_step(net, grads, adam);
    return loss * inv_b;
}

std::optional<double> agent_update(AgentState& agent, const TrainConfig& cfg, std::mt19937_64& rng) {
    auto loss = dqn_update(agent.net, agent.target, agent.memory, cfg.batch, cfg.gamma, agent.adam, rng);
    if (loss) {
        ++agent.updates;
        if (agent.updates % cfg.target_sync_period == 0) agent.target = clone_params(agent.net);
    }
    return loss;
}

TrainResult train(const std::vector<TrainingVideo>& dataset, int phase, const TrainConfig& cfg,
                  const PositionInitializer& init, const std::function<void(const StepEvent&)>& on_step) {
    cfg.validate();
    if (dataset.empty()) throw Error(ErrorCode::MissingData, "training dataset is empty");
    if (phase < 0) throw Error(ErrorCode::InvalidArgument, "phase index must be non-negative");
    const auto n = static_cast<std::size_t>(phase);

    TrainResult result;
    std::vector<std::size_t> usable;
    for (std::size_t v = 0; v < dataset.size(); ++v) {
        const auto& ts = dataset[v].transitions;
        if (n < ts.num_phases() && ts.phases[n]) {
            if (dataset[v].features.dim() != cfg.net.input)
                throw Error(ErrorCode::DimensionMismatch, "video " + dataset[v].id + " feature dim mismatch");
            usable.push_back(v);
        } else {
            result.skipped_videos.push_back(dataset[v].id);
        }
    }
    if (usable.empty())
        throw Error(ErrorCode::MissingData, "phase " + std::to_string(phase) + " absent from every training video");

    std::mt19937_64 rng(cfg.seed);
    result.agents = AgentPair::create(cfg, rng);
    AgentPair& agents = result.agents;

    for (std::size_t episode = 0; episode < cfg.episodes_max; ++episode) {
        const double epsilon = cfg.epsilon_for_episode(episode);
        for (std::size_t v : usable) {
            const TrainingVideo& video = dataset[v];
            const FeatureSequence& seq = video.features;
            const std::size_t length = seq.length();
            const Transition gt = *video.transitions.phases[n];

            WindowPair pos = init(v, seq);
            if (pos.begin > pos.end) std::swap(pos.begin, pos.end);
            pos.end = std::min(pos.end, length - 1);
            pos.begin = std::min(pos.begin, pos.end);

            double loss_sum[2] = {0.0, 0.0};
            std::size_t loss_count[2] = {0, 0};
            StateTensor s = build_state(seq, pos.begin, pos.end, agents.window);
            for (std::size_t step = 0; step < cfg.max_steps_per_video; ++step) {
                const Action a_b = select_action(agents.begin.net, s, epsilon, rng);
                const Action a_e = select_action(agents.end.net, s, epsilon, rng);
                WindowPair next;
                next.begin = apply_action(pos.begin, a_b, length, AgentRole::Begin, pos.end);
                next.end = apply_action(pos.end, a_e, length, AgentRole::End, next.begin);
                StateTensor s_next = build_state(seq, next.begin, next.end, agents.window);
                const int r_b = compute_reward(pos.begin, next.begin, gt.begin);
                const int r_e = compute_reward(pos.end, next.end, gt.end);

                agents.begin.memory.push({s, s_next, a_b, r_b});
                agents.end.memory.push({s, s_next, a_e, r_e});

                if (auto l = agent_update(agents.begin, cfg, rng)) {
                    loss_sum[0] += *l;
                    ++loss_count[0];
                }
                if (auto l = agent_update(agents.end, cfg, rng)) {
                    loss_sum[1] += *l;
                    ++loss_count[1];
                }
                if (on_step)
                    on_step({episode, v, step, pos, next, r_b, r_e, agents.begin.memory.size(),
                             agents.end.memory.size()});
                pos = next;
                s = std::move(s_next);
            }

            auto mean = [](double sum, std::size_t count) {
                return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
            };
            auto dist = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
            result.log.push_back({episode, video.id, mean(loss_sum[0], loss_count[0]),
                                  mean(loss_sum[1], loss_count[1]), dist(pos.begin, gt.begin),
                                  dist(pos.end, gt.end)});
        }
    }
    return result;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << "episode,video_id,mean_loss_begin,mean_loss_end,terminal_error_begin,terminal_error_end\n";
    out.precision(10);
    for (const auto& r : log) {
        out << r.episode << ',' << r.video_id << ',';
        if (std::isfinite(r.mean_loss_begin)) out << r.mean_loss_begin;
        out << ',';
        if (std::isfinite(r.mean_loss_end)) out << r.mean_loss_end;
        out << ',' << r.terminal_error_begin << ',' << r.terminal_error_end << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace trn
