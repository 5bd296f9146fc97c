#pragma once

// Two-agent DQN training for one phase: each step both agents read the shared
// state, move their windows one clip, and learn from a directional +/-1 reward.

#include "trn/feature_store.hpp"
#include "trn/neural_core.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace trn {

enum class Action : int { Right = 0, Left = 1 };
enum class AgentRole { Begin, End };

struct WindowPair {
    std::size_t begin = 0;
    std::size_t end = 0;
    friend bool operator==(const WindowPair&, const WindowPair&) = default;
};

/// In-range clip indices covered by both windows (duplicates removed, ascending).
std::vector<std::size_t> window_clips(std::size_t p_b, std::size_t p_e, std::size_t window, std::size_t length);

StateTensor build_state(const FeatureSequence& seq, std::size_t p_b, std::size_t p_e, std::size_t window);
StateTensor build_state(ClipReader& reader, std::size_t p_b, std::size_t p_e, std::size_t window);

/// Moves one clip, clamped to [0, T-1] and so that begin never passes end.
/// `partner` is the other agent's position.
std::size_t apply_action(std::size_t p, Action a, std::size_t length, AgentRole role, std::size_t partner);

int compute_reward(std::size_t old_center, std::size_t new_center, std::size_t gt);

/// Greedy action for given Q-values; ties go to Right.
Action greedy_action(const std::array<double, 2>& q);
Action select_action(const QNetwork& net, const StateTensor& s, double epsilon, std::mt19937_64& rng);

struct ExperienceRecord {
    StateTensor s;
    StateTensor s_next;
    Action a = Action::Right;
    int r = -1;
};

class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity = 10000);

    void push(ExperienceRecord rec);
    std::size_t size() const noexcept { return records_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    const ExperienceRecord& operator[](std::size_t i) const { return records_[i]; }

    /// `count` distinct records drawn uniformly.
    std::vector<const ExperienceRecord*> sample(std::size_t count, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::deque<ExperienceRecord> records_;
};

struct TrainConfig {
    std::size_t episodes_max = 200;
    std::size_t max_steps_per_video = 200;
    std::size_t batch = 128;
    std::size_t memory_capacity = 10000;
    double learning_rate = 3e-4;
    double gamma = 0.9;
    double epsilon_start = 0.9;
    double epsilon_min = 0.05;
    double epsilon_decay = 0.995;  // per episode
    std::size_t target_sync_period = 100;
    std::size_t window = 5;
    NetDims net;
    std::uint64_t seed = 0;

    void validate() const;
    double epsilon_for_episode(std::size_t episode) const;
};

struct AgentState {
    QNetwork net;
    QNetwork target;
    AdamState adam;
    ReplayMemory memory;
    std::size_t updates = 0;
};

struct AgentPair {
    std::size_t window = 5;
    AgentState begin;
    AgentState end;

    static AgentPair create(const TrainConfig& cfg, std::mt19937_64& rng);
};

/// Huber/Bellman update on a sampled batch; nullopt when the memory holds fewer
/// records than the batch size.
std::optional<double> dqn_update(QNetwork& net, const QNetwork& target, const ReplayMemory& memory,
                                 std::size_t batch, double gamma, AdamState& adam, std::mt19937_64& rng);

/// dqn_update plus the hard target sync every `sync_period` updates.
std::optional<double> agent_update(AgentState& agent, const TrainConfig& cfg, std::mt19937_64& rng);

struct TrainingVideo {
    std::string id;
    FeatureSequence features;
    TransitionSet transitions;
};

using PositionInitializer = std::function<WindowPair(std::size_t video_index, const FeatureSequence&)>;

struct TrainLogRow {
    std::size_t episode = 0;
    std::string video_id;
    double mean_loss_begin = 0.0;  // NaN when no update ran in this video
    double mean_loss_end = 0.0;
    std::size_t terminal_error_begin = 0;
    std::size_t terminal_error_end = 0;
};

struct StepEvent {
    std::size_t episode;
    std::size_t video;
    std::size_t step;
    WindowPair before;
    WindowPair after;
    int reward_begin;
    int reward_end;
    std::size_t memory_begin;
    std::size_t memory_end;
};

struct TrainResult {
    AgentPair agents;
    std::vector<TrainLogRow> log;
    std::vector<std::string> skipped_videos;
};

TrainResult train(const std::vector<TrainingVideo>& dataset, int phase, const TrainConfig& cfg,
                  const PositionInitializer& init, const std::function<void(const StepEvent&)>& on_step = {});

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace trn
