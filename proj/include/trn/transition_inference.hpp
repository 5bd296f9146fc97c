#pragma once

#include "trn/feature_store.hpp"
#include "trn/rl_training.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <variant>
#include <vector>

namespace trn {

/// Mean relative transition positions of one phase over the training split.
struct FixedInit {
    double rho_begin = 0.0;
    double rho_end = 0.0;
};

/// Per-clip labels predicted for the video being initialized.
struct PredictedInit {
    PhaseLabels predictions;
};

using Initializer = std::variant<FixedInit, PredictedInit>;

struct VideoTransitions {
    std::size_t length = 0;
    TransitionSet transitions;
};

FixedInit fit_fi(std::span<const VideoTransitions> training, int phase);

/// Half-up rounding, as used for every fractional initial position.
std::size_t round_half_up(double x);

WindowPair init_positions(const Initializer& init, std::size_t length, int phase, const FixedInit& fallback);

/// Adapts a fixed initializer to the training loop.
PositionInitializer fi_position_initializer(const FixedInit& fi);
/// Uses per-video predictions (indexed like the training set), FI as fallback.
PositionInitializer rmi_position_initializer(std::vector<PhaseLabels> predictions, int phase,
                                             const FixedInit& fallback);

// Softmax linear classifier over clip features.
struct LinearClipClassifier {
    Eigen::MatrixXd weight;  // D x N
    Eigen::VectorXd bias;    // N

    int predict(std::span<const double> features) const;
    /// Reads every clip of the sequence through `reader`.
    PhaseLabels predict(ClipReader& reader) const;
    PhaseLabels predict(const FeatureSequence& seq) const;
    int num_phases() const { return static_cast<int>(bias.size()); }
};

struct ClassifierConfig {
    std::size_t epochs = 200;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
};

LinearClipClassifier train_clip_classifier(std::span<const FeatureSequence> features,
                                           std::span<const PhaseLabels> labels, int num_phases,
                                           const ClassifierConfig& cfg);

void save_classifier(const LinearClipClassifier& clf, const std::filesystem::path& path);
LinearClipClassifier load_classifier(const std::filesystem::path& path);

struct RolloutResult {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t steps_taken = 0;
    std::set<std::size_t> visited;
    bool converged = false;
    bool begin_converged = false;
    bool end_converged = false;
};

/// An action source for each agent; the trained pair is one instance.
struct PairPolicy {
    std::function<Action(const StateTensor&)> begin;
    std::function<Action(const StateTensor&)> end;
};

PairPolicy greedy_policy(const QNetwork& begin, const QNetwork& end);
PairPolicy greedy_policy(const AgentPair& agents);

/// Runs both agents greedily from `start` until each converges (2-cycle, or a
/// step in which no active agent moves) or `max_steps` is reached.
RolloutResult rollout(const PairPolicy& policy, ClipReader& reader, std::size_t window, WindowPair start,
                      std::size_t max_steps = 200);
RolloutResult rollout(const AgentPair& agents, const FeatureSequence& video, WindowPair start,
                      std::size_t max_steps = 200);

double coverage_rate(std::span<const std::set<std::size_t>> visited, std::size_t length);

}  // namespace trn
