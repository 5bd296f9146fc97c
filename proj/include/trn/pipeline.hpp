#pragma once

// Per-video segmentation: roll out every phase's agent pair, then compose the
// transitions into labels. Also the on-disk layout of a trained phase model.

#include "trn/feature_store.hpp"
#include "trn/neural_core.hpp"
#include "trn/transition_inference.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <vector>

namespace trn {

/// Frozen, inference-only view of one phase's trained agents.
struct PhaseModel {
    int phase = 0;
    std::size_t window = 5;
    QNetwork begin;
    QNetwork end;
    FixedInit fi;
};

PhaseModel make_phase_model(int phase, const AgentPair& agents, const FixedInit& fi);

std::filesystem::path begin_checkpoint_path(const std::filesystem::path& dir, int phase);
std::filesystem::path end_checkpoint_path(const std::filesystem::path& dir, int phase);
std::filesystem::path init_params_path(const std::filesystem::path& dir, int phase);

void save_phase_model(const PhaseModel& model, const std::filesystem::path& dir);
PhaseModel load_phase_model(const std::filesystem::path& dir, int phase);

enum class InitMode { Fixed, Predicted };

struct SegmentOptions {
    int num_phases = 0;
    InitMode init = InitMode::Fixed;
    // Only phase models[0] is run and binary inside/outside labels are emitted.
    bool single_phase = false;
    std::size_t max_steps = 200;
};

struct SegmentationResult {
    TransitionSet transitions;
    PhaseLabels labels;
    std::vector<RolloutResult> rollouts;  // one per model, same order
    std::set<std::size_t> visited;        // union over phases (all clips when predictions were used)
    std::size_t feature_reads = 0;        // distinct clips read through the access layer
    double coverage = 0.0;
};

/// `predictions` is required in Predicted mode and may come from the built-in
/// classifier or an external labels file.
SegmentationResult segment_video(const std::vector<PhaseModel>& models, const FeatureSequence& video,
                                 const SegmentOptions& options, const PhaseLabels* predictions = nullptr);

/// Runs the classifier through the same access layer used by the agents.
SegmentationResult segment_video(const std::vector<PhaseModel>& models, const FeatureSequence& video,
                                 const SegmentOptions& options, const LinearClipClassifier& classifier);

}  // namespace trn
