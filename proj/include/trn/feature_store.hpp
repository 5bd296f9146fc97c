#pragma once

// Clip-level feature sequences, phase annotations and the synthetic generator
// that stands in for CNN features at desk scale.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace trn {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x D clip features plus sampling metadata. Values are held in double
/// precision in memory and stored as float32 on disk.
class FeatureSequence {
public:
    FeatureSequence() = default;
    FeatureSequence(FeatureMatrix features, std::uint32_t clip_len_frames = 1, float fps = 1.0f);

    std::size_t length() const noexcept { return static_cast<std::size_t>(features_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
    std::uint32_t clip_len_frames() const noexcept { return clip_len_frames_; }
    float fps() const noexcept { return fps_; }

    const FeatureMatrix& matrix() const noexcept { return features_; }
    std::span<const double> row(std::size_t i) const {
        return {features_.data() + i * dim(), dim()};
    }

    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;

private:
    FeatureMatrix features_;
    std::uint32_t clip_len_frames_ = 1;
    float fps_ = 1.0f;
};

/// Feature-access layer that logs which clips were read, independent of any
/// bookkeeping done by the caller.
class ClipReader {
public:
    explicit ClipReader(const FeatureSequence& seq) : seq_(&seq), touched_(seq.length(), false) {}

    std::span<const double> read(std::size_t i) {
        if (!touched_[i]) {
            touched_[i] = true;
            ++distinct_;
        }
        return seq_->row(i);
    }

    const FeatureSequence& sequence() const noexcept { return *seq_; }
    std::size_t distinct_reads() const noexcept { return distinct_; }
    const std::vector<bool>& touched() const noexcept { return touched_; }

private:
    const FeatureSequence* seq_;
    std::vector<bool> touched_;
    std::size_t distinct_ = 0;
};

/// Per-clip phase ids in [0, N). The id N is reserved for unassigned clips.
struct PhaseLabels {
    std::vector<int> labels;
    int num_phases = 0;

    std::size_t size() const noexcept { return labels.size(); }
    int sentinel() const noexcept { return num_phases; }
    friend bool operator==(const PhaseLabels&, const PhaseLabels&) = default;
};

struct Transition {
    std::size_t begin = 0;
    std::size_t end = 0;
    friend bool operator==(const Transition&, const Transition&) = default;
};

/// Per-phase (begin, end) clip indices; absent phases hold nullopt.
struct TransitionSet {
    std::vector<std::optional<Transition>> phases;

    explicit TransitionSet(std::size_t num_phases = 0) : phases(num_phases) {}
    std::size_t num_phases() const noexcept { return phases.size(); }
    bool empty() const noexcept;
    friend bool operator==(const TransitionSet&, const TransitionSet&) = default;
};

enum class SynthLayout {
    Sequential,          // phases 0..N-1 in order, one block each
    TargetInBackground,  // background (0), target (1), background (0); N must be 2
};

struct SynthConfig {
    int num_phases = 3;
    std::size_t min_len = 67;
    std::size_t max_len = 133;
    std::size_t dim = 16;
    double noise_sigma = 0.05;
    std::size_t blend_width = 2;
    double phase_dropout = 0.0;
    SynthLayout layout = SynthLayout::Sequential;
    // Target block length range for TargetInBackground.
    std::size_t target_min_len = 30;
    std::size_t target_max_len = 50;
    // Prototypes are shared by every video generated with the same value.
    std::uint64_t prototype_seed = 0;

    void validate() const;
};

FeatureSequence load_features(const std::filesystem::path& path);
void save_features(const FeatureSequence& seq, const std::filesystem::path& path);

PhaseLabels load_labels(const std::filesystem::path& path, int num_phases);
void save_labels(const PhaseLabels& labels, const std::filesystem::path& path);

/// Averages consecutive K-row blocks; a shorter trailing block becomes one more clip.
FeatureSequence average_clips(const FeatureSequence& frame_feats, std::size_t k);

TransitionSet labels_to_transitions(const PhaseLabels& labels);
/// Span of one phase only; other phases may be non-contiguous.
std::optional<Transition> phase_transition(const PhaseLabels& labels, int phase);
PhaseLabels transitions_to_labels(const TransitionSet& ts, std::size_t length);

std::vector<Eigen::VectorXd> synth_prototypes(const SynthConfig& cfg);
std::pair<FeatureSequence, PhaseLabels> synth_generate(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace trn
