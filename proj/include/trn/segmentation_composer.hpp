#pragma once

#include "trn/feature_store.hpp"

#include <cstddef>
#include <optional>

namespace trn {

inline constexpr double kMinPhaseSigma = 0.5;

/// Normal density over clip index spanned by one phase's transition pair.
struct PhaseGaussian {
    int phase = 0;
    double mean = 0.0;
    double sigma = kMinPhaseSigma;

    static PhaseGaussian from_transition(int phase, const Transition& t, double sigma_min = kMinPhaseSigma);
    /// log density up to the shared -0.5 log(2 pi) term.
    double log_density(double x) const;
};

/// Labels every clip with the phase whose Gaussian is largest there; ties go
/// to the lowest phase id.
PhaseLabels gaussian_compose(const TransitionSet& ts, std::size_t length);

/// Binary labels for single-phase retrieval: 1 inside the pair, 0 elsewhere.
PhaseLabels single_phase_labels(const Transition& t, std::size_t length);

}  // namespace trn
