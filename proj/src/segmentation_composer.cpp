#include "trn/segmentation_composer.hpp"

#include "trn/error.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace trn {

PhaseGaussian PhaseGaussian::from_transition(int phase, const Transition& t, double sigma_min) {
    const double b = static_cast<double>(t.begin);
    const double e = static_cast<double>(t.end);
    return {phase, 0.5 * (b + e), std::max(std::abs(b - e) / 4.0, sigma_min)};
}

double PhaseGaussian::log_density(double x) const {
    const double d = (x - mean) / sigma;
    return -std::log(sigma) - 0.5 * d * d;
}

PhaseLabels gaussian_compose(const TransitionSet& ts, std::size_t length) {
    if (ts.empty()) throw Error(ErrorCode::InvalidArgument, "composition needs at least one phase");
    std::vector<PhaseGaussian> gaussians;
    for (std::size_t n = 0; n < ts.num_phases(); ++n)
        if (ts.phases[n]) gaussians.push_back(PhaseGaussian::from_transition(static_cast<int>(n), *ts.phases[n]));

    PhaseLabels out;
    out.num_phases = static_cast<int>(ts.num_phases());
    out.labels.resize(length);
    for (std::size_t i = 0; i < length; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        int label = gaussians.front().phase;
        for (const auto& g : gaussians) {
            const double v = g.log_density(static_cast<double>(i));
            if (v > best) {  // strict: earlier (lower) phase keeps ties
                best = v;
                label = g.phase;
            }
        }
        out.labels[i] = label;
    }
    return out;
}

PhaseLabels single_phase_labels(const Transition& t, std::size_t length) {
    PhaseLabels out;
    out.num_phases = 2;
    out.labels.assign(length, 0);
    for (std::size_t i = t.begin; i <= t.end && i < length; ++i) out.labels[i] = 1;
    return out;
}

}  // namespace trn
