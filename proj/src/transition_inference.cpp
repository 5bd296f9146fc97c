#include "trn/transition_inference.hpp"

#include "trn/binary_io.hpp"
#include "trn/error.hpp"

#include <algorithm>
#include <cmath>

namespace trn {

namespace {

using Eigen::Index;

constexpr char kClassifierMagic[4] = {'T', 'R', 'N', 'C'};
constexpr std::uint32_t kClassifierVersion = 1;

std::size_t clamp_index(double x, std::size_t length) {
    return std::min(round_half_up(std::max(x, 0.0)), length - 1);
}

std::size_t mean_index(const std::vector<std::size_t>& v) {
    double sum = 0.0;
    for (std::size_t i : v) sum += static_cast<double>(i);
    return round_half_up(sum / static_cast<double>(v.size()));
}

}  // namespace

FixedInit fit_fi(std::span<const VideoTransitions> training, int phase) {
    if (phase < 0) throw Error(ErrorCode::InvalidArgument, "phase index must be non-negative");
    const auto n = static_cast<std::size_t>(phase);
    double sum_b = 0.0, sum_e = 0.0;
    std::size_t count = 0;
    for (const auto& v : training) {
        if (n >= v.transitions.num_phases() || !v.transitions.phases[n] || v.length == 0) continue;
        const Transition& t = *v.transitions.phases[n];
        sum_b += static_cast<double>(t.begin) / static_cast<double>(v.length);
        sum_e += static_cast<double>(t.end) / static_cast<double>(v.length);
        ++count;
    }
    if (count == 0)
        throw Error(ErrorCode::MissingData, "phase " + std::to_string(phase) + " absent from all training videos");
    return {sum_b / static_cast<double>(count), sum_e / static_cast<double>(count)};
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

WindowPair init_positions(const Initializer& init, std::size_t length, int phase, const FixedInit& fallback) {
    if (length == 0) throw Error(ErrorCode::InvalidArgument, "cannot initialize on an empty video");
    const double t = static_cast<double>(length);
    WindowPair out{clamp_index(fallback.rho_begin * t, length), clamp_index(fallback.rho_end * t, length)};

    if (const auto* fi = std::get_if<FixedInit>(&init)) {
        out = {clamp_index(fi->rho_begin * t, length), clamp_index(fi->rho_end * t, length)};
    } else {
        const PhaseLabels& pred = std::get<PredictedInit>(init).predictions;
        if (pred.size() != length)
            throw Error(ErrorCode::DimensionMismatch, "predicted labels length differs from the video");
        std::vector<std::size_t> begins, ends;
        for (std::size_t i = 0; i < length; ++i) {
            if (pred.labels[i] != phase) continue;
            // Positions outside the video count as "not this phase".
            if (i == 0 || pred.labels[i - 1] != phase) begins.push_back(i);
            if (i + 1 == length || pred.labels[i + 1] != phase) ends.push_back(i);
        }
        if (!begins.empty()) out.begin = std::min(mean_index(begins), length - 1);
        if (!ends.empty()) out.end = std::min(mean_index(ends), length - 1);
    }
    if (out.begin > out.end) std::swap(out.begin, out.end);
    return out;
}

PositionInitializer fi_position_initializer(const FixedInit& fi) {
    return [fi](std::size_t, const FeatureSequence& seq) {
        return init_positions(Initializer{fi}, seq.length(), 0, fi);
    };
}

PositionInitializer rmi_position_initializer(std::vector<PhaseLabels> predictions, int phase,
                                             const FixedInit& fallback) {
    return [preds = std::move(predictions), phase, fallback](std::size_t video, const FeatureSequence& seq) {
        if (video >= preds.size()) throw Error(ErrorCode::MissingData, "no predictions for training video");
        return init_positions(Initializer{PredictedInit{preds[video]}}, seq.length(), phase, fallback);
    };
}

int LinearClipClassifier::predict(std::span<const double> features) const {
    const Eigen::Map<const Eigen::VectorXd> x(features.data(), static_cast<Index>(features.size()));
    const Eigen::VectorXd scores = weight.transpose() * x + bias;
    Index best = 0;
    scores.maxCoeff(&best);
    return static_cast<int>(best);
}

PhaseLabels LinearClipClassifier::predict(ClipReader& reader) const {
    const std::size_t length = reader.sequence().length();
    if (reader.sequence().dim() != static_cast<std::size_t>(weight.rows()))
        throw Error(ErrorCode::DimensionMismatch, "classifier input dim differs from features");
    PhaseLabels out;
    out.num_phases = num_phases();
    out.labels.reserve(length);
    for (std::size_t i = 0; i < length; ++i) out.labels.push_back(predict(reader.read(i)));
    return out;
}

PhaseLabels LinearClipClassifier::predict(const FeatureSequence& seq) const {
    ClipReader reader(seq);
    return predict(reader);
}

LinearClipClassifier train_clip_classifier(std::span<const FeatureSequence> features,
                                           std::span<const PhaseLabels> labels, int num_phases,
                                           const ClassifierConfig& cfg) {
    if (features.size() != labels.size() || features.empty())
        throw Error(ErrorCode::InvalidArgument, "classifier needs matching, non-empty feature/label lists");
    if (num_phases < 1) throw Error(ErrorCode::InvalidArgument, "num_phases must be >= 1");
    const Index dim = static_cast<Index>(features.front().dim());
    Index total = 0;
    for (std::size_t v = 0; v < features.size(); ++v) {
        if (static_cast<Index>(features[v].dim()) != dim || features[v].length() != labels[v].size())
            throw Error(ErrorCode::DimensionMismatch, "inconsistent classifier training data");
        total += static_cast<Index>(features[v].length());
    }

    Eigen::MatrixXd x(dim, total);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(num_phases, total);
    Index col = 0;
    for (std::size_t v = 0; v < features.size(); ++v) {
        for (std::size_t i = 0; i < features[v].length(); ++i, ++col) {
            x.col(col) = features[v].matrix().row(static_cast<Index>(i)).transpose();
            const int l = labels[v].labels[i];
            if (l >= 0 && l < num_phases) y(l, col) = 1.0;
        }
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    LinearClipClassifier clf;
    clf.weight.resize(dim, num_phases);
    for (Index j = 0; j < clf.weight.cols(); ++j)
        for (Index i = 0; i < dim; ++i) clf.weight(i, j) = u(rng);
    clf.bias = Eigen::VectorXd::Zero(num_phases);

    const double inv_n = 1.0 / static_cast<double>(total);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Eigen::MatrixXd z = clf.weight.transpose() * x;
        z.colwise() += clf.bias;
        const Eigen::RowVectorXd zmax = z.colwise().maxCoeff();
        z.rowwise() -= zmax;
        Eigen::MatrixXd p = z.array().exp().matrix();
        const Eigen::RowVectorXd denom = p.colwise().sum();
        p.array().rowwise() /= denom.array();
        const Eigen::MatrixXd dz = (p - y) * inv_n;  // softmax cross-entropy gradient
        clf.weight.noalias() -= cfg.learning_rate * (x * dz.transpose());
        clf.bias.noalias() -= cfg.learning_rate * dz.rowwise().sum();
    }
    return clf;
}

void save_classifier(const LinearClipClassifier& clf, const std::filesystem::path& path) {
    std::string out(kClassifierMagic, 4);
    io::put_u32(out, kClassifierVersion);
    io::put_u32(out, static_cast<std::uint32_t>(clf.weight.rows()));
    io::put_u32(out, static_cast<std::uint32_t>(clf.weight.cols()));
    for (Index i = 0; i < clf.weight.size(); ++i) io::put_f64(out, clf.weight.data()[i]);
    for (Index i = 0; i < clf.bias.size(); ++i) io::put_f64(out, clf.bias[i]);
    io::write_file(path, out);
}

LinearClipClassifier load_classifier(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 4 || !std::equal(kClassifierMagic, kClassifierMagic + 4, bytes.begin()))
        throw Error(ErrorCode::BadMagic, path.string());
    if (bytes.size() < 16) throw Error(ErrorCode::Truncated, path.string());
    if (io::get_u32(bytes, 4) != kClassifierVersion) throw Error(ErrorCode::BadVersion, path.string());
    const Index dim = io::get_u32(bytes, 8);
    const Index phases = io::get_u32(bytes, 12);
    if (bytes.size() < 16 + static_cast<std::size_t>(8 * (dim * phases + phases)))
        throw Error(ErrorCode::Truncated, path.string());
    LinearClipClassifier clf;
    clf.weight.resize(dim, phases);
    clf.bias.resize(phases);
    std::size_t off = 16;
    for (Index i = 0; i < clf.weight.size(); ++i, off += 8) clf.weight.data()[i] = io::get_f64(bytes, off);
    for (Index i = 0; i < phases; ++i, off += 8) clf.bias[i] = io::get_f64(bytes, off);
    return clf;
}

PairPolicy greedy_policy(const QNetwork& begin, const QNetwork& end) {
    return {[&begin](const StateTensor& s) { return greedy_action(q_values(begin, s)); },
            [&end](const StateTensor& s) { return greedy_action(q_values(end, s)); }};
}

PairPolicy greedy_policy(const AgentPair& agents) { return greedy_policy(agents.begin.net, agents.end.net); }

RolloutResult rollout(const PairPolicy& policy, ClipReader& reader, std::size_t window, WindowPair start,
                      std::size_t max_steps) {
    const std::size_t length = reader.sequence().length();
    if (start.begin > start.end) std::swap(start.begin, start.end);
    start.end = std::min(start.end, length - 1);
    start.begin = std::min(start.begin, start.end);

    RolloutResult out;
    WindowPair pos = start;
    std::size_t prev_b = pos.begin, prev_e = pos.end;  // positions one step back
    bool has_prev = false;
    for (std::size_t step = 1; step <= max_steps; ++step) {
        const StateTensor s = build_state(reader, pos.begin, pos.end, window);
        for (std::size_t c : window_clips(pos.begin, pos.end, window, length)) out.visited.insert(c);
        out.steps_taken = step;

        WindowPair next = pos;
        if (!out.begin_converged)
            next.begin = apply_action(pos.begin, policy.begin(s), length, AgentRole::Begin, pos.end);
        if (!out.end_converged)
            next.end = apply_action(pos.end, policy.end(s), length, AgentRole::End, next.begin);

        const bool moved_b = next.begin != pos.begin;
        const bool moved_e = next.end != pos.end;
        if (!out.begin_converged && has_prev && moved_b && next.begin == prev_b) {
            out.begin_converged = true;
            next.begin = std::min(next.begin, pos.begin);
        }
        if (!out.end_converged && has_prev && moved_e && next.end == prev_e) {
            out.end_converged = true;
            next.end = std::min(next.end, pos.end);
        }
        if (!moved_b && !moved_e) {
            out.begin_converged = true;
            out.end_converged = true;
        }

        prev_b = pos.begin;
        prev_e = pos.end;
        has_prev = true;
        pos = next;
        if (out.begin_converged && out.end_converged) break;
    }
    out.begin = pos.begin;
    out.end = pos.end;
    out.converged = out.begin_converged && out.end_converged;
    return out;
}

RolloutResult rollout(const AgentPair& agents, const FeatureSequence& video, WindowPair start,
                      std::size_t max_steps) {
    ClipReader reader(video);
    return rollout(greedy_policy(agents), reader, agents.window, start, max_steps);
}

double coverage_rate(std::span<const std::set<std::size_t>> visited, std::size_t length) {
    if (length == 0) throw Error(ErrorCode::InvalidArgument, "coverage of an empty video");
    std::set<std::size_t> all;
    for (const auto& v : visited)
        for (std::size_t c : v)
            if (c < length) all.insert(c);
    return static_cast<double>(all.size()) / static_cast<double>(length);
}

}  // namespace trn
