#include "trn/pipeline.hpp"

#include "trn/binary_io.hpp"
#include "trn/error.hpp"
#include "trn/segmentation_composer.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

namespace trn {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string phase_prefix(int phase) { return "phase_" + std::to_string(phase); }

RolloutResult run_phase(const PhaseModel& model, ClipReader& reader, const SegmentOptions& options,
                        const PhaseLabels* predictions) {
    const std::size_t length = reader.sequence().length();
    const Initializer init = options.init == InitMode::Fixed ? Initializer{model.fi}
                                                             : Initializer{PredictedInit{*predictions}};
    const WindowPair start = init_positions(init, length, model.phase, model.fi);
    return rollout(greedy_policy(model.begin, model.end), reader, model.window, start, options.max_steps);
}

SegmentationResult segment_with_reader(const std::vector<PhaseModel>& models, ClipReader& reader,
                                       const SegmentOptions& options, const PhaseLabels* predictions) {
    if (models.empty()) throw Error(ErrorCode::MissingData, "no phase models supplied");
    if (options.init == InitMode::Predicted && !predictions)
        throw Error(ErrorCode::MissingData, "predicted-label initialization needs per-clip predictions");
    const FeatureSequence& video = reader.sequence();
    const std::size_t length = video.length();
    for (const auto& m : models)
        if (m.begin.dims.input != video.dim())
            throw Error(ErrorCode::DimensionMismatch, "phase model input dim differs from features");

    SegmentationResult out;
    if (options.single_phase) {
        const PhaseModel& m = models.front();
        out.transitions = TransitionSet(static_cast<std::size_t>(std::max(options.num_phases, m.phase + 1)));
        out.rollouts.push_back(run_phase(m, reader, options, predictions));
        const RolloutResult& r = out.rollouts.back();
        out.transitions.phases[static_cast<std::size_t>(m.phase)] = Transition{r.begin, r.end};
        out.labels = single_phase_labels({r.begin, r.end}, length);
    } else {
        out.transitions = TransitionSet(static_cast<std::size_t>(options.num_phases));
        for (const auto& m : models) {
            if (m.phase < 0 || m.phase >= options.num_phases)
                throw Error(ErrorCode::InvalidArgument, "phase model id outside phase range");
            out.rollouts.push_back(run_phase(m, reader, options, predictions));
            const RolloutResult& r = out.rollouts.back();
            out.transitions.phases[static_cast<std::size_t>(m.phase)] = Transition{r.begin, r.end};
        }
        out.labels = gaussian_compose(out.transitions, length);
    }

    for (const auto& r : out.rollouts) out.visited.insert(r.visited.begin(), r.visited.end());
    if (options.init == InitMode::Predicted)
        for (std::size_t i = 0; i < length; ++i) out.visited.insert(i);
    out.feature_reads = reader.distinct_reads();
    out.coverage = static_cast<double>(out.visited.size()) / static_cast<double>(length);
    return out;
}

}  // namespace

PhaseModel make_phase_model(int phase, const AgentPair& agents, const FixedInit& fi) {
    return {phase, agents.window, clone_params(agents.begin.net), clone_params(agents.end.net), fi};
}

std::filesystem::path begin_checkpoint_path(const std::filesystem::path& dir, int phase) {
    return dir / (phase_prefix(phase) + "_begin.qnet");
}

std::filesystem::path end_checkpoint_path(const std::filesystem::path& dir, int phase) {
    return dir / (phase_prefix(phase) + "_end.qnet");
}

std::filesystem::path init_params_path(const std::filesystem::path& dir, int phase) {
    return dir / (phase_prefix(phase) + "_init.txt");
}

void save_phase_model(const PhaseModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_checkpoint(model.begin, begin_checkpoint_path(dir, model.phase));
    save_checkpoint(model.end, end_checkpoint_path(dir, model.phase));
    const std::string text = "phase=" + std::to_string(model.phase) + "\nwindow=" + std::to_string(model.window) +
                             "\nrho_begin=" + format_double(model.fi.rho_begin) +
                             "\nrho_end=" + format_double(model.fi.rho_end) + "\n";
    io::write_file(init_params_path(dir, model.phase), text);
}

PhaseModel load_phase_model(const std::filesystem::path& dir, int phase) {
    const auto init_path = init_params_path(dir, phase);
    for (const auto& p : {begin_checkpoint_path(dir, phase), end_checkpoint_path(dir, phase), init_path})
        if (!std::filesystem::exists(p)) throw Error(ErrorCode::MissingData, "missing checkpoint file " + p.string());

    std::map<std::string, std::string> kv;
    std::ifstream in(init_path);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"window", "rho_begin", "rho_end"})
        if (!kv.count(key)) throw Error(ErrorCode::InvalidArgument, std::string("missing ") + key + " in " + init_path.string());

    PhaseModel m;
    m.phase = phase;
    m.window = std::stoul(kv["window"]);
    m.fi = {std::stod(kv["rho_begin"]), std::stod(kv["rho_end"])};
    m.begin = load_checkpoint(begin_checkpoint_path(dir, phase));
    m.end = load_checkpoint(end_checkpoint_path(dir, phase), m.begin.dims);
    return m;
}

SegmentationResult segment_video(const std::vector<PhaseModel>& models, const FeatureSequence& video,
                                 const SegmentOptions& options, const PhaseLabels* predictions) {
    ClipReader reader(video);
    return segment_with_reader(models, reader, options, predictions);
}

SegmentationResult segment_video(const std::vector<PhaseModel>& models, const FeatureSequence& video,
                                 const SegmentOptions& options, const LinearClipClassifier& classifier) {
    ClipReader reader(video);
    const PhaseLabels predictions = classifier.predict(reader);
    SegmentOptions opts = options;
    opts.init = InitMode::Predicted;
    return segment_with_reader(models, reader, opts, &predictions);
}

}  // namespace trn
