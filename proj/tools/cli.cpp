#include "cli.hpp"

#include "trn/error.hpp"
#include "trn/eval_metrics.hpp"
#include "trn/feature_store.hpp"
#include "trn/pipeline.hpp"
#include "trn/rl_training.hpp"
#include "trn/transition_inference.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace trn::cli {

namespace {

/// Bad flag values detected after parsing; maps to the usage exit code.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t seed = 0;
    int phases = 3;
    std::size_t window = 5;
    std::string init = "fi";
    TrainConfig train;
    ClassifierConfig classifier;
    SynthConfig synth;
    std::string layout = "sequential";
};

struct SynthArgs {
    fs::path features_dir, labels_dir;
    std::size_t count = 0;
    std::string prefix = "video_";
};

struct TrainArgs {
    fs::path features_dir, labels_dir, out_dir, list;
    std::optional<int> phase;
};

struct InferArgs {
    fs::path features_dir, checkpoints, out_dir, list, predictions_dir;
    std::optional<int> single_phase;
};

struct EvalArgs {
    fs::path pred_dir, gt_dir, report, csv, transitions, list;
    std::optional<int> single_phase;
};

struct RibbonArgs {
    std::vector<fs::path> inputs;
    fs::path out;
    std::size_t band_height = 16;
};

// ---------------------------------------------------------------- helpers

std::vector<std::string> ids_in(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingData, "not a directory: " + dir.string());
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::string> resolve_ids(const fs::path& dir, const std::string& ext, const fs::path& list) {
    if (list.empty()) return ids_in(dir, ext);
    std::ifstream in(list);
    if (!in) throw Error(ErrorCode::Io, "cannot open id list " + list.string());
    std::vector<std::string> ids;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void check_run_config(const RunConfig& rc) {
    if (rc.window % 2 == 0) throw UsageError("--window must be odd");
    if (rc.phases < 1) throw UsageError("--phases must be >= 1");
}

void check_phase(const RunConfig& rc, int phase, const char* flag) {
    if (phase < 0 || phase >= rc.phases)
        throw UsageError(std::string(flag) + " must be in [0, " + std::to_string(rc.phases - 1) + "]");
}

std::vector<int> phase_list(const RunConfig& rc, std::optional<int> only) {
    if (only) return {*only};
    std::vector<int> out(static_cast<std::size_t>(rc.phases));
    for (int n = 0; n < rc.phases; ++n) out[static_cast<std::size_t>(n)] = n;
    return out;
}

std::string percent(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f +/- %.1f", 100.0 * m.mean, 100.0 * m.std);
    return buf;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const RunConfig& rc, const SynthArgs& a, std::ostream& out) {
    SynthConfig sc = rc.synth;
    sc.num_phases = rc.phases;
    sc.layout = rc.layout == "background" ? SynthLayout::TargetInBackground : SynthLayout::Sequential;
    try {
        sc.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    fs::create_directories(a.features_dir);
    fs::create_directories(a.labels_dir);
    std::mt19937_64 seeds(rc.seed);
    for (std::size_t i = 0; i < a.count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "%03zu", i);
        const std::string name = a.prefix + id;
        const auto [features, labels] = synth_generate(sc, seeds());
        save_features(features, a.features_dir / (name + ".trnf"));
        save_labels(labels, a.labels_dir / (name + ".csv"));
    }
    out << "wrote " << a.count << " videos\n";
    return kExitOk;
}

int cmd_train(const RunConfig& rc, const TrainArgs& a, std::ostream& out, std::ostream& err) {
    if (a.phase) check_phase(rc, *a.phase, "--phase");
    const auto ids = resolve_ids(a.features_dir, ".trnf", a.list);
    if (ids.empty()) throw Error(ErrorCode::MissingData, "no training videos in " + a.features_dir.string());

    std::vector<FeatureSequence> features;
    std::vector<PhaseLabels> labels;
    for (const auto& id : ids) {
        features.push_back(load_features(a.features_dir / (id + ".trnf")));
        labels.push_back(load_labels(a.labels_dir / (id + ".csv"), rc.phases));
        if (labels.back().labels.size() != features.back().length())
            throw Error(ErrorCode::DimensionMismatch, "labels and features differ in length for " + id);
    }
    fs::create_directories(a.out_dir);

    std::vector<PhaseLabels> predictions;
    if (rc.init == "rmi") {
        ClassifierConfig cc = rc.classifier;
        cc.seed = rc.seed;
        const auto clf = train_clip_classifier(features, labels, rc.phases, cc);
        save_classifier(clf, a.out_dir / "classifier.bin");
        for (const auto& f : features) predictions.push_back(clf.predict(f));
    }

    for (int n : phase_list(rc, a.phase)) {
        std::vector<TrainingVideo> dataset;
        std::vector<VideoTransitions> spans;
        for (std::size_t v = 0; v < ids.size(); ++v) {
            TransitionSet ts(static_cast<std::size_t>(rc.phases));
            ts.phases[static_cast<std::size_t>(n)] = phase_transition(labels[v], n);
            dataset.push_back({ids[v], features[v], ts});
            spans.push_back({features[v].length(), ts});
        }
        const FixedInit fi = fit_fi(spans, n);
        const PositionInitializer init =
            rc.init == "rmi" ? rmi_position_initializer(predictions, n, fi) : fi_position_initializer(fi);

        TrainConfig cfg = rc.train;
        cfg.window = rc.window;
        cfg.net.input = features.front().dim();
        cfg.seed = rc.seed + static_cast<std::uint64_t>(n);
        const TrainResult res = train(dataset, n, cfg, init);
        for (const auto& id : res.skipped_videos) err << "warning: phase " << n << " absent from " << id << ", skipped\n";

        save_phase_model(make_phase_model(n, res.agents, fi), a.out_dir);
        write_train_log(res.log, a.out_dir / ("phase_" + std::to_string(n) + "_train_log.csv"));
        out << "phase " << n << ": " << res.log.size() << " video passes, " << res.agents.begin.updates
            << " updates per agent\n";
    }
    return kExitOk;
}

int cmd_infer(const RunConfig& rc, const InferArgs& a, std::ostream& out) {
    if (a.single_phase) check_phase(rc, *a.single_phase, "--single-phase");
    const auto ids = resolve_ids(a.features_dir, ".trnf", a.list);
    std::vector<PhaseModel> models;
    for (int n : phase_list(rc, a.single_phase)) models.push_back(load_phase_model(a.checkpoints, n));

    SegmentOptions opts;
    opts.num_phases = rc.phases;
    opts.single_phase = a.single_phase.has_value();
    opts.init = rc.init == "rmi" ? InitMode::Predicted : InitMode::Fixed;

    std::optional<LinearClipClassifier> clf;
    if (rc.init == "rmi" && a.predictions_dir.empty()) {
        const fs::path p = a.checkpoints / "classifier.bin";
        if (!fs::exists(p)) throw Error(ErrorCode::MissingData, "missing classifier " + p.string());
        clf = load_classifier(p);
    }

    fs::create_directories(a.out_dir);
    nlohmann::json videos = nlohmann::json::array();
    double coverage_sum = 0.0;
    for (const auto& id : ids) {
        const FeatureSequence f = load_features(a.features_dir / (id + ".trnf"));
        SegmentationResult r;
        if (clf) {
            r = segment_video(models, f, opts, *clf);
        } else if (rc.init == "rmi") {
            const PhaseLabels preds = load_labels(a.predictions_dir / (id + ".csv"), rc.phases);
            if (preds.labels.size() != f.length())
                throw Error(ErrorCode::DimensionMismatch, "prediction length differs for " + id);
            r = segment_video(models, f, opts, &preds);
        } else {
            r = segment_video(models, f, opts);
        }
        save_labels(r.labels, a.out_dir / (id + ".csv"));

        nlohmann::json phases = nlohmann::json::array();
        for (std::size_t k = 0; k < models.size(); ++k) {
            const RolloutResult& ro = r.rollouts[k];
            phases.push_back({{"phase", models[k].phase},
                              {"begin", ro.begin},
                              {"end", ro.end},
                              {"converged", ro.converged},
                              {"steps", ro.steps_taken}});
        }
        videos.push_back({{"id", id},
                          {"length", f.length()},
                          {"coverage", r.coverage},
                          {"feature_reads", r.feature_reads},
                          {"single_phase", opts.single_phase},
                          {"phases", phases}});
        coverage_sum += r.coverage;
    }
    const double mean_cov = ids.empty() ? 0.0 : coverage_sum / static_cast<double>(ids.size());
    const nlohmann::json doc{{"schema_version", 1}, {"videos", videos}, {"mean_coverage", mean_cov}};
    std::ofstream js(a.out_dir / "transitions.json", std::ios::trunc);
    if (!js) throw Error(ErrorCode::Io, "cannot write transitions.json");
    js << doc.dump(2) << '\n';

    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu videos, mean coverage %.1f%%\n", ids.size(), 100.0 * mean_cov);
    out << buf;
    return kExitOk;
}

int cmd_eval(const RunConfig& rc, const EvalArgs& a, std::ostream& out) {
    if (a.single_phase) check_phase(rc, *a.single_phase, "--single-phase");
    const auto ids = resolve_ids(a.gt_dir, ".csv", a.list);
    if (ids.empty()) throw Error(ErrorCode::MissingData, "no groundtruth label files in " + a.gt_dir.string());

    std::vector<std::string> missing;
    for (const auto& id : ids)
        if (!fs::exists(a.pred_dir / (id + ".csv"))) missing.push_back(id);
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw Error(ErrorCode::MissingData, "missing predictions for: " + list);
    }

    std::map<std::string, double> coverage;
    const fs::path tpath = a.transitions.empty() ? a.pred_dir / "transitions.json" : a.transitions;
    if (fs::exists(tpath)) {
        std::ifstream in(tpath);
        const auto doc = nlohmann::json::parse(in, nullptr, false);
        if (doc.is_discarded() || !doc.contains("videos"))
            throw Error(ErrorCode::InvalidArgument, "malformed " + tpath.string());
        for (const auto& v : doc["videos"]) coverage[v.at("id").get<std::string>()] = v.at("coverage").get<double>();
    }

    const int pred_phases = a.single_phase ? 2 : rc.phases;
    std::vector<VideoReport> reports;
    for (const auto& id : ids) {
        PhaseLabels gt = load_labels(a.gt_dir / (id + ".csv"), rc.phases);
        if (a.single_phase) {
            for (auto& l : gt.labels) l = l == *a.single_phase ? 1 : 0;
            gt.num_phases = 2;
        }
        const PhaseLabels pred = load_labels(a.pred_dir / (id + ".csv"), pred_phases);
        std::optional<double> cov;
        if (auto it = coverage.find(id); it != coverage.end()) cov = it->second;
        VideoReport r = evaluate_video(pred, gt, cov);
        r.id = id;
        reports.push_back(std::move(r));
    }
    const DatasetReport rep = aggregate(std::move(reports));
    const fs::path report = a.report.empty() ? a.pred_dir / "report.json" : a.report;
    fs::path csv = a.csv;
    if (csv.empty()) csv = fs::path(report).replace_extension(".csv");
    if (report.has_parent_path()) fs::create_directories(report.parent_path());
    write_report_json(rep, report);
    write_report_csv(rep, csv);

    out << "videos     " << rep.videos.size() << '\n'
        << "accuracy   " << percent(rep.accuracy) << '\n'
        << "precision  " << percent(rep.precision) << '\n'
        << "recall     " << percent(rep.recall) << '\n'
        << "f1         " << percent(rep.f1) << '\n';
    char buf[128];
    std::snprintf(buf, sizeof(buf), "events     %.3f (ward %.3f)\n", rep.event_ratio, rep.ward_event_ratio);
    out << buf;
    if (rep.coverage) out << "coverage   " << percent(*rep.coverage) << '\n';
    return kExitOk;
}

// Fixed palette, cycled for phase ids beyond its size.
constexpr std::array<std::array<int, 3>, 10> kPalette{{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189},
    {140, 86, 75}, {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207},
}};

int cmd_ribbon(const RunConfig& rc, const RibbonArgs& a, std::ostream& out) {
    if (a.band_height == 0) throw UsageError("--band-height must be positive");
    std::vector<PhaseLabels> seqs;
    std::size_t width = 0;
    for (const auto& p : a.inputs) {
        seqs.push_back(load_labels(p, rc.phases));
        width = std::max(width, seqs.back().labels.size());
    }
    const std::size_t height = seqs.size() * a.band_height;
    std::ostringstream ppm;
    ppm << "P3\n" << width << ' ' << height << "\n255\n";
    for (const auto& s : seqs) {
        std::string row;
        std::size_t line_len = 0;
        for (std::size_t x = 0; x < width; ++x) {
            const std::array<int, 3> white{255, 255, 255};
            const auto& c = x < s.labels.size() ? kPalette[static_cast<std::size_t>(s.labels[x]) % kPalette.size()]
                                                : white;
            const std::string px = std::to_string(c[0]) + ' ' + std::to_string(c[1]) + ' ' + std::to_string(c[2]);
            // Plain PPM readers expect lines of at most 70 characters.
            if (line_len + px.size() + 1 > 70) {
                row += '\n';
                line_len = 0;
            } else if (line_len > 0) {
                row += ' ';
                ++line_len;
            }
            row += px;
            line_len += px.size();
        }
        row += '\n';
        for (std::size_t y = 0; y < a.band_height; ++y) ppm << row;
    }
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    std::ofstream f(a.out, std::ios::trunc | std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + a.out.string());
    f << ppm.str();
    out << "ribbon " << width << 'x' << height << " -> " << a.out.string() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transition retrieval for temporal phase segmentation", "trn"};
    app.set_config("--config", "", "flat key=value file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig rc;
    app.add_option("--seed", rc.seed, "random seed")->capture_default_str();
    app.add_option("--phases", rc.phases, "number of phases N")->capture_default_str();
    app.add_option("--window", rc.window, "search window length L (odd)")->capture_default_str();
    app.add_option("--init", rc.init, "window initialization")->check(CLI::IsMember({"fi", "rmi"}))->capture_default_str();

    auto& t = rc.train;
    app.add_option("--episodes", t.episodes_max, "training episodes")->capture_default_str();
    app.add_option("--max-steps", t.max_steps_per_video, "steps per video (<= 200)")->capture_default_str();
    app.add_option("--batch", t.batch, "replay batch size")->capture_default_str();
    app.add_option("--memory", t.memory_capacity, "replay capacity")->capture_default_str();
    app.add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
    app.add_option("--gamma", t.gamma, "discount factor")->capture_default_str();
    app.add_option("--epsilon-start", t.epsilon_start)->capture_default_str();
    app.add_option("--epsilon-min", t.epsilon_min)->capture_default_str();
    app.add_option("--epsilon-decay", t.epsilon_decay, "per-episode decay factor")->capture_default_str();
    app.add_option("--sync-period", t.target_sync_period, "updates between target syncs")->capture_default_str();
    app.add_option("--hidden", t.net.hidden, "LSTM hidden units")->capture_default_str();
    app.add_option("--layers", t.net.layers, "LSTM layers")->capture_default_str();
    app.add_option("--fc", t.net.fc, "dense layer width")->capture_default_str();
    app.add_option("--classifier-epochs", rc.classifier.epochs)->capture_default_str();
    app.add_option("--classifier-lr", rc.classifier.learning_rate)->capture_default_str();

    auto& s = rc.synth;
    app.add_option("--dim", s.dim, "synthetic feature dimension")->capture_default_str();
    app.add_option("--min-len", s.min_len, "shortest synthetic phase")->capture_default_str();
    app.add_option("--max-len", s.max_len, "longest synthetic phase")->capture_default_str();
    app.add_option("--noise", s.noise_sigma, "feature noise sigma")->capture_default_str();
    app.add_option("--blend", s.blend_width, "boundary blend width")->capture_default_str();
    app.add_option("--dropout", s.phase_dropout, "probability a phase is omitted")->capture_default_str();
    app.add_option("--layout", rc.layout, "synthetic layout")
        ->check(CLI::IsMember({"sequential", "background"}))
        ->capture_default_str();
    app.add_option("--target-min", s.target_min_len, "shortest target phase (background layout)")->capture_default_str();
    app.add_option("--target-max", s.target_max_len, "longest target phase (background layout)")->capture_default_str();
    app.add_option("--prototype-seed", s.prototype_seed, "seed for phase prototypes")->capture_default_str();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate synthetic features and labels");
    synth->add_option("--features-dir", sa.features_dir)->required();
    synth->add_option("--labels-dir", sa.labels_dir)->required();
    synth->add_option("--count", sa.count)->required();
    synth->add_option("--prefix", sa.prefix)->capture_default_str();

    TrainArgs ta;
    auto* trn_cmd = app.add_subcommand("train", "train begin/end agents per phase");
    trn_cmd->add_option("--features-dir", ta.features_dir)->required();
    trn_cmd->add_option("--labels-dir", ta.labels_dir)->required();
    trn_cmd->add_option("--out", ta.out_dir, "checkpoint directory")->required();
    trn_cmd->add_option("--phase", ta.phase, "train only this phase");
    trn_cmd->add_option("--list", ta.list, "file of video ids, one per line");

    InferArgs ia;
    auto* infer = app.add_subcommand("infer", "retrieve transitions and compose labels");
    infer->add_option("--features-dir", ia.features_dir)->required();
    infer->add_option("--checkpoints", ia.checkpoints)->required();
    infer->add_option("--out", ia.out_dir, "prediction directory")->required();
    infer->add_option("--list", ia.list, "file of video ids, one per line");
    infer->add_option("--single-phase", ia.single_phase, "retrieve one phase, emit binary labels");
    infer->add_option("--predictions-dir", ia.predictions_dir, "per-clip label CSVs driving rmi");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "score predictions against groundtruth");
    eval->add_option("--pred-dir", ea.pred_dir)->required();
    eval->add_option("--gt-dir", ea.gt_dir)->required();
    eval->add_option("--report", ea.report, "report JSON (default <pred-dir>/report.json)");
    eval->add_option("--csv", ea.csv, "report CSV (default next to the JSON)");
    eval->add_option("--transitions", ea.transitions, "coverage source (default <pred-dir>/transitions.json)");
    eval->add_option("--list", ea.list, "file of video ids, one per line");
    eval->add_option("--single-phase", ea.single_phase, "binarize groundtruth for this phase");

    RibbonArgs ra;
    auto* ribbon = app.add_subcommand("ribbon", "render label CSVs as a colour-band PPM");
    ribbon->add_option("inputs", ra.inputs, "label CSV files, one band each")->required();
    ribbon->add_option("--out", ra.out, "output .ppm")->required();
    ribbon->add_option("--band-height", ra.band_height)->capture_default_str();

    std::vector<std::string> argv_store{"trn"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        check_run_config(rc);
        if (synth->parsed()) return cmd_synth(rc, sa, out);
        if (trn_cmd->parsed()) return cmd_train(rc, ta, out, err);
        if (infer->parsed()) return cmd_infer(rc, ia, out);
        if (eval->parsed()) return cmd_eval(rc, ea, out);
        if (ribbon->parsed()) return cmd_ribbon(rc, ra, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace trn::cli
