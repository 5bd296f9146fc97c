#include "trn/feature_store.hpp"

#include "trn/binary_io.hpp"
#include "trn/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace trn {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 24;

bool all_finite(const FeatureMatrix& m) { return m.allFinite(); }

}  // namespace

namespace io {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace io

FeatureSequence::FeatureSequence(FeatureMatrix features, std::uint32_t clip_len_frames, float fps)
    : features_(std::move(features)), clip_len_frames_(clip_len_frames), fps_(fps) {
    if (features_.rows() < 1 || features_.cols() < 1)
        throw Error(ErrorCode::InvalidArgument, "feature sequence needs T >= 1 and D >= 1");
    if (clip_len_frames_ < 1) throw Error(ErrorCode::InvalidArgument, "clip length must be >= 1");
    if (!(fps_ > 0.0f) || !std::isfinite(fps_))
        throw Error(ErrorCode::InvalidArgument, "fps must be positive");
    if (!all_finite(features_)) throw Error(ErrorCode::NonFinite, "feature matrix has NaN/Inf");
}

bool TransitionSet::empty() const noexcept {
    return std::none_of(phases.begin(), phases.end(), [](const auto& p) { return p.has_value(); });
}

void SynthConfig::validate() const {
    if (num_phases < 1) throw Error(ErrorCode::InvalidArgument, "num_phases must be >= 1");
    if (min_len < 1 || max_len < min_len)
        throw Error(ErrorCode::InvalidArgument, "phase length range must satisfy 1 <= min <= max");
    if (dim < 1) throw Error(ErrorCode::InvalidArgument, "feature dim must be >= 1");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
    if (!(phase_dropout >= 0.0 && phase_dropout < 1.0))
        throw Error(ErrorCode::InvalidArgument, "phase dropout must be in [0, 1)");
    if (layout == SynthLayout::TargetInBackground) {
        if (num_phases != 2)
            throw Error(ErrorCode::InvalidArgument, "target-in-background layout needs 2 phases");
        if (target_min_len < 1 || target_max_len < target_min_len)
            throw Error(ErrorCode::InvalidArgument, "target length range invalid");
    }
}

FeatureSequence load_features(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
        throw Error(ErrorCode::BadMagic, path.string());
    if (bytes.size() < kHeaderBytes) throw Error(ErrorCode::Truncated, "header of " + path.string());
    if (io::get_u32(bytes, 4) != kVersion) throw Error(ErrorCode::BadVersion, path.string());
    const std::uint64_t rows = io::get_u32(bytes, 8);
    const std::uint64_t cols = io::get_u32(bytes, 12);
    const std::uint32_t clip_len = io::get_u32(bytes, 16);
    const float fps = io::get_f32(bytes, 20);
    if (rows == 0 || cols == 0) throw Error(ErrorCode::InvalidArgument, "empty matrix in " + path.string());
    const std::uint64_t payload = rows * cols * 4;
    if (bytes.size() - kHeaderBytes < payload)
        throw Error(ErrorCode::Truncated, "payload of " + path.string());

    FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t off = kHeaderBytes;
    for (Eigen::Index i = 0; i < m.size(); ++i, off += 4) {
        const float v = io::get_f32(bytes, off);
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, path.string());
        m.data()[i] = v;
    }
    return FeatureSequence(std::move(m), clip_len, fps);
}

void save_features(const FeatureSequence& seq, const std::filesystem::path& path) {
    const FeatureMatrix& m = seq.matrix();
    if (!all_finite(m)) throw Error(ErrorCode::NonFinite, "refusing to save NaN/Inf");
    std::string out(kMagic, 4);
    out.reserve(kHeaderBytes + static_cast<std::size_t>(m.size()) * 4);
    io::put_u32(out, kVersion);
    io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    io::put_u32(out, seq.clip_len_frames());
    io::put_f32(out, seq.fps());
    for (Eigen::Index i = 0; i < m.size(); ++i) io::put_f32(out, static_cast<float>(m.data()[i]));
    io::write_file(path, out);
}

PhaseLabels load_labels(const std::filesystem::path& path, int num_phases) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::Truncated, "missing header in " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "clip_index,phase")
        throw Error(ErrorCode::InvalidArgument, "bad labels header in " + path.string());

    PhaseLabels out;
    out.num_phases = num_phases;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        std::size_t idx = 0;
        int phase = 0;
        const char* first = line.data();
        const char* last = line.data() + line.size();
        if (comma == std::string::npos ||
            std::from_chars(first, first + comma, idx).ec != std::errc{} ||
            std::from_chars(first + comma + 1, last, phase).ec != std::errc{})
            throw Error(ErrorCode::InvalidArgument, "malformed row '" + line + "' in " + path.string());
        if (idx != out.labels.size())
            throw Error(ErrorCode::InvalidArgument,
                        "clip indices must be 0..T-1 in order in " + path.string());
        if (phase < 0 || phase > num_phases)
            throw Error(ErrorCode::InvalidArgument, "phase id out of range in " + path.string());
        out.labels.push_back(phase);
    }
    if (out.labels.empty()) throw Error(ErrorCode::Truncated, "no rows in " + path.string());
    return out;
}

void save_labels(const PhaseLabels& labels, const std::filesystem::path& path) {
    std::string out = "clip_index,phase\n";
    for (std::size_t i = 0; i < labels.labels.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(labels.labels[i]) + "\n";
    io::write_file(path, out);
}

FeatureSequence average_clips(const FeatureSequence& frame_feats, std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "clip length K must be >= 1");
    const std::size_t frames = frame_feats.length();
    if (frames == 0) throw Error(ErrorCode::InvalidArgument, "empty frame sequence");
    const std::size_t clips = (frames + k - 1) / k;
    const FeatureMatrix& in = frame_feats.matrix();
    FeatureMatrix out(static_cast<Eigen::Index>(clips), in.cols());
    for (std::size_t c = 0; c < clips; ++c) {
        const std::size_t start = c * k;
        const std::size_t n = std::min(k, frames - start);
        out.row(static_cast<Eigen::Index>(c)) =
            in.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)).colwise().mean();
    }
    return FeatureSequence(std::move(out), static_cast<std::uint32_t>(k), frame_feats.fps());
}

TransitionSet labels_to_transitions(const PhaseLabels& labels) {
    if (labels.num_phases < 1) throw Error(ErrorCode::InvalidArgument, "num_phases must be >= 1");
    TransitionSet ts(static_cast<std::size_t>(labels.num_phases));
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const int p = labels.labels[i];
        if (p < 0 || p >= labels.num_phases)
            throw Error(ErrorCode::InvalidArgument, "label outside phase range at clip " + std::to_string(i));
        auto& slot = ts.phases[static_cast<std::size_t>(p)];
        if (!slot) {
            slot = Transition{i, i};
        } else if (slot->end + 1 == i) {
            slot->end = i;
        } else {
            throw Error(ErrorCode::NonContiguousPhase,
                        "phase " + std::to_string(p) + " reappears at clip " + std::to_string(i));
        }
    }
    return ts;
}

std::optional<Transition> phase_transition(const PhaseLabels& labels, int phase) {
    if (phase < 0 || phase >= labels.num_phases) throw Error(ErrorCode::InvalidArgument, "phase outside range");
    std::optional<Transition> out;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels[i] != phase) continue;
        if (!out) {
            out = Transition{i, i};
        } else if (out->end + 1 == i) {
            out->end = i;
        } else {
            throw Error(ErrorCode::NonContiguousPhase,
                        "phase " + std::to_string(phase) + " reappears at clip " + std::to_string(i));
        }
    }
    return out;
}

PhaseLabels transitions_to_labels(const TransitionSet& ts, std::size_t length) {
    PhaseLabels out;
    out.num_phases = static_cast<int>(ts.num_phases());
    out.labels.assign(length, out.sentinel());
    // Walk phases from the highest id down so the lowest id wins overlaps.
    for (std::size_t n = ts.num_phases(); n-- > 0;) {
        const auto& t = ts.phases[n];
        if (!t) continue;
        for (std::size_t i = t->begin; i <= t->end && i < length; ++i)
            out.labels[i] = static_cast<int>(n);
    }
    return out;
}

std::vector<Eigen::VectorXd> synth_prototypes(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.prototype_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::VectorXd> protos;
    for (int n = 0; n < cfg.num_phases; ++n) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(cfg.dim));
        do {
            for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = normal(rng);
        } while (v.norm() == 0.0);
        protos.push_back(v / v.norm());
    }
    return protos;
}

std::pair<FeatureSequence, PhaseLabels> synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto protos = synth_prototypes(cfg);

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7256u};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> length_dist(cfg.min_len, cfg.max_len);

    struct Block {
        int phase;
        std::size_t len;
    };
    std::vector<Block> blocks;
    if (cfg.layout == SynthLayout::TargetInBackground) {
        std::uniform_int_distribution<std::size_t> target_dist(cfg.target_min_len, cfg.target_max_len);
        const std::size_t before = length_dist(rng);
        const std::size_t target = target_dist(rng);
        const std::size_t after = length_dist(rng);
        blocks = {{0, before}, {1, target}, {0, after}};
    } else {
        std::bernoulli_distribution drop(cfg.phase_dropout);
        for (int n = 0; n < cfg.num_phases; ++n) {
            const std::size_t len = length_dist(rng);
            if (!drop(rng)) blocks.push_back({n, len});
        }
        if (blocks.empty()) {
            std::uniform_int_distribution<int> pick(0, cfg.num_phases - 1);
            blocks.push_back({pick(rng), length_dist(rng)});
        }
    }

    std::size_t total = 0;
    for (const auto& b : blocks) total += b.len;

    PhaseLabels labels;
    labels.num_phases = cfg.num_phases;
    labels.labels.reserve(total);
    std::vector<std::size_t> boundaries;  // index of the first clip of each block after the first
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        if (bi > 0) boundaries.push_back(labels.labels.size());
        labels.labels.insert(labels.labels.end(), blocks[bi].len, blocks[bi].phase);
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    const auto dim = static_cast<Eigen::Index>(cfg.dim);
    const double width = static_cast<double>(cfg.blend_width);
    FeatureMatrix m(static_cast<Eigen::Index>(total), dim);
    for (std::size_t i = 0; i < total; ++i) {
        Eigen::VectorXd x = protos[static_cast<std::size_t>(labels.labels[i])];
        if (cfg.blend_width > 0) {
            // Nearest boundary located half a clip before its first clip.
            double best = width;
            std::size_t best_b = 0;
            bool found = false;
            for (std::size_t b : boundaries) {
                const double u = static_cast<double>(i) - (static_cast<double>(b) - 0.5);
                if (std::abs(u) < std::abs(best)) {
                    best = u;
                    best_b = b;
                    found = true;
                }
            }
            if (found) {
                const double w = (best + width) / (2.0 * width);
                const auto& left = protos[static_cast<std::size_t>(labels.labels[best_b - 1])];
                const auto& right = protos[static_cast<std::size_t>(labels.labels[best_b])];
                x = (1.0 - w) * left + w * right;
            }
        }
        for (Eigen::Index j = 0; j < dim; ++j) {
            const double v = x[j] + cfg.noise_sigma * noise(rng);
            // Round to float32 so the in-memory sequence survives a save/load cycle unchanged.
            m(static_cast<Eigen::Index>(i), j) = static_cast<double>(static_cast<float>(v));
        }
    }
    return {FeatureSequence(std::move(m), 16, 2.4f), std::move(labels)};
}

}  // namespace trn
