#pragma once

// Frame-based (accuracy, macro precision/recall, F1) and event-based (event
// ratio, Ward categories) scoring of a segmentation against groundtruth.

#include "trn/feature_store.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace trn {

struct Event {
    int label = 0;
    std::size_t start = 0;
    std::size_t end = 0;  // inclusive
    friend bool operator==(const Event&, const Event&) = default;
};

std::vector<Event> extract_events(const PhaseLabels& labels);
/// Run-length expansion; inverse of extract_events.
std::vector<int> expand_events(const std::vector<Event>& events);

struct FrameMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

FrameMetrics frame_metrics(const PhaseLabels& pred, const PhaseLabels& gt);

double event_ratio(const PhaseLabels& gt, const PhaseLabels& pred);

enum class WardCategory {
    Correct,
    Deletion,
    Merge,
    Fragmentation,
    FragmentedAndMerged,
    Insertion,         // detected side I'
    Merging,           // detected side M'
    Fragmenting,       // detected side F'
    FragmentingMerging // detected side FM'
};

struct WardTally {
    std::size_t correct = 0;
    std::size_t deletions = 0;
    std::size_t merges = 0;
    std::size_t fragmentations = 0;
    std::size_t fragmented_merged = 0;
    std::size_t insertions = 0;
    std::size_t merging = 0;
    std::size_t fragmenting = 0;
    std::size_t fragmenting_merging = 0;
    std::size_t correct_detected = 0;

    std::vector<WardCategory> gt_categories;
    std::vector<WardCategory> det_categories;

    std::size_t gt_total() const { return correct + deletions + merges + fragmentations + fragmented_merged; }
    std::size_t det_total() const {
        return correct_detected + insertions + merging + fragmenting + fragmenting_merging;
    }
    /// C / E_gt
    double ratio() const;
};

WardTally ward_categorize(const std::vector<Event>& gt_events, const std::vector<Event>& det_events);

struct VideoReport {
    std::string id;
    std::size_t length = 0;
    FrameMetrics frame;
    std::size_t gt_events = 0;
    std::size_t det_events = 0;
    double event_ratio = 0.0;
    WardTally ward;
    double ward_ratio = 0.0;
    std::optional<double> coverage;
};

VideoReport evaluate_video(const PhaseLabels& pred, const PhaseLabels& gt, std::optional<double> coverage = {});
VideoReport evaluate_video(const PhaseLabels& pred, const PhaseLabels& gt, const std::set<std::size_t>& visited,
                           std::size_t length);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& values);

struct DatasetReport {
    std::vector<VideoReport> videos;
    MeanStd accuracy, precision, recall, f1;
    std::optional<MeanStd> coverage;
    std::size_t gt_events = 0;
    std::size_t det_events = 0;
    std::size_t ward_correct = 0;
    double event_ratio = 0.0;       // summed counts
    double ward_event_ratio = 0.0;  // summed counts
};

DatasetReport aggregate(std::vector<VideoReport> videos);

inline constexpr int kReportSchemaVersion = 1;

nlohmann::json to_json(const DatasetReport& report);
void write_report_json(const DatasetReport& report, const std::filesystem::path& path);
void write_report_csv(const DatasetReport& report, const std::filesystem::path& path);

}  // namespace trn
