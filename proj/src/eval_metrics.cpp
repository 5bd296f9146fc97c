#include "trn/eval_metrics.hpp"

#include "trn/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace trn {

namespace {

bool overlaps(const Event& a, const Event& b) { return a.start <= b.end && b.start <= a.end; }

void check_same_length(const PhaseLabels& a, const PhaseLabels& b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::DimensionMismatch, "prediction and groundtruth lengths differ");
    if (a.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty label sequence");
}

}  // namespace

std::vector<Event> extract_events(const PhaseLabels& labels) {
    std::vector<Event> events;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const int l = labels.labels[i];
        if (!events.empty() && events.back().label == l) {
            events.back().end = i;
        } else {
            events.push_back({l, i, i});
        }
    }
    return events;
}

std::vector<int> expand_events(const std::vector<Event>& events) {
    std::vector<int> out;
    for (const auto& e : events) out.insert(out.end(), e.end - e.start + 1, e.label);
    return out;
}

FrameMetrics frame_metrics(const PhaseLabels& pred, const PhaseLabels& gt) {
    check_same_length(pred, gt);
    std::map<int, std::size_t> tp, pred_count, gt_count;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const int p = pred.labels[i];
        const int g = gt.labels[i];
        ++pred_count[p];
        ++gt_count[g];
        if (p == g) {
            ++correct;
            ++tp[g];
        }
    }
    FrameMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(gt.size());
    double p_sum = 0.0, r_sum = 0.0;
    for (const auto& [phase, count] : gt_count) {
        const double hits = static_cast<double>(tp[phase]);
        const std::size_t predicted = pred_count[phase];
        p_sum += predicted ? hits / static_cast<double>(predicted) : 0.0;
        r_sum += hits / static_cast<double>(count);
    }
    const double phases = static_cast<double>(gt_count.size());
    m.precision = p_sum / phases;
    m.recall = r_sum / phases;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

double event_ratio(const PhaseLabels& gt, const PhaseLabels& pred) {
    check_same_length(pred, gt);
    return static_cast<double>(extract_events(gt).size()) / static_cast<double>(extract_events(pred).size());
}

double WardTally::ratio() const {
    const std::size_t total = gt_total();
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

WardTally ward_categorize(const std::vector<Event>& gt_events, const std::vector<Event>& det_events) {
    // Same-label overlaps in both directions.
    std::vector<std::vector<std::size_t>> s_gt(gt_events.size()), s_det(det_events.size());
    for (std::size_t g = 0; g < gt_events.size(); ++g)
        for (std::size_t d = 0; d < det_events.size(); ++d)
            if (gt_events[g].label == det_events[d].label && overlaps(gt_events[g], det_events[d])) {
                s_gt[g].push_back(d);
                s_det[d].push_back(g);
            }

    WardTally t;
    t.gt_categories.reserve(gt_events.size());
    for (std::size_t g = 0; g < gt_events.size(); ++g) {
        const auto& s = s_gt[g];
        WardCategory c;
        if (s.empty()) {
            c = WardCategory::Deletion;
            ++t.deletions;
        } else if (s.size() == 1) {
            if (s_det[s.front()].size() == 1) {
                c = WardCategory::Correct;
                ++t.correct;
            } else {
                c = WardCategory::Merge;
                ++t.merges;
            }
        } else {
            const bool merging = std::any_of(s.begin(), s.end(), [&](std::size_t d) { return s_det[d].size() > 1; });
            if (merging) {
                c = WardCategory::FragmentedAndMerged;
                ++t.fragmented_merged;
            } else {
                c = WardCategory::Fragmentation;
                ++t.fragmentations;
            }
        }
        t.gt_categories.push_back(c);
    }

    t.det_categories.reserve(det_events.size());
    for (std::size_t d = 0; d < det_events.size(); ++d) {
        const auto& s = s_det[d];
        WardCategory c;
        if (s.empty()) {
            c = WardCategory::Insertion;
            ++t.insertions;
        } else {
            const bool merges = s.size() > 1;
            const bool fragmented = std::any_of(s.begin(), s.end(), [&](std::size_t g) { return s_gt[g].size() > 1; });
            if (merges && fragmented) {
                c = WardCategory::FragmentingMerging;
                ++t.fragmenting_merging;
            } else if (merges) {
                c = WardCategory::Merging;
                ++t.merging;
            } else if (fragmented) {
                c = WardCategory::Fragmenting;
                ++t.fragmenting;
            } else {
                c = WardCategory::Correct;
                ++t.correct_detected;
            }
        }
        t.det_categories.push_back(c);
    }
    return t;
}

VideoReport evaluate_video(const PhaseLabels& pred, const PhaseLabels& gt, std::optional<double> coverage) {
    check_same_length(pred, gt);
    VideoReport r;
    r.length = gt.size();
    r.frame = frame_metrics(pred, gt);
    const auto gt_ev = extract_events(gt);
    const auto det_ev = extract_events(pred);
    r.gt_events = gt_ev.size();
    r.det_events = det_ev.size();
    r.event_ratio = static_cast<double>(r.gt_events) / static_cast<double>(r.det_events);
    r.ward = ward_categorize(gt_ev, det_ev);
    r.ward_ratio = r.ward.ratio();
    r.coverage = coverage;
    return r;
}

VideoReport evaluate_video(const PhaseLabels& pred, const PhaseLabels& gt, const std::set<std::size_t>& visited,
                           std::size_t length) {
    if (length != gt.size()) throw Error(ErrorCode::DimensionMismatch, "length differs from groundtruth");
    std::size_t in_range = 0;
    for (std::size_t c : visited) in_range += c < length ? 1 : 0;
    return evaluate_video(pred, gt, static_cast<double>(in_range) / static_cast<double>(length));
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) return {};
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

DatasetReport aggregate(std::vector<VideoReport> videos) {
    if (videos.empty()) throw Error(ErrorCode::MissingData, "no videos to aggregate");
    DatasetReport r;
    std::vector<double> acc, prec, rec, f1, cov;
    for (const auto& v : videos) {
        acc.push_back(v.frame.accuracy);
        prec.push_back(v.frame.precision);
        rec.push_back(v.frame.recall);
        f1.push_back(v.frame.f1);
        if (v.coverage) cov.push_back(*v.coverage);
        r.gt_events += v.gt_events;
        r.det_events += v.det_events;
        r.ward_correct += v.ward.correct;
    }
    r.accuracy = mean_std(acc);
    r.precision = mean_std(prec);
    r.recall = mean_std(rec);
    r.f1 = mean_std(f1);
    if (cov.size() == videos.size()) r.coverage = mean_std(cov);
    r.event_ratio = static_cast<double>(r.gt_events) / static_cast<double>(r.det_events);
    r.ward_event_ratio = static_cast<double>(r.ward_correct) / static_cast<double>(r.gt_events);
    r.videos = std::move(videos);
    return r;
}

nlohmann::json to_json(const DatasetReport& report) {
    using nlohmann::json;
    auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
    json videos = json::array();
    for (const auto& v : report.videos) {
        const auto& w = v.ward;
        videos.push_back({
            {"id", v.id},
            {"length", v.length},
            {"accuracy", v.frame.accuracy},
            {"precision", v.frame.precision},
            {"recall", v.frame.recall},
            {"f1", v.frame.f1},
            {"gt_events", v.gt_events},
            {"det_events", v.det_events},
            {"event_ratio", v.event_ratio},
            {"ward_event_ratio", v.ward_ratio},
            {"ward", {{"C", w.correct}, {"D", w.deletions}, {"M", w.merges}, {"F", w.fragmentations},
                      {"FM", w.fragmented_merged}, {"I'", w.insertions}, {"M'", w.merging},
                      {"F'", w.fragmenting}, {"FM'", w.fragmenting_merging}}},
            {"coverage", v.coverage ? json(*v.coverage) : json(nullptr)},
        });
    }
    return {
        {"schema_version", kReportSchemaVersion},
        {"videos", videos},
        {"aggregate",
         {{"videos", report.videos.size()},
          {"accuracy", ms(report.accuracy)},
          {"precision", ms(report.precision)},
          {"recall", ms(report.recall)},
          {"f1", ms(report.f1)},
          {"gt_events", report.gt_events},
          {"det_events", report.det_events},
          {"ward_correct", report.ward_correct},
          {"event_ratio", report.event_ratio},
          {"ward_event_ratio", report.ward_event_ratio},
          {"coverage", report.coverage ? ms(*report.coverage) : json(nullptr)}}},
    };
}

void write_report_json(const DatasetReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << to_json(report).dump(2) << '\n';
}

void write_report_csv(const DatasetReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.precision(10);
    out << "video_id,length,accuracy,precision,recall,f1,gt_events,det_events,event_ratio,ward_correct,"
           "ward_event_ratio,coverage\n";
    for (const auto& v : report.videos) {
        out << v.id << ',' << v.length << ',' << v.frame.accuracy << ',' << v.frame.precision << ','
            << v.frame.recall << ',' << v.frame.f1 << ',' << v.gt_events << ',' << v.det_events << ','
            << v.event_ratio << ',' << v.ward.correct << ',' << v.ward_ratio << ',';
        if (v.coverage) out << *v.coverage;
        out << '\n';
    }
    out << "mean," << ',' << report.accuracy.mean << ',' << report.precision.mean << ',' << report.recall.mean
        << ',' << report.f1.mean << ',' << report.gt_events << ',' << report.det_events << ','
        << report.event_ratio << ',' << report.ward_correct << ',' << report.ward_event_ratio << ',';
    if (report.coverage) out << report.coverage->mean;
    out << '\n';
    out << "std," << ',' << report.accuracy.std << ',' << report.precision.std << ',' << report.recall.std << ','
        << report.f1.std << ",,,,,,";
    if (report.coverage) out << report.coverage->std;
    out << '\n';
}

}  // namespace trn
