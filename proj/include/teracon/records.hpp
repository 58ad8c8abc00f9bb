#pragma once
// Flat metric records, one JSON object per line. The metric stream is fully
// deterministic for a given (config, seed); wall-clock timings go to a
// separate stream so byte-identical reruns stay byte-identical.

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace teracon {

struct MetricRecord {
    std::string method;
    std::string order;
    int task{-1};           // training-order position, 0-based
    std::string task_name;
    int epoch{-1};
    std::string split;      // train | valid | test
    std::string metric;     // loss | mrr5 | acc | pseudo_label_users
    double value{0.0};
    int after_task{-1};     // >= 0 on test cells: evaluated after this task
};

struct TimingRecord {
    std::string method;
    int task{-1};
    int epoch{-1};
    double seconds{0.0};
};

using RecordSink = std::function<void(const MetricRecord&)>;
using TimingSink = std::function<void(const TimingRecord&)>;

std::string to_json_line(const MetricRecord& r);
std::string to_json_line(const TimingRecord& r);
MetricRecord metric_from_json_line(const std::string& line);
TimingRecord timing_from_json_line(const std::string& line);

std::vector<MetricRecord> read_metric_records(const std::string& path);
std::vector<TimingRecord> read_timing_records(const std::string& path);

}  // namespace teracon
