#include "teracon/records.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace teracon {

namespace {

using nlohmann::json;

json to_json(const MetricRecord& r) {
    json j;
    j["method"] = r.method;
    j["order"] = r.order;
    j["task"] = r.task;
    j["task_name"] = r.task_name;
    j["epoch"] = r.epoch;
    j["split"] = r.split;
    j["metric"] = r.metric;
    j["value"] = r.value;
    if (r.after_task >= 0) j["after_task"] = r.after_task;
    return j;
}

}  // namespace

std::string to_json_line(const MetricRecord& r) { return to_json(r).dump(); }

std::string to_json_line(const TimingRecord& r) {
    json j;
    j["method"] = r.method;
    j["task"] = r.task;
    j["epoch"] = r.epoch;
    j["seconds"] = r.seconds;
    return j.dump();
}

MetricRecord metric_from_json_line(const std::string& line) {
    const json j = json::parse(line);
    MetricRecord r;
    r.method = j.value("method", "");
    r.order = j.value("order", "");
    r.task = j.value("task", -1);
    r.task_name = j.value("task_name", "");
    r.epoch = j.value("epoch", -1);
    r.split = j.value("split", "");
    r.metric = j.value("metric", "");
    r.value = j.value("value", 0.0);
    r.after_task = j.value("after_task", -1);
    return r;
}

TimingRecord timing_from_json_line(const std::string& line) {
    const json j = json::parse(line);
    TimingRecord r;
    r.method = j.value("method", "");
    r.task = j.value("task", -1);
    r.epoch = j.value("epoch", -1);
    r.seconds = j.value("seconds", 0.0);
    return r;
}

std::vector<MetricRecord> read_metric_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metric records: " + path);
    std::vector<MetricRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(metric_from_json_line(line));
    }
    return out;
}

std::vector<TimingRecord> read_timing_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open timing records: " + path);
    std::vector<TimingRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(timing_from_json_line(line));
    }
    return out;
}

}  // namespace teracon
