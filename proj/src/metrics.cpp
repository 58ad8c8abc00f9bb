#include "teracon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace teracon {

double mrr_at_k(std::span<const double> logits, int true_label, int k) {
    if (true_label < 0 || static_cast<std::size_t>(true_label) >= logits.size())
        throw std::out_of_range("mrr_at_k: label out of range");
    if (static_cast<std::size_t>(k) > logits.size())
        throw std::invalid_argument("mrr_at_k: k exceeds the number of classes");
    const double target = logits[static_cast<std::size_t>(true_label)];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (static_cast<int>(j) == true_label) continue;
        if (logits[j] > target || (logits[j] == target && static_cast<int>(j) < true_label))
            ++rank;
        if (rank > static_cast<std::size_t>(k)) return 0.0;
    }
    return 1.0 / static_cast<double>(rank);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("accuracy: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double fwt_percent(double r_ii, double r_reference) {
    if (r_reference <= 0.0)
        throw std::invalid_argument("fwt_percent: reference score must be positive");
    return (r_ii - r_reference) / r_reference * 100.0;
}

double bwt_percent(double r_mi, double r_ii) {
    if (r_ii <= 0.0)
        throw std::invalid_argument("bwt_percent: own-task score must be positive");
    return (r_mi - r_ii) / r_ii * 100.0;
}

std::optional<double> ResultsMatrix::cell(std::size_t after, std::size_t on) const {
    if (after >= num_tasks || on >= num_tasks) return std::nullopt;
    return cells[after * num_tasks + on];
}

void ResultsMatrix::set(std::size_t after, std::size_t on, double value) {
    if (after >= num_tasks || on >= num_tasks)
        throw std::out_of_range("ResultsMatrix: cell out of range");
    if (on > after)
        throw std::invalid_argument("ResultsMatrix: cells exist only for after >= on");
    auto& c = cells[after * num_tasks + on];
    if (c.has_value() && *c != value)
        throw std::runtime_error("ResultsMatrix: duplicate cell (" + std::to_string(after) +
                                 "," + std::to_string(on) + ") with differing values");
    c = value;
}

std::optional<double> ResultsMatrix::fwt(std::size_t task) const {
    if (task == 0 || !reference.has_value()) return std::nullopt;
    const auto r_ii = own(task);
    if (!r_ii.has_value()) return std::nullopt;
    return fwt_percent(*r_ii, (*reference)[task]);
}

std::optional<double> ResultsMatrix::bwt(std::size_t task) const {
    if (num_tasks == 0 || task + 1 == num_tasks) return std::nullopt;
    const auto r_mi = final_score(task);
    const auto r_ii = own(task);
    if (!r_mi.has_value() || !r_ii.has_value()) return std::nullopt;
    return bwt_percent(*r_mi, *r_ii);
}

std::vector<std::string> ResultsMatrix::missing_cells() const {
    std::vector<std::string> out;
    for (std::size_t after = 0; after < num_tasks; ++after)
        for (std::size_t on = 0; on <= after; ++on)
            if (!cells[after * num_tasks + on].has_value())
                out.push_back("(" + std::to_string(after) + "," + std::to_string(on) + ")");
    return out;
}

ResultsMatrix build_results_matrix(std::span<const MetricRecord> records) {
    std::size_t num_tasks = 0;
    for (const auto& r : records) {
        if (r.split != "test" || r.after_task < 0) continue;
        num_tasks = std::max(num_tasks, static_cast<std::size_t>(r.after_task) + 1);
        num_tasks = std::max(num_tasks, static_cast<std::size_t>(r.task) + 1);
    }
    ResultsMatrix m;
    m.num_tasks = num_tasks;
    m.task_names.assign(num_tasks, "");
    m.metrics.assign(num_tasks, "");
    m.cells.assign(num_tasks * num_tasks, std::nullopt);
    for (const auto& r : records) {
        if (r.split != "test" || r.after_task < 0) continue;
        m.set(static_cast<std::size_t>(r.after_task), static_cast<std::size_t>(r.task),
              r.value);
        m.task_names[static_cast<std::size_t>(r.task)] = r.task_name;
        m.metrics[static_cast<std::size_t>(r.task)] = r.metric;
    }
    return m;
}

}  // namespace teracon
