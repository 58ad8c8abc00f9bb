#pragma once
// Ranking/classification scores and the cross-task results matrix with
// forward/backward transfer percentages.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teracon/records.hpp"

namespace teracon {

// 1/rank if the true label ranks within the top k by logit (descending,
// ties broken toward lower class index), else 0.
double mrr_at_k(std::span<const double> logits, int true_label, int k = 5);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// (R_ii - R_ref) / R_ref * 100.
double fwt_percent(double r_ii, double r_reference);

// (R_Mi - R_ii) / R_ii * 100.
double bwt_percent(double r_mi, double r_ii);

struct ResultsMatrix {
    std::size_t num_tasks{0};
    std::vector<std::string> task_names;
    std::vector<std::string> metrics;                    // per evaluated-on task
    std::vector<std::optional<double>> cells;            // [after * num_tasks + on]
    std::optional<std::vector<double>> reference;        // per-task scratch scores

    std::optional<double> cell(std::size_t after, std::size_t on) const;
    void set(std::size_t after, std::size_t on, double value);

    // Diagonal score after a task's own training.
    std::optional<double> own(std::size_t task) const { return cell(task, task); }
    // Score after the final task.
    std::optional<double> final_score(std::size_t task) const {
        return cell(num_tasks - 1, task);
    }

    // Absent for the first task or when no reference row is attached.
    std::optional<double> fwt(std::size_t task) const;
    // Absent for the final task.
    std::optional<double> bwt(std::size_t task) const;

    std::vector<std::string> missing_cells() const;
};

// Builds the matrix from "test" records carrying after_task. Throws when two
// records disagree on the same cell.
ResultsMatrix build_results_matrix(std::span<const MetricRecord> records);

}  // namespace teracon
