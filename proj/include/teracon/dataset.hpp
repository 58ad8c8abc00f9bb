#pragma once
// Synthetic multi-task behavior dataset: item sequences driven by per-user
// latent preference states, classification labels tied to those states with a
// configurable dependence strength, plus text-file persistence and
// hash-keyed train/valid/test splits.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "teracon/rng.hpp"

namespace teracon {

enum class TaskKind { kNextItem, kClassification };
enum class TaskMetric { kMrr5, kAcc };
enum class Split { kTrain, kValid, kTest };

const char* task_kind_name(TaskKind k);
const char* task_metric_name(TaskMetric m);

struct BehaviorSequence {
    std::string user_id;
    std::vector<int> items;
};

struct TaskSpec {
    std::string name;
    TaskKind kind{TaskKind::kClassification};
    std::size_t cardinality{0};
    TaskMetric metric{TaskMetric::kAcc};
    // One entry per bundle user; -1 marks users outside the task's roster.
    // Next-item tasks cover every user and keep all entries at -1.
    std::vector<int> labels;

    bool in_roster(std::size_t user, TaskKind) const;
};

struct DatasetBundle {
    std::size_t vocab{0};
    std::size_t seq_len{0};
    std::uint64_t split_seed{0};
    std::vector<BehaviorSequence> users;
    std::vector<TaskSpec> tasks;
    std::vector<std::string> generation_warnings;  // not persisted

    std::vector<std::size_t> roster(std::size_t task) const;
    int label_of(std::size_t task, std::size_t user) const;
    Split split_of(std::size_t task, std::size_t user) const;
    std::vector<std::size_t> split_users(std::size_t task, Split split) const;

    void validate() const;
};

struct TaskDescriptor {
    std::string name;
    TaskKind kind{TaskKind::kClassification};
    std::size_t cardinality{0};
    double roster_fraction{1.0};
    double label_dependence{1.0};  // 0 = pure noise, 1 = deterministic in the factor
    std::size_t latent_factor{0};
    TaskMetric metric{TaskMetric::kAcc};
};

struct GeneratorConfig {
    std::uint64_t seed{7};
    std::size_t vocab{500};
    std::size_t users{2000};
    std::size_t seq_len{20};
    std::vector<TaskDescriptor> tasks;
    std::size_t latent_states{8};
    std::size_t latent_factors{2};
    double zipf_exponent{1.2};
    double successor_prob{0.6};
};

// Preset task lists. "ttl-like": one next-item source task plus three
// classification tasks; "3task": next-item plus an unrelated and a related
// classification task.
std::vector<TaskDescriptor> preset_tasks(const std::string& preset, std::size_t vocab);

DatasetBundle generate_bundle(const GeneratorConfig& cfg);

// Inserts a task with uniformly random labels over `classes`, covering
// ceil(user_fraction * N) users, at `position` in the task order.
void inject_noisy_task(DatasetBundle& bundle, double user_fraction, std::size_t classes,
                       std::size_t position, std::uint64_t seed);

void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle(const std::string& path);

// Split sizing: floor(0.05 N) validation, floor(0.15 N) test, remainder
// train. Assignment is keyed on (user id, task name, seed) hashes so it
// survives roster reordering.
struct SplitCounts {
    std::size_t train, valid, test;
};
SplitCounts split_counts(std::size_t roster_size);

}  // namespace teracon
