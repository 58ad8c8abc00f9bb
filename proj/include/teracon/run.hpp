#pragma once
// Experiment orchestration: dataset preparation, per-method training loops
// over the task sequence, matrix-cell evaluation, checkpointing and resume.

#include <string>
#include <vector>

#include "teracon/baselines.hpp"
#include "teracon/checkpoint.hpp"
#include "teracon/config.hpp"
#include "teracon/metrics.hpp"

namespace teracon {

// Generates or loads the bundle, injects the noisy task when requested and
// applies the task-order permutation (the next-item task always stays first).
DatasetBundle prepare_bundle(const ExperimentConfig& cfg);

// Training-order permutation implied by cfg.order for the given task names.
std::vector<std::size_t> task_order(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& names);

TrainConfig to_train_config(const ExperimentConfig& cfg);
ModelConfig to_model_config(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                            MaskMode mode);

struct RunOutput {
    ResultsMatrix matrix;
    std::vector<MetricRecord> records;
    std::size_t completed_tasks{0};
};

// Full pipeline; writes run.json, metrics.jsonl, timings.jsonl and per-task
// checkpoints under cfg.out_dir. Honors cfg.resume and cfg.stop_after.
RunOutput run_experiment(const ExperimentConfig& cfg);

// Re-evaluates every completed task of a checkpointed run on its test split.
std::vector<MetricRecord> evaluate_checkpoint(const ExperimentConfig& cfg,
                                              const std::string& checkpoint_path);

std::string checkpoint_path(const std::string& out_dir, std::size_t task);

}  // namespace teracon
