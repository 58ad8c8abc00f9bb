#pragma once
// Comparison methods sharing the same backbone: parameter isolation with
// binary masks and magnitude pruning (conure), per-task scratch models
// (sinmo), full fine-tuning from the first task (fineall), and the reduced
// mask variants handled by the engine's mask modes.

#include <map>
#include <string>
#include <vector>

#include "teracon/engine.hpp"

namespace teracon {

enum class Method { kTeracon, kConure, kNoRelation, kOnlyPositive, kSinMo, kFineAll };

Method method_from_name(const std::string& name);
const char* method_name(Method m);
MaskMode mask_mode_for(Method m);

// Per-parameter binary masks, one layer per task, pairwise disjoint.
struct IsolationMasks {
    // masks[task][param_id] in {0,1}, same shape as the parameter.
    std::vector<std::map<int, DenseArray>> masks;

    // Sum of masks of tasks 0..upto-1 for one parameter (zeros if none).
    DenseArray coverage(int param_id, std::size_t upto, const DenseArray& like) const;
    void check_disjoint() const;
};

// Forward uses the full parameter; backward zeroes gradients on coordinates
// covered by prior-task masks.
ad::Node* conure_effective_params(ad::Tape& tape, ad::Param& p, const DenseArray& prior_cover);

// Binary mask for the current task: 1 where |value| ranks within the largest
// keep_fraction of coordinates not covered by prior masks. Ties broken by
// index so the kept count is exact.
DenseArray conure_prune_mask(const DenseArray& value, const DenseArray& prior_cover,
                             double keep_fraction);

// Parameter copy with every coordinate not claimed by tasks 0..task zeroed.
DenseArray conure_inference_params(const DenseArray& value, const IsolationMasks& masks,
                                   int param_id, std::size_t task);

struct ConureConfig {
    // Kept fraction of still-free coordinates after each task.
    std::vector<double> keep_fractions{0.3, 0.2, 0.3, 0.2, 0.1, 0.1};
    std::size_t finetune_epochs{1};
    bool prune_embedding{true};  // false freezes the item-embedding table after task 0
};

// Drives an engine with gradient-gating hooks and prunes after each task.
class ConureTrainer {
public:
    ConureTrainer(Model& model, const DatasetBundle& bundle, TrainConfig cfg,
                  ConureConfig conure, RecordSink sink = {}, TimingSink timing = {});

    void train_task(std::size_t task);
    // Evaluation under the isolation parameters of tasks 0..task.
    double evaluate(std::size_t task, Split split);
    std::vector<std::string> take_warnings();

    const IsolationMasks& isolation() const { return masks_; }
    Engine& engine() { return engine_; }
    // Snapshot of a task's inference-time parameter vectors, for the
    // zero-forgetting witness.
    std::vector<DenseArray> inference_params(std::size_t task);

private:
    bool is_backbone(int param_id) const;
    ParamNodeHook training_hook(std::size_t task);
    ParamNodeHook inference_hook(std::size_t task);
    ParamNodeHook finetune_hook(std::size_t task);
    std::size_t free_coordinates(std::size_t task) const;

    Model& model_;
    TrainConfig cfg_;
    ConureConfig conure_;
    Engine engine_;
    IsolationMasks masks_;
    std::vector<int> backbone_ids_;
    std::vector<std::string> warnings_;
};

}  // namespace teracon
