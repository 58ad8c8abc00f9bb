#pragma once
// Per-task soft masks derived from task embeddings. Each residual-block
// activation has one mask slot; a task's mask is either the plain sigmoid of
// its scaled embedding or the relation-aware form that mixes in the scaled
// (and optionally negated) embeddings of every other trained task.

#include <cstddef>
#include <functional>
#include <vector>

#include "teracon/graph.hpp"
#include "teracon/rng.hpp"

namespace teracon {

enum class MaskMode {
    kNone,          // no masks anywhere (scratch / fine-tune baselines)
    kFixedHalf,     // constant 0.5 gates, no trainable mask parameters
    kBase,          // sigmoid(s * e), no cross-task mixing
    kOnlyPositive,  // relation-aware without the negated embedding rows
    kRelation,      // full relation-aware form
};

const char* mask_mode_name(MaskMode m);

// Per-batch sharpness ramp: s(1) = 1/s_max, s(B) = s_max, linear in between.
// b is 1-based; B == 1 yields s_max.
double anneal_scale(long batch_index, long total_batches, double s_max);

// Tasks 1..current except target, ascending; indices are 1-based.
std::vector<std::size_t> aggregate_set(std::size_t target, std::size_t current);

// sigmoid(s * e), elementwise.
DenseArray base_mask_value(const DenseArray& embedding, double s);

// Rows [tanh(s*e); tanh(-s*e)], shape (2, f).
DenseArray opposite_pair_value(const DenseArray& embedding, double s);

struct MaskBankConfig {
    std::size_t num_tasks{0};
    std::size_t slots{0};  // 2 * residual blocks
    std::size_t dim{0};    // f
    MaskMode mode{MaskMode::kRelation};
    double s_max{50.0};
};

// Owns every mask parameter, pre-allocated for all configured tasks so shapes
// never change as tasks arrive. Embeddings of tasks that have not been
// activated stay exactly zero and enter mixers as inert zero constants.
class TaskMaskBank {
public:
    explicit TaskMaskBank(MaskBankConfig cfg);

    const MaskBankConfig& config() const { return cfg_; }
    std::size_t active_count() const { return active_count_; }
    bool is_active(std::size_t task) const { return task < active_count_; }

    // Marks the next task trainable. The first task keeps a zero embedding
    // (its masks start at exactly 0.5); later tasks draw uniform(-1,1)/s_max.
    void activate_next(Rng& rng);

    // Graph-mode mask for one slot at sharpness s. Throws if the task has not
    // been activated (its mixer is unallocated as far as callers know).
    ad::Node* mask_node(ad::Tape& tape, std::size_t task, std::size_t slot, double s);

    // All slots for a task; empty when mode is kNone.
    std::vector<ad::Node*> mask_nodes(ad::Tape& tape, std::size_t task, double s);

    // Value-mode evaluation (no gradients).
    DenseArray mask_value(std::size_t task, std::size_t slot, double s);

    // Deep copy of all slot masks at s_max. Throws for untrained tasks.
    std::vector<DenseArray> snapshot(std::size_t task);

    ad::Param& embedding(std::size_t task, std::size_t slot);
    ad::Param& mixer_weight(std::size_t task, std::size_t slot);
    ad::Param& mixer_bias(std::size_t task, std::size_t slot);

    std::size_t mixer_input_dim() const { return mixer_in_; }
    bool has_params() const;
    void for_each_param(const std::function<void(ad::Param&)>& fn);

private:
    void check_task_slot(std::size_t task, std::size_t slot) const;

    MaskBankConfig cfg_;
    std::size_t active_count_{0};
    std::size_t mixer_in_{0};
    // Indexed [task * slots + slot].
    std::vector<ad::Param> embeddings_;
    std::vector<ad::Param> mixer_w_;
    std::vector<ad::Param> mixer_b_;
};

}  // namespace teracon
