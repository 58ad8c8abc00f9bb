#pragma once
// Sequential task training: autoregressive pretraining on the first task,
// per-task classification afterwards, with optional knowledge retention
// against a frozen pre-task snapshot over relation-sampled user subsets.

#include <memory>
#include <optional>
#include <set>
#include <span>

#include "teracon/adam.hpp"
#include "teracon/dataset.hpp"
#include "teracon/model.hpp"
#include "teracon/records.hpp"

namespace teracon {

enum class SamplingMode { kRelation, kMin, kFull };
const char* sampling_mode_name(SamplingMode m);

struct TrainConfig {
    double lr_first{0.003};
    double lr{0.001};
    std::size_t batch{128};
    std::size_t epochs_first{12};
    std::size_t epochs{8};
    std::size_t patience{5};
    double alpha{0.7};      // knowledge-retention weight
    double c{6.0};          // sampling-rate sharpness
    SamplingMode sampling{SamplingMode::kRelation};
    // Lower bound on the sampled fraction per previous task. Rosters here are
    // thousands of users, not millions; the raw rate can round to a single
    // user, which is too noisy a signal to retain a function with.
    double sampling_floor{0.08};
    // Learning-rate multiplier for task embeddings and mixers. Everything on
    // the pre-sigmoid path is amplified by s_max at inference, so full-size
    // Adam steps cross the sigmoid's responsive band within a few batches
    // and strand coordinates in saturation.
    double mask_lr_scale{0.05};
    std::uint64_t seed{7};
};

// Immutable copy of the model taken before a task starts training, plus the
// mask values its tasks operated under, evaluated at s_max.
struct FrozenTeacher {
    explicit FrozenTeacher(Model& current);

    Model model;
    std::vector<std::vector<DenseArray>> frozen_masks;  // [task][slot]
    std::size_t task_count{0};
};

struct RetentionPlan {
    struct Entry {
        std::size_t task{0};
        double rho{0.0};
        double weight{0.0};
        std::vector<std::size_t> users;
        DenseArray pseudo;  // (|users|, cardinality)
    };
    std::vector<Entry> entries;

    std::size_t total_sampled_users() const;
};

class Engine {
public:
    Engine(Model& model, const DatasetBundle& bundle, TrainConfig cfg,
           RecordSink sink = {}, TimingSink timing = {});

    struct PhaseOptions {
        std::optional<std::size_t> epochs;
        bool restore_best{true};
        ParamNodeHook hook;      // overrides the engine hook when set
        int epoch_offset{0};
        std::optional<double> lr;
    };

    void train_task(std::size_t task) { train_task(task, PhaseOptions{}); }
    void train_task(std::size_t task, const PhaseOptions& opts);

    double evaluate(std::size_t task, Split split);
    double evaluate(std::size_t task, Split split, const ParamNodeHook& hook);

    // Last-row logits for one user under inference-mode masks.
    std::vector<double> infer_logits(std::size_t task, std::size_t user);

    // rho = 1 - mean over slots of sigmoid(c * cos(current, frozen)).
    static double sampling_ratio(const std::vector<DenseArray>& current,
                                 const std::vector<DenseArray>& frozen, double c);

    // ceil(rho * |roster|) distinct users, uniform without replacement, at
    // least one; returned in ascending order.
    static std::vector<std::size_t> sample_users(const std::vector<std::size_t>& roster,
                                                 double rho, Rng& rng);

    // Teacher logits for `users` on a previous task, no gradient tracking.
    DenseArray generate_pseudo_labels(FrozenTeacher& teacher, std::size_t task_j,
                                      const std::vector<std::size_t>& users);

    RetentionPlan make_retention_plan(std::size_t task, FrozenTeacher& teacher, Rng& rng);

    struct RetentionBatch {
        std::size_t task{0};
        double weight{0.0};
        std::vector<std::size_t> users;
        DenseArray pseudo;
    };

    // Classification (or next-item) loss of `task` over `users` at sharpness
    // s, plus alpha-weighted retention terms. Shared by training and the
    // gradient-check harness.
    ad::Node* build_objective(ad::Tape& tape, std::size_t task,
                              std::span<const std::size_t> users, double s,
                              std::span<const RetentionBatch> retention, double alpha);

    void set_backbone_hook(ParamNodeHook hook) { hook_ = std::move(hook); }
    const FrozenTeacher* teacher() const { return teacher_.get(); }
    Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }

    // True when `task` runs with mask gating given the current active count.
    bool masked(std::size_t task) const;

private:
    std::vector<int> collect_items(std::span<const std::size_t> users) const;
    std::vector<ad::Node*> mask_nodes_for(ad::Tape& tape, std::size_t task, double s);
    ad::Node* task_loss(ad::Tape& tape, std::size_t task,
                        std::span<const std::size_t> users,
                        std::span<ad::Node* const> masks, const ParamNodeHook& hook);
    void apply_updates(ad::Tape& tape, double lr);
    void reset_optimizer();
    void emit(const MetricRecord& r) {
        if (sink_) sink_(r);
    }

    Model& model_;
    const DatasetBundle& bundle_;
    TrainConfig cfg_;
    RecordSink sink_;
    TimingSink timing_;
    ParamNodeHook hook_;
    std::vector<AdamState> states_;
    std::unique_ptr<FrozenTeacher> teacher_;
    std::set<int> mask_param_ids_;
};

}  // namespace teracon
