#pragma once
// One continually trained model: the shared sequence encoder, one classifier
// per task, and the task-mask parameters. Parameter ids are assigned in a
// fixed walk order so optimizer state and checkpoints line up across clones.

#include <vector>

#include "teracon/backbone.hpp"
#include "teracon/task_mask.hpp"

namespace teracon {

struct ModelConfig {
    BackboneConfig backbone;
    std::vector<std::size_t> cardinalities;  // per task; first task = vocab
    MaskMode mask_mode{MaskMode::kRelation};
    double s_max{50.0};
};

class Model {
public:
    explicit Model(ModelConfig cfg);
    Model(const Model& other);
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    BackboneNet& net() { return net_; }
    TaskMaskBank& masks() { return masks_; }
    TaskClassifier& classifier(std::size_t task);
    std::size_t num_tasks() const { return classifiers_.size(); }

    std::size_t active_count() const { return active_count_; }
    bool task_active(std::size_t task) const { return task < active_count_; }

    // Initializes the next task's classifier and mask embedding and marks it
    // trainable. Backbone params are initialized when task 0 activates.
    void activate_next_task(Rng& rng);

    // Fixed-order parameter list; ids are indices into it.
    const std::vector<ad::Param*>& params();
    void for_each_param(const std::function<void(ad::Param&)>& fn);

    std::vector<DenseArray> save_values();
    void load_values(const std::vector<DenseArray>& values);

    void set_all_trainable(bool trainable);

private:
    void register_params();

    ModelConfig cfg_;
    BackboneNet net_;
    TaskMaskBank masks_;
    std::vector<TaskClassifier> classifiers_;
    std::size_t active_count_{0};
    std::vector<ad::Param*> registry_;
};

}  // namespace teracon
