#include "teracon/model.hpp"

#include <stdexcept>
#include <string>

namespace teracon {

namespace {

MaskBankConfig mask_bank_config(const ModelConfig& cfg) {
    MaskBankConfig mc;
    mc.num_tasks = cfg.cardinalities.size();
    mc.slots = cfg.backbone.mask_slots();
    mc.dim = cfg.backbone.dim;
    mc.mode = cfg.mask_mode;
    mc.s_max = cfg.s_max;
    return mc;
}

}  // namespace

Model::Model(ModelConfig cfg)
    : cfg_(std::move(cfg)), net_(cfg_.backbone), masks_(mask_bank_config(cfg_)) {
    if (cfg_.cardinalities.empty())
        throw std::invalid_argument("Model: at least one task required");
    classifiers_.resize(cfg_.cardinalities.size());
    for (std::size_t t = 0; t < classifiers_.size(); ++t)
        classifiers_[t].allocate(cfg_.backbone.dim, cfg_.cardinalities[t],
                                 "clf" + std::to_string(t));
    register_params();
}

Model::Model(const Model& other)
    : cfg_(other.cfg_),
      net_(other.net_),
      masks_(other.masks_),
      classifiers_(other.classifiers_),
      active_count_(other.active_count_) {
    register_params();
}

void Model::register_params() {
    registry_.clear();
    for_each_param([this](ad::Param& p) {
        p.id = static_cast<int>(registry_.size());
        registry_.push_back(&p);
    });
}

void Model::for_each_param(const std::function<void(ad::Param&)>& fn) {
    net_.for_each_param(fn);
    for (auto& c : classifiers_) {
        fn(c.weight);
        fn(c.bias);
    }
    masks_.for_each_param(fn);
}

TaskClassifier& Model::classifier(std::size_t task) {
    if (task >= classifiers_.size())
        throw std::out_of_range("Model: task " + std::to_string(task) + " out of range");
    return classifiers_[task];
}

void Model::activate_next_task(Rng& rng) {
    if (active_count_ >= classifiers_.size())
        throw std::runtime_error("Model: all tasks already active");
    const std::size_t task = active_count_;
    if (task == 0) net_.init_params(rng);
    classifiers_[task].init_params(cfg_.backbone.dim, rng);
    masks_.activate_next(rng);
    ++active_count_;
}

const std::vector<ad::Param*>& Model::params() { return registry_; }

std::vector<DenseArray> Model::save_values() {
    std::vector<DenseArray> out;
    out.reserve(registry_.size());
    for (const ad::Param* p : registry_) out.push_back(p->value);
    return out;
}

void Model::load_values(const std::vector<DenseArray>& values) {
    if (values.size() != registry_.size())
        throw std::invalid_argument("Model: value count mismatch on load");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].same_shape(registry_[i]->value))
            throw std::invalid_argument("Model: shape mismatch for " + registry_[i]->name);
        registry_[i]->value = values[i];
    }
}

void Model::set_all_trainable(bool trainable) {
    for (ad::Param* p : registry_) p->trainable = trainable;
}

}  // namespace teracon
