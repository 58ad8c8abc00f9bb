#include "teracon/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace teracon {

Method method_from_name(const std::string& name) {
    if (name == "teracon") return Method::kTeracon;
    if (name == "conure") return Method::kConure;
    if (name == "no-relation") return Method::kNoRelation;
    if (name == "only-positive") return Method::kOnlyPositive;
    if (name == "sinmo") return Method::kSinMo;
    if (name == "fineall") return Method::kFineAll;
    throw std::invalid_argument("unknown method: " + name);
}

const char* method_name(Method m) {
    switch (m) {
        case Method::kTeracon: return "teracon";
        case Method::kConure: return "conure";
        case Method::kNoRelation: return "no-relation";
        case Method::kOnlyPositive: return "only-positive";
        case Method::kSinMo: return "sinmo";
        case Method::kFineAll: return "fineall";
    }
    return "?";
}

MaskMode mask_mode_for(Method m) {
    switch (m) {
        case Method::kTeracon: return MaskMode::kRelation;
        case Method::kNoRelation: return MaskMode::kBase;
        case Method::kOnlyPositive: return MaskMode::kOnlyPositive;
        case Method::kConure:
        case Method::kSinMo:
        case Method::kFineAll: return MaskMode::kNone;
    }
    return MaskMode::kNone;
}

DenseArray IsolationMasks::coverage(int param_id, std::size_t upto,
                                    const DenseArray& like) const {
    DenseArray cover(like.shape);
    for (std::size_t t = 0; t < std::min(upto, masks.size()); ++t) {
        const auto it = masks[t].find(param_id);
        if (it == masks[t].end()) continue;
        for (std::size_t i = 0; i < cover.size(); ++i) cover.data[i] += it->second.data[i];
    }
    for (double v : cover.data)
        if (v > 1.0) throw std::runtime_error("isolation masks overlap");
    return cover;
}

void IsolationMasks::check_disjoint() const {
    if (masks.empty()) return;
    std::map<int, DenseArray> sum;
    for (const auto& per_task : masks) {
        for (const auto& [id, m] : per_task) {
            auto [it, fresh] = sum.emplace(id, m);
            if (fresh) continue;
            for (std::size_t i = 0; i < m.size(); ++i) {
                it->second.data[i] += m.data[i];
                if (it->second.data[i] > 1.0)
                    throw std::runtime_error("isolation masks overlap on param " +
                                             std::to_string(id));
            }
        }
    }
}

ad::Node* conure_effective_params(ad::Tape& tape, ad::Param& p,
                                  const DenseArray& prior_cover) {
    DenseArray keep = prior_cover;
    for (double& v : keep.data) {
        if (v > 1.0) throw std::runtime_error("conure_effective_params: mask overlap");
        v = 1.0 - v;
    }
    return tape.grad_gate(tape.leaf(p), std::move(keep));
}

DenseArray conure_prune_mask(const DenseArray& value, const DenseArray& prior_cover,
                             double keep_fraction) {
    if (!value.same_shape(prior_cover))
        throw std::invalid_argument("conure_prune_mask: shape mismatch");
    if (keep_fraction < 0.0 || keep_fraction > 1.0)
        throw std::invalid_argument("conure_prune_mask: keep fraction outside [0, 1]");
    std::vector<std::size_t> free;
    free.reserve(value.size());
    for (std::size_t i = 0; i < value.size(); ++i)
        if (prior_cover.data[i] == 0.0) free.push_back(i);
    const std::size_t keep = static_cast<std::size_t>(
        std::round(keep_fraction * static_cast<double>(free.size())));
    std::sort(free.begin(), free.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(value.data[a]), mb = std::abs(value.data[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    DenseArray mask(value.shape);
    for (std::size_t i = 0; i < std::min(keep, free.size()); ++i) mask.data[free[i]] = 1.0;
    return mask;
}

DenseArray conure_inference_params(const DenseArray& value, const IsolationMasks& masks,
                                   int param_id, std::size_t task) {
    if (task >= masks.masks.size())
        throw std::out_of_range("conure_inference_params: task not trained");
    DenseArray cover = masks.coverage(param_id, task + 1, value);
    DenseArray out = value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= cover.data[i];
    return out;
}

ConureTrainer::ConureTrainer(Model& model, const DatasetBundle& bundle, TrainConfig cfg,
                             ConureConfig conure, RecordSink sink, TimingSink timing)
    : model_(model),
      cfg_(cfg),
      conure_(std::move(conure)),
      engine_(model, bundle, [&cfg] {
          TrainConfig c = cfg;
          c.alpha = 0.0;  // isolation replaces retention
          return c;
      }(), std::move(sink), std::move(timing)) {
    if (model_.config().mask_mode != MaskMode::kNone)
        throw std::invalid_argument("ConureTrainer: model must use mask mode none");
    model_.net().for_each_param([this](ad::Param& p) {
        backbone_ids_.push_back(p.id);
    });
}

bool ConureTrainer::is_backbone(int param_id) const {
    return std::find(backbone_ids_.begin(), backbone_ids_.end(), param_id) !=
           backbone_ids_.end();
}

std::size_t ConureTrainer::free_coordinates(std::size_t task) const {
    std::size_t free = 0;
    for (ad::Param* p : const_cast<Model&>(model_).params()) {
        if (!is_backbone(p->id)) continue;
        DenseArray cover = masks_.coverage(p->id, task, p->value);
        for (double v : cover.data)
            if (v == 0.0) ++free;
    }
    return free;
}

ParamNodeHook ConureTrainer::training_hook(std::size_t task) {
    return [this, task](ad::Tape& tape, ad::Param& p) -> ad::Node* {
        if (!is_backbone(p.id)) return tape.leaf(p);
        return conure_effective_params(tape, p, masks_.coverage(p.id, task, p.value));
    };
}

ParamNodeHook ConureTrainer::inference_hook(std::size_t task) {
    return [this, task](ad::Tape& tape, ad::Param& p) -> ad::Node* {
        if (!is_backbone(p.id)) return tape.leaf(p);
        return tape.constant(conure_inference_params(p.value, masks_, p.id, task));
    };
}

ParamNodeHook ConureTrainer::finetune_hook(std::size_t task) {
    return [this, task](ad::Tape& tape, ad::Param& p) -> ad::Node* {
        if (!is_backbone(p.id)) return tape.leaf(p);
        // Forward under the pruned configuration; only the coordinates the
        // current task claimed receive gradient.
        const auto& own = masks_.masks[task].at(p.id);
        ad::Node* gated = tape.grad_gate(tape.leaf(p), own);
        return tape.mul(gated, tape.constant(masks_.coverage(p.id, task + 1, p.value)));
    };
}

void ConureTrainer::train_task(std::size_t task) {
    if (task != masks_.masks.size())
        throw std::runtime_error("ConureTrainer: tasks must be trained in order");
    if (task > 0 && free_coordinates(task) == 0) {
        warnings_.push_back("capacity exhausted before task " + std::to_string(task) +
                            ": no free coordinates remain, training classifier only");
    }

    Engine::PhaseOptions opts;
    opts.hook = training_hook(task);
    engine_.train_task(task, opts);

    // Claim coordinates for this task by magnitude over the free set.
    const double keep = task < conure_.keep_fractions.size()
                            ? conure_.keep_fractions[task]
                            : conure_.keep_fractions.back();
    std::map<int, DenseArray> claimed;
    for (ad::Param* p : model_.params()) {
        if (!is_backbone(p->id)) continue;
        DenseArray cover = masks_.coverage(p->id, task, p->value);
        if (!conure_.prune_embedding && p->id == model_.net().item_embedding.id) {
            // Alternative policy: the embedding table is claimed wholesale by
            // the first task and untouched afterwards.
            DenseArray mask(p->value.shape);
            if (task == 0) mask.fill(1.0);
            claimed.emplace(p->id, std::move(mask));
            continue;
        }
        claimed.emplace(p->id, conure_prune_mask(p->value, cover, keep));
    }
    masks_.masks.push_back(std::move(claimed));
    masks_.check_disjoint();

    if (conure_.finetune_epochs > 0) {
        Engine::PhaseOptions ft;
        ft.hook = finetune_hook(task);
        ft.epochs = conure_.finetune_epochs;
        ft.epoch_offset = static_cast<int>(task == 0 ? cfg_.epochs_first : cfg_.epochs);
        engine_.train_task(task, ft);
    }
}

double ConureTrainer::evaluate(std::size_t task, Split split) {
    return engine_.evaluate(task, split, inference_hook(task));
}

std::vector<DenseArray> ConureTrainer::inference_params(std::size_t task) {
    std::vector<DenseArray> out;
    for (ad::Param* p : model_.params()) {
        if (!is_backbone(p->id)) continue;
        out.push_back(conure_inference_params(p->value, masks_, p->id, task));
    }
    return out;
}

std::vector<std::string> ConureTrainer::take_warnings() {
    std::vector<std::string> out;
    out.swap(warnings_);
    return out;
}

}  // namespace teracon
