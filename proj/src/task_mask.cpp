#include "teracon/task_mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace teracon {

namespace {

// Matches the graph sigmoid: clamped into the open interval so saturated
// mask entries never round to exactly 0 or 1.
double stable_sigmoid(double x) {
    static const double kHi = std::nextafter(1.0, 0.0);
    static const double kLo = std::numeric_limits<double>::denorm_min();
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    return std::min(std::max(v, kLo), kHi);
}

}  // namespace

const char* mask_mode_name(MaskMode m) {
    switch (m) {
        case MaskMode::kNone: return "none";
        case MaskMode::kFixedHalf: return "fixed-half";
        case MaskMode::kBase: return "base";
        case MaskMode::kOnlyPositive: return "only-positive";
        case MaskMode::kRelation: return "relation";
    }
    return "?";
}

double anneal_scale(long batch_index, long total_batches, double s_max) {
    if (s_max <= 1.0) throw std::invalid_argument("anneal_scale: s_max must exceed 1");
    if (batch_index < 1 || batch_index > total_batches)
        throw std::out_of_range("anneal_scale: batch index " + std::to_string(batch_index) +
                                " outside [1, " + std::to_string(total_batches) + "]");
    if (total_batches == 1 || batch_index == total_batches) return s_max;
    if (batch_index == 1) return 1.0 / s_max;
    const double lo = 1.0 / s_max;
    const double frac = static_cast<double>(batch_index - 1) /
                        static_cast<double>(total_batches - 1);
    return lo + (s_max - lo) * frac;
}

std::vector<std::size_t> aggregate_set(std::size_t target, std::size_t current) {
    if (target < 1 || target > current)
        throw std::out_of_range("aggregate_set: need 1 <= target <= current, got target=" +
                                std::to_string(target) + " current=" + std::to_string(current));
    std::vector<std::size_t> out;
    out.reserve(current - 1);
    for (std::size_t r = 1; r <= current; ++r)
        if (r != target) out.push_back(r);
    return out;
}

DenseArray base_mask_value(const DenseArray& embedding, double s) {
    if (s <= 0.0) throw std::invalid_argument("base_mask_value: s must be positive");
    DenseArray out = embedding;
    for (double& v : out.data) v = stable_sigmoid(s * v);
    return out;
}

DenseArray opposite_pair_value(const DenseArray& embedding, double s) {
    if (s <= 0.0) throw std::invalid_argument("opposite_pair_value: s must be positive");
    const std::size_t f = embedding.size();
    DenseArray out({2, f});
    for (std::size_t i = 0; i < f; ++i) {
        out.at(0, i) = std::tanh(s * embedding.data[i]);
        out.at(1, i) = std::tanh(-s * embedding.data[i]);
    }
    return out;
}

TaskMaskBank::TaskMaskBank(MaskBankConfig cfg) : cfg_(cfg) {
    if (cfg_.mode == MaskMode::kNone || cfg_.mode == MaskMode::kFixedHalf) return;
    if (cfg_.num_tasks == 0 || cfg_.slots == 0 || cfg_.dim == 0)
        throw std::invalid_argument("TaskMaskBank: num_tasks, slots and dim must be positive");

    const std::size_t rows_per_other = cfg_.mode == MaskMode::kOnlyPositive ? 1 : 2;
    mixer_in_ = (rows_per_other * (cfg_.num_tasks - 1) + 1) * cfg_.dim;

    const std::size_t total = cfg_.num_tasks * cfg_.slots;
    embeddings_.resize(total);
    for (std::size_t t = 0; t < cfg_.num_tasks; ++t) {
        for (std::size_t s = 0; s < cfg_.slots; ++s) {
            auto& e = embeddings_[t * cfg_.slots + s];
            e.name = "task" + std::to_string(t) + ".emb" + std::to_string(s);
            e.value = DenseArray({cfg_.dim});
        }
    }
    if (cfg_.mode != MaskMode::kBase) {
        mixer_w_.resize(total);
        mixer_b_.resize(total);
        for (std::size_t t = 0; t < cfg_.num_tasks; ++t) {
            for (std::size_t s = 0; s < cfg_.slots; ++s) {
                auto& w = mixer_w_[t * cfg_.slots + s];
                w.name = "task" + std::to_string(t) + ".mixer_w" + std::to_string(s);
                w.value = DenseArray({mixer_in_, cfg_.dim});
                // Pass-through of the task's own tanh block; cross-task rows
                // start at zero so freshly seen tasks contribute nothing.
                for (std::size_t c = 0; c < cfg_.dim; ++c) w.value.at(c, c) = 1.0;
                auto& b = mixer_b_[t * cfg_.slots + s];
                b.name = "task" + std::to_string(t) + ".mixer_b" + std::to_string(s);
                b.value = DenseArray({cfg_.dim});
            }
        }
    }
}

bool TaskMaskBank::has_params() const {
    return cfg_.mode != MaskMode::kNone && cfg_.mode != MaskMode::kFixedHalf;
}

void TaskMaskBank::for_each_param(const std::function<void(ad::Param&)>& fn) {
    for (auto& p : embeddings_) fn(p);
    for (auto& p : mixer_w_) fn(p);
    for (auto& p : mixer_b_) fn(p);
}

void TaskMaskBank::activate_next(Rng& rng) {
    if (cfg_.mode == MaskMode::kNone || cfg_.mode == MaskMode::kFixedHalf) {
        ++active_count_;
        return;
    }
    if (active_count_ >= cfg_.num_tasks)
        throw std::runtime_error("TaskMaskBank: all configured tasks already active");
    const std::size_t task = active_count_;
    if (task > 0) {
        // The first task keeps zero embeddings: it trains without masks and
        // its masks must therefore evaluate to exactly 0.5 at any sharpness
        // when it is later referenced as a previous task.
        for (std::size_t s = 0; s < cfg_.slots; ++s) {
            auto& e = embeddings_[task * cfg_.slots + s];
            for (double& v : e.value.data) v = rng.uniform(-1.0, 1.0) / cfg_.s_max;
        }
    }
    ++active_count_;
}

void TaskMaskBank::check_task_slot(std::size_t task, std::size_t slot) const {
    if (task >= cfg_.num_tasks || slot >= cfg_.slots)
        throw std::out_of_range("TaskMaskBank: task/slot out of range");
}

ad::Param& TaskMaskBank::embedding(std::size_t task, std::size_t slot) {
    check_task_slot(task, slot);
    return embeddings_[task * cfg_.slots + slot];
}

ad::Param& TaskMaskBank::mixer_weight(std::size_t task, std::size_t slot) {
    check_task_slot(task, slot);
    if (mixer_w_.empty()) throw std::runtime_error("TaskMaskBank: no mixers in this mode");
    return mixer_w_[task * cfg_.slots + slot];
}

ad::Param& TaskMaskBank::mixer_bias(std::size_t task, std::size_t slot) {
    check_task_slot(task, slot);
    if (mixer_b_.empty()) throw std::runtime_error("TaskMaskBank: no mixers in this mode");
    return mixer_b_[task * cfg_.slots + slot];
}

ad::Node* TaskMaskBank::mask_node(ad::Tape& tape, std::size_t task, std::size_t slot,
                                  double s) {
    if (cfg_.mode == MaskMode::kNone)
        throw std::runtime_error("TaskMaskBank: masks disabled in this mode");
    if (cfg_.mode == MaskMode::kFixedHalf)
        return tape.constant(DenseArray({cfg_.dim}, 0.5));
    check_task_slot(task, slot);
    if (!is_active(task))
        throw std::runtime_error("TaskMaskBank: task " + std::to_string(task) +
                                 " has no allocated mask parameters yet");
    ad::Node* own = tape.leaf(embedding(task, slot));
    if (cfg_.mode == MaskMode::kBase)
        return tape.sigmoid(tape.scalar_mul(own, s));

    std::vector<ad::Node*> parts;
    parts.push_back(tape.tanh(tape.scalar_mul(own, s)));
    for (std::size_t r = 0; r < cfg_.num_tasks; ++r) {
        if (r == task) continue;
        if (is_active(r)) {
            ad::Node* er = tape.leaf(embedding(r, slot));
            parts.push_back(tape.tanh(tape.scalar_mul(er, s)));
            if (cfg_.mode == MaskMode::kRelation)
                parts.push_back(tape.tanh(tape.scalar_mul(er, -s)));
        } else {
            parts.push_back(tape.constant(DenseArray({cfg_.dim})));
            if (cfg_.mode == MaskMode::kRelation)
                parts.push_back(tape.constant(DenseArray({cfg_.dim})));
        }
    }
    ad::Node* mixed = tape.affine(tape.concat(parts), tape.leaf(mixer_weight(task, slot)),
                                  tape.leaf(mixer_bias(task, slot)));
    return tape.sigmoid(tape.scalar_mul(mixed, s));
}

std::vector<ad::Node*> TaskMaskBank::mask_nodes(ad::Tape& tape, std::size_t task, double s) {
    if (cfg_.mode == MaskMode::kNone) return {};
    std::vector<ad::Node*> out(cfg_.slots);
    for (std::size_t slot = 0; slot < cfg_.slots; ++slot)
        out[slot] = mask_node(tape, task, slot, s);
    return out;
}

DenseArray TaskMaskBank::mask_value(std::size_t task, std::size_t slot, double s) {
    ad::Tape tape;
    ad::Node* m = mask_node(tape, task, slot, s);
    return tape.forward(m);
}

std::vector<DenseArray> TaskMaskBank::snapshot(std::size_t task) {
    if (cfg_.mode == MaskMode::kNone)
        throw std::runtime_error("TaskMaskBank: no masks to snapshot in this mode");
    if (cfg_.mode != MaskMode::kFixedHalf && !is_active(task))
        throw std::runtime_error("TaskMaskBank: cannot snapshot untrained task " +
                                 std::to_string(task));
    std::vector<DenseArray> out(cfg_.slots);
    for (std::size_t slot = 0; slot < cfg_.slots; ++slot)
        out[slot] = cfg_.mode == MaskMode::kFixedHalf
                        ? DenseArray({cfg_.dim}, 0.5)
                        : mask_value(task, slot, cfg_.s_max);
    return out;
}

}  // namespace teracon
