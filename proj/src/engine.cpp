#include "teracon/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "teracon/metrics.hpp"

namespace teracon {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

const char* sampling_mode_name(SamplingMode m) {
    switch (m) {
        case SamplingMode::kRelation: return "relation";
        case SamplingMode::kMin: return "min";
        case SamplingMode::kFull: return "full";
    }
    return "?";
}

std::size_t RetentionPlan::total_sampled_users() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.users.size();
    return n;
}

FrozenTeacher::FrozenTeacher(Model& current) : model(current) {
    model.set_all_trainable(false);
    task_count = model.active_count();
    if (model.masks().config().mode != MaskMode::kNone) {
        frozen_masks.resize(task_count);
        for (std::size_t j = 0; j < task_count; ++j)
            frozen_masks[j] = model.masks().snapshot(j);
    }
}

Engine::Engine(Model& model, const DatasetBundle& bundle, TrainConfig cfg,
               RecordSink sink, TimingSink timing)
    : model_(model),
      bundle_(bundle),
      cfg_(cfg),
      sink_(std::move(sink)),
      timing_(std::move(timing)),
      hook_(default_param_hook()) {
    if (bundle_.tasks.size() != model_.num_tasks())
        throw std::invalid_argument("Engine: model/bundle task count mismatch");
    if (bundle_.users.empty()) throw std::invalid_argument("Engine: empty dataset");
    model_.masks().for_each_param(
        [this](ad::Param& p) { mask_param_ids_.insert(p.id); });
}

bool Engine::masked(std::size_t task) const {
    const MaskMode mode = model_.config().mask_mode;
    if (mode == MaskMode::kNone) return false;
    // The first task trains and is first evaluated without masks; its mask
    // comes into existence when a later task starts.
    if (task == 0 && model_.active_count() <= 1) return false;
    return true;
}

std::vector<int> Engine::collect_items(std::span<const std::size_t> users) const {
    std::vector<int> items;
    items.reserve(users.size() * bundle_.seq_len);
    for (std::size_t u : users) {
        const auto& seq = bundle_.users[u].items;
        items.insert(items.end(), seq.begin(), seq.end());
    }
    return items;
}

std::vector<ad::Node*> Engine::mask_nodes_for(ad::Tape& tape, std::size_t task, double s) {
    if (!masked(task)) return {};
    return model_.masks().mask_nodes(tape, task, s);
}

ad::Node* Engine::task_loss(ad::Tape& tape, std::size_t task,
                            std::span<const std::size_t> users,
                            std::span<ad::Node* const> masks, const ParamNodeHook& hook) {
    const TaskSpec& spec = bundle_.tasks[task];
    const std::size_t n = bundle_.seq_len;
    std::vector<int> items = collect_items(users);
    ad::Node* enc = encode_sequences(tape, model_.net(), items, n, masks, hook);
    if (spec.kind == TaskKind::kNextItem) {
        ad::Node* logits = autoregressive_logits(tape, enc, n, users.size(),
                                                 model_.classifier(task), hook);
        return tape.softmax_xent_mean(logits, autoregressive_targets(items, n));
    }
    ad::Node* logits =
        classify_last_rows(tape, enc, n, users.size(), model_.classifier(task), hook);
    std::vector<int> labels(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
        labels[i] = bundle_.label_of(task, users[i]);
        if (labels[i] < 0)
            throw std::runtime_error("Engine: user outside roster of task " + spec.name);
    }
    return tape.softmax_xent_mean(logits, std::move(labels));
}

ad::Node* Engine::build_objective(ad::Tape& tape, std::size_t task,
                                  std::span<const std::size_t> users, double s,
                                  std::span<const RetentionBatch> retention, double alpha) {
    std::vector<ad::Node*> masks = mask_nodes_for(tape, task, s);
    ad::Node* loss = task_loss(tape, task, users, masks, hook_);
    if (retention.empty() || alpha <= 0.0) return loss;

    ad::Node* kr = nullptr;
    for (const auto& rb : retention) {
        if (rb.users.empty()) continue;
        // Previous-task predictions are matched under inference-mode masks:
        // the retention target is the deployed function, and the annealed
        // scale would let saturated coordinates drift invisibly.
        std::vector<ad::Node*> masks_j =
            mask_nodes_for(tape, rb.task, model_.config().s_max);
        std::vector<int> items = collect_items(rb.users);
        ad::Node* enc =
            encode_sequences(tape, model_.net(), items, bundle_.seq_len, masks_j, hook_);
        ad::Node* pred = classify_last_rows(tape, enc, bundle_.seq_len, rb.users.size(),
                                            model_.classifier(rb.task), hook_);
        ad::Node* term = tape.mse_mean(pred, tape.constant(rb.pseudo));
        term = tape.scalar_mul(term, rb.weight);
        kr = kr == nullptr ? term : tape.add(kr, term);
    }
    if (kr == nullptr) return loss;
    return tape.add(loss, tape.scalar_mul(kr, alpha));
}

double Engine::sampling_ratio(const std::vector<DenseArray>& current,
                              const std::vector<DenseArray>& frozen, double c) {
    if (c <= 0.0) throw std::invalid_argument("sampling_ratio: c must be positive");
    if (current.size() != frozen.size() || current.empty())
        throw std::invalid_argument("sampling_ratio: slot structure mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < current.size(); ++k) {
        const DenseArray& a = current[k];
        const DenseArray& b = frozen[k];
        if (!a.same_shape(b))
            throw std::invalid_argument("sampling_ratio: slot shape mismatch");
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a.data[i] * b.data[i];
            na += a.data[i] * a.data[i];
            nb += b.data[i] * b.data[i];
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        const double cosine = denom > 0.0 ? dot / denom : 0.0;
        acc += stable_sigmoid(c * cosine);
    }
    return 1.0 - acc / static_cast<double>(current.size());
}

std::vector<std::size_t> Engine::sample_users(const std::vector<std::size_t>& roster,
                                              double rho, Rng& rng) {
    if (rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("sample_users: rho outside [0, 1]");
    if (roster.empty()) return {};
    std::size_t k = static_cast<std::size_t>(
        std::ceil(rho * static_cast<double>(roster.size())));
    if (k == 0) k = 1;  // keep the retention term well-defined
    k = std::min(k, roster.size());
    std::vector<std::size_t> pool = roster;
    rng.shuffle(pool);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

DenseArray Engine::generate_pseudo_labels(FrozenTeacher& teacher, std::size_t task_j,
                                          const std::vector<std::size_t>& users) {
    if (task_j >= teacher.task_count)
        throw std::invalid_argument("generate_pseudo_labels: task was not trained");
    const std::size_t n = bundle_.seq_len;
    const std::size_t card = teacher.model.classifier(task_j).cardinality;
    DenseArray out({users.size(), card});
    const ParamNodeHook hook = default_param_hook();
    std::size_t done = 0;
    while (done < users.size()) {
        const std::size_t take = std::min(cfg_.batch, users.size() - done);
        std::span<const std::size_t> chunk(users.data() + done, take);
        std::vector<int> items = collect_items(chunk);
        ad::Tape tape;
        std::vector<ad::Node*> masks;
        if (!teacher.frozen_masks.empty()) {
            masks.reserve(teacher.frozen_masks[task_j].size());
            for (const auto& m : teacher.frozen_masks[task_j])
                masks.push_back(tape.constant(m));
        }
        ad::Node* enc = encode_sequences(tape, teacher.model.net(), items, n, masks, hook);
        ad::Node* logits = classify_last_rows(tape, enc, n, take,
                                              teacher.model.classifier(task_j), hook);
        const DenseArray& v = tape.forward(logits);
        for (std::size_t i = 0; i < take; ++i)
            std::copy(v.row(i), v.row(i) + card, out.row(done + i));
        done += take;
    }
    return out;
}

RetentionPlan Engine::make_retention_plan(std::size_t task, FrozenTeacher& teacher,
                                          Rng& rng) {
    if (task == 0) throw std::invalid_argument("make_retention_plan: no previous tasks");
    RetentionPlan plan;
    const std::vector<std::size_t> train_users = bundle_.split_users(task, Split::kTrain);

    std::vector<double> rho(teacher.task_count, 1.0);
    if (!teacher.frozen_masks.empty() && cfg_.sampling != SamplingMode::kFull) {
        std::vector<DenseArray> current(model_.config().backbone.mask_slots());
        for (std::size_t slot = 0; slot < current.size(); ++slot)
            current[slot] = model_.masks().mask_value(task, slot, model_.config().s_max);
        for (std::size_t j = 0; j < teacher.task_count; ++j)
            rho[j] = sampling_ratio(current, teacher.frozen_masks[j], cfg_.c);
        if (cfg_.sampling == SamplingMode::kMin) {
            const double lo = *std::min_element(rho.begin(), rho.end());
            std::fill(rho.begin(), rho.end(), lo);
        }
    }
    double rho_sum = 0.0;
    for (std::size_t j = 0; j < teacher.task_count; ++j) rho_sum += rho[j];

    for (std::size_t j = 0; j < teacher.task_count; ++j) {
        RetentionPlan::Entry e;
        e.task = j;
        e.rho = rho[j];
        e.weight = rho[j] / rho_sum;  // loss weights always use the raw rates
        const double rho_eff = std::min(1.0, std::max(rho[j], cfg_.sampling_floor));
        e.users = sample_users(train_users, rho_eff, rng);
        e.pseudo = generate_pseudo_labels(teacher, j, e.users);
        plan.entries.push_back(std::move(e));
    }
    return plan;
}

void Engine::reset_optimizer() {
    states_.clear();
    states_.resize(model_.params().size());
}

void Engine::apply_updates(ad::Tape& tape, double lr) {
    const auto grads = tape.param_grads();
    for (ad::Param* p : model_.params()) {
        const auto it = grads.find(p->id);
        if (it == grads.end()) continue;
        const double rate =
            mask_param_ids_.count(p->id) ? lr * cfg_.mask_lr_scale : lr;
        adam_update(p->value, *it->second, states_[static_cast<std::size_t>(p->id)], rate);
    }
}

void Engine::train_task(std::size_t task, const PhaseOptions& opts) {
    if (task >= model_.num_tasks())
        throw std::out_of_range("train_task: task index out of range");
    const bool fresh = task >= model_.active_count();
    if (fresh) {
        // Snapshot the teacher before the new task's parameters exist.
        if (task > 0 && cfg_.alpha > 0.0) {
            if (model_.active_count() == 0)
                throw std::runtime_error("train_task: teacher missing, no prior task trained");
            teacher_ = std::make_unique<FrozenTeacher>(model_);
        }
        while (model_.active_count() <= task) {
            Rng act(derive_seed(cfg_.seed, "activate", model_.active_count()));
            model_.activate_next_task(act);
        }
    }
    const TaskSpec& spec = bundle_.tasks[task];
    const std::vector<std::size_t> train_users = bundle_.split_users(task, Split::kTrain);
    if (train_users.empty())
        throw std::runtime_error("train_task: empty train split for task " + spec.name);

    const ParamNodeHook saved_hook = hook_;
    if (opts.hook) hook_ = opts.hook;

    Rng rng(derive_seed(cfg_.seed, "train-task", task));
    reset_optimizer();
    const double lr = opts.lr.value_or(task == 0 ? cfg_.lr_first : cfg_.lr);
    const std::size_t max_epochs =
        opts.epochs.value_or(task == 0 ? cfg_.epochs_first : cfg_.epochs);
    const std::size_t total_batches = ceil_div(train_users.size(), cfg_.batch);
    const bool retention = task > 0 && cfg_.alpha > 0.0 && teacher_ != nullptr;

    double best = -std::numeric_limits<double>::infinity();
    std::vector<DenseArray> best_values;
    std::size_t patience_left = cfg_.patience;

    for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const int epoch_out = static_cast<int>(epoch) + opts.epoch_offset;

        RetentionPlan plan;
        if (retention) {
            plan = make_retention_plan(task, *teacher_, rng);
            MetricRecord r;
            r.task = static_cast<int>(task);
            r.task_name = spec.name;
            r.epoch = epoch_out;
            r.split = "train";
            r.metric = "pseudo_label_users";
            r.value = static_cast<double>(plan.total_sampled_users());
            emit(r);
        }

        std::vector<std::size_t> order = train_users;
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t b = 1; b <= total_batches; ++b) {
            const double s = anneal_scale(static_cast<long>(b),
                                          static_cast<long>(total_batches),
                                          model_.config().s_max);
            const std::size_t lo = (b - 1) * cfg_.batch;
            const std::size_t hi = std::min(lo + cfg_.batch, order.size());
            std::span<const std::size_t> batch_users(order.data() + lo, hi - lo);

            std::vector<RetentionBatch> rbatches;
            for (const auto& e : plan.entries) {
                if (e.users.empty()) continue;
                RetentionBatch rb;
                rb.task = e.task;
                rb.weight = e.weight;
                // Cyclic chunking: every batch carries a slice of each
                // previous task's sampled users, wrapping when the sample is
                // smaller than the batch count.
                const std::size_t q = ceil_div(e.users.size(), total_batches);
                const std::size_t card = e.pseudo.cols();
                rb.pseudo = DenseArray({q, card});
                rb.users.resize(q);
                for (std::size_t i = 0; i < q; ++i) {
                    const std::size_t src = ((b - 1) * q + i) % e.users.size();
                    rb.users[i] = e.users[src];
                    std::copy(e.pseudo.row(src), e.pseudo.row(src) + card,
                              rb.pseudo.row(i));
                }
                rbatches.push_back(std::move(rb));
            }

            ad::Tape tape;
            ad::Node* loss =
                build_objective(tape, task, batch_users, s, rbatches, cfg_.alpha);
            tape.forward(loss);
            tape.backward(loss);
            apply_updates(tape, lr);
            loss_sum += loss->value.data[0];
        }

        {
            MetricRecord r;
            r.task = static_cast<int>(task);
            r.task_name = spec.name;
            r.epoch = epoch_out;
            r.split = "train";
            r.metric = "loss";
            r.value = loss_sum / static_cast<double>(total_batches);
            emit(r);
        }

        const double val = evaluate(task, Split::kValid, hook_);
        {
            MetricRecord r;
            r.task = static_cast<int>(task);
            r.task_name = spec.name;
            r.epoch = epoch_out;
            r.split = "valid";
            r.metric = task_metric_name(spec.metric);
            r.value = val;
            emit(r);
        }

        if (timing_) {
            TimingRecord t;
            t.task = static_cast<int>(task);
            t.epoch = epoch_out;
            t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      epoch_start)
                            .count();
            timing_(t);
        }

        if (opts.restore_best) {
            if (val > best) {
                best = val;
                best_values = model_.save_values();
                patience_left = cfg_.patience;
            } else if (--patience_left == 0) {
                break;
            }
        }
    }
    if (opts.restore_best && !best_values.empty()) model_.load_values(best_values);
    hook_ = saved_hook;
}

double Engine::evaluate(std::size_t task, Split split) {
    return evaluate(task, split, hook_);
}

double Engine::evaluate(std::size_t task, Split split, const ParamNodeHook& hook) {
    if (task >= model_.active_count())
        throw std::runtime_error("evaluate: task not trained yet");
    const TaskSpec& spec = bundle_.tasks[task];
    const std::size_t n = bundle_.seq_len;
    const std::vector<std::size_t> users = bundle_.split_users(task, split);
    if (users.empty()) throw std::runtime_error("evaluate: empty split");

    double mrr_sum = 0.0;
    std::vector<int> predictions, labels;
    std::size_t done = 0;
    while (done < users.size()) {
        const std::size_t take = std::min(cfg_.batch, users.size() - done);
        std::span<const std::size_t> chunk(users.data() + done, take);
        std::vector<int> items = collect_items(chunk);
        ad::Tape tape;
        std::vector<ad::Node*> masks = mask_nodes_for(tape, task, model_.config().s_max);
        ad::Node* enc = encode_sequences(tape, model_.net(), items, n, masks, hook);
        ad::Node* logits;
        if (spec.kind == TaskKind::kNextItem) {
            // Score the final held-out position: the row that has seen items
            // 0..n-2 predicts the known item at n-1.
            std::vector<std::size_t> rows(take);
            for (std::size_t i = 0; i < take; ++i) rows[i] = i * n + n - 2;
            logits = tape.select_rows(enc, std::move(rows));
        } else {
            std::vector<std::size_t> rows(take);
            for (std::size_t i = 0; i < take; ++i) rows[i] = i * n + n - 1;
            logits = tape.select_rows(enc, std::move(rows));
        }
        logits = tape.matmul(logits, hook(tape, model_.classifier(task).weight));
        logits = tape.add_row_broadcast(logits, hook(tape, model_.classifier(task).bias));
        const DenseArray& v = tape.forward(logits);

        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t u = chunk[i];
            const int truth = spec.kind == TaskKind::kNextItem
                                  ? bundle_.users[u].items[n - 1]
                                  : bundle_.label_of(task, u);
            std::span<const double> row(v.row(i), v.cols());
            if (spec.metric == TaskMetric::kMrr5) {
                mrr_sum += mrr_at_k(row, truth, 5);
            } else {
                int arg = 0;
                for (std::size_t j = 1; j < row.size(); ++j)
                    if (row[j] > row[arg]) arg = static_cast<int>(j);
                predictions.push_back(arg);
                labels.push_back(truth);
            }
        }
        done += take;
    }
    if (spec.metric == TaskMetric::kMrr5)
        return mrr_sum / static_cast<double>(users.size());
    return accuracy(predictions, labels);
}

std::vector<double> Engine::infer_logits(std::size_t task, std::size_t user) {
    if (task >= model_.active_count())
        throw std::runtime_error("infer_logits: task not trained yet");
    const std::size_t n = bundle_.seq_len;
    std::vector<std::size_t> one{user};
    std::vector<int> items = collect_items(one);
    ad::Tape tape;
    std::vector<ad::Node*> masks = mask_nodes_for(tape, task, model_.config().s_max);
    ad::Node* enc = encode_sequences(tape, model_.net(), items, n, masks, hook_);
    ad::Node* logits =
        classify_last_rows(tape, enc, n, 1, model_.classifier(task), hook_);
    const DenseArray& v = tape.forward(logits);
    return v.data;
}

}  // namespace teracon
