#include "teracon/run.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace teracon {

namespace fs = std::filesystem;

namespace {

GeneratorConfig to_generator_config(const ExperimentConfig& cfg) {
    GeneratorConfig g;
    g.seed = cfg.seed;
    g.vocab = cfg.vocab;
    g.users = cfg.users;
    g.seq_len = cfg.seq_len;
    g.tasks = preset_tasks(cfg.tasks_preset, cfg.vocab);
    return g;
}

struct Streams {
    std::ofstream metrics;
    std::ofstream timings;
};

void emit_record(Streams& s, const MetricRecord& r) {
    s.metrics << to_json_line(r) << "\n";
    s.metrics.flush();
}

void emit_timing(Streams& s, const TimingRecord& r) {
    s.timings << to_json_line(r) << "\n";
    s.timings.flush();
}

}  // namespace

std::vector<std::size_t> task_order(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& names) {
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) order[i] = i;
    if (cfg.order == "forward") return order;
    if (cfg.order == "reversed") {
        std::reverse(order.begin() + 1, order.end());
        return order;
    }
    // Explicit comma-separated task names.
    std::vector<std::size_t> explicit_order;
    std::istringstream ss(cfg.order);
    std::string name;
    while (std::getline(ss, name, ',')) {
        const auto b = name.find_first_not_of(" \t");
        const auto e = name.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        name = name.substr(b, e - b + 1);
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ConfigError("order", "unknown task '" + name + "'");
        explicit_order.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    std::vector<std::size_t> sorted = explicit_order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() != names.size())
        throw ConfigError("order", "must list every task exactly once");
    for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != i)
            throw ConfigError("order", "must be a permutation of all task names");
    if (explicit_order.empty() || explicit_order[0] != 0)
        throw ConfigError("order", "the next-item task must come first");
    return explicit_order;
}

DatasetBundle prepare_bundle(const ExperimentConfig& cfg) {
    DatasetBundle bundle = cfg.data_path.empty() ? generate_bundle(to_generator_config(cfg))
                                                 : load_bundle(cfg.data_path);
    if (cfg.noisy_task) {
        const std::size_t pos = cfg.noisy_position < 0
                                    ? bundle.tasks.size() - 1
                                    : static_cast<std::size_t>(cfg.noisy_position);
        inject_noisy_task(bundle, cfg.noisy_fraction, cfg.noisy_classes, pos, cfg.seed);
    }
    std::vector<std::string> names;
    for (const auto& t : bundle.tasks) names.push_back(t.name);
    const std::vector<std::size_t> order = task_order(cfg, names);
    std::vector<TaskSpec> permuted;
    permuted.reserve(order.size());
    for (std::size_t idx : order) permuted.push_back(std::move(bundle.tasks[idx]));
    bundle.tasks = std::move(permuted);
    bundle.validate();
    return bundle;
}

TrainConfig to_train_config(const ExperimentConfig& cfg) {
    TrainConfig tc;
    tc.lr_first = cfg.lr_first;
    tc.lr = cfg.lr;
    tc.batch = cfg.batch;
    tc.epochs_first = cfg.epochs_first;
    tc.epochs = cfg.epochs;
    tc.patience = cfg.patience;
    tc.alpha = cfg.alpha;
    tc.c = cfg.c;
    tc.sampling_floor = cfg.sampling_floor;
    tc.mask_lr_scale = cfg.mask_lr_scale;
    tc.seed = cfg.seed;
    if (cfg.sampling == "relation") tc.sampling = SamplingMode::kRelation;
    else if (cfg.sampling == "min") tc.sampling = SamplingMode::kMin;
    else tc.sampling = SamplingMode::kFull;
    return tc;
}

ModelConfig to_model_config(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                            MaskMode mode) {
    ModelConfig mc;
    mc.backbone.vocab = bundle.vocab;
    mc.backbone.dim = cfg.dim;
    mc.backbone.blocks = cfg.blocks;
    mc.backbone.kernel_width = cfg.kernel_width;
    mc.backbone.dilations = cfg.effective_dilations();
    mc.mask_mode = mode;
    mc.s_max = cfg.s_max;
    for (const auto& t : bundle.tasks) mc.cardinalities.push_back(t.cardinality);
    return mc;
}

std::string checkpoint_path(const std::string& out_dir, std::size_t task) {
    return out_dir + "/task_" + std::to_string(task) + ".ckpt";
}

namespace {

Checkpoint make_model_checkpoint(const ExperimentConfig& cfg, Model& model,
                                 std::size_t completed,
                                 const IsolationMasks* isolation) {
    Checkpoint ckpt;
    ckpt.fingerprint = cfg.fingerprint();
    ckpt.completed_tasks = completed;
    ckpt.master_seed = cfg.seed;
    for (ad::Param* p : model.params()) ckpt.arrays.emplace_back(p->name, p->value);
    if (isolation != nullptr) {
        for (std::size_t t = 0; t < isolation->masks.size(); ++t) {
            for (const auto& [id, mask] : isolation->masks[t]) {
                ckpt.arrays.emplace_back(
                    "isolation:" + std::to_string(t) + ":" + model.params()[id]->name, mask);
            }
        }
    }
    return ckpt;
}

void restore_model(Model& model, const Checkpoint& ckpt) {
    for (ad::Param* p : model.params()) {
        const DenseArray* stored = ckpt.find(p->name);
        if (stored == nullptr)
            throw std::runtime_error("checkpoint missing array " + p->name);
        if (!stored->same_shape(p->value))
            throw std::runtime_error("checkpoint shape mismatch for " + p->name);
        p->value = *stored;
    }
}

void restore_isolation(Model& model, const Checkpoint& ckpt, IsolationMasks& isolation) {
    isolation.masks.assign(ckpt.completed_tasks, {});
    for (const auto& [name, arr] : ckpt.arrays) {
        if (name.rfind("isolation:", 0) != 0) continue;
        const std::size_t colon = name.find(':', 10);
        const std::size_t task = std::stoul(name.substr(10, colon - 10));
        const std::string pname = name.substr(colon + 1);
        int id = -1;
        for (ad::Param* p : model.params())
            if (p->name == pname) id = p->id;
        if (id < 0) throw std::runtime_error("checkpoint isolation for unknown " + pname);
        isolation.masks[task].emplace(id, arr);
    }
}

std::size_t find_resume_cursor(const ExperimentConfig& cfg, std::size_t num_tasks) {
    for (std::size_t t = num_tasks; t-- > 0;) {
        if (fs::exists(checkpoint_path(cfg.out_dir, t))) return t + 1;
    }
    throw std::runtime_error("resume requested but no checkpoint found in " + cfg.out_dir);
}

}  // namespace

RunOutput run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const Method method = method_from_name(cfg.method);
    DatasetBundle bundle = prepare_bundle(cfg);
    for (const auto& w : bundle.generation_warnings) std::cerr << "warning: " << w << "\n";
    const std::size_t num_tasks = bundle.tasks.size();

    fs::create_directories(cfg.out_dir);
    const std::string run_json_path = cfg.out_dir + "/run.json";
    std::size_t start_task = 0;
    if (cfg.resume) {
        if (method == Method::kSinMo || method == Method::kFineAll)
            throw ConfigError("resume", "per-task scratch methods do not resume");
        std::ifstream in(run_json_path);
        if (!in) throw std::runtime_error("resume: missing " + run_json_path);
        std::stringstream existing;
        existing << in.rdbuf();
        const auto stored = nlohmann::json::parse(existing.str());
        if (stored.value("fingerprint", "") != cfg.fingerprint())
            throw std::runtime_error("resume: config does not match the checkpointed run");
        start_task = find_resume_cursor(cfg, num_tasks);
    } else {
        nlohmann::json run_json = nlohmann::json::parse(cfg.to_json_string());
        run_json["fingerprint"] = cfg.fingerprint();
        std::ofstream out(run_json_path);
        out << run_json.dump(2) << "\n";
    }

    Streams streams;
    const auto mode = cfg.resume ? std::ios::app : std::ios::trunc;
    streams.metrics.open(cfg.out_dir + "/metrics.jsonl", mode);
    streams.timings.open(cfg.out_dir + "/timings.jsonl", mode);
    if (!streams.metrics || !streams.timings)
        throw std::runtime_error("cannot open record streams under " + cfg.out_dir);

    std::vector<MetricRecord> collected;
    RecordSink sink = [&](const MetricRecord& r) {
        MetricRecord full = r;
        full.method = cfg.method;
        full.order = cfg.order;
        emit_record(streams, full);
        collected.push_back(std::move(full));
    };
    TimingSink tsink = [&](const TimingRecord& r) {
        TimingRecord full = r;
        full.method = cfg.method;
        emit_timing(streams, full);
    };

    auto emit_cell = [&](std::size_t after, std::size_t on, double value) {
        MetricRecord r;
        r.task = static_cast<int>(on);
        r.task_name = bundle.tasks[on].name;
        r.epoch = -1;
        r.split = "test";
        r.metric = task_metric_name(bundle.tasks[on].metric);
        r.value = value;
        r.after_task = static_cast<int>(after);
        sink(r);
    };

    const TrainConfig tc = to_train_config(cfg);
    std::size_t completed = start_task;

    auto stop_reached = [&](std::size_t done) {
        return cfg.stop_after >= 0 && done >= static_cast<std::size_t>(cfg.stop_after);
    };

    if (method == Method::kSinMo || method == Method::kFineAll) {
        TrainConfig scratch_tc = tc;
        scratch_tc.alpha = 0.0;
        std::vector<DenseArray> base_values;
        Model base(to_model_config(cfg, bundle, MaskMode::kNone));
        if (method == Method::kFineAll) {
            Engine e(base, bundle, scratch_tc, sink, tsink);
            e.train_task(0);
            emit_cell(0, 0, e.evaluate(0, Split::kTest));
            base_values = base.save_values();
        }
        for (std::size_t i = method == Method::kFineAll ? 1 : 0; i < num_tasks; ++i) {
            Model m(to_model_config(cfg, bundle, MaskMode::kNone));
            if (method == Method::kFineAll) {
                // Activate task 0 so the pretrained values land in an
                // initialized model, then overwrite them.
                Rng act(derive_seed(cfg.seed, "activate", 0));
                m.activate_next_task(act);
                m.load_values(base_values);
            }
            Engine e(m, bundle, scratch_tc, sink, tsink);
            e.train_task(i);
            emit_cell(i, i, e.evaluate(i, Split::kTest));
            completed = i + 1;
            if (stop_reached(completed)) break;
        }
    } else if (method == Method::kConure) {
        Model model(to_model_config(cfg, bundle, MaskMode::kNone));
        ConureConfig cc;
        cc.keep_fractions = cfg.conure_keep;
        cc.finetune_epochs = cfg.conure_finetune_epochs;
        cc.prune_embedding = cfg.conure_prune_embedding;
        ConureTrainer trainer(model, bundle, tc, cc, sink, tsink);
        if (start_task > 0) {
            const Checkpoint ckpt =
                load_checkpoint(checkpoint_path(cfg.out_dir, start_task - 1));
            while (model.active_count() < start_task) {
                Rng act(derive_seed(cfg.seed, "activate", model.active_count()));
                model.activate_next_task(act);
            }
            restore_model(model, ckpt);
            restore_isolation(model, ckpt, const_cast<IsolationMasks&>(trainer.isolation()));
        }
        for (std::size_t i = start_task; i < num_tasks; ++i) {
            trainer.train_task(i);
            for (const auto& w : trainer.take_warnings()) std::cerr << "warning: " << w << "\n";
            for (std::size_t j = 0; j <= i; ++j)
                emit_cell(i, j, trainer.evaluate(j, Split::kTest));
            save_checkpoint(checkpoint_path(cfg.out_dir, i),
                            make_model_checkpoint(cfg, model, i + 1, &trainer.isolation()));
            completed = i + 1;
            if (stop_reached(completed)) break;
        }
    } else {
        Model model(to_model_config(cfg, bundle, mask_mode_for(method)));
        Engine engine(model, bundle, tc, sink, tsink);
        if (start_task > 0) {
            const Checkpoint ckpt =
                load_checkpoint(checkpoint_path(cfg.out_dir, start_task - 1));
            while (model.active_count() < start_task) {
                Rng act(derive_seed(cfg.seed, "activate", model.active_count()));
                model.activate_next_task(act);
            }
            restore_model(model, ckpt);
        }
        for (std::size_t i = start_task; i < num_tasks; ++i) {
            engine.train_task(i);
            for (std::size_t j = 0; j <= i; ++j)
                emit_cell(i, j, engine.evaluate(j, Split::kTest));
            save_checkpoint(checkpoint_path(cfg.out_dir, i),
                            make_model_checkpoint(cfg, model, i + 1, nullptr));
            completed = i + 1;
            if (stop_reached(completed)) break;
        }
    }

    RunOutput out;
    out.records = read_metric_records(cfg.out_dir + "/metrics.jsonl");
    out.matrix = build_results_matrix(out.records);
    out.completed_tasks = completed;
    return out;
}

std::vector<MetricRecord> evaluate_checkpoint(const ExperimentConfig& cfg,
                                              const std::string& ckpt_path) {
    cfg.validate();
    const Method method = method_from_name(cfg.method);
    DatasetBundle bundle = prepare_bundle(cfg);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (ckpt.fingerprint != cfg.fingerprint())
        throw std::runtime_error("evaluate: checkpoint config does not match");
    if (method == Method::kSinMo || method == Method::kFineAll)
        throw ConfigError("method", "per-task scratch methods keep no shared checkpoint");

    std::vector<MetricRecord> records;
    RecordSink sink = [&](const MetricRecord& r) {
        MetricRecord full = r;
        full.method = cfg.method;
        full.order = cfg.order;
        records.push_back(std::move(full));
    };

    const TrainConfig tc = to_train_config(cfg);
    const MaskMode mode = method == Method::kConure ? MaskMode::kNone : mask_mode_for(method);
    Model model(to_model_config(cfg, bundle, mode));
    while (model.active_count() < ckpt.completed_tasks) {
        Rng act(derive_seed(cfg.seed, "activate", model.active_count()));
        model.activate_next_task(act);
    }
    restore_model(model, ckpt);

    auto emit_cell = [&](std::size_t on, double value) {
        MetricRecord r;
        r.task = static_cast<int>(on);
        r.task_name = bundle.tasks[on].name;
        r.epoch = -1;
        r.split = "test";
        r.metric = task_metric_name(bundle.tasks[on].metric);
        r.value = value;
        r.after_task = static_cast<int>(ckpt.completed_tasks - 1);
        sink(r);
    };

    if (method == Method::kConure) {
        ConureConfig cc;
        cc.keep_fractions = cfg.conure_keep;
        cc.finetune_epochs = cfg.conure_finetune_epochs;
        cc.prune_embedding = cfg.conure_prune_embedding;
        ConureTrainer trainer(model, bundle, tc, cc);
        restore_isolation(model, ckpt, const_cast<IsolationMasks&>(trainer.isolation()));
        for (std::size_t j = 0; j < ckpt.completed_tasks; ++j)
            emit_cell(j, trainer.evaluate(j, Split::kTest));
    } else {
        Engine engine(model, bundle, tc, sink);
        for (std::size_t j = 0; j < ckpt.completed_tasks; ++j)
            emit_cell(j, engine.evaluate(j, Split::kTest));
    }
    return records;
}

}  // namespace teracon
