#include "teracon/cli.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "teracon/report.hpp"
#include "teracon/run.hpp"

namespace teracon {

namespace {

// Options parse into a scratch config; the file config (when given) loads
// first and every flag the user actually passed overlays it.
struct Overlay {
    CLI::Option* option;
    std::function<void(ExperimentConfig&, const ExperimentConfig&)> apply;
};

class OptionSet {
public:
    explicit OptionSet(ExperimentConfig& scratch) : scratch_(scratch) {}

    template <typename T>
    void add(CLI::App* cmd, const std::string& flag, T ExperimentConfig::* field,
             const std::string& help) {
        CLI::Option* opt = cmd->add_option(flag, scratch_.*field, help);
        overlays_.push_back({opt, [field](ExperimentConfig& dst, const ExperimentConfig& src) {
                                 dst.*field = src.*field;
                             }});
    }

    void add_flag(CLI::App* cmd, const std::string& flag, bool ExperimentConfig::* field,
                  const std::string& help) {
        CLI::Option* opt = cmd->add_flag(flag, scratch_.*field, help);
        overlays_.push_back({opt, [field](ExperimentConfig& dst, const ExperimentConfig& src) {
                                 dst.*field = src.*field;
                             }});
    }

    void apply(ExperimentConfig& cfg) const {
        for (const auto& o : overlays_)
            if (o.option->count() > 0) o.apply(cfg, scratch_);
    }

private:
    ExperimentConfig& scratch_;
    std::vector<Overlay> overlays_;
};

void add_dataset_options(CLI::App* cmd, OptionSet& opts) {
    opts.add(cmd, "--seed", &ExperimentConfig::seed, "master seed");
    opts.add(cmd, "--users", &ExperimentConfig::users, "user count for generated data");
    opts.add(cmd, "--vocab", &ExperimentConfig::vocab, "item vocabulary size");
    opts.add(cmd, "--seqlen", &ExperimentConfig::seq_len, "behavior sequence length");
    opts.add(cmd, "--tasks", &ExperimentConfig::tasks_preset,
             "task preset (ttl-like | 3task)");
    opts.add_flag(cmd, "--noisy-task", &ExperimentConfig::noisy_task,
                  "insert the random-label task");
}

void add_run_options(CLI::App* cmd, OptionSet& opts) {
    opts.add(cmd, "--data", &ExperimentConfig::data_path,
             "bundle file (generated when omitted)");
    opts.add(cmd, "--method", &ExperimentConfig::method,
             "teracon | conure | no-relation | only-positive | sinmo | fineall");
    opts.add(cmd, "--order", &ExperimentConfig::order,
             "forward | reversed | comma-separated task names");
    opts.add(cmd, "--sampling", &ExperimentConfig::sampling, "relation | min | full");
    opts.add(cmd, "--alpha", &ExperimentConfig::alpha, "knowledge-retention weight");
    opts.add(cmd, "--out", &ExperimentConfig::out_dir, "run output directory");
    opts.add(cmd, "--epochs", &ExperimentConfig::epochs, "max epochs per task");
    opts.add(cmd, "--epochs-first", &ExperimentConfig::epochs_first,
             "max epochs for the first task");
    opts.add(cmd, "--batch", &ExperimentConfig::batch, "batch size");
    opts.add(cmd, "--dim", &ExperimentConfig::dim, "feature width");
    opts.add(cmd, "--blocks", &ExperimentConfig::blocks, "residual blocks");
    opts.add(cmd, "--lr", &ExperimentConfig::lr, "learning rate after the first task");
    opts.add(cmd, "--lr-first", &ExperimentConfig::lr_first,
             "learning rate for the first task");
    opts.add(cmd, "--patience", &ExperimentConfig::patience,
             "validation evaluations without improvement before stopping");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Continual user-representation learning workbench"};
    app.require_subcommand(1);

    ExperimentConfig scratch;
    OptionSet opts(scratch);
    std::string config_path;
    std::string data_out = "bundle.txt";
    std::string checkpoint;
    std::vector<std::string> report_dirs;
    std::string report_out;

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset bundle");
    generate->add_option("--config", config_path, "key = value config file");
    add_dataset_options(generate, opts);
    generate->add_option("--out", data_out, "output bundle path");

    CLI::App* train = app.add_subcommand("train", "train a method over the task sequence");
    train->add_option("--config", config_path, "key = value config file");
    add_dataset_options(train, opts);
    add_run_options(train, opts);
    opts.add(train, "--stop-after", &ExperimentConfig::stop_after,
             "stop after N completed tasks");
    opts.add_flag(train, "--resume", &ExperimentConfig::resume,
                  "resume from the newest checkpoint in --out");

    CLI::App* evaluate = app.add_subcommand("evaluate", "re-evaluate a checkpointed run");
    evaluate->add_option("--config", config_path, "key = value config file");
    add_dataset_options(evaluate, opts);
    add_run_options(evaluate, opts);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    CLI::App* report = app.add_subcommand("report", "render comparison tables");
    report->add_option("dirs", report_dirs, "completed run directories")->required();
    report->add_option("--out", report_out, "write the report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = parse_config_file(config_path);
        opts.apply(cfg);

        if (generate->parsed()) {
            cfg.validate();
            GeneratorConfig g;
            g.seed = cfg.seed;
            g.vocab = cfg.vocab;
            g.users = cfg.users;
            g.seq_len = cfg.seq_len;
            g.tasks = preset_tasks(cfg.tasks_preset, cfg.vocab);
            DatasetBundle bundle = generate_bundle(g);
            if (cfg.noisy_task)
                inject_noisy_task(bundle, cfg.noisy_fraction, cfg.noisy_classes,
                                  bundle.tasks.size() - 1, cfg.seed);
            for (const auto& w : bundle.generation_warnings)
                std::cerr << "warning: " << w << "\n";
            save_bundle(bundle, data_out);
            std::cout << "wrote " << data_out << " (" << bundle.users.size() << " users, "
                      << bundle.tasks.size() << " tasks)\n";
            return 0;
        }
        if (train->parsed()) {
            const RunOutput out = run_experiment(cfg);
            std::cout << "completed " << out.completed_tasks << " tasks; records in "
                      << cfg.out_dir << "/metrics.jsonl\n";
            for (std::size_t t = 0; t < out.matrix.num_tasks; ++t) {
                const auto v = out.matrix.final_score(t);
                if (v.has_value())
                    std::cout << "  " << out.matrix.task_names[t] << " "
                              << out.matrix.metrics[t] << " = " << *v << "\n";
            }
            return 0;
        }
        if (evaluate->parsed()) {
            for (const auto& r : evaluate_checkpoint(cfg, checkpoint))
                std::cout << to_json_line(r) << "\n";
            return 0;
        }
        if (report->parsed()) {
            const std::string text = render_report(report_dirs);
            if (report_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream out(report_out);
                out << text;
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace teracon
