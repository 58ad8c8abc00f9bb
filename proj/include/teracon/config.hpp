#pragma once
// Experiment configuration: flat key = value files with CLI overrides on top.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace teracon {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_name(field) {}
    std::string field_name;
};

struct ExperimentConfig {
    // dataset: either a file or generation parameters
    std::string data_path;
    std::string tasks_preset{"ttl-like"};
    std::size_t users{2000};
    std::size_t vocab{500};
    std::size_t seq_len{20};

    // run shape
    std::string method{"teracon"};
    std::string order{"forward"};  // forward | reversed | comma list of task names
    std::string sampling{"relation"};
    bool noisy_task{false};
    double noisy_fraction{0.5};
    std::size_t noisy_classes{50};
    int noisy_position{-1};  // -1: before the last task
    std::uint64_t seed{7};
    std::string out_dir{"runs/out"};
    int stop_after{-1};  // stop once this many tasks completed (testing/ops)
    bool resume{false};

    // model
    std::size_t dim{64};
    std::size_t blocks{4};
    std::size_t kernel_width{3};
    std::vector<int> dilations;  // empty: 1,2,4,... doubling per block

    // optimization
    double lr_first{0.0025};
    double lr{0.001};
    std::size_t batch{128};
    std::size_t epochs_first{12};
    std::size_t epochs{8};
    std::size_t patience{5};
    double alpha{0.7};
    double c{6.0};
    double s_max{50.0};
    double sampling_floor{0.08};
    double mask_lr_scale{0.05};

    // parameter isolation
    std::vector<double> conure_keep{0.3, 0.2, 0.3, 0.2, 0.1, 0.1};
    std::size_t conure_finetune_epochs{1};
    bool conure_prune_embedding{true};

    void validate() const;  // throws ConfigError naming the field
    std::vector<int> effective_dilations() const;
    std::string fingerprint() const;  // resume-compatibility hash
    std::string to_json_string() const;
};

// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
ExperimentConfig parse_config_file(const std::string& path);
void apply_config_line(ExperimentConfig& cfg, const std::string& key,
                       const std::string& value);

}  // namespace teracon
