#include "teracon/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "teracon/rng.hpp"

namespace teracon {

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        // trim
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

template <typename T>
T parse_number(const std::string& field, const std::string& value) {
    std::istringstream ss(value);
    T v{};
    if (!(ss >> v) || !ss.eof()) throw ConfigError(field, "cannot parse '" + value + "'");
    return v;
}

bool parse_bool(const std::string& field, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(field, "expected a boolean, got '" + value + "'");
}

}  // namespace

std::vector<int> ExperimentConfig::effective_dilations() const {
    if (!dilations.empty()) return dilations;
    std::vector<int> d(blocks);
    int v = 1;
    for (std::size_t k = 0; k < blocks; ++k) {
        d[k] = v;
        v *= 2;
    }
    return d;
}

void ExperimentConfig::validate() const {
    if (users < 20) throw ConfigError("users", "need at least 20 users");
    if (vocab < 8) throw ConfigError("vocab", "need a vocabulary of at least 8");
    if (seq_len < 2) throw ConfigError("seq_len", "sequences must have length >= 2");
    if (method != "teracon" && method != "conure" && method != "no-relation" &&
        method != "only-positive" && method != "sinmo" && method != "fineall")
        throw ConfigError("method", "unknown method '" + method + "'");
    if (sampling != "relation" && sampling != "min" && sampling != "full")
        throw ConfigError("sampling", "expected relation, min or full");
    if (dim == 0) throw ConfigError("dim", "must be positive");
    if (blocks == 0) throw ConfigError("blocks", "must be positive");
    if (!dilations.empty() && dilations.size() != blocks)
        throw ConfigError("dilations", "need one dilation per block");
    if (batch == 0) throw ConfigError("batch", "must be positive");
    if (epochs == 0 || epochs_first == 0)
        throw ConfigError("epochs", "must be positive");
    if (epochs > 30 || epochs_first > 30)
        throw ConfigError("epochs", "desk-scale cap is 30 epochs per task");
    if (lr <= 0.0 || lr_first <= 0.0) throw ConfigError("lr", "must be positive");
    if (alpha < 0.0) throw ConfigError("alpha", "must be non-negative");
    if (c <= 0.0) throw ConfigError("c", "must be positive");
    if (s_max <= 1.0) throw ConfigError("s_max", "must exceed 1");
    if (sampling_floor < 0.0 || sampling_floor > 1.0)
        throw ConfigError("sampling_floor", "must be in [0, 1]");
    if (mask_lr_scale <= 0.0) throw ConfigError("mask_lr_scale", "must be positive");
    if (noisy_fraction <= 0.0 || noisy_fraction > 1.0)
        throw ConfigError("noisy_fraction", "must be in (0, 1]");
    if (noisy_classes < 2) throw ConfigError("noisy_classes", "need at least 2 classes");
    for (double k : conure_keep)
        if (k < 0.0 || k > 1.0)
            throw ConfigError("conure_keep", "fractions must be in [0, 1]");
    if (out_dir.empty()) throw ConfigError("out", "output directory required");
}

std::string ExperimentConfig::to_json_string() const {
    nlohmann::json j;
    j["data_path"] = data_path;
    j["tasks_preset"] = tasks_preset;
    j["users"] = users;
    j["vocab"] = vocab;
    j["seq_len"] = seq_len;
    j["method"] = method;
    j["order"] = order;
    j["sampling"] = sampling;
    j["noisy_task"] = noisy_task;
    j["noisy_fraction"] = noisy_fraction;
    j["noisy_classes"] = noisy_classes;
    j["noisy_position"] = noisy_position;
    j["seed"] = seed;
    j["dim"] = dim;
    j["blocks"] = blocks;
    j["kernel_width"] = kernel_width;
    j["dilations"] = effective_dilations();
    j["lr_first"] = lr_first;
    j["lr"] = lr;
    j["batch"] = batch;
    j["epochs_first"] = epochs_first;
    j["epochs"] = epochs;
    j["patience"] = patience;
    j["alpha"] = alpha;
    j["c"] = c;
    j["s_max"] = s_max;
    j["sampling_floor"] = sampling_floor;
    j["mask_lr_scale"] = mask_lr_scale;
    j["conure_keep"] = conure_keep;
    j["conure_finetune_epochs"] = conure_finetune_epochs;
    j["conure_prune_embedding"] = conure_prune_embedding;
    return j.dump(2);
}

std::string ExperimentConfig::fingerprint() const {
    // Everything that must match between an interrupted and a resumed run.
    std::string blob = to_json_string();
    std::uint64_t h = fnv1a64(blob);
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

void apply_config_line(ExperimentConfig& cfg, const std::string& key,
                       const std::string& value) {
    if (key == "data_path") cfg.data_path = value;
    else if (key == "tasks_preset") cfg.tasks_preset = value;
    else if (key == "users") cfg.users = parse_number<std::size_t>(key, value);
    else if (key == "vocab") cfg.vocab = parse_number<std::size_t>(key, value);
    else if (key == "seq_len") cfg.seq_len = parse_number<std::size_t>(key, value);
    else if (key == "method") cfg.method = value;
    else if (key == "order") cfg.order = value;
    else if (key == "sampling") cfg.sampling = value;
    else if (key == "noisy_task") cfg.noisy_task = parse_bool(key, value);
    else if (key == "noisy_fraction") cfg.noisy_fraction = parse_number<double>(key, value);
    else if (key == "noisy_classes") cfg.noisy_classes = parse_number<std::size_t>(key, value);
    else if (key == "noisy_position") cfg.noisy_position = parse_number<int>(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out") cfg.out_dir = value;
    else if (key == "stop_after") cfg.stop_after = parse_number<int>(key, value);
    else if (key == "resume") cfg.resume = parse_bool(key, value);
    else if (key == "dim") cfg.dim = parse_number<std::size_t>(key, value);
    else if (key == "blocks") cfg.blocks = parse_number<std::size_t>(key, value);
    else if (key == "kernel_width") cfg.kernel_width = parse_number<std::size_t>(key, value);
    else if (key == "dilations") {
        cfg.dilations.clear();
        for (const auto& item : split_list(value))
            cfg.dilations.push_back(parse_number<int>(key, item));
    } else if (key == "lr_first") cfg.lr_first = parse_number<double>(key, value);
    else if (key == "lr") cfg.lr = parse_number<double>(key, value);
    else if (key == "batch") cfg.batch = parse_number<std::size_t>(key, value);
    else if (key == "epochs_first") cfg.epochs_first = parse_number<std::size_t>(key, value);
    else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
    else if (key == "patience") cfg.patience = parse_number<std::size_t>(key, value);
    else if (key == "alpha") cfg.alpha = parse_number<double>(key, value);
    else if (key == "c") cfg.c = parse_number<double>(key, value);
    else if (key == "s_max") cfg.s_max = parse_number<double>(key, value);
    else if (key == "sampling_floor") cfg.sampling_floor = parse_number<double>(key, value);
    else if (key == "mask_lr_scale") cfg.mask_lr_scale = parse_number<double>(key, value);
    else if (key == "conure_keep") {
        cfg.conure_keep.clear();
        for (const auto& item : split_list(value))
            cfg.conure_keep.push_back(parse_number<double>(key, item));
    } else if (key == "conure_finetune_epochs")
        cfg.conure_finetune_epochs = parse_number<std::size_t>(key, value);
    else if (key == "conure_prune_embedding")
        cfg.conure_prune_embedding = parse_bool(key, value);
    else
        throw ConfigError(key, "unknown key");
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    ExperimentConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ConfigError("config", path + ":" + std::to_string(line_no) +
                                                ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

}  // namespace teracon
