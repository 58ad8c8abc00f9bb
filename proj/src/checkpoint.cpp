#include "teracon/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace teracon {

namespace {
constexpr const char* kMagic = "TERACON-CKPT v1";
}

const DenseArray* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return &a;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    nlohmann::json manifest;
    manifest["fingerprint"] = ckpt.fingerprint;
    manifest["completed_tasks"] = ckpt.completed_tasks;
    manifest["master_seed"] = ckpt.master_seed;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, arr] : ckpt.arrays) {
        nlohmann::json a;
        a["name"] = name;
        a["shape"] = arr.shape;
        arrays.push_back(std::move(a));
    }
    manifest["arrays"] = std::move(arrays);
    out << kMagic << "\n" << manifest.dump() << "\nBINARY\n";
    for (const auto& [name, arr] : ckpt.arrays)
        out.write(reinterpret_cast<const char*>(arr.data.data()),
                  static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (!std::getline(in, line))
        throw std::runtime_error("load_checkpoint: missing manifest in " + path);
    const nlohmann::json manifest = nlohmann::json::parse(line);
    std::string marker;
    if (!std::getline(in, marker) || marker != "BINARY")
        throw std::runtime_error("load_checkpoint: missing binary marker in " + path);

    Checkpoint ckpt;
    ckpt.fingerprint = manifest.value("fingerprint", "");
    ckpt.completed_tasks = manifest.value("completed_tasks", std::size_t{0});
    ckpt.master_seed = manifest.value("master_seed", std::uint64_t{0});
    for (const auto& a : manifest.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::vector<std::size_t> shape = a.at("shape").get<std::vector<std::size_t>>();
        DenseArray arr(shape);
        in.read(reinterpret_cast<char*>(arr.data.data()),
                static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated array " + name);
        ckpt.arrays.emplace_back(name, std::move(arr));
    }
    return ckpt;
}

}  // namespace teracon
