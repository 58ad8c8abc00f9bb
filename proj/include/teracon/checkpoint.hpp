#pragma once
// Versioned checkpoint container: a text manifest (JSON) naming the stored
// arrays followed by their raw little-endian doubles. Round trips are
// bit-exact.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "teracon/tensor.hpp"

namespace teracon {

struct Checkpoint {
    std::string fingerprint;       // config hash; resume refuses a mismatch
    std::size_t completed_tasks{0};
    std::uint64_t master_seed{0};
    std::vector<std::pair<std::string, DenseArray>> arrays;

    const DenseArray* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace teracon
