#pragma once
// Renders comparison tables from completed run directories.

#include <string>
#include <vector>

namespace teracon {

// Reads run.json / metrics.jsonl / timings.jsonl from each directory and
// renders: final scores per method, transfer percentages (using a sinmo run
// as the forward-transfer reference when present), noisy-task degradation for
// clean/noisy run pairs, and the sampling comparison with per-epoch seconds.
std::string render_report(const std::vector<std::string>& run_dirs);

}  // namespace teracon
