#pragma once

#include <map>
#include <string>
#include <vector>

#include "nesr/checkpoint.hpp"
#include "nesr/train.hpp"

namespace nesr {

struct EvalRow {
    std::string experiment;
    std::size_t bands = 0;
    std::string method;
    double mrae = 0;
    double rmse = 0;
};

// Timing is written to a separate sidecar by the callers so the report
// itself is byte-stable under a fixed seed.
struct EvalReport {
    std::string mode;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EvalRow> rows;
    std::vector<std::string> notes;
};

void save_report(const std::string& path, const EvalReport& report);
std::string report_to_json(const EvalReport& report);

// Benchmark protocols:
//   arbitrary - one uniform_random(7..31) checkpoint ("arb") evaluated at
//               31/16/11/7 bands against the RGB interpolation baseline;
//               a reconstruct-61-then-resize variant ("nesr-d") and any
//               provided fixed(B) checkpoints ("fixed7", "fixed11", ...)
//               are reported alongside.
//   extreme   - the "arb" checkpoint at 41/51/61 bands vs the baseline.
//   ssr       - the "ssr" checkpoint (low-band spectral input) at 31/61
//               bands vs linear interpolation of its input bands.
//   ablation  - trains the module/attention variants under identical seeds
//               and budgets and reports the held-out ordering.
EvalReport benchmark_suite(const std::string& mode,
                           const std::map<std::string, Checkpoint>& checkpoints,
                           const std::vector<SpectralScene>& test_scenes,
                           const std::vector<SpectralScene>& train_scenes = {},
                           const TrainConfig* ablation_budget = nullptr,
                           const ModelConfig* ablation_model = nullptr);

// Writes <stem>.nsrt and <stem>.pgm for a per-pixel MRAE map.
void write_error_map(const std::string& stem, const Tensor<double>& pred,
                     const Tensor<double>& gt);

}  // namespace nesr
