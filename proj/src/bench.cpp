#include "nesr/bench.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "nesr/config_json.hpp"
#include "nesr/ops.hpp"
#include "nesr/tensor_io.hpp"

namespace nesr {

namespace {

using nlohmann::json;

const Checkpoint& need_checkpoint(const std::map<std::string, Checkpoint>& cks,
                                  const std::string& name, const std::string& mode) {
    auto it = cks.find(name);
    if (it == cks.end()) {
        throw UsageError("benchmark mode \"" + mode + "\" needs the \"" + name +
                         "\" checkpoint");
    }
    return it->second;
}

Metrics eval_rgb_bi(const std::vector<SpectralScene>& scenes,
                    const std::vector<double>& grid, std::size_t rgb_render_bands) {
    std::vector<SpectralImage> preds, gts;
    const CameraResponse cam = CameraResponse::standard();
    for (const SpectralScene& s : scenes) {
        const SpectralImage view = sample_bands(s, uniform_band_grid(rgb_render_bands));
        preds.push_back(baseline_bi(project_to_rgb(view, cam), grid));
        gts.push_back(sample_bands(s, grid));
    }
    return evaluate_images(preds, gts);
}

Metrics eval_spectral_bi(const std::vector<SpectralScene>& scenes,
                         const std::vector<double>& grid, std::size_t input_bands) {
    std::vector<SpectralImage> preds, gts;
    for (const SpectralScene& s : scenes) {
        preds.push_back(interp_bands(sample_bands(s, uniform_band_grid(input_bands)), grid));
        gts.push_back(sample_bands(s, grid));
    }
    return evaluate_images(preds, gts);
}

// Reconstruct on a dense grid, then resize down the spectral axis with the
// endpoints-aligned linear resize.
Metrics eval_dense_then_resize(const Checkpoint& ck, const std::vector<SpectralScene>& scenes,
                               const std::vector<double>& grid, std::size_t dense_bands) {
    std::vector<SpectralImage> preds, gts;
    for (const SpectralScene& s : scenes) {
        const SpectralImage dense =
            reconstruct_scene(ck, s, uniform_band_grid(dense_bands));
        const std::size_t h = dense.volume.extent(1), w = dense.volume.extent(2);
        Tensor<double> profiles =
            transpose(dense.volume.viewed_as({dense_bands, h * w}));  // HW x dense
        Tensor<double> resized = resize_linear(profiles, grid.size());
        SpectralImage down;
        down.wavelengths = grid;
        down.volume = transpose(resized).viewed_as({grid.size(), h, w});
        preds.push_back(std::move(down));
        gts.push_back(sample_bands(s, grid));
    }
    return evaluate_images(preds, gts);
}

void push_row(EvalReport& report, const std::string& experiment, std::size_t bands,
              const std::string& method, const Metrics& m) {
    report.rows.push_back(EvalRow{experiment, bands, method, m.mrae, m.rmse});
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
    json j;
    j["version"] = kVersionString;
    j["mode"] = report.mode;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["rows"] = json::array();
    for (const EvalRow& r : report.rows) {
        j["rows"].push_back(json{{"experiment", r.experiment},
                                 {"bands", r.bands},
                                 {"method", r.method},
                                 {"mrae", r.mrae},
                                 {"rmse", r.rmse}});
    }
    j["notes"] = report.notes;
    return j.dump(2) + "\n";
}

void save_report(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << report_to_json(report);
    if (!f) throw IoError("write failed: " + path);
}

EvalReport benchmark_suite(const std::string& mode,
                           const std::map<std::string, Checkpoint>& checkpoints,
                           const std::vector<SpectralScene>& test_scenes,
                           const std::vector<SpectralScene>& train_scenes,
                           const TrainConfig* ablation_budget,
                           const ModelConfig* ablation_model) {
    if (test_scenes.empty()) throw UsageError("benchmark: no test scenes");
    EvalReport report;
    report.mode = mode;

    if (mode == "arbitrary") {
        const Checkpoint& arb = need_checkpoint(checkpoints, "arb", mode);
        report.config_hash = config_hash_hex(arb.weights.config, arb.train_config);
        report.seed = arb.train_config.seed;
        for (std::size_t bands : {std::size_t{31}, std::size_t{16}, std::size_t{11},
                                  std::size_t{7}}) {
            const std::vector<double> grid = uniform_band_grid(bands);
            push_row(report, mode, bands, "bi",
                     eval_rgb_bi(test_scenes, grid, arb.train_config.rgb_render_bands));
            push_row(report, mode, bands, "nesr", evaluate(arb, test_scenes, grid));
            push_row(report, mode, bands, "nesr-d",
                     eval_dense_then_resize(arb, test_scenes, grid, 61));
            const std::string fixed_name = "fixed" + std::to_string(bands);
            auto it = checkpoints.find(fixed_name);
            if (it != checkpoints.end()) {
                push_row(report, mode, bands, "nesr-s", evaluate(it->second, test_scenes, grid));
            }
        }
        return report;
    }

    if (mode == "extreme") {
        const Checkpoint& arb = need_checkpoint(checkpoints, "arb", mode);
        report.config_hash = config_hash_hex(arb.weights.config, arb.train_config);
        report.seed = arb.train_config.seed;
        report.notes.push_back("checkpoint trained on at most " +
                               std::to_string(arb.train_config.band_max) + " bands");
        for (std::size_t bands : {std::size_t{41}, std::size_t{51}, std::size_t{61}}) {
            const std::vector<double> grid = uniform_band_grid(bands);
            push_row(report, mode, bands, "bi",
                     eval_rgb_bi(test_scenes, grid, arb.train_config.rgb_render_bands));
            push_row(report, mode, bands, "nesr", evaluate(arb, test_scenes, grid));
        }
        return report;
    }

    if (mode == "ssr") {
        const Checkpoint& ssr = need_checkpoint(checkpoints, "ssr", mode);
        if (ssr.train_config.input_bands == 0) {
            throw UsageError("benchmark mode \"ssr\" needs a checkpoint trained on spectral "
                             "input (input_bands > 0)");
        }
        report.config_hash = config_hash_hex(ssr.weights.config, ssr.train_config);
        report.seed = ssr.train_config.seed;
        for (std::size_t bands : {std::size_t{31}, std::size_t{61}}) {
            const std::vector<double> grid = uniform_band_grid(bands);
            push_row(report, mode, bands, "bi-spectral",
                     eval_spectral_bi(test_scenes, grid, ssr.train_config.input_bands));
            push_row(report, mode, bands, "nesr", evaluate(ssr, test_scenes, grid));
        }
        return report;
    }

    if (mode == "ablation") {
        if (train_scenes.empty() || !ablation_budget || !ablation_model) {
            throw UsageError(
                "benchmark mode \"ablation\" needs train scenes and a training budget");
        }
        struct Variant {
            std::string name;
            ModelConfig cfg;
        };
        std::vector<Variant> variants;
        {
            ModelConfig full = *ablation_model;
            full.enable_spi = true;
            full.enable_nam = true;
            full.attention_variant = AttentionVariant::SpatialSpectral;
            variants.push_back({"full", full});
            ModelConfig no_spi = full;
            no_spi.enable_spi = false;
            variants.push_back({"no_spi", no_spi});
            ModelConfig no_nam = full;
            no_nam.enable_nam = false;
            variants.push_back({"no_nam", no_nam});
            ModelConfig spectral = full;
            spectral.attention_variant = AttentionVariant::Spectral;
            variants.push_back({"attention_spectral", spectral});
            ModelConfig spatial = full;
            spatial.attention_variant = AttentionVariant::Spatial;
            variants.push_back({"attention_spatial", spatial});
        }
        report.config_hash = config_hash_hex(*ablation_model, *ablation_budget);
        report.seed = ablation_budget->seed;
        const std::vector<double> grid = uniform_band_grid(31);
        double full_mrae = 0;
        std::vector<std::pair<std::string, double>> results;
        for (const Variant& v : variants) {
            auto it = checkpoints.find("ablation_" + v.name);
            Metrics m;
            if (it != checkpoints.end()) {
                m = evaluate(it->second, test_scenes, grid);
            } else {
                const TrainResult r = train(train_scenes, v.cfg, *ablation_budget);
                m = evaluate(r.checkpoint, test_scenes, grid);
            }
            push_row(report, mode, 31, v.name, m);
            results.emplace_back(v.name, m.mrae);
            if (v.name == "full") full_mrae = m.mrae;
        }
        bool ordered = true;
        for (const auto& [name, mrae] : results) {
            if (name != "full" && full_mrae > mrae) {
                ordered = false;
                report.notes.push_back("ordering violation: full (" + std::to_string(full_mrae) +
                                       ") > " + name + " (" + std::to_string(mrae) + ")");
            }
        }
        report.notes.push_back(ordered ? "ordering holds: full <= every ablated variant"
                                       : "ordering FAILED");
        return report;
    }

    throw UsageError("unknown benchmark mode \"" + mode +
                     "\" (expected arbitrary, extreme, ssr or ablation)");
}

void write_error_map(const std::string& stem, const Tensor<double>& pred,
                     const Tensor<double>& gt) {
    const Tensor<double> map = mrae_error_map(pred, gt);
    write_tensor(stem + ".nsrt", map);
    double mx = 0;
    for (std::size_t i = 0; i < map.size(); ++i) mx = std::max(mx, map[i]);
    write_pgm(stem + ".pgm", map, mx > 0 ? mx : 1.0);
}

}  // namespace nesr
