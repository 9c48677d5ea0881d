#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nesr/adam.hpp"
#include "nesr/manifest.hpp"
#include "nesr/model.hpp"
#include "nesr/scene.hpp"

namespace nesr {

enum class BandSampling { Fixed, UniformRandom };

struct TrainConfig {
    double lr0 = 1e-4;
    std::size_t decay_every = 500;  // reference schedule: 20000
    std::size_t max_iters = 2000;   // reference schedule: 300000
    std::size_t crop = 32;
    std::size_t batch_size = 4;
    BandSampling band_sampling = BandSampling::UniformRandom;
    std::size_t fixed_bands = 31;
    std::size_t band_min = 7;
    std::size_t band_max = 31;
    std::uint64_t seed = 0;
    // 0 renders camera RGB input; otherwise the input is the scene sampled
    // at a uniform grid of this many bands (spectral super-resolution mode).
    std::size_t input_bands = 0;
    std::size_t rgb_render_bands = 31;

    void validate() const;
    std::size_t effective_in_channels() const { return input_bands == 0 ? 3 : input_bands; }
};

// lr0 * 0.5^floor(iter / decay_every)
double lr_at(std::size_t iter, const TrainConfig& cfg);

struct Checkpoint {
    ModelWeights<float> weights;
    AdamState<float> adam;
    TrainConfig train_config;
    std::size_t iteration = 0;
    std::uint64_t rng_state = 0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> loss_trace;  // mean batch loss per iteration
};

// Renders the model input for a scene crop according to the training mode.
Tensor<float> render_input(const SpectralScene& scene, const TrainConfig& cfg, std::size_t y0,
                           std::size_t x0, std::size_t crop_h, std::size_t crop_w);

// Fresh training run over the configured iteration budget.
TrainResult train(const std::vector<SpectralScene>& scenes, const ModelConfig& mcfg,
                  const TrainConfig& tcfg);

// Continues a checkpoint to max_iters; with identical inputs this follows
// the exact trajectory the uninterrupted run would take.
TrainResult resume(Checkpoint start, const std::vector<SpectralScene>& scenes,
                   std::size_t max_iters);

struct Metrics {
    double mrae = 0;
    double rmse = 0;
};

Metrics metrics_of(const Tensor<double>& pred, const Tensor<double>& gt);

// Mean metrics of the checkpointed model over full scenes at the grid.
Metrics evaluate(const Checkpoint& ck, const std::vector<SpectralScene>& scenes,
                 const std::vector<double>& wavelengths);

// Reconstruction of one scene (full frame); returns the prediction as a
// double spectral image.
SpectralImage reconstruct_scene(const Checkpoint& ck, const SpectralScene& scene,
                                const std::vector<double>& wavelengths);

// Classical baseline: per-pixel linear interpolation of the RGB values over
// wavelength, anchored at the camera response peaks B=450, G=550, R=600 nm,
// with constant extrapolation outside.
SpectralImage baseline_bi(const Tensor<double>& rgb, const std::vector<double>& wavelengths);

// Per-pixel linear interpolation of a spectral image onto new wavelengths,
// constant extrapolation outside the source range. On full-range uniform
// grids this coincides with the endpoints-aligned resize.
SpectralImage interp_bands(const SpectralImage& img, const std::vector<double>& wavelengths);

// Per-pixel MRAE averaged over bands (the error-map payload).
Tensor<double> mrae_error_map(const Tensor<double>& pred, const Tensor<double>& gt);

// Metrics of an arbitrary prediction routine over scenes (used by baselines).
Metrics evaluate_images(const std::vector<SpectralImage>& preds,
                        const std::vector<SpectralImage>& gts);

}  // namespace nesr
