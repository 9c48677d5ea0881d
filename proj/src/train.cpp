#include "nesr/train.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace nesr {

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (crop < 8) throw ConfigError("crop must be at least 8");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (band_sampling == BandSampling::UniformRandom && band_min > band_max) {
        throw ConfigError("band_min must not exceed band_max");
    }
    if (band_sampling == BandSampling::Fixed && fixed_bands < 1) {
        throw ConfigError("fixed_bands must be >= 1");
    }
    if (input_bands == 0 && rgb_render_bands < 3) {
        throw ConfigError("rgb_render_bands must be >= 3");
    }
}

double lr_at(std::size_t iter, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(0.5, static_cast<double>(iter / cfg.decay_every));
}

Tensor<float> render_input(const SpectralScene& scene, const TrainConfig& cfg, std::size_t y0,
                           std::size_t x0, std::size_t crop_h, std::size_t crop_w) {
    if (cfg.input_bands == 0) {
        const SpectralImage view = sample_bands_crop(scene, uniform_band_grid(cfg.rgb_render_bands),
                                                     y0, x0, crop_h, crop_w);
        return project_to_rgb(view, CameraResponse::standard()).cast<float>();
    }
    const SpectralImage view =
        sample_bands_crop(scene, uniform_band_grid(cfg.input_bands), y0, x0, crop_h, crop_w);
    return view.volume.cast<float>();
}

namespace {

void train_loop(Checkpoint& state, const std::vector<SpectralScene>& scenes,
                std::size_t max_iters, std::vector<double>& trace) {
    const TrainConfig& cfg = state.train_config;
    cfg.validate();
    if (scenes.empty()) throw UsageError("train: the training split is empty");
    for (const SpectralScene& s : scenes) {
        if (s.height < cfg.crop || s.width < cfg.crop) {
            throw ConfigError("train: crop " + std::to_string(cfg.crop) +
                              " exceeds scene extent " + std::to_string(s.height) + "x" +
                              std::to_string(s.width));
        }
    }
    auto params = state.weights.parameters();
    if (state.adam.slots.empty()) {
        std::vector<Tensor<float>*> ptrs;
        for (auto& [name, p] : params) ptrs.push_back(p);
        state.adam.init(ptrs);
    }
    Rng rng(0);
    rng.set_state(state.rng_state);

    struct SampleDraw {
        std::size_t scene_idx;
        std::size_t y0;
        std::size_t x0;
        std::size_t bands;
    };
    // with few workers the intra-kernel parallelism wins; from three up the
    // independent batch members use the cores better
    const std::size_t lanes =
        worker_threads() >= 3
            ? std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), cfg.batch_size)
            : 1;

    for (std::size_t iter = state.iteration; iter < max_iters; ++iter) {
        state.adam.lr = lr_at(iter, cfg);

        // the random draws are consumed in a fixed order up front so the
        // batch members can be evaluated concurrently
        std::vector<SampleDraw> draws(cfg.batch_size);
        for (SampleDraw& d : draws) {
            d.scene_idx = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(scenes.size()) - 1));
            d.y0 = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(scenes[d.scene_idx].height - cfg.crop)));
            d.x0 = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(scenes[d.scene_idx].width - cfg.crop)));
            d.bands = cfg.fixed_bands;
            if (cfg.band_sampling == BandSampling::UniformRandom) {
                d.bands = static_cast<std::size_t>(
                    rng.uniform_int(static_cast<std::int64_t>(cfg.band_min),
                                    static_cast<std::int64_t>(cfg.band_max)));
            }
        }

        std::vector<std::vector<Tensor<float>>> sample_grads(cfg.batch_size);
        std::vector<double> sample_loss(cfg.batch_size, 0.0);
        std::vector<std::string> sample_error(cfg.batch_size);
        auto run_sample = [&](std::size_t b) {
            try {
                const SampleDraw& d = draws[b];
                const SpectralScene& scene = scenes[d.scene_idx];
                const std::vector<double> grid = uniform_band_grid(d.bands);
                const SpectralImage gt =
                    sample_bands_crop(scene, grid, d.y0, d.x0, cfg.crop, cfg.crop);
                const Tensor<float> input =
                    render_input(scene, cfg, d.y0, d.x0, cfg.crop, cfg.crop);
                const Tensor<float> gt_f = gt.volume.cast<float>();

                Tape<float> tape;
                ModelWeights<float> tracked = state.weights.tracked(tape);
                Tensor<float> pred = forward(input, grid, tracked);
                Tensor<float> loss = mrae_loss(pred, gt_f);
                sample_loss[b] = static_cast<double>(loss[0]);
                tape.backward(loss);
                auto tracked_params = tracked.parameters();
                sample_grads[b].reserve(tracked_params.size());
                for (auto& [name, p] : tracked_params) {
                    sample_grads[b].push_back(tape.grad(*p));
                }
            } catch (const Error& e) {
                sample_error[b] = e.what();
            }
        };
        if (lanes <= 1) {
            for (std::size_t b = 0; b < cfg.batch_size; ++b) run_sample(b);
        } else {
            // each lane's sample runs serially inside itself, so the result
            // is bitwise identical to the sequential order
            std::vector<std::thread> threads;
            for (std::size_t lane = 0; lane < lanes; ++lane) {
                threads.emplace_back([&, lane] {
                    SerialScope serial;
                    for (std::size_t b = lane; b < cfg.batch_size; b += lanes) run_sample(b);
                });
            }
            for (auto& t : threads) t.join();
        }
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (!sample_error[b].empty()) {
                throw RuntimeError("training aborted at iteration " + std::to_string(iter) +
                                   " (lr=" + std::to_string(state.adam.lr) +
                                   ", seed=" + std::to_string(cfg.seed) + "): " +
                                   sample_error[b]);
            }
        }

        // ordered reduction keeps the gradient sum independent of lane count
        std::vector<Tensor<float>> grad_sum;
        grad_sum.reserve(params.size());
        for (auto& [name, p] : params) grad_sum.push_back(Tensor<float>::zeros(p->shape()));
        double loss_sum = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            loss_sum += sample_loss[b];
            for (std::size_t p = 0; p < params.size(); ++p) {
                float* acc = grad_sum[p].data();
                const float* src = sample_grads[b][p].data();
                const std::size_t n = grad_sum[p].size();
                for (std::size_t i = 0; i < n; ++i) acc[i] += src[i];
            }
        }

        const double mean_loss = loss_sum / static_cast<double>(cfg.batch_size);
        if (!std::isfinite(mean_loss)) {
            throw RuntimeError("training aborted: non-finite loss at iteration " +
                               std::to_string(iter) + " (lr=" + std::to_string(state.adam.lr) +
                               ", seed=" + std::to_string(cfg.seed) + ")");
        }
        const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
        std::vector<Tensor<float>*> ptrs;
        ptrs.reserve(params.size());
        for (auto& [name, p] : params) ptrs.push_back(p);
        for (Tensor<float>& g : grad_sum) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv_batch;
        }
        adam_step(ptrs, grad_sum, state.adam);
        trace.push_back(mean_loss);
        state.iteration = iter + 1;
        state.rng_state = rng.state();
    }
}

}  // namespace

TrainResult train(const std::vector<SpectralScene>& scenes, const ModelConfig& mcfg,
                  const TrainConfig& tcfg) {
    tcfg.validate();
    ModelConfig cfg = mcfg;
    cfg.in_channels = tcfg.effective_in_channels();
    TrainResult result;
    result.checkpoint.weights = init_weights<float>(cfg, tcfg.seed);
    result.checkpoint.train_config = tcfg;
    result.checkpoint.iteration = 0;
    {
        Rng rng(tcfg.seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
        result.checkpoint.rng_state = rng.state();
    }
    train_loop(result.checkpoint, scenes, tcfg.max_iters, result.loss_trace);
    return result;
}

TrainResult resume(Checkpoint start, const std::vector<SpectralScene>& scenes,
                   std::size_t max_iters) {
    TrainResult result;
    result.checkpoint = std::move(start);
    result.checkpoint.train_config.max_iters =
        std::max(result.checkpoint.train_config.max_iters, max_iters);
    train_loop(result.checkpoint, scenes, max_iters, result.loss_trace);
    return result;
}

Metrics metrics_of(const Tensor<double>& pred, const Tensor<double>& gt) {
    if (pred.shape() != gt.shape()) {
        throw DimensionError("metrics: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(gt.shape()));
    }
    double mrae_acc = 0, sq_acc = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        mrae_acc += std::abs(d) / (gt[i] + kMraeEps);
        sq_acc += d * d;
    }
    Metrics m;
    m.mrae = mrae_acc / static_cast<double>(pred.size());
    m.rmse = std::sqrt(sq_acc / static_cast<double>(pred.size()));
    return m;
}

SpectralImage reconstruct_scene(const Checkpoint& ck, const SpectralScene& scene,
                                const std::vector<double>& wavelengths) {
    validate_wavelengths(wavelengths);
    TrainConfig in_cfg = ck.train_config;
    const Tensor<float> input = render_input(scene, in_cfg, 0, 0, scene.height, scene.width);
    const Tensor<float> pred = forward(input, wavelengths, ck.weights);
    SpectralImage out;
    out.wavelengths = wavelengths;
    out.volume = pred.cast<double>();
    return out;
}

Metrics evaluate(const Checkpoint& ck, const std::vector<SpectralScene>& scenes,
                 const std::vector<double>& wavelengths) {
    if (scenes.empty()) throw UsageError("evaluate: no scenes given");
    validate_wavelengths(wavelengths);
    // scene fan-out with an id-ordered reduction
    std::vector<Metrics> per_scene(scenes.size());
    const std::size_t lanes =
        std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), scenes.size());
    auto eval_one = [&](std::size_t i) {
        const SpectralImage gt = sample_bands(scenes[i], wavelengths);
        const SpectralImage pred = reconstruct_scene(ck, scenes[i], wavelengths);
        per_scene[i] = metrics_of(pred.volume, gt.volume);
    };
    if (lanes <= 1) {
        for (std::size_t i = 0; i < scenes.size(); ++i) eval_one(i);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t lane = 0; lane < lanes; ++lane) {
            threads.emplace_back([&, lane] {
                SerialScope serial;
                for (std::size_t i = lane; i < scenes.size(); i += lanes) eval_one(i);
            });
        }
        for (auto& t : threads) t.join();
    }
    Metrics total;
    for (const Metrics& m : per_scene) {
        total.mrae += m.mrae;
        total.rmse += m.rmse;
    }
    total.mrae /= static_cast<double>(scenes.size());
    total.rmse /= static_cast<double>(scenes.size());
    return total;
}

Metrics evaluate_images(const std::vector<SpectralImage>& preds,
                        const std::vector<SpectralImage>& gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw UsageError("evaluate_images: prediction/ground-truth counts disagree");
    }
    Metrics total;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Metrics m = metrics_of(preds[i].volume, gts[i].volume);
        total.mrae += m.mrae;
        total.rmse += m.rmse;
    }
    total.mrae /= static_cast<double>(preds.size());
    total.rmse /= static_cast<double>(preds.size());
    return total;
}

SpectralImage baseline_bi(const Tensor<double>& rgb, const std::vector<double>& wavelengths) {
    if (rgb.rank() != 3 || rgb.extent(0) != 3) {
        throw DimensionError("baseline_bi: expected [3 x H x W], got " + shape_str(rgb.shape()));
    }
    validate_wavelengths(wavelengths);
    SpectralImage anchors;
    // channel order R, G, B maps to ascending anchors 450 (B), 550 (G), 600 (R)
    const std::size_t h = rgb.extent(1), w = rgb.extent(2);
    anchors.wavelengths = {450.0, 550.0, 600.0};
    anchors.volume = Tensor<double>::uninit({3, h, w});
    const std::size_t plane = h * w;
    std::copy(rgb.data() + 2 * plane, rgb.data() + 3 * plane, anchors.volume.data());
    std::copy(rgb.data() + 1 * plane, rgb.data() + 2 * plane, anchors.volume.data() + plane);
    std::copy(rgb.data(), rgb.data() + plane, anchors.volume.data() + 2 * plane);
    return interp_bands(anchors, wavelengths);
}

SpectralImage interp_bands(const SpectralImage& img, const std::vector<double>& wavelengths) {
    validate_wavelengths(wavelengths);
    const std::size_t src_bands = img.wavelengths.size();
    const std::size_t h = img.volume.extent(1), w = img.volume.extent(2);
    const std::size_t plane = h * w;
    SpectralImage out;
    out.wavelengths = wavelengths;
    out.volume = Tensor<double>::uninit({wavelengths.size(), h, w});
    for (std::size_t b = 0; b < wavelengths.size(); ++b) {
        const double wl = wavelengths[b];
        double* dst = out.volume.data() + b * plane;
        if (wl <= img.wavelengths.front()) {
            std::copy(img.volume.data(), img.volume.data() + plane, dst);
            continue;
        }
        if (wl >= img.wavelengths.back()) {
            std::copy(img.volume.data() + (src_bands - 1) * plane,
                      img.volume.data() + src_bands * plane, dst);
            continue;
        }
        std::size_t hi = 1;
        while (img.wavelengths[hi] < wl) ++hi;
        const std::size_t lo = hi - 1;
        const double t =
            (wl - img.wavelengths[lo]) / (img.wavelengths[hi] - img.wavelengths[lo]);
        const double* src_lo = img.volume.data() + lo * plane;
        const double* src_hi = img.volume.data() + hi * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            dst[p] = (1.0 - t) * src_lo[p] + t * src_hi[p];
        }
    }
    return out;
}

Tensor<double> mrae_error_map(const Tensor<double>& pred, const Tensor<double>& gt) {
    if (pred.shape() != gt.shape() || pred.rank() != 3) {
        throw DimensionError("error map: expected matching [bands x H x W] volumes");
    }
    const std::size_t bands = pred.extent(0), h = pred.extent(1), w = pred.extent(2);
    const std::size_t plane = h * w;
    Tensor<double> map = Tensor<double>::zeros({h, w});
    for (std::size_t b = 0; b < bands; ++b) {
        const double* pp = pred.data() + b * plane;
        const double* pg = gt.data() + b * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            map[p] += std::abs(pp[p] - pg[p]) / (pg[p] + kMraeEps);
        }
    }
    for (std::size_t p = 0; p < plane; ++p) map[p] /= static_cast<double>(bands);
    return map;
}

}  // namespace nesr
