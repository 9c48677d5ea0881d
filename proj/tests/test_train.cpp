#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nesr/bench.hpp"
#include "nesr/checkpoint.hpp"
#include "nesr/train.hpp"

using nesr::BandSampling;
using nesr::Checkpoint;
using nesr::Metrics;
using nesr::ModelConfig;
using nesr::SpectralImage;
using nesr::SpectralScene;
using nesr::TensorD;
using nesr::TrainConfig;
using nesr::TrainResult;

namespace {

std::vector<SpectralScene> tiny_scenes(std::size_t count, std::uint64_t seed0) {
    std::vector<SpectralScene> scenes;
    for (std::size_t i = 0; i < count; ++i) {
        scenes.push_back(nesr::generate_scene(seed0 + i, 16, 16, 3));
    }
    return scenes;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.encoder_channels = 6;
    cfg.embed_channels = 5;
    return cfg;
}

TrainConfig tiny_train(std::size_t iters) {
    TrainConfig cfg;
    cfg.max_iters = iters;
    cfg.decay_every = 10;
    cfg.crop = 8;
    cfg.batch_size = 2;
    cfg.band_min = 3;
    cfg.band_max = 7;
    cfg.seed = 77;
    return cfg;
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "nesr_train_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("learning rate schedule halves at every decay boundary") {
    TrainConfig cfg;
    cfg.lr0 = 1e-4;
    cfg.decay_every = 500;
    CHECK(nesr::lr_at(0, cfg) == 1e-4);
    CHECK(nesr::lr_at(499, cfg) == 1e-4);
    CHECK(nesr::lr_at(500, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(nesr::lr_at(1500, cfg) == doctest::Approx(1.25e-5).epsilon(1e-12));
    double prev = nesr::lr_at(0, cfg);
    for (std::size_t i = 1; i < 2000; i += 37) {
        const double lr = nesr::lr_at(i, cfg);
        CHECK(lr <= prev);
        if (i % cfg.decay_every != 0) {
            CHECK(lr == nesr::lr_at(i - i % cfg.decay_every, cfg));
        }
        prev = lr;
    }
}

TEST_CASE("training smoke run records finite losses every iteration") {
    auto scenes = tiny_scenes(2, 100);
    TrainResult r = nesr::train(scenes, tiny_model(), tiny_train(20));
    REQUIRE(r.loss_trace.size() == 20);
    for (double l : r.loss_trace) CHECK(std::isfinite(l));
    CHECK(r.checkpoint.iteration == 20);
    CHECK(r.checkpoint.adam.step_count == 20);
}

TEST_CASE("fixed seeds give bitwise identical loss traces") {
    auto scenes = tiny_scenes(2, 200);
    TrainResult a = nesr::train(scenes, tiny_model(), tiny_train(10));
    TrainResult b = nesr::train(scenes, tiny_model(), tiny_train(10));
    REQUIRE(a.loss_trace.size() == b.loss_trace.size());
    for (std::size_t i = 0; i < a.loss_trace.size(); ++i) {
        CHECK(a.loss_trace[i] == b.loss_trace[i]);
    }
    const auto bytes_a = nesr::serialize_checkpoint(a.checkpoint);
    const auto bytes_b = nesr::serialize_checkpoint(b.checkpoint);
    CHECK(bytes_a == bytes_b);
}

TEST_CASE("resume continues the identical trajectory") {
    auto scenes = tiny_scenes(2, 300);
    TrainResult whole = nesr::train(scenes, tiny_model(), tiny_train(12));

    TrainConfig head_cfg = tiny_train(12);
    head_cfg.max_iters = 7;
    TrainResult head = nesr::train(scenes, tiny_model(), head_cfg);
    // the checkpoint round-trips through its file format before resuming
    const auto dir = temp_dir();
    const std::string path = (dir / "head.ckpt").string();
    nesr::save_checkpoint(path, head.checkpoint);
    Checkpoint restored = nesr::load_checkpoint(path);
    TrainResult tail = nesr::resume(std::move(restored), scenes, 12);

    REQUIRE(tail.loss_trace.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(tail.loss_trace[i] == whole.loss_trace[7 + i]);
    }
    CHECK(nesr::serialize_checkpoint(tail.checkpoint) ==
          nesr::serialize_checkpoint(whole.checkpoint));
}

TEST_CASE("checkpoint files round-trip bit-exactly") {
    auto scenes = tiny_scenes(1, 400);
    TrainResult r = nesr::train(scenes, tiny_model(), tiny_train(3));
    const auto bytes = nesr::serialize_checkpoint(r.checkpoint);
    Checkpoint back = nesr::deserialize_checkpoint(bytes.data(), bytes.size());
    CHECK(nesr::serialize_checkpoint(back) == bytes);
    CHECK(back.iteration == r.checkpoint.iteration);
    CHECK(back.rng_state == r.checkpoint.rng_state);

    // corrupting the magic fails cleanly
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(nesr::deserialize_checkpoint(bad.data(), bad.size()), nesr::FormatError);
}

TEST_CASE("metric unit values") {
    TensorD y({2, 1, 1}, {0.0, 1.0});
    TensorD gt({2, 1, 1}, {1.0, 1.0});
    Metrics m = nesr::metrics_of(y, gt);
    CHECK(std::abs(m.rmse - std::sqrt(0.5)) < 1e-6);

    TensorD pred({2, 1, 1}, {0.2, 0.4});
    TensorD target({2, 1, 1}, {0.1, 0.5});
    Metrics m2 = nesr::metrics_of(pred, target);
    CHECK(std::abs(m2.mrae - 0.594850) < 1e-6);

    Metrics zero = nesr::metrics_of(gt, gt);
    CHECK(zero.mrae == 0.0);
    CHECK(zero.rmse == 0.0);

    CHECK_THROWS_AS(nesr::evaluate(Checkpoint{}, {}, nesr::uniform_band_grid(5)),
                    nesr::UsageError);
}

TEST_CASE("metrics are permutation invariant over scenes") {
    auto scenes = tiny_scenes(3, 500);
    TrainResult r = nesr::train(scenes, tiny_model(), tiny_train(2));
    const auto grid = nesr::uniform_band_grid(5);
    Metrics fwd = nesr::evaluate(r.checkpoint, scenes, grid);
    std::vector<SpectralScene> rev(scenes.rbegin(), scenes.rend());
    Metrics bwd = nesr::evaluate(r.checkpoint, rev, grid);
    CHECK(fwd.mrae == doctest::Approx(bwd.mrae).epsilon(1e-12));
    CHECK(fwd.rmse == doctest::Approx(bwd.rmse).epsilon(1e-12));
}

TEST_CASE("RGB interpolation baseline hits its anchors") {
    nesr::Rng rng(7);
    TensorD rgb = TensorD::uninit({3, 2, 2});
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = rng.next_double();
    const std::size_t plane = 4;

    SpectralImage at550 = nesr::baseline_bi(rgb, {550.0});
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(at550.volume[p] == rgb[1 * plane + p]);  // exactly the G channel
    }
    SpectralImage at500 = nesr::baseline_bi(rgb, {500.0});
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(at500.volume[p] ==
              doctest::Approx(0.5 * rgb[2 * plane + p] + 0.5 * rgb[1 * plane + p])
                  .epsilon(1e-12));
    }
    SpectralImage at700 = nesr::baseline_bi(rgb, {700.0});
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(at700.volume[p] == rgb[p]);  // clamped to the R anchor
    }
    SpectralImage at400 = nesr::baseline_bi(rgb, {400.0});
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(at400.volume[p] == rgb[2 * plane + p]);  // clamped to the B anchor
    }
}

TEST_CASE("spectral interpolation reproduces source bands and clamps outside") {
    SpectralScene s = nesr::generate_scene(9, 8, 8, 3);
    SpectralImage src = nesr::sample_bands(s, nesr::uniform_band_grid(16));
    SpectralImage same = nesr::interp_bands(src, src.wavelengths);
    for (std::size_t i = 0; i < src.volume.size(); ++i) {
        CHECK(same.volume[i] == src.volume[i]);
    }
}

TEST_CASE("error maps average relative error over bands") {
    TensorD pred({2, 1, 2}, {0.2, 0.1, 0.4, 0.3});
    TensorD gt({2, 1, 2}, {0.1, 0.1, 0.5, 0.3});
    TensorD map = nesr::mrae_error_map(pred, gt);
    REQUIRE(map.shape() == std::vector<std::size_t>{1, 2});
    CHECK(map[0] == doctest::Approx(0.5 * (0.1 / 0.101 + 0.1 / 0.501)).epsilon(1e-12));
    CHECK(map[1] == 0.0);

    const auto dir = temp_dir();
    nesr::write_error_map((dir / "map").string(), pred, gt);
    CHECK(std::filesystem::exists(dir / "map.nsrt"));
    CHECK(std::filesystem::exists(dir / "map.pgm"));
}

TEST_CASE("trained model output depends on the requested wavelength") {
    auto scenes = tiny_scenes(2, 600);
    TrainResult r = nesr::train(scenes, tiny_model(), tiny_train(15));
    SpectralImage a = nesr::reconstruct_scene(r.checkpoint, scenes[0], {500.0});
    SpectralImage b = nesr::reconstruct_scene(r.checkpoint, scenes[0], {510.0});
    double diff = 0;
    for (std::size_t i = 0; i < a.volume.size(); ++i) {
        diff = std::max(diff, std::abs(a.volume[i] - b.volume[i]));
    }
    CHECK(diff > 1e-7);
}

TEST_CASE("benchmark row structure per mode") {
    auto train_scenes = tiny_scenes(2, 700);
    auto test_scenes = tiny_scenes(2, 800);
    ModelConfig mcfg = tiny_model();
    TrainConfig tcfg = tiny_train(2);

    std::map<std::string, Checkpoint> cks;
    cks["arb"] = nesr::train(train_scenes, mcfg, tcfg).checkpoint;

    nesr::EvalReport arb = nesr::benchmark_suite("arbitrary", cks, test_scenes);
    std::vector<std::size_t> bands;
    std::size_t bi_rows = 0, nesr_rows = 0, nesr_d_rows = 0;
    for (const auto& row : arb.rows) {
        if (row.method == "bi") {
            bands.push_back(row.bands);
            ++bi_rows;
        }
        if (row.method == "nesr") ++nesr_rows;
        if (row.method == "nesr-d") ++nesr_d_rows;
        CHECK(std::isfinite(row.mrae));
        CHECK(std::isfinite(row.rmse));
    }
    CHECK(bands == std::vector<std::size_t>{31, 16, 11, 7});
    CHECK(bi_rows == 4);
    CHECK(nesr_rows == 4);
    CHECK(nesr_d_rows == 4);

    nesr::EvalReport ext = nesr::benchmark_suite("extreme", cks, test_scenes);
    std::vector<std::size_t> ext_bands;
    for (const auto& row : ext.rows) {
        if (row.method == "nesr") ext_bands.push_back(row.bands);
    }
    CHECK(ext_bands == std::vector<std::size_t>{41, 51, 61});

    TrainConfig ssr_cfg = tcfg;
    ssr_cfg.input_bands = 5;
    ssr_cfg.band_min = 6;
    ssr_cfg.band_max = 9;
    std::map<std::string, Checkpoint> ssr_cks;
    ssr_cks["ssr"] = nesr::train(train_scenes, mcfg, ssr_cfg).checkpoint;
    nesr::EvalReport ssr = nesr::benchmark_suite("ssr", ssr_cks, test_scenes);
    std::vector<std::size_t> ssr_bands;
    for (const auto& row : ssr.rows) {
        if (row.method == "nesr") ssr_bands.push_back(row.bands);
    }
    CHECK(ssr_bands == std::vector<std::size_t>{31, 61});

    CHECK_THROWS_AS(nesr::benchmark_suite("ssr", cks, test_scenes), nesr::UsageError);
    CHECK_THROWS_AS(nesr::benchmark_suite("warp", cks, test_scenes), nesr::UsageError);
}

TEST_CASE("ablation benchmark reports all five variants with ordering notes") {
    auto train_scenes = tiny_scenes(2, 900);
    auto test_scenes = tiny_scenes(1, 950);
    ModelConfig mcfg = tiny_model();
    TrainConfig budget = tiny_train(2);
    nesr::EvalReport rep =
        nesr::benchmark_suite("ablation", {}, test_scenes, train_scenes, &budget, &mcfg);
    std::vector<std::string> methods;
    for (const auto& row : rep.rows) methods.push_back(row.method);
    CHECK(methods == std::vector<std::string>{"full", "no_spi", "no_nam", "attention_spectral",
                                              "attention_spatial"});
    CHECK(!rep.notes.empty());
}

TEST_CASE("reports serialize deterministically") {
    auto train_scenes = tiny_scenes(1, 1000);
    auto test_scenes = tiny_scenes(1, 1100);
    std::map<std::string, Checkpoint> cks;
    cks["arb"] = nesr::train(train_scenes, tiny_model(), tiny_train(2)).checkpoint;
    nesr::EvalReport a = nesr::benchmark_suite("extreme", cks, test_scenes);
    nesr::EvalReport b = nesr::benchmark_suite("extreme", cks, test_scenes);
    CHECK(nesr::report_to_json(a) == nesr::report_to_json(b));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    auto scenes = tiny_scenes(1, 1200);
    TrainConfig cfg = tiny_train(3);
    cfg.lr0 = 1e30;  // drives the weights to overflow within a step or two
    bool threw = false;
    try {
        nesr::train(scenes, tiny_model(), cfg);
    } catch (const nesr::Error& e) {
        threw = true;
        const std::string msg = e.what();
        CHECK(msg.find("iteration") != std::string::npos);
        CHECK(msg.find("seed") != std::string::npos);
    }
    CHECK(threw);
}
