#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nesr/cli.hpp"
#include "nesr/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

int cli(std::initializer_list<std::string> args) {
    std::vector<std::string> full = {"nesr"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const std::string& a : full) argv.push_back(a.c_str());
    return nesr::run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "nesr_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// a small dataset most cases share
struct Dataset {
    fs::path dir;
    std::string train_manifest;
    std::string test_manifest;
};

const Dataset& shared_dataset() {
    static Dataset ds = [] {
        Dataset d;
        d.dir = fresh_dir("data");
        REQUIRE(cli({"gen-data", "--out", d.dir.string(), "--seed", "11", "--scenes", "2",
                     "--test-scenes", "1", "--size", "16x16", "--mixtures", "3"}) == 0);
        d.train_manifest = (d.dir / "manifest_train.json").string();
        d.test_manifest = (d.dir / "manifest_test.json").string();
        return d;
    }();
    return ds;
}

const std::string& shared_checkpoint() {
    static std::string path = [] {
        const Dataset& ds = shared_dataset();
        const fs::path out = fresh_dir("train");
        REQUIRE(cli({"train", "--out", out.string(), "--seed", "5", "--data",
                     ds.train_manifest, "--set", "model.encoder_channels=6", "--set",
                     "model.embed_channels=5", "--set", "train.max_iters=3", "--set",
                     "train.crop=8", "--set", "train.batch_size=1", "--set",
                     "train.band_min=3", "--set", "train.band_max=5"}) == 0);
        return (out / "checkpoint.ckpt").string();
    }();
    return path;
}

}  // namespace

TEST_CASE("gen-data is deterministic in the seed") {
    const fs::path a = fresh_dir("gen_a");
    const fs::path b = fresh_dir("gen_b");
    for (const fs::path& dir : {a, b}) {
        REQUIRE(cli({"gen-data", "--out", dir.string(), "--seed", "7", "--scenes", "2",
                     "--test-scenes", "1", "--size", "16x16"}) == 0);
    }
    CHECK(slurp(a / "manifest_train.json") == slurp(b / "manifest_train.json"));
    CHECK(slurp(a / "manifest_test.json") == slurp(b / "manifest_test.json"));
    CHECK(slurp(a / "scenes/scene_0000.json") == slurp(b / "scenes/scene_0000.json"));
    CHECK(slurp(a / "scenes/scene_0000_abund.nsrt") == slurp(b / "scenes/scene_0000_abund.nsrt"));
    // config echo carries version, command, seed
    const auto echo = nlohmann::json::parse(slurp(a / "config.json"));
    CHECK(echo.at("command") == "gen-data");
    CHECK(echo.at("seed") == 7);
    CHECK(echo.contains("version"));
}

TEST_CASE("NESR_SEED provides the default seed") {
    const fs::path a = fresh_dir("env_a");
    const fs::path b = fresh_dir("env_b");
    REQUIRE(cli({"gen-data", "--out", a.string(), "--seed", "99", "--scenes", "1",
                 "--test-scenes", "1", "--size", "16x16"}) == 0);
    setenv("NESR_SEED", "99", 1);
    REQUIRE(cli({"gen-data", "--out", b.string(), "--scenes", "1", "--test-scenes", "1",
                 "--size", "16x16"}) == 0);
    unsetenv("NESR_SEED");
    CHECK(slurp(a / "manifest_train.json") == slurp(b / "manifest_train.json"));
}

TEST_CASE("train writes checkpoint, loss trace and config echo") {
    const std::string ck = shared_checkpoint();
    CHECK(fs::exists(ck));
    const fs::path out = fs::path(ck).parent_path();
    CHECK(fs::exists(out / "loss_trace.json"));
    CHECK(fs::exists(out / "timing.json"));
    const auto echo = nlohmann::json::parse(slurp(out / "config.json"));
    CHECK(echo.at("train").at("max_iters") == 3);
    CHECK(echo.at("model").at("encoder_channels") == 6);
    const auto trace = nlohmann::json::parse(slurp(out / "loss_trace.json"));
    CHECK(trace.size() == 3);
}

TEST_CASE("reconstruct 400:5:700 emits a 61-band spectral image and error map") {
    const Dataset& ds = shared_dataset();
    const fs::path out = fresh_dir("reconstruct");
    REQUIRE(cli({"reconstruct", "--out", out.string(), "--checkpoint", shared_checkpoint(),
                 "--bands", "400:5:700", "--data", ds.test_manifest, "--scene-id", "t0000"}) ==
            0);
    const nesr::SpectralImage pred =
        nesr::read_spectral_image((out / "prediction.nsrt").string());
    CHECK(pred.wavelengths.size() == 61);
    CHECK(pred.wavelengths.front() == 400.0);
    CHECK(pred.wavelengths.back() == 700.0);
    CHECK(fs::exists(out / "error_map.pgm"));
    CHECK(fs::exists(out / "error_map.nsrt"));
}

TEST_CASE("bench arbitrary emits rows for 31/16/11/7 bands") {
    const Dataset& ds = shared_dataset();
    const fs::path out = fresh_dir("bench");
    REQUIRE(cli({"bench", "--out", out.string(), "--mode", "arbitrary", "--data",
                 ds.test_manifest, "--checkpoint", "arb=" + shared_checkpoint()}) == 0);
    const auto report = nlohmann::json::parse(slurp(out / "report.json"));
    std::vector<std::size_t> bands;
    for (const auto& row : report.at("rows")) {
        if (row.at("method") == "bi") bands.push_back(row.at("bands").get<std::size_t>());
    }
    CHECK(bands == std::vector<std::size_t>{31, 16, 11, 7});
}

TEST_CASE("eval writes a report and per-scene error maps") {
    const Dataset& ds = shared_dataset();
    const fs::path out = fresh_dir("eval");
    REQUIRE(cli({"eval", "--out", out.string(), "--data", ds.test_manifest, "--checkpoint",
                 shared_checkpoint(), "--bands", "7"}) == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "error_t0000.pgm"));
    CHECK(fs::exists(out / "error_t0000.nsrt"));
}

TEST_CASE("usage errors exit 1 with one-line messages") {
    const Dataset& ds = shared_dataset();
    CHECK(cli({"frobnicate"}) == 1);
    CHECK(cli({"reconstruct", "--out", fresh_dir("e1").string(), "--checkpoint",
               shared_checkpoint(), "--bands", "300:10:700", "--data", ds.test_manifest,
               "--scene-id", "t0000"}) == 1);
    CHECK(cli({"train", "--out", fresh_dir("e2").string(), "--data", ds.train_manifest,
               "--set", "train.not_a_key=1"}) == 1);
    CHECK(cli({"reconstruct", "--out", fresh_dir("e3").string(), "--checkpoint",
               shared_checkpoint(), "--bands", "31"}) == 1);
}

TEST_CASE("missing files exit 2") {
    CHECK(cli({"eval", "--out", fresh_dir("e4").string(), "--data", "/nope/manifest.json",
               "--checkpoint", shared_checkpoint()}) == 2);
    CHECK(cli({"reconstruct", "--out", fresh_dir("e5").string(), "--checkpoint",
               "/nope/checkpoint.ckpt", "--bands", "31", "--input", "/nope/in.nsrt"}) == 2);
}

TEST_CASE("reconstruct accepts a raw input tensor without ground truth") {
    const fs::path out = fresh_dir("raw");
    const fs::path input = out / "input.nsrt";
    nesr::Rng rng(3);
    nesr::Tensor<float> img = nesr::Tensor<float>::uninit({3, 16, 16});
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(rng.next_double());
    }
    nesr::write_tensor(input.string(), img);
    REQUIRE(cli({"reconstruct", "--out", out.string(), "--checkpoint", shared_checkpoint(),
                 "--bands", "420:20:600", "--input", input.string()}) == 0);
    const nesr::SpectralImage pred =
        nesr::read_spectral_image((out / "prediction.nsrt").string());
    CHECK(pred.wavelengths.size() == 10);
    CHECK(!fs::exists(out / "error_map.pgm"));
}
