#include "nesr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nesr/bench.hpp"
#include "nesr/checkpoint.hpp"
#include "nesr/config_json.hpp"
#include "nesr/tensor_io.hpp"

namespace nesr {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct CommonOpts {
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 1;
    bool strict = false;
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--out", opts.out, "output directory")->required();
    cmd->add_option("--seed", opts.seed, "master seed (falls back to NESR_SEED)")
        ->each([&](const std::string&) { opts.seed_given = true; });
    cmd->add_option("--workers", opts.workers, "kernel worker threads")
        ->check(CLI::Range(1, 256));
    cmd->add_flag("--strict", opts.strict, "single-threaded, bitwise-reproducible mode");
    cmd->add_option("--config", opts.config_path, "JSON config file ({model, train})");
    cmd->add_option("--set", opts.overrides,
                    "dotted config override, e.g. train.max_iters=100 (repeatable)");
}

std::uint64_t env_seed() {
    const char* v = std::getenv("NESR_SEED");
    if (!v) return 0;
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw UsageError("NESR_SEED is not an unsigned integer: " + std::string(v));
    }
}

void apply_override(json& root, const std::string& expr) {
    const std::size_t eq = expr.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw UsageError("override must look like section.key=value, got \"" + expr + "\"");
    }
    const std::string path = expr.substr(0, eq);
    const std::string raw = expr.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // unquoted strings
    }
    json* node = &root;
    std::size_t begin = 0;
    for (;;) {
        const std::size_t dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot - begin);
        if (key.empty()) throw UsageError("empty key in override \"" + expr + "\"");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

// defaults <- config file <- --set overrides; strict key checking happens
// when the sections are parsed back into their structs.
json resolve_config(const CommonOpts& opts) {
    json root;
    root["model"] = model_config_to_json(ModelConfig{});
    root["train"] = train_config_to_json(TrainConfig{});
    if (!opts.config_path.empty()) {
        std::ifstream f(opts.config_path);
        if (!f) throw UsageError("cannot open config file: " + opts.config_path);
        json file_cfg;
        try {
            file_cfg = json::parse(f);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
        }
        for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it) {
            if (it.key() != "model" && it.key() != "train") {
                throw ConfigError("config file: unknown section \"" + it.key() + "\"");
            }
            for (auto kv = it->begin(); kv != it->end(); ++kv) {
                root[it.key()][kv.key()] = kv.value();
            }
        }
    }
    for (const std::string& o : opts.overrides) apply_override(root, o);
    return root;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

// The resolved configuration is echoed before any work starts; a run is
// fully described by this file.
void echo_config(const CommonOpts& opts, const std::string& command, const json& resolved) {
    fs::create_directories(opts.out);
    json echo;
    echo["version"] = kVersionString;
    echo["command"] = command;
    echo["seed"] = opts.seed;
    echo["workers"] = opts.strict ? 1 : opts.workers;
    echo["strict"] = opts.strict;
    for (auto it = resolved.begin(); it != resolved.end(); ++it) echo[it.key()] = it.value();
    write_text_file(fs::path(opts.out) / "config.json", echo.dump(2) + "\n");
}

void write_timing(const CommonOpts& opts, double wall_seconds) {
    json t;
    t["wall_seconds"] = wall_seconds;
    write_text_file(fs::path(opts.out) / "timing.json", t.dump(2) + "\n");
}

std::vector<double> parse_band_grid(const std::string& spec) {
    if (spec.find(':') == std::string::npos) {
        std::size_t count = 0;
        try {
            count = std::stoul(spec);
        } catch (const std::exception&) {
            throw UsageError("band grid must be start:step:stop or a band count, got \"" + spec +
                             "\"");
        }
        std::vector<double> grid = uniform_band_grid(count);
        validate_wavelengths(grid);
        return grid;
    }
    double start = 0, step = 0, stop = 0;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &start, &step, &stop) != 3 || step <= 0 ||
        stop < start) {
        throw UsageError("band grid must be start:step:stop with step > 0, got \"" + spec +
                         "\"");
    }
    std::vector<double> grid;
    for (std::size_t i = 0;; ++i) {
        const double wl = start + static_cast<double>(i) * step;
        if (wl > stop + 1e-9) break;
        grid.push_back(wl);
    }
    validate_wavelengths(grid);  // rejects grids outside [400, 700]
    return grid;
}

std::string scene_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
    return buf;
}

int cmd_gen_data(const CommonOpts& opts, std::size_t n_train, std::size_t n_test,
                 const std::string& size_spec, std::size_t mixtures) {
    std::size_t height = 0, width = 0;
    if (std::sscanf(size_spec.c_str(), "%zux%zu", &height, &width) != 2) {
        throw UsageError("size must look like 64x64, got \"" + size_spec + "\"");
    }
    json params;
    params["params"] = json{{"scenes", n_train},
                            {"test_scenes", n_test},
                            {"height", height},
                            {"width", width},
                            {"mixtures", mixtures}};
    echo_config(opts, "gen-data", params);

    const auto t0 = std::chrono::steady_clock::now();
    const fs::path scene_dir = fs::path(opts.out) / "scenes";
    fs::create_directories(scene_dir);
    const std::vector<double> canonical = uniform_band_grid(31);
    Rng master(opts.seed);
    auto make_split = [&](const char* split, const char* prefix, std::size_t count,
                          const std::string& manifest_name) {
        SceneManifest m;
        m.dataset = "nesr-synthetic";
        m.split = split;
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t scene_seed = master.next_u64();
            const SpectralScene scene = generate_scene(scene_seed, height, width, mixtures);
            SceneRecord rec =
                save_scene(scene_dir.string(), scene_id(prefix, i), scene, canonical);
            for (std::string& f : rec.files) f = "scenes/" + f;  // relative to the manifest
            m.scenes.push_back(std::move(rec));
        }
        save_manifest((fs::path(opts.out) / manifest_name).string(), m);
    };
    make_split("train", "", n_train, "manifest_train.json");
    make_split("test", "t", n_test, "manifest_test.json");
    write_timing(opts, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count());
    std::cout << "wrote " << n_train << " train + " << n_test << " test scenes under "
              << opts.out << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_path, const json& resolved) {
    ModelConfig mcfg = model_config_from_json(resolved.at("model"));
    TrainConfig tcfg = train_config_from_json(resolved.at("train"));
    if (opts.seed_given) tcfg.seed = opts.seed;
    echo_config(opts, "train",
                json{{"model", model_config_to_json(mcfg)},
                     {"train", train_config_to_json(tcfg)},
                     {"data", data_path}});

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<SpectralScene> scenes = load_scenes(data_path);
    const TrainResult result = train(scenes, mcfg, tcfg);
    save_checkpoint((fs::path(opts.out) / "checkpoint.ckpt").string(), result.checkpoint);
    write_text_file(fs::path(opts.out) / "loss_trace.json",
                    json(result.loss_trace).dump() + "\n");
    write_timing(opts, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count());
    std::cout << "trained " << result.loss_trace.size() << " iterations, final loss "
              << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_path, const std::string& ck_path,
             const std::string& bands_spec, const json& resolved) {
    echo_config(opts, "eval",
                json{{"data", data_path}, {"checkpoint", ck_path}, {"bands", bands_spec},
                     {"model", resolved.at("model")}, {"train", resolved.at("train")}});
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> grid = parse_band_grid(bands_spec);
    const Checkpoint ck = load_checkpoint(ck_path);
    const SceneManifest manifest = load_manifest(data_path);
    const std::string dir = fs::path(data_path).parent_path().string();

    EvalReport report;
    report.mode = "eval";
    report.config_hash = config_hash_hex(ck.weights.config, ck.train_config);
    report.seed = ck.train_config.seed;
    Metrics total;
    std::vector<SpectralScene> scenes;
    for (const SceneRecord& rec : manifest.scenes) scenes.push_back(load_scene(dir, rec));
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const SpectralImage gt = sample_bands(scenes[i], grid);
        const SpectralImage pred = reconstruct_scene(ck, scenes[i], grid);
        const Metrics m = metrics_of(pred.volume, gt.volume);
        total.mrae += m.mrae;
        total.rmse += m.rmse;
        write_error_map((fs::path(opts.out) / ("error_" + manifest.scenes[i].id)).string(),
                        pred.volume, gt.volume);
    }
    total.mrae /= static_cast<double>(scenes.size());
    total.rmse /= static_cast<double>(scenes.size());
    report.rows.push_back(EvalRow{"eval", grid.size(), "nesr", total.mrae, total.rmse});
    save_report((fs::path(opts.out) / "report.json").string(), report);
    write_timing(opts, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count());
    std::cout << "MRAE " << total.mrae << "  RMSE " << total.rmse << " over " << scenes.size()
              << " scenes at " << grid.size() << " bands\n";
    return 0;
}

int cmd_bench(const CommonOpts& opts, const std::string& mode, const std::string& data_path,
              const std::string& train_data_path,
              const std::vector<std::string>& checkpoint_args, const json& resolved) {
    echo_config(opts, "bench",
                json{{"mode", mode},
                     {"data", data_path},
                     {"train_data", train_data_path},
                     {"model", resolved.at("model")},
                     {"train", resolved.at("train")}});
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, Checkpoint> checkpoints;
    for (const std::string& arg : checkpoint_args) {
        const std::size_t eq = arg.find('=');
        if (eq == std::string::npos) {
            throw UsageError("--checkpoint expects name=path, got \"" + arg + "\"");
        }
        checkpoints.emplace(arg.substr(0, eq), load_checkpoint(arg.substr(eq + 1)));
    }
    const std::vector<SpectralScene> test_scenes = load_scenes(data_path);
    std::vector<SpectralScene> train_scenes;
    TrainConfig budget = train_config_from_json(resolved.at("train"));
    if (opts.seed_given) budget.seed = opts.seed;
    ModelConfig base = model_config_from_json(resolved.at("model"));
    if (mode == "ablation") {
        if (train_data_path.empty()) {
            throw UsageError("bench --mode ablation needs --train-data");
        }
        train_scenes = load_scenes(train_data_path);
    }
    const EvalReport report =
        benchmark_suite(mode, checkpoints, test_scenes, train_scenes, &budget, &base);
    save_report((fs::path(opts.out) / "report.json").string(), report);
    write_timing(opts, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count());
    for (const EvalRow& r : report.rows) {
        std::cout << r.experiment << " " << r.bands << " bands  " << r.method << "  MRAE "
                  << r.mrae << "  RMSE " << r.rmse << "\n";
    }
    return 0;
}

int cmd_reconstruct(const CommonOpts& opts, const std::string& ck_path,
                    const std::string& bands_spec, const std::string& data_path,
                    const std::string& scene_id_arg, const std::string& input_path) {
    echo_config(opts, "reconstruct",
                json{{"checkpoint", ck_path},
                     {"bands", bands_spec},
                     {"data", data_path},
                     {"scene_id", scene_id_arg},
                     {"input", input_path}});
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> grid = parse_band_grid(bands_spec);
    const Checkpoint ck = load_checkpoint(ck_path);

    SpectralImage pred;
    bool have_gt = false;
    SpectralImage gt;
    if (!input_path.empty()) {
        const Tensor<float> input = read_tensor<float>(input_path);
        if (input.rank() != 3 || input.extent(0) != ck.weights.config.in_channels) {
            throw UsageError("input tensor must be [" +
                             std::to_string(ck.weights.config.in_channels) +
                             " x H x W] for this checkpoint, got " + shape_str(input.shape()));
        }
        pred.wavelengths = grid;
        pred.volume = forward(input, grid, ck.weights).cast<double>();
    } else {
        if (data_path.empty() || scene_id_arg.empty()) {
            throw UsageError("reconstruct needs either --input or --data plus --scene-id");
        }
        const SceneManifest manifest = load_manifest(data_path);
        const std::string dir = fs::path(data_path).parent_path().string();
        const SceneRecord* rec = nullptr;
        for (const SceneRecord& r : manifest.scenes) {
            if (r.id == scene_id_arg) rec = &r;
        }
        if (!rec) {
            throw UsageError("scene id \"" + scene_id_arg + "\" not found in " + data_path);
        }
        const SpectralScene scene = load_scene(dir, *rec);
        pred = reconstruct_scene(ck, scene, grid);
        gt = sample_bands(scene, grid);
        have_gt = true;
    }
    write_spectral_image((fs::path(opts.out) / "prediction.nsrt").string(), pred);
    if (have_gt) {
        write_error_map((fs::path(opts.out) / "error_map").string(), pred.volume, gt.volume);
    }
    write_timing(opts, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                           .count());
    std::cout << "reconstructed " << grid.size() << " bands -> " << opts.out
              << "/prediction.nsrt" << (have_gt ? " (+ error map)" : "") << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"continuous spectral reconstruction toolkit"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, eval_opts, bench_opts, rec_opts;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic scene datasets");
    add_common(gen, gen_opts);
    std::size_t gen_scenes = 64, gen_test_scenes = 8, gen_mixtures = 4;
    std::string gen_size = "64x64";
    gen->add_option("--scenes", gen_scenes, "training scenes");
    gen->add_option("--test-scenes", gen_test_scenes, "held-out scenes");
    gen->add_option("--size", gen_size, "scene extent HxW");
    gen->add_option("--mixtures", gen_mixtures, "endmembers per scene")->check(CLI::Range(1, 8));

    auto* tr = app.add_subcommand("train", "train a model on a scene manifest");
    add_common(tr, train_opts);
    std::string train_data;
    tr->add_option("--data", train_data, "training manifest JSON")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    add_common(ev, eval_opts);
    std::string eval_data, eval_ck, eval_bands = "31";
    ev->add_option("--data", eval_data, "test manifest JSON")->required();
    ev->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
    ev->add_option("--bands", eval_bands, "band grid (start:step:stop or count)");

    auto* be = app.add_subcommand("bench", "run a benchmark protocol");
    add_common(be, bench_opts);
    std::string bench_mode, bench_data, bench_train_data;
    std::vector<std::string> bench_cks;
    be->add_option("--mode", bench_mode, "arbitrary | extreme | ssr | ablation")->required();
    be->add_option("--data", bench_data, "test manifest JSON")->required();
    be->add_option("--train-data", bench_train_data, "train manifest (ablation mode)");
    be->add_option("--checkpoint", bench_cks, "name=path (repeatable)");

    auto* rc = app.add_subcommand("reconstruct", "reconstruct a spectral image");
    add_common(rc, rec_opts);
    std::string rec_ck, rec_bands = "400:10:700", rec_data, rec_scene, rec_input;
    rc->add_option("--checkpoint", rec_ck, "checkpoint file")->required();
    rc->add_option("--bands", rec_bands, "band grid (start:step:stop or count)");
    rc->add_option("--data", rec_data, "manifest JSON (with --scene-id)");
    rc->add_option("--scene-id", rec_scene, "scene to reconstruct (enables the error map)");
    rc->add_option("--input", rec_input, "raw input tensor file instead of a scene");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    auto dispatch = [&](CommonOpts& opts, auto&& fn) {
        if (!opts.seed_given) {
            opts.seed = env_seed();
            opts.seed_given = true;
        }
        set_worker_threads(opts.strict ? 1 : opts.workers);
        return fn();
    };

    try {
        if (gen->parsed()) {
            return dispatch(gen_opts, [&] {
                return cmd_gen_data(gen_opts, gen_scenes, gen_test_scenes, gen_size,
                                    gen_mixtures);
            });
        }
        if (tr->parsed()) {
            return dispatch(train_opts, [&] {
                return cmd_train(train_opts, train_data, resolve_config(train_opts));
            });
        }
        if (ev->parsed()) {
            return dispatch(eval_opts, [&] {
                return cmd_eval(eval_opts, eval_data, eval_ck, eval_bands,
                                resolve_config(eval_opts));
            });
        }
        if (be->parsed()) {
            return dispatch(bench_opts, [&] {
                return cmd_bench(bench_opts, bench_mode, bench_data, bench_train_data, bench_cks,
                                 resolve_config(bench_opts));
            });
        }
        if (rc->parsed()) {
            return dispatch(rec_opts, [&] {
                return cmd_reconstruct(rec_opts, rec_ck, rec_bands, rec_data, rec_scene,
                                       rec_input);
            });
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace nesr
