#include "nesr/config_json.hpp"

namespace nesr {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::vector<std::string>& known, const char* what) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError(std::string(what) + ": unknown key \"" + it.key() + "\"");
        }
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return json{{"in_channels", cfg.in_channels},
                {"encoder_channels", cfg.encoder_channels},
                {"embed_channels", cfg.embed_channels},
                {"enable_spi", cfg.enable_spi},
                {"enable_nam", cfg.enable_nam},
                {"attention_variant", to_string(cfg.attention_variant)},
                {"leaky_slope", cfg.leaky_slope},
                {"include_spatial_coords", cfg.include_spatial_coords},
                {"lambda_min", cfg.lambda_min},
                {"lambda_max", cfg.lambda_max}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"in_channels", "encoder_channels", "embed_channels", "enable_spi",
                    "enable_nam", "attention_variant", "leaky_slope", "include_spatial_coords",
                    "lambda_min", "lambda_max"},
                   "model config");
    ModelConfig cfg;
    maybe(j, "in_channels", cfg.in_channels);
    maybe(j, "encoder_channels", cfg.encoder_channels);
    maybe(j, "embed_channels", cfg.embed_channels);
    maybe(j, "enable_spi", cfg.enable_spi);
    maybe(j, "enable_nam", cfg.enable_nam);
    if (j.contains("attention_variant")) {
        cfg.attention_variant =
            attention_variant_from_string(j.at("attention_variant").get<std::string>());
    }
    maybe(j, "leaky_slope", cfg.leaky_slope);
    maybe(j, "include_spatial_coords", cfg.include_spatial_coords);
    maybe(j, "lambda_min", cfg.lambda_min);
    maybe(j, "lambda_max", cfg.lambda_max);
    cfg.validate();
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return json{{"lr0", cfg.lr0},
                {"decay_every", cfg.decay_every},
                {"max_iters", cfg.max_iters},
                {"crop", cfg.crop},
                {"batch_size", cfg.batch_size},
                {"band_sampling",
                 cfg.band_sampling == BandSampling::Fixed ? "fixed" : "uniform_random"},
                {"fixed_bands", cfg.fixed_bands},
                {"band_min", cfg.band_min},
                {"band_max", cfg.band_max},
                {"seed", cfg.seed},
                {"input_bands", cfg.input_bands},
                {"rgb_render_bands", cfg.rgb_render_bands}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"lr0", "decay_every", "max_iters", "crop", "batch_size", "band_sampling",
                    "fixed_bands", "band_min", "band_max", "seed", "input_bands",
                    "rgb_render_bands"},
                   "train config");
    TrainConfig cfg;
    maybe(j, "lr0", cfg.lr0);
    maybe(j, "decay_every", cfg.decay_every);
    maybe(j, "max_iters", cfg.max_iters);
    maybe(j, "crop", cfg.crop);
    maybe(j, "batch_size", cfg.batch_size);
    if (j.contains("band_sampling")) {
        const std::string s = j.at("band_sampling").get<std::string>();
        if (s == "fixed") {
            cfg.band_sampling = BandSampling::Fixed;
        } else if (s == "uniform_random") {
            cfg.band_sampling = BandSampling::UniformRandom;
        } else {
            throw ConfigError("band_sampling must be \"fixed\" or \"uniform_random\", got \"" +
                              s + "\"");
        }
    }
    maybe(j, "fixed_bands", cfg.fixed_bands);
    maybe(j, "band_min", cfg.band_min);
    maybe(j, "band_max", cfg.band_max);
    maybe(j, "seed", cfg.seed);
    maybe(j, "input_bands", cfg.input_bands);
    maybe(j, "rgb_render_bands", cfg.rgb_render_bands);
    cfg.validate();
    return cfg;
}

std::string config_hash_hex(const ModelConfig& mcfg, const TrainConfig& tcfg) {
    const std::string canon =
        model_config_to_json(mcfg).dump() + "|" + train_config_to_json(tcfg).dump();
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(canon)));
    return std::string(buf);
}

}  // namespace nesr
