#include "nesr/model.hpp"

#include <cmath>

namespace nesr {

std::string to_string(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::SpatialSpectral:
            return "spatial_spectral";
        case AttentionVariant::Spectral:
            return "spectral";
        case AttentionVariant::Spatial:
            return "spatial";
    }
    return "spatial_spectral";
}

AttentionVariant attention_variant_from_string(const std::string& s) {
    if (s == "spatial_spectral") return AttentionVariant::SpatialSpectral;
    if (s == "spectral") return AttentionVariant::Spectral;
    if (s == "spatial") return AttentionVariant::Spatial;
    throw ConfigError("unknown attention variant \"" + s +
                      "\" (expected spatial_spectral, spectral or spatial)");
}

void ModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (encoder_channels < 1) throw ConfigError("encoder_channels must be >= 1");
    if (embed_channels < 1) throw ConfigError("embed_channels must be >= 1");
    if (!(leaky_slope >= 0)) throw ConfigError("leaky_slope must be nonnegative");
    if (!(lambda_min < lambda_max)) throw ConfigError("lambda_min must be below lambda_max");
}

Tensor<double> CoordinateGrid::normalized() const {
    Tensor<double> t = Tensor<double>::uninit({bands(), height, width});
    const std::size_t plane = height * width;
    for (std::size_t b = 0; b < bands(); ++b) {
        std::fill(t.data() + b * plane, t.data() + (b + 1) * plane, normalized_bands[b]);
    }
    return t;
}

CoordinateGrid normalize_wavelengths(const std::vector<double>& wavelengths, std::size_t height,
                                     std::size_t width, double lambda_min, double lambda_max) {
    if (wavelengths.empty()) throw DomainError("normalize_wavelengths: empty wavelength list");
    CoordinateGrid grid;
    grid.wavelengths = wavelengths;
    grid.height = height;
    grid.width = width;
    grid.normalized_bands.resize(wavelengths.size());
    for (std::size_t b = 0; b < wavelengths.size(); ++b) {
        const double wl = wavelengths[b];
        if (wl < lambda_min || wl > lambda_max) {
            throw DomainError("wavelength " + std::to_string(wl) + " outside [" +
                              std::to_string(lambda_min) + ", " + std::to_string(lambda_max) +
                              "]");
        }
        if (b > 0 && !(wl > wavelengths[b - 1])) {
            throw DomainError("wavelengths must be strictly increasing");
        }
        grid.normalized_bands[b] = 2.0 * (wl - lambda_min) / (lambda_max - lambda_min) - 1.0;
    }
    return grid;
}

namespace {

template <class T>
Tensor<T> init_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                       const std::string& name, std::uint64_t seed) {
    Rng rng(fnv1a(name, 0x9e3779b97f4a7c15ULL ^ seed));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor<T> t = Tensor<T>::uninit(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return t;
}

}  // namespace

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelWeights<T>::parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("encoder.stem.weight", &encoder.stem.weight);
    out.emplace_back("encoder.stem.bias", &encoder.stem.bias);
    for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
        const std::string base = "encoder.res" + std::to_string(i);
        out.emplace_back(base + ".conv0.weight", &encoder.blocks[i].conv0.weight);
        out.emplace_back(base + ".conv0.bias", &encoder.blocks[i].conv0.bias);
        out.emplace_back(base + ".conv1.weight", &encoder.blocks[i].conv1.weight);
        out.emplace_back(base + ".conv1.bias", &encoder.blocks[i].conv1.bias);
    }
    if (config.enable_spi) {
        out.emplace_back("spi.conv1.weight", &spi.conv1.weight);
        out.emplace_back("spi.conv1.bias", &spi.conv1.bias);
        out.emplace_back("spi.conv2.weight", &spi.conv2.weight);
        out.emplace_back("spi.conv2.bias", &spi.conv2.bias);
    } else {
        out.emplace_back("spi.project.weight", &spi.project.weight);
        out.emplace_back("spi.project.bias", &spi.project.bias);
    }
    out.emplace_back("nam.token.weight", &nam.token_w);
    out.emplace_back("nam.token.bias", &nam.token_b);
    if (config.enable_nam) {
        out.emplace_back("nam.wq", &nam.wq);
        out.emplace_back("nam.wk", &nam.wk);
        out.emplace_back("nam.wv", &nam.wv);
        out.emplace_back("nam.out.weight", &nam.out_w);
        out.emplace_back("nam.out.bias", &nam.out_b);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string base = "head.fc" + std::to_string(i);
        out.emplace_back(base + ".weight", &head.w[i]);
        out.emplace_back(base + ".bias", &head.b[i]);
    }
    out.emplace_back("head.out.weight", &head.w[4]);
    out.emplace_back("head.out.bias", &head.b[4]);
    return out;
}

template <class T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelWeights<T>::parameters() const {
    auto mut = const_cast<ModelWeights<T>*>(this)->parameters();
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    out.reserve(mut.size());
    for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
}

template <class T>
ModelWeights<T> ModelWeights<T>::tracked(Tape<T>& tape) const {
    ModelWeights<T> copy = *this;
    for (auto& [name, ptr] : copy.parameters()) {
        (void)name;
        *ptr = tape.leaf(*ptr);
    }
    return copy;
}

template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t f = cfg.encoder_channels;
    const std::size_t c = cfg.embed_channels;
    ModelWeights<T> w;
    w.config = cfg;
    auto conv2d = [&](const std::string& name, std::size_t ci, std::size_t co) {
        ConvWeights<T> cw;
        cw.weight = init_uniform<T>({co, ci, 3, 3}, ci * 9, name + ".weight", seed);
        cw.bias = Tensor<T>::zeros({co});
        return cw;
    };
    w.encoder.stem = conv2d("encoder.stem", cfg.in_channels, f);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string base = "encoder.res" + std::to_string(i);
        w.encoder.blocks[i].conv0 = conv2d(base + ".conv0", f, f);
        w.encoder.blocks[i].conv1 = conv2d(base + ".conv1", f, f);
    }
    if (cfg.enable_spi) {
        w.spi.conv1.weight = init_uniform<T>({c, 2, 3, 3, 3}, 2 * 27, "spi.conv1.weight", seed);
        w.spi.conv1.bias = Tensor<T>::zeros({c});
        w.spi.conv2.weight = init_uniform<T>({c, c, 3, 3, 3}, c * 27, "spi.conv2.weight", seed);
        w.spi.conv2.bias = Tensor<T>::zeros({c});
    } else {
        w.spi.project.weight = init_uniform<T>({c, f, 1, 1, 1}, f, "spi.project.weight", seed);
        w.spi.project.bias = Tensor<T>::zeros({c});
    }
    w.nam.token_w =
        init_uniform<T>({cfg.token_features(), c}, cfg.token_features(), "nam.token.weight", seed);
    w.nam.token_b = Tensor<T>::zeros({c});
    if (cfg.enable_nam) {
        w.nam.wq = init_uniform<T>({c, c}, c, "nam.wq", seed);
        w.nam.wk = init_uniform<T>({c, c}, c, "nam.wk", seed);
        w.nam.wv = init_uniform<T>({c, c}, c, "nam.wv", seed);
        w.nam.out_w = init_uniform<T>({c, c}, c, "nam.out.weight", seed);
        w.nam.out_b = Tensor<T>::zeros({c});
    }
    const std::array<std::size_t, 6> dims = {c, 128, 128, 256, 256, 1};
    for (std::size_t i = 0; i < 5; ++i) {
        const std::string name = i < 4 ? "head.fc" + std::to_string(i) : "head.out";
        w.head.w[i] = init_uniform<T>({dims[i], dims[i + 1]}, dims[i], name + ".weight", seed);
        w.head.b[i] = Tensor<T>::zeros({dims[i + 1]});
    }
    return w;
}

template <class T>
Tensor<T> encode(const Tensor<T>& input, const EncoderWeights<T>& w, const ModelConfig& cfg) {
    if (input.rank() != 3 || input.extent(0) != cfg.in_channels) {
        throw ConfigError("encode: expected input [" + std::to_string(cfg.in_channels) +
                          " x H x W], got " + shape_str(input.shape()));
    }
    if (input.extent(1) < 8 || input.extent(2) < 8) {
        throw DomainError("encode: spatial extents must be at least 8x8, got " +
                          shape_str(input.shape()));
    }
    const T slope = static_cast<T>(cfg.leaky_slope);
    Tensor<T> x = activate(convolve(input, w.stem.weight, w.stem.bias, 2, 1), Act::LeakyRelu,
                           slope);
    for (const auto& block : w.blocks) {
        Tensor<T> y = activate(convolve(x, block.conv0.weight, block.conv0.bias, 2, 1),
                               Act::LeakyRelu, slope);
        y = convolve(y, block.conv1.weight, block.conv1.bias, 2, 1);
        x = activate(add(x, y), Act::LeakyRelu, slope);
    }
    return x;
}

std::vector<double> spi_positions(const CoordinateGrid& grid, std::size_t profile_len) {
    std::vector<double> pos(grid.bands());
    for (std::size_t b = 0; b < grid.bands(); ++b) {
        const double unit = 0.5 * (grid.normalized_bands[b] + 1.0);  // [0, 1]
        pos[b] = unit * static_cast<double>(profile_len - 1);
    }
    return pos;
}

template <class T>
SpiBranches<T> spi_branches(const Tensor<T>& m_in, const CoordinateGrid& grid) {
    if (m_in.rank() != 3) {
        throw DimensionError("spi_branches: expected [F x H x W], got " +
                             shape_str(m_in.shape()));
    }
    const std::vector<double> pos = spi_positions(grid, m_in.extent(0));
    SpiBranches<T> out;
    out.vertical = spi_branch(m_in, pos, SpiOrientation::Vertical);
    out.horizontal = spi_branch(m_in, pos, SpiOrientation::Horizontal);
    return out;
}

template <class T>
Tensor<T> spi_forward(const Tensor<T>& m_in, const CoordinateGrid& grid, const SpiWeights<T>& w,
                      const ModelConfig& cfg) {
    const std::size_t bands = grid.bands();
    if (bands < 1) throw DomainError("spi_forward: need at least one output band");
    const T slope = static_cast<T>(cfg.leaky_slope);
    if (cfg.enable_spi) {
        SpiBranches<T> br = spi_branches(m_in, grid);
        Tensor<T> stacked = stack_pair(br.horizontal, br.vertical);  // 2 x bands x H x W
        Tensor<T> z =
            activate(convolve(stacked, w.conv1.weight, w.conv1.bias, 3, 1), Act::LeakyRelu, slope);
        return activate(convolve(z, w.conv2.weight, w.conv2.bias, 3, 1), Act::LeakyRelu, slope);
    }
    // Fallback: replicate the feature map across depth and project F -> C
    // with a pointwise volume conv.
    const std::size_t f = m_in.extent(0), h = m_in.extent(1), wd = m_in.extent(2);
    Tensor<T> rep = repeat_leading(m_in, bands);                    // bands x F x H x W
    rep = reshape(rep, {bands, f, h * wd});
    rep = permute_102(rep);                                         // F x bands x HW
    rep = reshape(rep, {f, bands, h, wd});
    return convolve(rep, w.project.weight, w.project.bias, 3, 0);
}

namespace {

template <class T>
Tensor<T> token_coordinates(const CoordinateGrid& grid, const ModelConfig& cfg) {
    const std::size_t bands = grid.bands(), h = grid.height, w = grid.width;
    const std::size_t n = bands * h * w;
    const std::size_t cols = cfg.include_spatial_coords ? 3 : 1;
    Tensor<T> out = Tensor<T>::uninit({n, cols});
    std::size_t t = 0;
    for (std::size_t b = 0; b < bands; ++b) {
        const T xb = static_cast<T>(grid.normalized_bands[b]);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x, ++t) {
                out[t * cols] = xb;
                if (cfg.include_spatial_coords) {
                    out[t * cols + 1] =
                        h > 1 ? static_cast<T>(2.0 * y / (h - 1) - 1.0) : T(0);
                    out[t * cols + 2] =
                        w > 1 ? static_cast<T>(2.0 * x / (w - 1) - 1.0) : T(0);
                }
            }
        }
    }
    return out;
}

}  // namespace

template <class T>
Tensor<T> nam_forward(const Tensor<T>& m_out, const CoordinateGrid& grid, const NamWeights<T>& w,
                      const ModelConfig& cfg) {
    const std::size_t c = cfg.embed_channels;
    const std::size_t bands = grid.bands(), h = grid.height, wd = grid.width;
    const std::size_t n = bands * h * wd;
    if (m_out.rank() != 4 || m_out.extent(0) != c || m_out.extent(1) != bands ||
        m_out.extent(2) != h || m_out.extent(3) != wd) {
        throw ConfigError("nam_forward: feature volume " + shape_str(m_out.shape()) +
                          " does not match C=" + std::to_string(c) + ", grid " +
                          std::to_string(bands) + "x" + std::to_string(h) + "x" +
                          std::to_string(wd));
    }
    // per-voxel token rows [feature || coordinate]
    Tensor<T> features = transpose(reshape(m_out, {c, n}));  // N x C
    Tensor<T> tokens = concat_cols(features, token_coordinates<T>(grid, cfg));
    Tensor<T> v = affine(tokens, w.token_w, w.token_b);      // N x C
    if (!cfg.enable_nam) return v;

    Tensor<T> q = matmul(v, w.wq);
    Tensor<T> k = matmul(v, w.wk);
    Tensor<T> val = matmul(v, w.wv);
    Tensor<T> att;
    switch (cfg.attention_variant) {
        case AttentionVariant::SpatialSpectral: {
            // channel-by-channel similarity over all tokens
            Tensor<T> a = softmax(matmul_tn(q, k));  // C x C, rows sum to 1
            att = matmul(val, a);                      // N x C
            break;
        }
        case AttentionVariant::Spectral: {
            // attention across the band axis at each spatial site
            Tensor<T> qr = permute_102(reshape(q, {bands, h * wd, c}));  // HW x bands x C
            Tensor<T> kr = permute_102(reshape(k, {bands, h * wd, c}));
            Tensor<T> vr = permute_102(reshape(val, {bands, h * wd, c}));
            Tensor<T> a = softmax(bmm_nt(qr, kr));        // HW x bands x bands
            Tensor<T> out = matmul(a, vr);                // HW x bands x C
            att = reshape(permute_102(out), {n, c});
            break;
        }
        case AttentionVariant::Spatial: {
            // attention across spatial sites within each band
            Tensor<T> qr = reshape(q, {bands, h * wd, c});
            Tensor<T> kr = reshape(k, {bands, h * wd, c});
            Tensor<T> vr = reshape(val, {bands, h * wd, c});
            Tensor<T> a = softmax(bmm_nt(qr, kr));        // bands x HW x HW
            att = reshape(matmul(a, vr), {n, c});
            break;
        }
    }
    return affine(att, w.out_w, w.out_b);
}

template <class T>
Tensor<T> decode(const Tensor<T>& v_star, const HeadWeights<T>& w) {
    if (v_star.rank() != 2 || v_star.extent(1) != w.w[0].extent(0)) {
        throw DimensionError("decode: token width " + shape_str(v_star.shape()) +
                             " does not match head input " + shape_str(w.w[0].shape()));
    }
    Tensor<T> x = v_star;
    for (std::size_t i = 0; i < 4; ++i) {
        x = affine(x, w.w[i], w.b[i], Act::Relu, T(0));
    }
    return affine(x, w.w[4], w.b[4]);
}

template <class T>
Tensor<T> forward(const Tensor<T>& input, const std::vector<double>& wavelengths,
                  const ModelWeights<T>& w) {
    const ModelConfig& cfg = w.config;
    cfg.validate();
    if (input.rank() != 3) {
        throw ConfigError("forward: expected [channels x H x W], got " +
                          shape_str(input.shape()));
    }
    const std::size_t h = input.extent(1), wd = input.extent(2);
    const CoordinateGrid grid =
        normalize_wavelengths(wavelengths, h, wd, cfg.lambda_min, cfg.lambda_max);
    Tensor<T> m_in = encode(input, w.encoder, cfg);
    Tensor<T> m_out = spi_forward(m_in, grid, w.spi, cfg);
    Tensor<T> v_star = nam_forward(m_out, grid, w.nam, cfg);
    Tensor<T> y = decode(v_star, w.head);
    return reshape(y, {grid.bands(), h, wd});
}

#define NESR_INSTANTIATE_MODEL(T)                                                                 \
    template struct ModelWeights<T>;                                                             \
    template ModelWeights<T> init_weights<T>(const ModelConfig&, std::uint64_t);                 \
    template Tensor<T> encode<T>(const Tensor<T>&, const EncoderWeights<T>&, const ModelConfig&); \
    template SpiBranches<T> spi_branches<T>(const Tensor<T>&, const CoordinateGrid&);            \
    template Tensor<T> spi_forward<T>(const Tensor<T>&, const CoordinateGrid&,                   \
                                      const SpiWeights<T>&, const ModelConfig&);                 \
    template Tensor<T> nam_forward<T>(const Tensor<T>&, const CoordinateGrid&,                   \
                                      const NamWeights<T>&, const ModelConfig&);                 \
    template Tensor<T> decode<T>(const Tensor<T>&, const HeadWeights<T>&);                       \
    template Tensor<T> forward<T>(const Tensor<T>&, const std::vector<double>&,                  \
                                  const ModelWeights<T>&);

NESR_INSTANTIATE_MODEL(float)
NESR_INSTANTIATE_MODEL(double)

}  // namespace nesr
