#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nesr/ops.hpp"
#include "nesr/scene.hpp"
#include "nesr/tape.hpp"
#include "nesr/tensor.hpp"

namespace nesr {

enum class AttentionVariant { SpatialSpectral, Spectral, Spatial };

std::string to_string(AttentionVariant v);
AttentionVariant attention_variant_from_string(const std::string& s);

constexpr double kMraeEps = 1e-3;

struct ModelConfig {
    std::size_t in_channels = 3;       // 3 for RGB, band count for SSR input
    std::size_t encoder_channels = 32;  // F
    std::size_t embed_channels = 32;    // C
    bool enable_spi = true;
    bool enable_nam = true;
    AttentionVariant attention_variant = AttentionVariant::SpatialSpectral;
    double leaky_slope = 0.01;
    // Speculative: also feed normalized (h, w) into the token embedding.
    // Off by default; the reference formulation conditions on wavelength only.
    bool include_spatial_coords = false;
    double lambda_min = kLambdaMin;
    double lambda_max = kLambdaMax;

    static constexpr std::array<std::size_t, 4> kDecoderHidden = {128, 128, 256, 256};

    std::size_t token_features() const {
        return embed_channels + 1 + (include_spatial_coords ? 2 : 0);
    }
    void validate() const;
};

// Normalized spectral coordinates x = 2(lambda - 400)/300 - 1, one scalar per
// output band, broadcast over the spatial plane.
struct CoordinateGrid {
    std::vector<double> wavelengths;
    std::vector<double> normalized_bands;  // in [-1, 1]
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t bands() const { return wavelengths.size(); }
    Tensor<double> normalized() const;  // bands x H x W, constant per slice
};

CoordinateGrid normalize_wavelengths(const std::vector<double>& wavelengths, std::size_t height,
                                     std::size_t width, double lambda_min = kLambdaMin,
                                     double lambda_max = kLambdaMax);

template <class T>
struct ConvWeights {
    Tensor<T> weight;
    Tensor<T> bias;
};

template <class T>
struct EncoderWeights {
    ConvWeights<T> stem;  // in_channels -> F, 3x3
    struct ResBlock {
        ConvWeights<T> conv0;
        ConvWeights<T> conv1;
    };
    std::array<ResBlock, 4> blocks;
};

template <class T>
struct SpiWeights {
    ConvWeights<T> conv1;    // 2 -> C, 3x3x3 (SPI enabled)
    ConvWeights<T> conv2;    // C -> C, 3x3x3 (SPI enabled)
    ConvWeights<T> project;  // F -> C, 1x1x1 (SPI disabled fallback)
};

template <class T>
struct NamWeights {
    Tensor<T> token_w;  // token_features -> C
    Tensor<T> token_b;
    Tensor<T> wq, wk, wv;  // C x C, no bias
    Tensor<T> out_w;       // C -> C
    Tensor<T> out_b;
};

template <class T>
struct HeadWeights {
    std::array<Tensor<T>, 5> w;  // C->128->128->256->256->1
    std::array<Tensor<T>, 5> b;
};

template <class T>
struct ModelWeights {
    ModelConfig config;
    EncoderWeights<T> encoder;
    SpiWeights<T> spi;
    NamWeights<T> nam;
    HeadWeights<T> head;

    // Active parameters in a stable, documented order; names are the
    // checkpoint keys.
    std::vector<std::pair<std::string, Tensor<T>*>> parameters();
    std::vector<std::pair<std::string, const Tensor<T>*>> parameters() const;

    // Aliases registered as tape leaves; originals stay untracked.
    ModelWeights tracked(Tape<T>& tape) const;
};

// Seeded uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases. Each
// tensor's stream is derived from (seed, name), so identical names
// initialize identically across config variants.
template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed);

template <class T>
Tensor<T> encode(const Tensor<T>& input, const EncoderWeights<T>& w, const ModelConfig& cfg);

// Interpolation positions on the F-profile axis for each output band:
// p = (x + 1)/2 * (F - 1). On a uniform full-range grid this reduces to the
// endpoints-aligned resize positions.
std::vector<double> spi_positions(const CoordinateGrid& grid, std::size_t profile_len);

template <class T>
struct SpiBranches {
    Tensor<T> vertical;    // bands x H x W
    Tensor<T> horizontal;  // identical values by construction
};

// Pre-fusion SPI branches, exposed for the interpolation oracle.
template <class T>
SpiBranches<T> spi_branches(const Tensor<T>& m_in, const CoordinateGrid& grid);

template <class T>
Tensor<T> spi_forward(const Tensor<T>& m_in, const CoordinateGrid& grid, const SpiWeights<T>& w,
                      const ModelConfig& cfg);

template <class T>
Tensor<T> nam_forward(const Tensor<T>& m_out, const CoordinateGrid& grid, const NamWeights<T>& w,
                      const ModelConfig& cfg);

template <class T>
Tensor<T> decode(const Tensor<T>& v_star, const HeadWeights<T>& w);

// Full pipeline: input [in_channels x H x W] + wavelengths -> [bands x H x W].
// The band count comes solely from the wavelength list.
template <class T>
Tensor<T> forward(const Tensor<T>& input, const std::vector<double>& wavelengths,
                  const ModelWeights<T>& w);

// Eq-style loss alias: mean(|pred - gt| / (gt + eps)).
template <class T>
Tensor<T> mrae_loss(const Tensor<T>& pred, const Tensor<T>& gt, T eps = T(kMraeEps)) {
    return mrae(pred, gt, eps);
}

}  // namespace nesr
