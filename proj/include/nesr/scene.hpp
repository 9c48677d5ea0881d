#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nesr/tensor.hpp"

namespace nesr {

constexpr double kLambdaMin = 400.0;
constexpr double kLambdaMax = 700.0;

// Wavelength sample of one material spectrum: a Gaussian mixture plus a
// small baseline, all in [0,1] after scene normalization.
struct GaussianComponent {
    double center_nm = 0;
    double width_nm = 0;
    double amplitude = 0;
};

struct Endmember {
    std::vector<GaussianComponent> components;
    double baseline = 0;

    double value(double lambda_nm) const;
};

// Analytic linear-mixing scene: radiance(y, x, lambda) =
// sum_k abundance[k](y, x) * endmember_k(lambda). Sampling any wavelength
// grid evaluates this closed form exactly, so grids sharing wavelengths
// agree bit-for-bit.
struct SpectralScene {
    std::uint64_t seed = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Endmember> endmembers;
    Tensor<double> abundances;  // K x H x W, convex weights per pixel

    std::size_t mixture_count() const { return endmembers.size(); }
    double radiance(std::size_t y, std::size_t x, double lambda_nm) const;
};

// Wavelength list plus band volume in [0,1].
struct SpectralImage {
    std::vector<double> wavelengths;  // strictly increasing, nm
    Tensor<double> volume;            // bands x H x W
};

// Three Gaussian sensitivity curves (R, G, B). Weights over a sampled band
// grid are renormalized per channel to sum to 1.
struct CameraResponse {
    struct Channel {
        double peak_nm = 0;
        double width_nm = 0;
    };
    std::array<Channel, 3> channels;  // R, G, B order

    static CameraResponse standard();  // peaks 600/550/450 nm, width 40 nm

    // Renormalized per-channel weights over the given grid.
    std::array<std::vector<double>, 3> weights(const std::vector<double>& wavelengths) const;
};

// Deterministic scene from a seed: K Gaussian-mixture endmembers (2-4
// components, centers in [400,700], widths in [15,80] nm) and smooth
// abundance maps from softmaxed blurred noise, globally normalized so
// radiance stays inside [0,1] at every wavelength.
SpectralScene generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                             std::size_t mixtures);

void validate_wavelengths(const std::vector<double>& wavelengths);

// Exact analytic evaluation at the given grid.
SpectralImage sample_bands(const SpectralScene& scene, const std::vector<double>& wavelengths);

// Same, restricted to a crop window.
SpectralImage sample_bands_crop(const SpectralScene& scene,
                                const std::vector<double>& wavelengths, std::size_t y0,
                                std::size_t x0, std::size_t crop_h, std::size_t crop_w);

// RGB_c = sum_b w_c(lambda_b) * I(lambda_b); output 3 x H x W in [0,1].
Tensor<double> project_to_rgb(const SpectralImage& img, const CameraResponse& cam);

// Uniform grid over [400, 700] inclusive; a single band sits at 550 nm.
std::vector<double> uniform_band_grid(std::size_t count);

}  // namespace nesr
