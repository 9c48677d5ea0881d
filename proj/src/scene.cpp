#include "nesr/scene.hpp"

#include <algorithm>
#include <cmath>

namespace nesr {

double Endmember::value(double lambda_nm) const {
    double v = baseline;
    for (const GaussianComponent& c : components) {
        const double d = (lambda_nm - c.center_nm) / c.width_nm;
        v += c.amplitude * std::exp(-0.5 * d * d);
    }
    return v;
}

double SpectralScene::radiance(std::size_t y, std::size_t x, double lambda_nm) const {
    const std::size_t plane = height * width;
    double v = 0;
    for (std::size_t k = 0; k < endmembers.size(); ++k) {
        v += abundances[k * plane + y * width + x] * endmembers[k].value(lambda_nm);
    }
    return v;
}

CameraResponse CameraResponse::standard() {
    CameraResponse cam;
    cam.channels = {Channel{600.0, 40.0}, Channel{550.0, 40.0}, Channel{450.0, 40.0}};
    return cam;
}

std::array<std::vector<double>, 3> CameraResponse::weights(
    const std::vector<double>& wavelengths) const {
    std::array<std::vector<double>, 3> out;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double>& w = out[c];
        w.resize(wavelengths.size());
        double total = 0;
        for (std::size_t b = 0; b < wavelengths.size(); ++b) {
            const double d = (wavelengths[b] - channels[c].peak_nm) / channels[c].width_nm;
            w[b] = std::exp(-0.5 * d * d);
            total += w[b];
        }
        for (double& v : w) v /= total;
    }
    return out;
}

namespace {

// Separable box blur, replicated borders, done in place.
void box_blur(std::vector<double>& field, std::size_t h, std::size_t w, std::size_t radius) {
    std::vector<double> tmp(field.size());
    const auto clamp = [](long long v, long long lo, long long hi) {
        return std::min(std::max(v, lo), hi);
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (long long dx = -static_cast<long long>(radius); dx <= static_cast<long long>(radius); ++dx) {
                s += field[y * w + clamp(static_cast<long long>(x) + dx, 0, w - 1)];
            }
            tmp[y * w + x] = s / (2.0 * radius + 1.0);
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (long long dy = -static_cast<long long>(radius); dy <= static_cast<long long>(radius); ++dy) {
                s += tmp[clamp(static_cast<long long>(y) + dy, 0, h - 1) * w + x];
            }
            field[y * w + x] = s / (2.0 * radius + 1.0);
        }
    }
}

}  // namespace

SpectralScene generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                             std::size_t mixtures) {
    if (height < 8 || width < 8) {
        throw DomainError("generate_scene: extents must be at least 8x8, got " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (mixtures < 1 || mixtures > 8) {
        throw DomainError("generate_scene: mixture count must be in [1, 8], got " +
                          std::to_string(mixtures));
    }
    Rng rng(seed);
    SpectralScene scene;
    scene.seed = seed;
    scene.height = height;
    scene.width = width;
    scene.endmembers.resize(mixtures);
    for (Endmember& e : scene.endmembers) {
        const int n = static_cast<int>(rng.uniform_int(2, 4));
        e.components.resize(n);
        for (GaussianComponent& c : e.components) {
            c.center_nm = rng.uniform(kLambdaMin, kLambdaMax);
            c.width_nm = rng.uniform(15.0, 80.0);
            c.amplitude = rng.uniform(0.3, 1.0);
        }
        e.baseline = rng.uniform(0.04, 0.12);
    }

    // Smooth convex abundance maps: blurred noise through a per-pixel softmax.
    const std::size_t plane = height * width;
    std::vector<std::vector<double>> fields(mixtures);
    const std::size_t radius = std::max<std::size_t>(2, std::min(height, width) / 8);
    for (std::size_t k = 0; k < mixtures; ++k) {
        fields[k].resize(plane);
        for (double& v : fields[k]) v = rng.next_double();
        for (int pass = 0; pass < 3; ++pass) box_blur(fields[k], height, width, radius);
    }
    scene.abundances = Tensor<double>::uninit({mixtures, height, width});
    const double sharpness = 24.0;
    for (std::size_t p = 0; p < plane; ++p) {
        double mx = fields[0][p];
        for (std::size_t k = 1; k < mixtures; ++k) mx = std::max(mx, fields[k][p]);
        double denom = 0;
        for (std::size_t k = 0; k < mixtures; ++k) {
            denom += std::exp(sharpness * (fields[k][p] - mx));
        }
        for (std::size_t k = 0; k < mixtures; ++k) {
            scene.abundances[k * plane + p] = std::exp(sharpness * (fields[k][p] - mx)) / denom;
        }
    }

    // Global normalization: radiance is a convex mix of the endmembers, so
    // scaling by the hottest endmember peak over a fine grid bounds the whole
    // scene. The 0.95 headroom covers the grid's sub-sample error.
    double peak = 0;
    for (const Endmember& e : scene.endmembers) {
        for (double lambda = kLambdaMin; lambda <= kLambdaMax + 1e-9; lambda += 0.25) {
            peak = std::max(peak, e.value(lambda));
        }
    }
    const double scale = 0.95 / peak;
    for (Endmember& e : scene.endmembers) {
        e.baseline *= scale;
        for (GaussianComponent& c : e.components) c.amplitude *= scale;
    }
    return scene;
}

void validate_wavelengths(const std::vector<double>& wavelengths) {
    if (wavelengths.empty()) throw DomainError("wavelength list is empty");
    for (std::size_t i = 0; i < wavelengths.size(); ++i) {
        if (wavelengths[i] < kLambdaMin || wavelengths[i] > kLambdaMax) {
            throw DomainError("wavelength " + std::to_string(wavelengths[i]) +
                              " outside [400, 700] nm");
        }
        if (i > 0 && !(wavelengths[i] > wavelengths[i - 1])) {
            throw DomainError("wavelengths must be strictly increasing");
        }
    }
}

SpectralImage sample_bands_crop(const SpectralScene& scene,
                                const std::vector<double>& wavelengths, std::size_t y0,
                                std::size_t x0, std::size_t crop_h, std::size_t crop_w) {
    validate_wavelengths(wavelengths);
    if (y0 + crop_h > scene.height || x0 + crop_w > scene.width) {
        throw DomainError("crop window exceeds scene extents");
    }
    const std::size_t bands = wavelengths.size();
    const std::size_t k = scene.mixture_count();
    // endmember curves once per grid, then mixed per pixel
    std::vector<double> curves(k * bands);
    for (std::size_t m = 0; m < k; ++m) {
        for (std::size_t b = 0; b < bands; ++b) {
            curves[m * bands + b] = scene.endmembers[m].value(wavelengths[b]);
        }
    }
    SpectralImage img;
    img.wavelengths = wavelengths;
    img.volume = Tensor<double>::zeros({bands, crop_h, crop_w});
    const std::size_t plane = scene.height * scene.width;
    for (std::size_t m = 0; m < k; ++m) {
        for (std::size_t b = 0; b < bands; ++b) {
            const double cv = curves[m * bands + b];
            double* dst = img.volume.data() + b * crop_h * crop_w;
            for (std::size_t y = 0; y < crop_h; ++y) {
                const double* arow =
                    scene.abundances.data() + m * plane + (y0 + y) * scene.width + x0;
                for (std::size_t x = 0; x < crop_w; ++x) dst[y * crop_w + x] += cv * arow[x];
            }
        }
    }
    return img;
}

SpectralImage sample_bands(const SpectralScene& scene, const std::vector<double>& wavelengths) {
    return sample_bands_crop(scene, wavelengths, 0, 0, scene.height, scene.width);
}

Tensor<double> project_to_rgb(const SpectralImage& img, const CameraResponse& cam) {
    const std::size_t bands = img.wavelengths.size();
    const std::size_t h = img.volume.extent(1), w = img.volume.extent(2);
    const auto weights = cam.weights(img.wavelengths);
    Tensor<double> rgb = Tensor<double>::zeros({3, h, w});
    for (std::size_t c = 0; c < 3; ++c) {
        double* dst = rgb.data() + c * h * w;
        for (std::size_t b = 0; b < bands; ++b) {
            const double wv = weights[c][b];
            const double* src = img.volume.data() + b * h * w;
            for (std::size_t p = 0; p < h * w; ++p) dst[p] += wv * src[p];
        }
    }
    return rgb;
}

std::vector<double> uniform_band_grid(std::size_t count) {
    if (count < 1) throw DomainError("band grid needs at least one band");
    if (count == 1) return {0.5 * (kLambdaMin + kLambdaMax)};
    std::vector<double> wl(count);
    for (std::size_t i = 0; i < count; ++i) {
        wl[i] = kLambdaMin + (kLambdaMax - kLambdaMin) * static_cast<double>(i) /
                                 static_cast<double>(count - 1);
    }
    return wl;
}

}  // namespace nesr
