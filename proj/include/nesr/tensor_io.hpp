#pragma once

#include <string>
#include <vector>

#include "nesr/scene.hpp"
#include "nesr/tensor.hpp"

namespace nesr {

// Tensor container, little-endian throughout:
//   magic "NSRT" | version u16 | dtype u8 (0 = f32, 1 = f64) | rank u8 |
//   rank x u32 extents | payload row-major, last axis fastest.
// A spectral image appends marker "WAVL" followed by extent[0] f64
// wavelengths after the payload.
constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(const std::string& path, const Tensor<float>& t);
void write_tensor(const std::string& path, const Tensor<double>& t);

// Serialize into a byte buffer (the checkpoint container embeds these).
std::vector<unsigned char> encode_tensor(const Tensor<float>& t);
std::vector<unsigned char> encode_tensor(const Tensor<double>& t);

// Reading converts the stored payload to T; reading the stored scalar type
// round-trips bit-exactly.
template <class T>
Tensor<T> read_tensor(const std::string& path);

template <class T>
Tensor<T> decode_tensor(const unsigned char* data, std::size_t len, std::size_t* consumed = nullptr);

// Stored dtype of a tensor file: 0 = f32, 1 = f64.
int tensor_file_dtype(const std::string& path);

void write_spectral_image(const std::string& path, const SpectralImage& img);
SpectralImage read_spectral_image(const std::string& path);

// 8-bit binary PGM (P5) on a linear scale; scale_max maps to 255 and is
// recorded in a comment line.
void write_pgm(const std::string& path, const Tensor<double>& image, double scale_max);

}  // namespace nesr
