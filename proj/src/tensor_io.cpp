#include "nesr/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace nesr {

namespace {

constexpr std::size_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = 1ull << 33;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* data;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > len) {
            throw FormatError(std::string("truncated tensor data while reading ") + what, pos);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(data[pos]) |
                          static_cast<std::uint16_t>(data[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return data[pos++];
    }
};

template <class T>
void put_scalar(std::vector<unsigned char>& out, T v) {
    if constexpr (sizeof(T) == 4) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
}

template <class T>
std::vector<unsigned char> encode_impl(const Tensor<T>& t, std::uint8_t dtype) {
    if (t.rank() < 1 || t.rank() > kMaxRank) {
        throw FormatError("tensor rank " + std::to_string(t.rank()) + " outside [1, 8]", 7);
    }
    std::vector<unsigned char> out;
    out.reserve(20 + t.size() * sizeof(T));
    out.insert(out.end(), {'N', 'S', 'R', 'T'});
    put_u16(out, kTensorFormatVersion);
    out.push_back(dtype);
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (std::size_t axis = 0; axis < t.rank(); ++axis) {
        put_u32(out, static_cast<std::uint32_t>(t.extent(axis)));
    }
    for (std::size_t i = 0; i < t.size(); ++i) put_scalar(out, t[i]);
    return out;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    f.seekg(0, std::ios::end);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path);
    return bytes;
}

// Parses the header; leaves the reader at the payload.
struct Header {
    int dtype;
    std::vector<std::size_t> shape;
    std::uint64_t elements;
};

Header parse_header(Reader& r) {
    r.need(4, "magic");
    if (std::memcmp(r.data + r.pos, "NSRT", 4) != 0) {
        throw FormatError("bad magic, expected \"NSRT\"", r.pos);
    }
    r.pos += 4;
    const std::size_t ver_pos = r.pos;
    const std::uint16_t version = r.u16("version");
    if (version != kTensorFormatVersion) {
        throw FormatError("unsupported tensor format version " + std::to_string(version),
                          ver_pos);
    }
    const std::size_t dtype_pos = r.pos;
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype > 1) {
        throw FormatError("unknown dtype " + std::to_string(dtype), dtype_pos);
    }
    const std::size_t rank_pos = r.pos;
    const std::uint8_t rank = r.u8("rank");
    if (rank < 1 || rank > kMaxRank) {
        throw FormatError("rank " + std::to_string(rank) + " outside [1, 8]", rank_pos);
    }
    Header h;
    h.dtype = dtype;
    h.elements = 1;
    for (int i = 0; i < rank; ++i) {
        const std::size_t ext_pos = r.pos;
        const std::uint32_t e = r.u32("extent");
        if (e == 0) throw FormatError("zero extent", ext_pos);
        h.elements *= e;
        if (h.elements > kMaxElements) {
            throw FormatError("extent overflow: more than 2^33 elements", ext_pos);
        }
        h.shape.push_back(e);
    }
    return h;
}

template <class T>
Tensor<T> decode_payload(Reader& r, const Header& h) {
    Tensor<T> t = Tensor<T>::uninit(h.shape);
    const std::size_t scalar = h.dtype == 0 ? 4 : 8;
    r.need(h.elements * scalar, "payload");
    for (std::uint64_t i = 0; i < h.elements; ++i) {
        if (h.dtype == 0) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                bits |= static_cast<std::uint32_t>(r.data[r.pos + b]) << (8 * b);
            }
            t[i] = static_cast<T>(std::bit_cast<float>(bits));
            r.pos += 4;
        } else {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<std::uint64_t>(r.data[r.pos + b]) << (8 * b);
            }
            t[i] = static_cast<T>(std::bit_cast<double>(bits));
            r.pos += 8;
        }
    }
    return t;
}

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor<float>& t) { return encode_impl(t, 0); }
std::vector<unsigned char> encode_tensor(const Tensor<double>& t) { return encode_impl(t, 1); }

void write_tensor(const std::string& path, const Tensor<float>& t) {
    write_bytes(path, encode_tensor(t));
}

void write_tensor(const std::string& path, const Tensor<double>& t) {
    write_bytes(path, encode_tensor(t));
}

template <class T>
Tensor<T> decode_tensor(const unsigned char* data, std::size_t len, std::size_t* consumed) {
    Reader r{data, len};
    const Header h = parse_header(r);
    Tensor<T> t = decode_payload<T>(r, h);
    if (consumed) *consumed = r.pos;
    return t;
}

template <class T>
Tensor<T> read_tensor(const std::string& path) {
    const std::vector<unsigned char> bytes = read_bytes(path);
    return decode_tensor<T>(bytes.data(), bytes.size(), nullptr);
}

int tensor_file_dtype(const std::string& path) {
    const std::vector<unsigned char> bytes = read_bytes(path);
    Reader r{bytes.data(), bytes.size()};
    return parse_header(r).dtype;
}

void write_spectral_image(const std::string& path, const SpectralImage& img) {
    if (img.volume.rank() != 3 || img.volume.extent(0) != img.wavelengths.size()) {
        throw DimensionError("spectral image band count does not match wavelength list");
    }
    std::vector<unsigned char> bytes = encode_tensor(img.volume);
    bytes.insert(bytes.end(), {'W', 'A', 'V', 'L'});
    for (double wl : img.wavelengths) put_u64(bytes, std::bit_cast<std::uint64_t>(wl));
    write_bytes(path, bytes);
}

SpectralImage read_spectral_image(const std::string& path) {
    const std::vector<unsigned char> bytes = read_bytes(path);
    Reader r{bytes.data(), bytes.size()};
    const Header h = parse_header(r);
    if (h.shape.size() != 3) {
        throw FormatError("spectral image must have rank 3, got rank " +
                              std::to_string(h.shape.size()),
                          7);
    }
    SpectralImage img;
    img.volume = decode_payload<double>(r, h);
    r.need(4, "wavelength marker");
    if (std::memcmp(r.data + r.pos, "WAVL", 4) != 0) {
        throw FormatError("missing \"WAVL\" wavelength block", r.pos);
    }
    r.pos += 4;
    img.wavelengths.resize(h.shape[0]);
    for (double& wl : img.wavelengths) {
        wl = std::bit_cast<double>(r.u64("wavelength"));
    }
    return img;
}

void write_pgm(const std::string& path, const Tensor<double>& image, double scale_max) {
    if (image.rank() != 2) throw DimensionError("PGM output expects a 2-d map");
    const std::size_t h = image.extent(0), w = image.extent(1);
    std::string header = "P5\n# scale: 255 = " + std::to_string(scale_max) + "\n" +
                         std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double v = scale_max > 0 ? std::min(image[i], scale_max) / scale_max : 0.0;
        bytes.push_back(static_cast<unsigned char>(std::lround(std::max(0.0, v) * 255.0)));
    }
    write_bytes(path, bytes);
}

template Tensor<float> read_tensor<float>(const std::string&);
template Tensor<double> read_tensor<double>(const std::string&);
template Tensor<float> decode_tensor<float>(const unsigned char*, std::size_t, std::size_t*);
template Tensor<double> decode_tensor<double>(const unsigned char*, std::size_t, std::size_t*);

}  // namespace nesr
