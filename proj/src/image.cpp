#include "nirpf/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include <png.h>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

void check_dims(int width, int height) {
    if (width <= 0 || height <= 0) {
        throw Error(ErrorCode::DimensionMismatch, "image dimensions must be positive");
    }
}

std::uint8_t quantize(double v) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<std::uint8_t>(q);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

class PgmHeaderReader {
public:
    explicit PgmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    // Skips whitespace and '#' comments, then reads one decimal field.
    long field() {
        for (;;) {
            while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
            if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
                continue;
            }
            break;
        }
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
            throw Error(ErrorCode::CorruptHeader, "expected a number in PGM header");
        }
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000) throw Error(ErrorCode::CorruptHeader, "PGM header field too large");
            ++pos_;
        }
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t payload_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw Error(ErrorCode::CorruptHeader, "missing separator before PGM raster");
        }
        return pos_ + 1;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

NirImage decode_pgm(std::span<const std::uint8_t> bytes) {
    PgmHeaderReader header(bytes);
    const long width = header.field();
    const long height = header.field();
    const long maxval = header.field();
    if (width <= 0 || height <= 0) throw Error(ErrorCode::CorruptHeader, "PGM dimensions must be positive");
    if (maxval != 255) throw Error(ErrorCode::UnsupportedFormat, "only maxval 255 PGM is supported");

    const std::size_t offset = header.payload_offset();
    const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    const std::size_t available = bytes.size() - std::min(offset, bytes.size());
    if (available < expected) {
        throw Error(ErrorCode::CorruptHeader, "PGM payload truncated: header declares " + std::to_string(expected) +
                                                  " bytes, " + std::to_string(available) + " present");
    }
    if (available > expected) {
        throw Error(ErrorCode::DimensionMismatch, "PGM payload larger than declared size");
    }
    std::vector<double> data(expected);
    for (std::size_t i = 0; i < expected; ++i) data[i] = bytes[offset + i] / 255.0;
    return NirImage(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

bool is_png(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

NirImage decode_png(std::span<const std::uint8_t> bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw Error(ErrorCode::CorruptHeader, std::string("PNG: ") + image.message);
    }
    if ((image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR)) != 0) {
        png_image_free(&image);
        throw Error(ErrorCode::UnsupportedFormat, "only 8-bit single-channel PNG is supported");
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
        throw Error(ErrorCode::CorruptHeader, std::string("PNG: ") + image.message);
    }
    std::vector<double> data(raster.size());
    std::transform(raster.begin(), raster.end(), data.begin(), [](std::uint8_t p) { return p / 255.0; });
    return NirImage(static_cast<int>(image.width), static_cast<int>(image.height), std::move(data));
}

std::vector<std::uint8_t> quantized(const NirImage& img) {
    std::vector<std::uint8_t> out(img.size());
    std::transform(img.data().begin(), img.data().end(), out.begin(), quantize);
    return out;
}

bool wants_png(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

}  // namespace

NirImage::NirImage(int width, int height, double fill) : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

NirImage::NirImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error(ErrorCode::DimensionMismatch, "data length differs from width*height");
    }
    for (double v : data_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw Error(ErrorCode::InvalidRange, "pixel values must lie in [0,1]");
        }
    }
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
    check_dims(width, height);
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
    if (!other.same_shape(width_, height_)) throw Error(ErrorCode::DimensionMismatch, "mask union");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
    return *this;
}

BinaryMask& BinaryMask::operator&=(const BinaryMask& other) {
    if (!other.same_shape(width_, height_)) throw Error(ErrorCode::DimensionMismatch, "mask intersection");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] &= other.bits_[i];
    return *this;
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
    if (!other.same_shape(width_, height_)) return false;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] && !other.bits_[i]) return false;
    }
    return true;
}

NirImage decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
    if (is_png(bytes)) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && std::isdigit(bytes[1])) {
        throw Error(ErrorCode::UnsupportedFormat, "only binary grayscale PGM (P5) is supported");
    }
    throw Error(ErrorCode::UnsupportedFormat, "unrecognized image format");
}

std::vector<std::uint8_t> encode_pgm(const NirImage& img) {
    const std::string header =
        "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const auto pixels = quantized(img);
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

NirImage load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_image(bytes);
}

void save_image(const NirImage& img, const std::filesystem::path& path) {
    if (img.empty()) throw Error(ErrorCode::DimensionMismatch, "cannot save an empty image");
    if (!wants_png(path)) {
        write_file(path, encode_pgm(img));
        return;
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_GRAY;
    const auto pixels = quantized(img);
    const std::string name = path.string();
    if (!png_image_write_to_file(&image, name.c_str(), 0, pixels.data(), 0, nullptr)) {
        throw Error(ErrorCode::IoFailure, "cannot write " + name + ": " + image.message);
    }
}

NirImage mask_to_image(const BinaryMask& mask) {
    NirImage img(mask.width(), mask.height());
    auto out = img.data();
    const auto bits = mask.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) out[i] = bits[i] ? 1.0 : 0.0;
    return img;
}

BinaryMask image_to_mask(const NirImage& img, double threshold) {
    BinaryMask mask(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) mask.set(x, y, img.at(x, y) > threshold);
    }
    return mask;
}

BinaryMask load_mask(const std::filesystem::path& path) {
    return image_to_mask(load_image(path), 0.0);
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
    save_image(mask_to_image(mask), path);
}

NirImage overlay_mask(const NirImage& img, const BinaryMask& mask) {
    if (!mask.same_shape(img.width(), img.height())) throw Error(ErrorCode::DimensionMismatch, "overlay");
    NirImage out = img;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (mask.test(x, y)) out.at(x, y) = 1.0;
        }
    }
    return out;
}

}  // namespace nirpf
