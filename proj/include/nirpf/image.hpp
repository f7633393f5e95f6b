#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace nirpf {

/// Single-channel intensity raster, values in [0,1], row-major.
class NirImage {
public:
    NirImage() = default;
    NirImage(int width, int height, double fill = 0.0);
    NirImage(int width, int height, std::vector<double> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double at(int x, int y) const { return data_[index(x, y)]; }
    double& at(int x, int y) { return data_[index(x, y)]; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    bool same_shape(int w, int h) const noexcept { return w == width_ && h == height_; }

    friend bool operator==(const NirImage&, const NirImage&) = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// {0,1} raster. Stored as bytes; every element is exactly 0 or 1.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool test(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool on = true) { bits_[index(x, y)] = on ? 1 : 0; }

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    std::size_t count() const noexcept;
    bool same_shape(int w, int h) const noexcept { return w == width_ && h == height_; }

    BinaryMask& operator|=(const BinaryMask& other);
    BinaryMask& operator&=(const BinaryMask& other);
    /// True when every set pixel of *this is also set in other.
    bool subset_of(const BinaryMask& other) const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

// File I/O. Formats are picked by content on load (P5 PGM or 8-bit
// grayscale PNG) and by extension on save (".png" or anything else = PGM).
// Pixels are mapped p -> p/255 on load and x -> round(255 x) on save.
NirImage load_image(const std::filesystem::path& path);
void save_image(const NirImage& img, const std::filesystem::path& path);

NirImage decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const NirImage& img);

/// Any nonzero pixel is treated as set.
BinaryMask load_mask(const std::filesystem::path& path);
/// Written as 0/255.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

NirImage mask_to_image(const BinaryMask& mask);
BinaryMask image_to_mask(const NirImage& img, double threshold = 0.5);

/// Greyscale overlay for inspection: masked pixels drawn at full white.
NirImage overlay_mask(const NirImage& img, const BinaryMask& mask);

}  // namespace nirpf
