#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dcfuse {

// Single-channel raster with intensities in [0,1], stored row-major.
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int height, int width, float fill = 0.0f);
    GrayImage(int height, int width, std::vector<float> data);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<float> pixels() noexcept { return data_; }
    std::span<const float> pixels() const noexcept { return data_; }

    bool same_shape(const GrayImage& other) const noexcept
    {
        return height_ == other.height_ && width_ == other.width_;
    }

    // Clamps every value into [0,1]; NaN becomes 0.
    void clamp_unit();

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

enum class BitDepth : int { k8 = 8, k16 = 16 };

// Reads an 8- or 16-bit single-channel lossless raster and maps it linearly to
// [0,1] (v / (2^b - 1)). Multi-channel input is rejected, not converted.
GrayImage load_image(const std::filesystem::path& path);

void save_image(const GrayImage& img, const std::filesystem::path& path,
                BitDepth depth = BitDepth::k16);

GrayImage crop(const GrayImage& img, int x, int y, int w, int h);

enum class Augment { kHFlip, kVFlip, kRot90, kRot180, kRot270 };

Augment parse_augment(const std::string& name);
std::string to_string(Augment op);
Augment inverse(Augment op);

GrayImage augment(const GrayImage& img, Augment op);

// Applies the same transform to every image of a registered group.
std::vector<GrayImage> augment(std::span<const GrayImage> group, Augment op);

// Throws unless every image in the group shares a shape.
void require_same_shape(std::span<const GrayImage> group, const char* what);

// Sorted list of loadable raster files (png/tif/tiff/pgm) directly in `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

} // namespace dcfuse
