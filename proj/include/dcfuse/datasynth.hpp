#pragma once

#include "dcfuse/imagio.hpp"
#include "dcfuse/manifest.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dcfuse {

// Binary mask; 1 marks pixels that are in focus in S1 (and defocused in S2).
class FocusPropertyMap {
public:
    FocusPropertyMap() = default;
    FocusPropertyMap(int height, int width, std::vector<std::uint8_t> mask);

    static FocusPropertyMap filled(int height, int width, bool value);

    // Thresholds at 0.5; throws if any value is outside {0,1}.
    static FocusPropertyMap from_image(const GrayImage& img);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::uint8_t at(int y, int x) const { return mask_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<const std::uint8_t> mask() const noexcept { return mask_; }

    double coverage() const;
    FocusPropertyMap complement() const;
    GrayImage to_image() const;

    bool same_shape(const GrayImage& img) const noexcept
    {
        return height_ == img.height() && width_ == img.width();
    }

    friend bool operator==(const FocusPropertyMap&, const FocusPropertyMap&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> mask_;
};

struct MultiFocusSample {
    GrayImage s1;
    GrayImage s2;
    GrayImage gt;
    FocusPropertyMap fpm;
    std::uint64_t seed = 0;
    double sigma = 0.0;
};

// Gaussian-smoothed white noise thresholded at its median. Resamples (with a
// derived seed) until each class covers between 10% and 90% of the pixels.
FocusPropertyMap random_fpm(int height, int width, std::uint64_t seed, double smoothness);

// Normalized separable Gaussian, radius ceil(3 sigma), replicate borders.
GrayImage gaussian_defocus(const GrayImage& img, double sigma);

// S1 = fpm*gt + (1-fpm)*blur(gt); S2 = (1-fpm)*gt + fpm*blur(gt).
MultiFocusSample synthesize_pair(const GrayImage& gt, const FocusPropertyMap& fpm, double sigma);

struct SynthConfig {
    int tile = 128;
    int crop = 64;
    int count = 0;
    std::uint64_t seed = 0;
    double sigma_min = 2.0;
    double sigma_max = 5.0;
    double smoothness = 8.0;
    double flip_probability = 0.5;
    std::string id_prefix = "s";
};

// Sub-seed for sample `index`; identical for serial and parallel builds.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

// Generates one sample exactly as build_dataset would for `index`.
MultiFocusSample make_sample(std::span<const GrayImage> sources, const SynthConfig& cfg,
                             std::uint64_t index);

// Writes cfg.count samples under out_dir plus out_dir/manifest.jsonl.
DatasetManifest build_dataset(const std::filesystem::path& source_dir,
                              const std::filesystem::path& out_dir, const SynthConfig& cfg);

// Reads every sample of a manifest into memory.
std::vector<MultiFocusSample> load_samples(const DatasetManifest& manifest);

// Procedural all-in-focus test content: a branching vessel network over a
// fine-grained background texture, loosely resembling microvasculature
// images. Deterministic given the seed.
GrayImage vessel_phantom(int height, int width, std::uint64_t seed);

} // namespace dcfuse
