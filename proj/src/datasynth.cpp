#include "dcfuse/datasynth.hpp"

#include "dcfuse/digest.hpp"
#include "dcfuse/error.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace dcfuse {

FocusPropertyMap::FocusPropertyMap(int height, int width, std::vector<std::uint8_t> mask)
    : height_(height), width_(width), mask_(std::move(mask))
{
    require(height >= 1 && width >= 1, "shape", "focus map dimensions must be positive");
    require(mask_.size() == static_cast<std::size_t>(height) * width, "shape",
            "focus map buffer does not match dimensions");
    for (auto v : mask_)
        require(v <= 1, "fpm", "focus map values must be 0 or 1");
}

FocusPropertyMap FocusPropertyMap::filled(int height, int width, bool value)
{
    return FocusPropertyMap(height, width,
                            std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width,
                                                      value ? 1 : 0));
}

FocusPropertyMap FocusPropertyMap::from_image(const GrayImage& img)
{
    std::vector<std::uint8_t> m(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (px[i] != 0.0f && px[i] != 1.0f)
            throw Error("fpm", "focus map image is not binary");
        m[i] = px[i] == 1.0f ? 1 : 0;
    }
    return FocusPropertyMap(img.height(), img.width(), std::move(m));
}

double FocusPropertyMap::coverage() const
{
    std::size_t ones = std::count(mask_.begin(), mask_.end(), std::uint8_t{1});
    return static_cast<double>(ones) / static_cast<double>(mask_.size());
}

FocusPropertyMap FocusPropertyMap::complement() const
{
    auto m = mask_;
    for (auto& v : m) v = 1 - v;
    return FocusPropertyMap(height_, width_, std::move(m));
}

GrayImage FocusPropertyMap::to_image() const
{
    GrayImage img(height_, width_);
    auto px = img.pixels();
    for (std::size_t i = 0; i < mask_.size(); ++i) px[i] = mask_[i];
    return img;
}

namespace {

cv::Mat as_mat(const GrayImage& img)
{
    return cv::Mat(img.height(), img.width(), CV_32F, const_cast<float*>(img.pixels().data()));
}

cv::Mat blur_mat(const cv::Mat& src, double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const int k = 2 * radius + 1;
    cv::Mat dst;
    cv::GaussianBlur(src, dst, cv::Size(k, k), sigma, sigma, cv::BORDER_REPLICATE);
    return dst;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::string_view tag)
{
    std::ostringstream os;
    os << tag << ':' << seed;
    return std::mt19937_64(stable_hash64(os.str()));
}

} // namespace

FocusPropertyMap random_fpm(int height, int width, std::uint64_t seed, double smoothness)
{
    if (height < 16 || width < 16)
        throw Error("shape", "focus maps need at least 16x16 pixels");
    require(smoothness > 0.0, "param", "smoothness must be positive");

    const std::size_t n = static_cast<std::size_t>(height) * width;
    for (std::uint64_t attempt = 0;; ++attempt) {
        auto rng = make_rng(seed + attempt * 0x9E3779B97F4A7C15ull, "fpm");
        std::normal_distribution<float> normal(0.0f, 1.0f);
        cv::Mat noise(height, width, CV_32F);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) noise.at<float>(y, x) = normal(rng);
        cv::Mat smooth = blur_mat(noise, smoothness);

        std::vector<float> v(smooth.begin<float>(), smooth.end<float>());
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        const float median = n % 2 ? sorted[n / 2] : 0.5f * (sorted[n / 2 - 1] + sorted[n / 2]);

        std::vector<std::uint8_t> mask(n);
        for (std::size_t i = 0; i < n; ++i) mask[i] = v[i] > median ? 1 : 0;
        FocusPropertyMap fpm(height, width, std::move(mask));
        const double c = fpm.coverage();
        if (c >= 0.10 && c <= 0.90) return fpm;
    }
}

GrayImage gaussian_defocus(const GrayImage& img, double sigma)
{
    if (!(sigma > 0.0)) throw Error("param", "defocus sigma must be positive");
    cv::Mat dst = blur_mat(as_mat(img), sigma);
    GrayImage out(img.height(), img.width(), std::vector<float>(dst.begin<float>(), dst.end<float>()));
    out.clamp_unit();
    return out;
}

MultiFocusSample synthesize_pair(const GrayImage& gt, const FocusPropertyMap& fpm, double sigma)
{
    if (!fpm.same_shape(gt))
        throw Error("shape", "ground truth and focus map differ in size");
    const GrayImage blurred = gaussian_defocus(gt, sigma);

    MultiFocusSample s{gt, gt, gt, fpm, 0, sigma};
    auto p1 = s.s1.pixels();
    auto p2 = s.s2.pixels();
    const auto b = blurred.pixels();
    const auto m = fpm.mask();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) p2[i] = b[i];
        else p1[i] = b[i];
    }
    return s;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index)
{
    return stable_hash64("sample:" + std::to_string(seed) + ":" + std::to_string(index));
}

MultiFocusSample make_sample(std::span<const GrayImage> sources, const SynthConfig& cfg,
                             std::uint64_t index)
{
    require(!sources.empty(), "data", "no source images");
    require(cfg.crop >= 16 && cfg.crop <= cfg.tile, "param", "crop must be within [16, tile]");
    require(cfg.sigma_min > 0.0 && cfg.sigma_max >= cfg.sigma_min, "param", "bad sigma range");

    const std::uint64_t sub = sample_seed(cfg.seed, index);
    std::mt19937_64 rng(sub);

    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < sources.size(); ++i)
        if (sources[i].height() >= cfg.tile && sources[i].width() >= cfg.tile) usable.push_back(i);
    if (usable.empty())
        throw Error("data", "tile size " + std::to_string(cfg.tile) + " exceeds every source image");

    const auto& src = sources[usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)]];
    const int ty = std::uniform_int_distribution<int>(0, src.height() - cfg.tile)(rng);
    const int tx = std::uniform_int_distribution<int>(0, src.width() - cfg.tile)(rng);
    const int cy = std::uniform_int_distribution<int>(0, cfg.tile - cfg.crop)(rng);
    const int cx = std::uniform_int_distribution<int>(0, cfg.tile - cfg.crop)(rng);
    const double sigma = std::uniform_real_distribution<double>(cfg.sigma_min, cfg.sigma_max)(rng);
    std::bernoulli_distribution flip(cfg.flip_probability);
    const bool hflip = flip(rng);
    const bool vflip = flip(rng);

    const GrayImage tile = crop(src, tx, ty, cfg.tile, cfg.tile);
    const auto fpm = random_fpm(cfg.tile, cfg.tile, rng(), cfg.smoothness);
    const auto full = synthesize_pair(tile, fpm, sigma);

    std::vector<GrayImage> group{crop(full.s1, cx, cy, cfg.crop, cfg.crop),
                                 crop(full.s2, cx, cy, cfg.crop, cfg.crop),
                                 crop(full.gt, cx, cy, cfg.crop, cfg.crop),
                                 crop(full.fpm.to_image(), cx, cy, cfg.crop, cfg.crop)};
    if (hflip) group = augment(group, Augment::kHFlip);
    if (vflip) group = augment(group, Augment::kVFlip);

    return MultiFocusSample{std::move(group[0]), std::move(group[1]), std::move(group[2]),
                            FocusPropertyMap::from_image(group[3]), sub, sigma};
}

DatasetManifest build_dataset(const std::filesystem::path& source_dir,
                              const std::filesystem::path& out_dir, const SynthConfig& cfg)
{
    require(cfg.count >= 0, "param", "count must be non-negative");
    const auto files = list_images(source_dir);
    if (files.empty())
        throw Error("data", "no loadable images in " + source_dir.string());

    std::vector<GrayImage> sources;
    for (const auto& f : files) sources.push_back(load_image(f));
    require(cfg.crop >= 16 && cfg.crop <= cfg.tile, "param", "crop must be within [16, tile]");
    if (std::none_of(sources.begin(), sources.end(),
                     [&](const GrayImage& g) { return g.height() >= cfg.tile && g.width() >= cfg.tile; }))
        throw Error("data", "tile size " + std::to_string(cfg.tile) + " exceeds every source image");

    DatasetManifest manifest;
    manifest.root = out_dir;
    std::filesystem::create_directories(out_dir);

    for (int i = 0; i < cfg.count; ++i) {
        const auto sample = make_sample(sources, cfg, static_cast<std::uint64_t>(i));
        std::ostringstream id;
        id << cfg.id_prefix << std::setw(6) << std::setfill('0') << i;

        ManifestEntry e;
        e.id = id.str();
        e.path_s1 = "samples/" + e.id + "_s1.png";
        e.path_s2 = "samples/" + e.id + "_s2.png";
        e.path_gt = "samples/" + e.id + "_gt.png";
        e.path_fpm = "samples/" + e.id + "_fpm.png";
        e.height = sample.gt.height();
        e.width = sample.gt.width();
        e.seed = sample.seed;
        e.sigma = sample.sigma;

        save_image(sample.s1, out_dir / e.path_s1, BitDepth::k16);
        save_image(sample.s2, out_dir / e.path_s2, BitDepth::k16);
        save_image(sample.gt, out_dir / e.path_gt, BitDepth::k16);
        save_image(sample.fpm.to_image(), out_dir / e.path_fpm, BitDepth::k8);
        manifest.entries.push_back(std::move(e));
    }
    write_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

std::vector<MultiFocusSample> load_samples(const DatasetManifest& manifest)
{
    std::vector<MultiFocusSample> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        MultiFocusSample s{load_image(manifest.resolve(e.path_s1)), load_image(manifest.resolve(e.path_s2)),
                           load_image(manifest.resolve(e.path_gt)),
                           FocusPropertyMap::from_image(load_image(manifest.resolve(e.path_fpm))), e.seed,
                           e.sigma};
        const GrayImage group[] = {s.s1, s.s2, s.gt};
        require_same_shape(group, e.id.c_str());
        if (!s.fpm.same_shape(s.gt))
            throw Error("manifest", "sample '" + e.id + "': focus map size differs");
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace dcfuse
