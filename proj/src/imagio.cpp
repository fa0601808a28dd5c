#include "dcfuse/imagio.hpp"

#include "dcfuse/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace dcfuse {

GrayImage::GrayImage(int height, int width, float fill)
    : height_(height), width_(width)
{
    require(height >= 1 && width >= 1, "shape", "image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
}

GrayImage::GrayImage(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data))
{
    require(height >= 1 && width >= 1, "shape", "image dimensions must be positive");
    require(data_.size() == static_cast<std::size_t>(height) * width, "shape",
            "pixel buffer does not match image dimensions");
}

void GrayImage::clamp_unit()
{
    for (float& v : data_)
        v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
}

GrayImage load_image(const std::filesystem::path& path)
{
    if (!std::filesystem::is_regular_file(path))
        throw Error("io", "missing image file: " + path.string());

    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty())
        throw Error("io", "cannot decode image: " + path.string());
    if (raw.channels() != 1)
        throw Error("format", "expected single-channel image, got " +
                                  std::to_string(raw.channels()) + " channels: " + path.string());

    // v / full in double, rounded once to float
    cv::Mat f;
    switch (raw.depth()) {
    case CV_8U: raw.convertTo(f, CV_64F); f /= 255.0; break;
    case CV_16U: raw.convertTo(f, CV_64F); f /= 65535.0; break;
    default: throw Error("format", "unsupported bit depth (need 8 or 16): " + path.string());
    }
    GrayImage img(f.rows, f.cols);
    float* out = img.pixels().data();
    for (int y = 0; y < f.rows; ++y) {
        const double* row = f.ptr<double>(y);
        for (int x = 0; x < f.cols; ++x) *out++ = static_cast<float>(row[x]);
    }
    return img;
}

void save_image(const GrayImage& img, const std::filesystem::path& path, BitDepth depth)
{
    require(!img.empty(), "shape", "cannot save an empty image");
    const double full = depth == BitDepth::k8 ? 255.0 : 65535.0;
    cv::Mat out(img.height(), img.width(), depth == BitDepth::k8 ? CV_8U : CV_16U);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const double v = std::clamp(static_cast<double>(img.at(y, x)), 0.0, 1.0);
            const double q = std::nearbyint(v * full);
            if (depth == BitDepth::k8)
                out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(q);
            else
                out.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(q);
        }

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw Error("io", "cannot create directory for " + path.string() + ": " + ec.message());
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), out);
    } catch (const cv::Exception& e) {
        throw Error("io", "cannot write image " + path.string() + ": " + e.what());
    }
    if (!ok)
        throw Error("io", "cannot write image: " + path.string());
}

GrayImage crop(const GrayImage& img, int x, int y, int w, int h)
{
    if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > img.width() || y + h > img.height())
        throw Error("bounds", "crop window (" + std::to_string(x) + "," + std::to_string(y) + "," +
                                  std::to_string(w) + "x" + std::to_string(h) +
                                  ") outside image " + std::to_string(img.width()) + "x" +
                                  std::to_string(img.height()));
    GrayImage out(h, w);
    for (int r = 0; r < h; ++r)
        std::copy_n(img.pixels().data() + static_cast<std::size_t>(y + r) * img.width() + x, w, &out.at(r, 0));
    return out;
}

Augment parse_augment(const std::string& name)
{
    if (name == "hflip") return Augment::kHFlip;
    if (name == "vflip") return Augment::kVFlip;
    if (name == "rot90") return Augment::kRot90;
    if (name == "rot180") return Augment::kRot180;
    if (name == "rot270") return Augment::kRot270;
    throw Error("augment", "unknown augmentation: " + name);
}

std::string to_string(Augment op)
{
    switch (op) {
    case Augment::kHFlip: return "hflip";
    case Augment::kVFlip: return "vflip";
    case Augment::kRot90: return "rot90";
    case Augment::kRot180: return "rot180";
    case Augment::kRot270: return "rot270";
    }
    return "?";
}

Augment inverse(Augment op)
{
    switch (op) {
    case Augment::kRot90: return Augment::kRot270;
    case Augment::kRot270: return Augment::kRot90;
    default: return op;
    }
}

// Rotations are counter-clockwise.
GrayImage augment(const GrayImage& img, Augment op)
{
    const int h = img.height();
    const int w = img.width();
    switch (op) {
    case Augment::kHFlip: {
        GrayImage out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y, w - 1 - x);
        return out;
    }
    case Augment::kVFlip: {
        GrayImage out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x) = img.at(h - 1 - y, x);
        return out;
    }
    case Augment::kRot180: {
        GrayImage out(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x) = img.at(h - 1 - y, w - 1 - x);
        return out;
    }
    case Augment::kRot90: {
        GrayImage out(w, h);
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < h; ++x) out.at(y, x) = img.at(x, w - 1 - y);
        return out;
    }
    case Augment::kRot270: {
        GrayImage out(w, h);
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < h; ++x) out.at(y, x) = img.at(h - 1 - x, y);
        return out;
    }
    }
    throw Error("augment", "unknown augmentation");
}

void require_same_shape(std::span<const GrayImage> group, const char* what)
{
    for (const auto& img : group)
        if (!img.same_shape(group.front()))
            throw Error("shape", std::string(what) + ": image sizes differ within group");
}

std::vector<GrayImage> augment(std::span<const GrayImage> group, Augment op)
{
    if (group.empty()) return {};
    require_same_shape(group, "augment");
    std::vector<GrayImage> out;
    out.reserve(group.size());
    for (const auto& img : group) out.push_back(augment(img, op));
    return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw Error("io", "not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".pgm")
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace dcfuse
