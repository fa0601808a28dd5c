#include "dcfuse/metrics.hpp"

#include "dcfuse/error.hpp"

#include <cmath>
#include <numeric>

namespace dcfuse::metrics {

namespace {

void require_pair(const GrayImage& a, const GrayImage& b, const char* what)
{
    if (!a.same_shape(b)) throw Error("shape", std::string(what) + ": image sizes differ");
}

// Valid (unpadded) separable correlation of a row-major double raster.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& taps)
{
    const int k = static_cast<int>(taps.size());
    const int ow = w - k + 1;
    const int oh = h - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += taps[t] * src[static_cast<std::size_t>(y) * w + x + t];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += taps[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

} // namespace

double mse(const GrayImage& a, const GrayImage& b, double peak)
{
    require_pair(a, b, "mse");
    const auto pa = a.pixels();
    const auto pb = b.pixels();
    double acc = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double d = peak * static_cast<double>(pa[i]) - peak * static_cast<double>(pb[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pa.size());
}

double psnr(const GrayImage& a, const GrayImage& b, double peak)
{
    const double m = mse(a, b, peak);
    if (m < peak * peak * 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

double sd(const GrayImage& img, double peak)
{
    const auto p = img.pixels();
    require(!p.empty(), "shape", "sd: empty image");
    double mean = 0.0;
    for (float v : p) mean += peak * static_cast<double>(v);
    mean /= static_cast<double>(p.size());
    double acc = 0.0;
    for (float v : p) {
        const double d = peak * static_cast<double>(v) - mean;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(p.size()));
}

std::vector<double> ssim_window(const SsimParams& params)
{
    require(params.window % 2 == 1 && params.window >= 3, "param", "SSIM window must be odd and >= 3");
    const int r = params.window / 2;
    std::vector<double> taps(params.window);
    for (int i = -r; i <= r; ++i) taps[i + r] = std::exp(-0.5 * i * i / (params.sigma * params.sigma));
    const double s = std::accumulate(taps.begin(), taps.end(), 0.0);
    for (double& t : taps) t /= s;
    return taps;
}

double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params)
{
    require_pair(a, b, "ssim");
    if (a.height() < params.window || a.width() < params.window)
        throw Error("shape", "ssim: image smaller than the " + std::to_string(params.window) + "px window");

    const int h = a.height();
    const int w = a.width();
    const std::size_t n = a.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a.pixels()[i];
        y[i] = b.pixels()[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto taps = ssim_window(params);
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto mxx = filter_valid(xx, h, w, taps);
    const auto myy = filter_valid(yy, h, w, taps);
    const auto mxy = filter_valid(xy, h, w, taps);

    const double c1 = std::pow(params.k1 * params.data_range, 2);
    const double c2 = std::pow(params.k2 * params.data_range, 2);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mx.size());
}

} // namespace dcfuse::metrics
