// Phase congruency from a bank of log-Gabor filters, following Kovesi's
// moment formulation (phasecong3). Filter construction, noise compensation
// and the frequency-spread weighting mirror the reference code so that maps
// agree numerically with other ports of it.
#include "dcfuse/metrics.hpp"

#include "dcfuse/error.hpp"

#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dcfuse::metrics {

namespace {

constexpr double kEpsilon = 1e-4;

// Frequency coordinate of FFT bin i (origin at index 0), normalized the way
// the reference filter grid does it: [-0.5, 0.5) for even n, and +-0.5 at the
// ends for odd n.
std::vector<double> freq_axis(int n)
{
    std::vector<double> vals(n);
    for (int i = 0; i < n; ++i)
        vals[i] = n % 2 ? (i - (n - 1) / 2.0) / (n - 1) : (i - n / 2.0) / n;
    std::vector<double> shifted(n);
    for (int i = 0; i < n; ++i) shifted[i] = vals[(i + n / 2) % n];
    return shifted;
}

double median(std::vector<double> v)
{
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

PhaseCongruency phase_congruency(const GrayImage& img, const PhaseCongruencyParams& p)
{
    require(p.nscale >= 2 && p.norient >= 1, "param", "phase congruency needs >= 2 scales");
    const int rows = img.height();
    const int cols = img.width();
    const std::size_t n = img.size();

    cv::Mat spatial(rows, cols, CV_64F);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) spatial.at<double>(y, x) = img.at(y, x);
    cv::Mat spectrum;
    cv::dft(spatial, spectrum, cv::DFT_COMPLEX_OUTPUT);

    const auto xs = freq_axis(cols);
    const auto ys = freq_axis(rows);
    std::vector<double> radius(n), sin_t(n), cos_t(n), lowpass(n);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * cols + x;
            const double r = std::hypot(xs[x], ys[y]);
            const double theta = std::atan2(-ys[y], xs[x]);
            lowpass[i] = 1.0 / (1.0 + std::pow(r / 0.45, 2.0 * 15));
            radius[i] = r;
            sin_t[i] = std::sin(theta);
            cos_t[i] = std::cos(theta);
        }
    radius[0] = 1.0;

    const double log_gabor_denom = 2.0 * std::pow(std::log(p.sigma_on_f), 2.0);
    std::vector<std::vector<double>> log_gabor(p.nscale, std::vector<double>(n));
    for (int s = 0; s < p.nscale; ++s) {
        const double fo = 1.0 / (p.min_wavelength * std::pow(p.mult, s));
        for (std::size_t i = 0; i < n; ++i) {
            const double l = std::log(radius[i] / fo);
            log_gabor[s][i] = std::exp(-(l * l) / log_gabor_denom) * lowpass[i];
        }
        log_gabor[s][0] = 0.0;
    }

    std::vector<double> covx2(n, 0.0), covy2(n, 0.0), covxy(n, 0.0), pc_sum(n, 0.0);
    std::vector<double> sum_e(n), sum_o(n), sum_an(n), max_an(n), energy(n), filt(n);
    std::vector<cv::Mat> responses(p.nscale);

    for (int o = 0; o < p.norient; ++o) {
        const double angle = o * std::numbers::pi / p.norient;
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        std::vector<double> spread(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double ds = sin_t[i] * ca - cos_t[i] * sa;
            const double dc = cos_t[i] * ca + sin_t[i] * sa;
            const double dtheta = std::clamp(std::abs(std::atan2(ds, dc)) * p.norient / 2.0, 0.0,
                                             std::numbers::pi);
            spread[i] = (std::cos(dtheta) + 1.0) / 2.0;
        }

        std::fill(sum_e.begin(), sum_e.end(), 0.0);
        std::fill(sum_o.begin(), sum_o.end(), 0.0);
        std::fill(sum_an.begin(), sum_an.end(), 0.0);
        std::fill(energy.begin(), energy.end(), 0.0);
        double tau = 0.0;

        for (int s = 0; s < p.nscale; ++s) {
            cv::Mat filtered = spectrum.clone();
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * cols + x;
                    filtered.at<cv::Vec2d>(y, x) *= log_gabor[s][i] * spread[i];
                }
            cv::dft(filtered, responses[s], cv::DFT_INVERSE | cv::DFT_SCALE | cv::DFT_COMPLEX_OUTPUT);
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * cols + x;
                    const auto eo = responses[s].at<cv::Vec2d>(y, x);
                    const double an = std::hypot(eo[0], eo[1]);
                    sum_an[i] += an;
                    sum_e[i] += eo[0];
                    sum_o[i] += eo[1];
                    max_an[i] = s == 0 ? an : std::max(max_an[i], an);
                }
            if (s == 0) tau = median(sum_an) / std::sqrt(std::log(4.0));
        }

        for (int s = 0; s < p.nscale; ++s)
            for (int y = 0; y < rows; ++y)
                for (int x = 0; x < cols; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * cols + x;
                    const double xe = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + kEpsilon;
                    const double mean_e = sum_e[i] / xe;
                    const double mean_o = sum_o[i] / xe;
                    const auto eo = responses[s].at<cv::Vec2d>(y, x);
                    energy[i] += eo[0] * mean_e + eo[1] * mean_o - std::abs(eo[0] * mean_o - eo[1] * mean_e);
                }

        const double total_tau = tau * (1.0 - std::pow(1.0 / p.mult, p.nscale)) / (1.0 - 1.0 / p.mult);
        const double noise_mean = total_tau * std::sqrt(std::numbers::pi / 2.0);
        const double noise_sigma = total_tau * std::sqrt((4.0 - std::numbers::pi) / 2.0);
        const double threshold = std::max(noise_mean + p.k * noise_sigma, kEpsilon);

        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::max(energy[i] - threshold, 0.0);
            const double width = (sum_an[i] / (max_an[i] + kEpsilon) - 1.0) / (p.nscale - 1);
            const double weight = 1.0 / (1.0 + std::exp(p.g * (p.cutoff - width)));
            // flat input has no filter response at all; define PC there as 0
            const double pc = sum_an[i] > 0.0 ? weight * e / sum_an[i] : 0.0;
            pc_sum[i] += pc;
            const double cx = pc * ca;
            const double cy = pc * sa;
            covx2[i] += cx * cx;
            covy2[i] += cy * cy;
            covxy[i] += cx * cy;
        }
    }

    PhaseCongruency out;
    out.height = rows;
    out.width = cols;
    out.max_moment.resize(n);
    out.min_moment.resize(n);
    out.pc.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x2 = covx2[i] / (p.norient / 2.0);
        const double y2 = covy2[i] / (p.norient / 2.0);
        const double xy = covxy[i] * 4.0 / p.norient;
        const double denom = std::sqrt(xy * xy + (x2 - y2) * (x2 - y2)) + kEpsilon;
        out.max_moment[i] = (x2 + y2 + denom) / 2.0;
        out.min_moment[i] = (x2 + y2 - denom) / 2.0;
        out.pc[i] = pc_sum[i] / p.norient;
    }
    return out;
}

} // namespace dcfuse::metrics
