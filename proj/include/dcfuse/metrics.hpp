#pragma once

#include "dcfuse/imagio.hpp"

#include <array>
#include <string>
#include <vector>

namespace dcfuse::metrics {

// Intensity scale used for MSE, PSNR, SD and Q_CV. Images live on [0,1]
// internally; reported numbers are multiplied up to 8-bit magnitudes.
inline constexpr double kReportPeak = 255.0;

double mse(const GrayImage& a, const GrayImage& b, double peak = kReportPeak);

// 10 log10(peak^2 / mse), capped at 100 dB when mse < peak^2 * 1e-10.
double psnr(const GrayImage& a, const GrayImage& b, double peak = kReportPeak);
inline constexpr double kPsnrCap = 100.0;

// Population standard deviation of peak * intensity.
double sd(const GrayImage& img, double peak = kReportPeak);

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

// Normalized 1-D Gaussian taps, length params.window.
std::vector<double> ssim_window(const SsimParams& params = {});

// Mean SSIM over every fully contained window position (no padding).
double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params = {});

// Edge-dependent fusion quality (Piella-Heijmans). Q_W on the intensities
// times Q_W on Sobel edge magnitudes raised to `alpha`. Local windows are
// 7x7, saliency is local variance. Higher is better; 1 for fused = s1 = s2.
struct QeParams {
    int window = 7;
    double alpha = 1.0;
};
double q_e(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QeParams& params = {});

// Universal image quality index of one window pair, with the usual
// conventions for flat windows (both flat and equal means 1).
double uiqi(double mean_x, double mean_y, double var_x, double var_y, double cov_xy);

// Chen-Varshney perceptual fusion error. Source-minus-fused differences are
// filtered by the Mannos-Sakrison contrast sensitivity function, averaged as
// squared error over non-overlapping blocks and weighted by each source's
// block edge energy. Lower is better; 0 for fused = s1 = s2.
struct QcvParams {
    int block = 16;
    double alpha = 1.0;
    // Radial frequency (cycles/degree) that the Nyquist frequency maps to.
    double nyquist_cpd = 32.0;
    double peak = kReportPeak;
};
double q_cv(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QcvParams& params = {});

// Mannos-Sakrison CSF at radial frequency f (cycles/degree).
double mannos_sakrison(double f);

// Zhao phase-congruency fusion metric: product of the best correlation of the
// fused image's phase congruency, maximum moment and minimum moment maps with
// those of either source or of their per-pixel maximum.
struct QpParams {
    int nscale = 4;
    int norient = 6;
    double stabilizer = 1e-6;
};
double q_p(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QpParams& params = {});

// Phase congruency (Kovesi, log-Gabor bank, moment form).
struct PhaseCongruencyParams {
    int nscale = 4;
    int norient = 6;
    double min_wavelength = 3.0;
    double mult = 2.1;
    double sigma_on_f = 0.55;
    double k = 2.0;
    double cutoff = 0.5;
    double g = 10.0;
};

struct PhaseCongruency {
    int height = 0;
    int width = 0;
    std::vector<double> max_moment; // edge strength
    std::vector<double> min_moment; // corner strength
    std::vector<double> pc;         // mean over orientations of per-orientation PC
};

PhaseCongruency phase_congruency(const GrayImage& img, const PhaseCongruencyParams& params = {});

// Covariance-style correlation (s_xy + c) / (s_x s_y + c).
double stabilized_correlation(const std::vector<double>& x, const std::vector<double>& y, double c);

} // namespace dcfuse::metrics
