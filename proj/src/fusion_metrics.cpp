#include "dcfuse/metrics.hpp"

#include "dcfuse/error.hpp"

#include <opencv2/core.hpp>

#include <algorithm>
#include <cmath>

namespace dcfuse::metrics {

namespace {

// Below this a window variance or squared-mean sum counts as zero.
constexpr double kFlat = 1e-12;

void require_triple(const GrayImage& f, const GrayImage& a, const GrayImage& b, const char* what)
{
    if (!f.same_shape(a) || !f.same_shape(b))
        throw Error("shape", std::string(what) + ": image sizes differ");
}

struct Raster {
    int h = 0;
    int w = 0;
    std::vector<double> v;
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Raster to_raster(const GrayImage& img, double scale = 1.0)
{
    Raster r{img.height(), img.width(), std::vector<double>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i) r.v[i] = scale * img.pixels()[i];
    return r;
}

Raster sobel_magnitude(const Raster& in)
{
    auto px = [&](int y, int x) {
        return in.at(std::clamp(y, 0, in.h - 1), std::clamp(x, 0, in.w - 1));
    };
    Raster out{in.h, in.w, std::vector<double>(in.v.size())};
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            out.v[static_cast<std::size_t>(y) * in.w + x] = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

struct WindowStats {
    double mean_a, mean_b, mean_f, var_a, var_b, var_f, cov_af, cov_bf;
};

WindowStats window_stats(const Raster& a, const Raster& b, const Raster& f, int y0, int x0, int k)
{
    const double n = static_cast<double>(k) * k;
    double sa = 0, sb = 0, sf = 0;
    for (int y = y0; y < y0 + k; ++y)
        for (int x = x0; x < x0 + k; ++x) {
            sa += a.at(y, x);
            sb += b.at(y, x);
            sf += f.at(y, x);
        }
    WindowStats s{sa / n, sb / n, sf / n, 0, 0, 0, 0, 0};
    for (int y = y0; y < y0 + k; ++y)
        for (int x = x0; x < x0 + k; ++x) {
            const double da = a.at(y, x) - s.mean_a;
            const double db = b.at(y, x) - s.mean_b;
            const double df = f.at(y, x) - s.mean_f;
            s.var_a += da * da;
            s.var_b += db * db;
            s.var_f += df * df;
            s.cov_af += da * df;
            s.cov_bf += db * df;
        }
    s.var_a /= n;
    s.var_b /= n;
    s.var_f /= n;
    s.cov_af /= n;
    s.cov_bf /= n;
    return s;
}

// Saliency-weighted mean of the per-window quality index against each source.
double weighted_fusion_quality(const Raster& a, const Raster& b, const Raster& f, int k)
{
    require(a.h >= k && a.w >= k, "shape", "q_e: image smaller than the quality window");
    double weighted = 0.0;
    double total_weight = 0.0;
    double unweighted = 0.0;
    int count = 0;
    for (int y = 0; y + k <= a.h; ++y)
        for (int x = 0; x + k <= a.w; ++x) {
            const auto s = window_stats(a, b, f, y, x, k);
            const double qa = uiqi(s.mean_a, s.mean_f, s.var_a, s.var_f, s.cov_af);
            const double qb = uiqi(s.mean_b, s.mean_f, s.var_b, s.var_f, s.cov_bf);
            const double sal = s.var_a + s.var_b;
            const double lambda = sal > kFlat ? s.var_a / sal : 0.5;
            const double local = lambda * qa + (1.0 - lambda) * qb;
            const double c = std::max(s.var_a, s.var_b);
            weighted += c * local;
            total_weight += c;
            unweighted += local;
            ++count;
        }
    return total_weight > kFlat ? weighted / total_weight : unweighted / count;
}

Raster csf_filter(const Raster& d, double nyquist_cpd)
{
    cv::Mat m(d.h, d.w, CV_64F, const_cast<double*>(d.v.data()));
    cv::Mat spec;
    cv::dft(m, spec, cv::DFT_COMPLEX_OUTPUT);
    auto signed_freq = [](int k, int n) { return (k <= n / 2 ? k : k - n) / static_cast<double>(n); };
    for (int v = 0; v < d.h; ++v)
        for (int u = 0; u < d.w; ++u) {
            const double r = std::hypot(signed_freq(u, d.w), signed_freq(v, d.h)) * 2.0 * nyquist_cpd;
            spec.at<cv::Vec2d>(v, u) *= mannos_sakrison(r);
        }
    cv::Mat back;
    cv::dft(spec, back, cv::DFT_INVERSE | cv::DFT_SCALE | cv::DFT_COMPLEX_OUTPUT);
    Raster out{d.h, d.w, std::vector<double>(d.v.size())};
    for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) out.v[static_cast<std::size_t>(y) * d.w + x] = back.at<cv::Vec2d>(y, x)[0];
    return out;
}

} // namespace

double uiqi(double mx, double my, double vx, double vy, double cxy)
{
    const double d1 = vx + vy;
    const double d2 = mx * mx + my * my;
    const bool flat1 = d1 < kFlat;
    const bool flat2 = d2 < kFlat;
    if (flat1 && flat2) return 1.0;
    if (flat1) return 2.0 * mx * my / d2;
    if (flat2) return 2.0 * cxy / d1;
    return 4.0 * cxy * mx * my / (d1 * d2);
}

double q_e(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QeParams& params)
{
    require_triple(fused, s1, s2, "q_e");
    const auto f = to_raster(fused);
    const auto a = to_raster(s1);
    const auto b = to_raster(s2);
    const double q_int = weighted_fusion_quality(a, b, f, params.window);
    const double q_edge = weighted_fusion_quality(sobel_magnitude(a), sobel_magnitude(b), sobel_magnitude(f),
                                                  params.window);
    return q_int * std::pow(q_edge, params.alpha);
}

double mannos_sakrison(double f)
{
    return 2.6 * (0.0192 + 0.114 * f) * std::exp(-std::pow(0.114 * f, 1.1));
}

double q_cv(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QcvParams& params)
{
    require_triple(fused, s1, s2, "q_cv");
    require(params.block >= 1, "param", "q_cv: block must be positive");
    const auto f = to_raster(fused, params.peak);
    const auto a = to_raster(s1, params.peak);
    const auto b = to_raster(s2, params.peak);
    const auto ga = sobel_magnitude(a);
    const auto gb = sobel_magnitude(b);

    Raster da = a;
    Raster db = b;
    for (std::size_t i = 0; i < f.v.size(); ++i) {
        da.v[i] -= f.v[i];
        db.v[i] -= f.v[i];
    }
    const auto fa = csf_filter(da, params.nyquist_cpd);
    const auto fb = csf_filter(db, params.nyquist_cpd);

    double num = 0.0, den = 0.0, plain = 0.0;
    int blocks = 0;
    for (int y0 = 0; y0 < f.h; y0 += params.block)
        for (int x0 = 0; x0 < f.w; x0 += params.block) {
            double la = 0, lb = 0, ea = 0, eb = 0;
            int n = 0;
            for (int y = y0; y < std::min(y0 + params.block, f.h); ++y)
                for (int x = x0; x < std::min(x0 + params.block, f.w); ++x) {
                    la += std::pow(ga.at(y, x), params.alpha);
                    lb += std::pow(gb.at(y, x), params.alpha);
                    ea += fa.at(y, x) * fa.at(y, x);
                    eb += fb.at(y, x) * fb.at(y, x);
                    ++n;
                }
            ea /= n;
            eb /= n;
            num += la * ea + lb * eb;
            den += la + lb;
            plain += 0.5 * (ea + eb);
            ++blocks;
        }
    return den > 0.0 ? num / den : plain / blocks;
}

double stabilized_correlation(const std::vector<double>& x, const std::vector<double>& y, double c)
{
    require(x.size() == y.size() && !x.empty(), "shape", "correlation: size mismatch");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy /= n;
    sxx /= n;
    syy /= n;
    return (sxy + c) / (std::sqrt(sxx) * std::sqrt(syy) + c);
}

double q_p(const GrayImage& fused, const GrayImage& s1, const GrayImage& s2, const QpParams& params)
{
    require_triple(fused, s1, s2, "q_p");
    PhaseCongruencyParams pcp;
    pcp.nscale = params.nscale;
    pcp.norient = params.norient;
    const auto pf = phase_congruency(fused, pcp);
    if (std::all_of(pf.pc.begin(), pf.pc.end(), [](double v) { return v == 0.0; })) return 0.0;
    const auto pa = phase_congruency(s1, pcp);
    const auto pb = phase_congruency(s2, pcp);

    auto best = [&](const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& f) {
        std::vector<double> s(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) s[i] = std::max(a[i], b[i]);
        const double c = std::max({stabilized_correlation(a, f, params.stabilizer),
                                   stabilized_correlation(b, f, params.stabilizer),
                                   stabilized_correlation(s, f, params.stabilizer)});
        return std::clamp(c, 0.0, 1.0);
    };
    return best(pa.pc, pb.pc, pf.pc) * best(pa.max_moment, pb.max_moment, pf.max_moment) *
           best(pa.min_moment, pb.min_moment, pf.min_moment);
}

} // namespace dcfuse::metrics
