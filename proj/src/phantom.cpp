#include "dcfuse/datasynth.hpp"

#include "dcfuse/digest.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dcfuse {

namespace {

struct Walker {
    double y, x, angle, width, intensity;
    int steps_left;
    int depth;
};

void stamp(cv::Mat& canvas, double cy, double cx, double width, double intensity)
{
    const double s = 0.5 * width;
    const int r = static_cast<int>(std::ceil(2.5 * s)) + 1;
    const int y0 = std::max(0, static_cast<int>(cy) - r);
    const int y1 = std::min(canvas.rows - 1, static_cast<int>(cy) + r);
    const int x0 = std::max(0, static_cast<int>(cx) - r);
    const int x1 = std::min(canvas.cols - 1, static_cast<int>(cx) + r);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            const float v = static_cast<float>(intensity * std::exp(-d2 / (2.0 * s * s)));
            float& p = canvas.at<float>(y, x);
            p = std::max(p, v);
        }
}

} // namespace

GrayImage vessel_phantom(int height, int width, std::uint64_t seed)
{
    std::mt19937_64 rng(stable_hash64("phantom:" + std::to_string(seed)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Background: faint blotchy tissue signal plus fine speckle, so every
    // region carries some high-frequency content.
    cv::Mat noise(height, width, CV_32F);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) noise.at<float>(y, x) = static_cast<float>(normal(rng));
    cv::Mat blotch;
    cv::GaussianBlur(noise, blotch, cv::Size(0, 0), 6.0, 6.0, cv::BORDER_REPLICATE);
    cv::Mat speckle;
    cv::GaussianBlur(noise, speckle, cv::Size(0, 0), 0.7, 0.7, cv::BORDER_REPLICATE);
    auto unit_std = [](cv::Mat& m) {
        cv::Scalar mean, sd;
        cv::meanStdDev(m, mean, sd);
        m = (m - mean[0]) / std::max(sd[0], 1e-12);
    };
    unit_std(blotch);
    unit_std(speckle);
    cv::Mat canvas = 0.18f + 0.06f * blotch + 0.04f * speckle;

    cv::Mat vessels = cv::Mat::zeros(height, width, CV_32F);
    const int area = height * width;
    const int roots = std::max(3, area / 5000);
    std::vector<Walker> stack;
    for (int i = 0; i < roots; ++i)
        stack.push_back({unit(rng) * height, unit(rng) * width, unit(rng) * 2 * std::numbers::pi,
                         2.0 + 3.0 * unit(rng), 0.55 + 0.4 * unit(rng),
                         static_cast<int>((height + width) * (0.4 + 0.6 * unit(rng))), 0});
    // capillary-scale segments
    const int capillaries = area / 900;
    for (int i = 0; i < capillaries; ++i)
        stack.push_back({unit(rng) * height, unit(rng) * width, unit(rng) * 2 * std::numbers::pi,
                         0.8 + 0.7 * unit(rng), 0.35 + 0.35 * unit(rng),
                         8 + static_cast<int>(30 * unit(rng)), 3});

    while (!stack.empty()) {
        Walker w = stack.back();
        stack.pop_back();
        while (w.steps_left-- > 0) {
            stamp(vessels, w.y, w.x, w.width, w.intensity);
            w.angle += 0.18 * normal(rng);
            w.y += std::sin(w.angle);
            w.x += std::cos(w.angle);
            if (w.y < -10 || w.x < -10 || w.y > height + 10 || w.x > width + 10) break;
            if (w.depth < 3 && unit(rng) < 0.015) {
                const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
                stack.push_back({w.y, w.x, w.angle + side * (0.5 + 0.6 * unit(rng)),
                                 std::max(0.8, w.width * (0.55 + 0.25 * unit(rng))),
                                 w.intensity * (0.8 + 0.2 * unit(rng)),
                                 static_cast<int>(w.steps_left * (0.3 + 0.5 * unit(rng))), w.depth + 1});
            }
        }
    }

    cv::Mat out = cv::max(canvas, vessels + 0.5f * canvas);
    GrayImage img(height, width, std::vector<float>(out.begin<float>(), out.end<float>()));
    img.clamp_unit();
    return img;
}

} // namespace dcfuse
