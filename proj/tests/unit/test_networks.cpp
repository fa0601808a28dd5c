#include "dcfuse/error.hpp"
#include "dcfuse/focusdet.hpp"
#include "dcfuse/fusenet.hpp"
#include "dcfuse/tensor_image.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace dcfuse;
using testutil::random_image;

namespace {

std::string error_code(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

} // namespace

TEST_CASE("tensor conversions")
{
    const auto img = random_image(5, 7, 1);
    const auto t = to_tensor(img);
    CHECK(t.sizes() == torch::IntArrayRef{1, 1, 5, 7});
    CHECK(to_image(t) == img);
    CHECK(to_image(t[0]) == img);
    CHECK(to_image(t[0][0]) == img);
    const std::vector<GrayImage> imgs{img, random_image(5, 7, 2)};
    CHECK(stack_images(imgs).sizes() == torch::IntArrayRef{2, 1, 5, 7});
    const std::vector<GrayImage> bad{img, random_image(6, 7, 2)};
    CHECK(error_code([&] { stack_images(bad); }) == "shape");
}

TEST_CASE("fusion network shapes and Siamese extractor")
{
    torch::manual_seed(1);
    FusionNet net;
    for (auto [h, w] : {std::pair{16, 16}, std::pair{23, 37}, std::pair{64, 48}}) {
        const auto img = random_image(h, w, h * w);
        const auto f = extract_features(net, img);
        CHECK(f.sizes() == torch::IntArrayRef{32, h, w});
        CHECK(torch::isfinite(f).all().item<bool>());
        CHECK(torch::equal(f, extract_features(net, img)));
        const auto out = fuse(net, img, random_image(h, w, 3));
        CHECK(out.height() == h);
        CHECK(out.width() == w);
        for (auto v : out.pixels()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    // s1 = s2: fused features equal either branch
    const auto img = random_image(20, 20, 9);
    const auto f = extract_features(net, img).unsqueeze(0);
    CHECK(torch::equal(net->fuse_features(f, f), f));
    CHECK(reconstruct(net, f.squeeze(0)) == reconstruct(net, net->fuse_features(f, f)));
    CHECK(testutil::max_abs_diff(fuse(net, img, img), reconstruct(net, f)) < 1e-5);
    CHECK(error_code([&] { fuse(net, img, random_image(20, 21, 1)); }) == "shape");
    CHECK(error_code([&] { reconstruct(net, torch::zeros({16, 8, 8})); }) == "shape");
}

TEST_CASE("batched forward equals per-sample forward")
{
    torch::manual_seed(2);
    FusionNet net;
    net->eval();
    torch::NoGradGuard g;
    const auto a = torch::rand({3, 1, 24, 24});
    const auto b = torch::rand({3, 1, 24, 24});
    const auto all = net->forward(a, b);
    for (int i = 0; i < 3; ++i)
        CHECK(torch::allclose(all[i], net->forward(a[i].unsqueeze(0), b[i].unsqueeze(0))[0], 1e-5, 1e-6));
}

TEST_CASE("leaky ReLU slope is 0.2 everywhere")
{
    FusionNet net;
    FocusDetector det;
    int seen = 0;
    auto check = [&](const torch::nn::Module& m) {
        for (const auto& child : m.modules()) {
            if (auto* act = dynamic_cast<torch::nn::LeakyReLUImpl*>(child.get())) {
                CHECK(act->forward(torch::tensor({-1.0f})).item<float>() == doctest::Approx(-0.2f));
                ++seen;
            }
        }
    };
    check(*net);
    check(*det);
    CHECK(seen > 0);
}

TEST_CASE("rule variants build matching reconstructors")
{
    for (auto rule : fusion::kAllRules) {
        FusionNetConfig cfg;
        cfg.rule = rule;
        FusionNet net(cfg);
        const auto out = fuse(net, random_image(12, 12, 1), random_image(12, 12, 2));
        CHECK(out.height() == 12);
    }
    FusionNetConfig bad;
    bad.window = 10;
    CHECK(error_code([&] { FusionNet n(bad); }) == "param");
}

TEST_CASE("parameter summary")
{
    FusionNet net;
    CHECK(net->parameter_count() > 0);
    const auto s = net->summary();
    CHECK(s.find(std::to_string(net->parameter_count())) != std::string::npos);
    const double dev = std::abs(net->parameter_count() - 240000.0) / 240000.0;
    CHECK((dev <= 0.25 || s.find("deviates") != std::string::npos));
}

TEST_CASE("focus detector output contract")
{
    torch::manual_seed(3);
    FocusDetector det;
    for (auto [h, w] : {std::pair{16, 16}, std::pair{30, 45}, std::pair{64, 64}}) {
        const auto p = predict_fpm(det, random_image(h, w, 1), random_image(h, w, 2));
        CHECK(p.height() == h);
        CHECK(p.width() == w);
        for (auto v : p.pixels()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    // identical inputs: smoke test, record mean per-pixel entropy
    const auto same = random_image(32, 32, 4);
    const auto p = predict_fpm(det, same, same);
    double entropy = 0;
    for (float v : p.pixels()) {
        const double q = std::clamp(static_cast<double>(v), 1e-12, 1 - 1e-12);
        entropy += -(q * std::log2(q) + (1 - q) * std::log2(1 - q));
    }
    MESSAGE("mean entropy on identical inputs: " << entropy / p.size());
    CHECK(error_code([&] { predict_fpm(det, same, random_image(32, 31, 1)); }) == "shape");
}

TEST_CASE("detector pairs and loss")
{
    const auto& pairs = detector_pairs();
    CHECK(pairs.size() == 6);
    for (const auto& p : pairs) CHECK(p.first != p.second);
    // targets follow the first image of each pair
    for (const auto& p : pairs) {
        if (p.first == PairMember::kS1) CHECK_FALSE(p.target_is_complement);
        if (p.first == PairMember::kS2) CHECK(p.target_is_complement);
    }

    const auto fpm = (torch::rand({2, 1, 16, 16}) > 0.5).to(torch::kFloat32);
    SampleBatch batch{torch::rand({2, 1, 16, 16}), torch::rand({2, 1, 16, 16}), torch::rand({2, 1, 16, 16}), fpm};
    std::vector<torch::Tensor> perfect, half;
    for (const auto& p : pairs) {
        perfect.push_back(p.target_is_complement ? 1 - fpm : fpm);
        half.push_back(torch::full_like(fpm, 0.5));
    }
    CHECK(detector_loss_from_predictions(perfect, batch).item<double>() == 0.0);
    CHECK(detector_loss_from_predictions(half, batch).item<double>() == doctest::Approx(0.25 * pairs.size()));
    FocusDetector det;
    CHECK(detector_loss(det, batch).item<double>() >= 0.0);
}

TEST_CASE("miou")
{
    std::vector<std::uint8_t> mask(64);
    for (int i = 0; i < 64; ++i) mask[i] = (i / 8 + i % 8) % 3 == 0;
    const FocusPropertyMap truth(8, 8, mask);
    CHECK(miou(truth.to_image(), truth) == 1.0);
    CHECK(miou(truth.complement().to_image(), truth) == 0.0);

    // checkerboard prediction against all-ones truth
    GrayImage checker(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) checker.at(y, x) = (x + y) % 2 ? 1.0f : 0.0f;
    const auto ones = FocusPropertyMap::filled(8, 8, true);
    // class 1: |pred∩truth| = 32, union 64 -> 0.5; class 0 absent from truth,
    // predicted on 32 pixels: IoU 0 / 32 = 0 -> mean 0.25
    CHECK(miou(checker, ones) == doctest::Approx(0.25));
    // a perfect all-ones prediction skips the empty class 0
    CHECK(miou(ones.to_image(), ones) == 1.0);

    // symmetric under relabelling both maps
    const auto pred = random_image(8, 8, 5);
    GrayImage flipped = pred;
    for (auto& v : flipped.pixels()) v = 1.0f - v;
    // thresholding at 0.5 is symmetric except for exact 0.5 values
    CHECK(miou(pred, truth) == doctest::Approx(miou(flipped, truth.complement())));
    CHECK(error_code([&] { miou(GrayImage(8, 9), truth); }) == "shape");
}

TEST_CASE("frozen detector checksum")
{
    FocusDetector det;
    FrozenDetector frozen(det);
    CHECK_NOTHROW(frozen.verify());
    for (const auto& p : frozen.module()->parameters()) CHECK_FALSE(p.requires_grad());
    const auto a = torch::rand({1, 1, 16, 16}, torch::requires_grad());
    const auto b = torch::rand({1, 1, 16, 16});
    frozen.predict(a, b).sum().backward();
    CHECK(a.grad().defined());
    CHECK_NOTHROW(frozen.verify());
    {
        torch::NoGradGuard g;
        det->parameters()[0].add_(1e-3);
    }
    CHECK(error_code([&] { frozen.verify(); }) == "frozen");
}
