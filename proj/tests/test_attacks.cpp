#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fusionbench/attacks.hpp"
#include "fusionbench/rng.hpp"

using namespace fusion;
using namespace fusion::attack;

namespace {

// Dense 2-D convolution oracle: outer-product kernel, same reflect rule,
// computed with straightforward loops in double.
int reflect_oracle(int i, int n) {
    if (n == 1) return 0;
    const int p = 2 * n;
    i %= p;
    if (i < 0) i += p;
    return i < n ? i : p - 1 - i;
}

std::vector<double> dense_blur_crop(const std::vector<double>& crop, int h, int w, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k1(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k1[i + radius] = std::exp(-i * i / (2.0 * sigma * sigma));
        total += k1[i + radius];
    }
    for (auto& v : k1) v /= total;

    std::vector<double> out(crop.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int sy = reflect_oracle(y + dy, h);
                    const int sx = reflect_oracle(x + dx, w);
                    s += k1[dy + radius] * k1[dx + radius] * crop[sy * w + sx];
                }
            out[y * w + x] = s;
        }
    return out;
}

std::vector<float> random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> img(static_cast<std::size_t>(3) * h * w);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("gaussian_kernel: delta, normalization, direct formula") {
    auto delta = gaussian_kernel(0.f);
    REQUIRE(delta.size() == 1);
    CHECK(delta[0] == 1.f);

    for (float sigma : {0.5f, 1.f, 5.f, 45.f}) {
        auto k = gaussian_kernel(sigma);
        CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(3.0 * sigma)) + 1);
        double s = 0.0;
        for (float v : k) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }

    auto k1 = gaussian_kernel(1.f);
    REQUIRE(k1.size() == 7);
    const double raw[7] = {std::exp(-4.5), std::exp(-2.0), std::exp(-0.5), 1.0,
                           std::exp(-0.5), std::exp(-2.0), std::exp(-4.5)};
    double total = 0.0;
    for (double v : raw) total += v;
    for (int i = 0; i < 7; ++i) CHECK(k1[i] == doctest::Approx(raw[i] / total).epsilon(1e-6));
}

TEST_CASE("blur_region: identity cases and locality") {
    const int H = 16, W = 16;
    auto img = random_image(H, W, 5);
    data::BBox box{3, 4, 7, 6};

    auto same = blur_region(img, H, W, box, 0.f);
    CHECK(same == img);  // bit-identical at sigma 0

    data::BBox degenerate{3, 4, 0, 5};
    CHECK(blur_region(img, H, W, degenerate, 3.f) == img);

    // constant image is unchanged by any blur
    std::vector<float> flat(static_cast<std::size_t>(3) * H * W, 0.37f);
    for (float sigma : {0.8f, 2.f, 45.f}) {
        auto b = blur_region(flat, H, W, box, sigma);
        for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(b[i] - 0.37f) <= 1e-6);
    }

    // out-of-bbox pixels are bit-identical for every sigma
    for (float sigma : {0.5f, 1.f, 5.f, 45.f}) {
        auto b = blur_region(img, H, W, box, sigma);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const bool inside = y >= box.row && y < box.row + box.h && x >= box.col &&
                                        x < box.col + box.w;
                    if (!inside)
                        CHECK(b[(c * H + y) * W + x] == img[(c * H + y) * W + x]);
                }
    }
}

TEST_CASE("blur_region matches the dense-convolution oracle in-bbox") {
    const int H = 20, W = 18;
    data::BBox box{2, 5, 9, 11};
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto img = random_image(H, W, seed);
        for (float sigma : {0.7f, 1.5f, 4.f}) {
            auto blurred = blur_region(img, H, W, box, sigma);
            for (int c = 0; c < 3; ++c) {
                std::vector<double> crop(static_cast<std::size_t>(box.h) * box.w);
                for (int y = 0; y < box.h; ++y)
                    for (int x = 0; x < box.w; ++x)
                        crop[y * box.w + x] =
                            img[(c * H + box.row + y) * W + box.col + x];
                auto ref = dense_blur_crop(crop, box.h, box.w, sigma);
                for (int y = 0; y < box.h; ++y)
                    for (int x = 0; x < box.w; ++x)
                        CHECK(std::abs(blurred[(c * H + box.row + y) * W + box.col + x] -
                                       ref[y * box.w + x]) <= 1e-5);
            }
        }
    }
}

TEST_CASE("fgsm: zero epsilon is the identity, step magnitude is exact") {
    Rng rng(11);
    const int N = 4, D = 3 * 8 * 8, C = 5;
    auto W = Tensor::zeros({D, C});
    auto b = Tensor::zeros({C});
    for (auto& v : W.data()) v = static_cast<float>(rng.normal(0.0, 0.3));
    auto x = Tensor::zeros({N, 3, 8, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.2, 0.8));
    auto targets = Tensor::zeros({N, C});
    for (int n = 0; n < N; ++n) targets.data()[n * C + (n % C)] = 1.f;

    LogitsFn f = [&](const Tensor& in) { return linear(reshape(in, {N, D}), W, b); };
    DomainBounds domain;  // [0,1] per channel

    auto zero = fgsm(f, x, targets, 0.f, domain);
    CHECK(std::equal(zero.x_adv.data().begin(), zero.x_adv.data().end(), x.data().begin()));

    const float eps = 0.05f;
    auto adv = fgsm(f, x, targets, eps, domain);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float d = adv.x_adv.data()[i] - x.data()[i];
        CHECK(std::abs(d) <= eps + 1e-7f);
        // interior pixels with a nonzero gradient move by exactly epsilon
        if (adv.eta.data()[i] != 0.f && x.data()[i] > eps && x.data()[i] < 1.f - eps)
            CHECK(std::abs(d) == doctest::Approx(eps).epsilon(1e-6));
    }

    CHECK_THROWS_AS(fgsm(f, x, targets, -0.1f, domain), ConfigError);
}

TEST_CASE("fgsm matches the analytic linear-softmax gradient") {
    Rng rng(23);
    const int N = 3, D = 3 * 4 * 4, C = 4;
    auto W = Tensor::zeros({D, C});
    auto b = Tensor::zeros({C});
    for (auto& v : W.data()) v = static_cast<float>(rng.normal(0.0, 0.5));
    for (auto& v : b.data()) v = static_cast<float>(rng.normal(0.0, 0.1));
    auto x = Tensor::zeros({N, 3, 4, 4});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.3, 0.7));
    std::vector<int> labels{1, 3, 0};
    auto targets = Tensor::zeros({N, C});
    for (int n = 0; n < N; ++n) targets.data()[n * C + labels[n]] = 1.f;

    // analytic: dJ/dx = (softmax(xW + b) - t) W^T / N
    std::vector<double> grad_ref(static_cast<std::size_t>(N) * D, 0.0);
    for (int n = 0; n < N; ++n) {
        std::vector<double> logits(C);
        for (int c = 0; c < C; ++c) {
            double s = b.data()[c];
            for (int d = 0; d < D; ++d) s += x.data()[n * D + d] * W.data()[d * C + c];
            logits[c] = s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(logits[c] - mx);
        for (int d = 0; d < D; ++d) {
            double g = 0.0;
            for (int c = 0; c < C; ++c) {
                const double p = std::exp(logits[c] - mx) / z;
                g += (p - (c == labels[n] ? 1.0 : 0.0)) * W.data()[d * C + c];
            }
            grad_ref[n * D + d] = g / N;
        }
    }

    const float eps = 0.1f;
    LogitsFn f = [&](const Tensor& in) { return linear(reshape(in, {N, D}), W, b); };
    auto adv = fgsm(f, x, targets, eps, DomainBounds{});
    for (std::size_t i = 0; i < grad_ref.size(); ++i) {
        const double expected = eps * (grad_ref[i] > 0 ? 1.0 : (grad_ref[i] < 0 ? -1.0 : 0.0));
        CHECK(std::abs(adv.eta.data()[i] - expected) <= 1e-6);
    }
}

TEST_CASE("fgsm respects the normalized domain bounds") {
    Rng rng(31);
    const int N = 2, D = 3 * 4 * 4, C = 3;
    auto W = Tensor::zeros({D, C});
    for (auto& v : W.data()) v = static_cast<float>(rng.normal(0.0, 1.0));
    auto b = Tensor::zeros({C});
    auto x = Tensor::zeros({N, 3, 4, 4});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
    auto targets = Tensor::zeros({N, C});
    targets.data()[0] = 1.f;
    targets.data()[C + 1] = 1.f;

    LogitsFn f = [&](const Tensor& in) { return linear(reshape(in, {N, D}), W, b); };
    auto adv = fgsm(f, x, targets, 0.5f, DomainBounds{});
    for (float v : adv.x_adv.data()) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }

    data::DatasetMeta meta;
    meta.mean = {0.5f, 0.5f, 0.5f};
    meta.stddev = {0.25f, 0.25f, 0.25f};
    auto dom = normalized_domain(meta);
    CHECK(dom.lo[0] == doctest::Approx(-2.f));
    CHECK(dom.hi[0] == doctest::Approx(2.f));
}

TEST_CASE("transfer_attack: no-op epsilon, row permutation, validation") {
    data::DatasetMeta meta;
    meta.class_count = 4;
    auto ds = data::generate_synthetic(meta, 12, 3);

    model::ArchConfig arch;
    arch.channels = {4, 8};
    arch.output_dim = 16;
    auto src = model::build_classifier(model::Kind::foreground, arch, 4, 1);
    auto tgt1 = model::build_classifier(model::Kind::background, arch, 4, 2);
    auto tgt2 = model::build_classifier(model::Kind::joint, arch, 4, 3);

    auto batch = data::make_batch(ds);
    const double clean_src = model::accuracy(src, batch.images, batch.labels);
    const double clean_t1 = model::accuracy(tgt1, batch.images, batch.labels);
    const double clean_t2 = model::accuracy(tgt2, batch.images, batch.labels);

    auto res = transfer_attack(src, {&tgt1, &tgt2}, ds, 0.f);
    REQUIRE(res.models.size() == 3);  // source prepended
    CHECK(res.models[0] == &src);
    CHECK(res.accuracy[0] == doctest::Approx(clean_src));
    CHECK(res.accuracy[1] == doctest::Approx(clean_t1));
    CHECK(res.accuracy[2] == doctest::Approx(clean_t2));

    auto swapped = transfer_attack(src, {&tgt2, &tgt1, &src}, ds, 0.f);
    CHECK(swapped.models[0] == &tgt2);
    CHECK(swapped.accuracy[0] == doctest::Approx(clean_t2));
    CHECK(swapped.accuracy[1] == doctest::Approx(clean_t1));
    CHECK(swapped.accuracy[2] == doctest::Approx(clean_src));

    auto other = model::build_classifier(model::Kind::foreground, arch, 3, 1);
    CHECK_THROWS_AS(transfer_attack(src, {&other}, ds, 0.f), ConfigError);
}

TEST_CASE("fgsm perturbation is bounded for a real extractor model") {
    data::DatasetMeta meta;
    meta.class_count = 3;
    auto ds = data::generate_synthetic(meta, 6, 9);
    model::ArchConfig arch;
    arch.channels = {4, 8};
    arch.output_dim = 16;
    auto clf = model::build_classifier(model::Kind::foreground, arch, 3, 5);
    auto batch = data::make_batch(ds);
    for (float eps : {0.03f, 0.2f}) {
        auto adv = fgsm(clf, batch.images, batch.targets, eps, normalized_domain(ds.meta));
        float linf = 0.f;
        for (std::size_t i = 0; i < batch.images.numel(); ++i)
            linf = std::max(linf, std::abs(adv.x_adv.data()[i] - batch.images.data()[i]));
        CHECK(linf <= eps + 1e-7f);
        float eta_max = 0.f;
        for (float v : adv.eta.data()) eta_max = std::max(eta_max, std::abs(v));
        CHECK(eta_max <= eps + 1e-7f);
    }
}
