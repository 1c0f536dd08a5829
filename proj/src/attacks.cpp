#include "fusionbench/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace fusion::attack {

std::vector<float> gaussian_kernel(float sigma) {
    if (sigma < 0.01f) return {1.f};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<float> w(2 * radius + 1);
    const double inv2s2 = 1.0 / (2.0 * static_cast<double>(sigma) * sigma);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-static_cast<double>(i) * i * inv2s2);
        w[i + radius] = static_cast<float>(v);
        total += v;
    }
    for (auto& v : w) v = static_cast<float>(v / total);
    return w;
}

namespace {

// Symmetric reflection with edge duplication, folded for any overshoot.
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

void blur_line(const float* src, float* dst, int n, int stride,
               const std::vector<float>& kernel) {
    const int radius = static_cast<int>(kernel.size()) / 2;
    for (int i = 0; i < n; ++i) {
        float s = 0.f;
        for (int t = -radius; t <= radius; ++t)
            s += kernel[t + radius] * src[reflect_index(i + t, n) * stride];
        dst[i * stride] = s;
    }
}

}  // namespace

std::vector<float> blur_region(const std::vector<float>& image, int h, int w,
                               const data::BBox& bbox, float sigma) {
    if (image.size() != static_cast<std::size_t>(3) * h * w)
        throw DimensionError("blur_region: image size does not match extents");
    if (bbox.h <= 0 || bbox.w <= 0) return image;
    if (bbox.row < 0 || bbox.col < 0 || bbox.row + bbox.h > h || bbox.col + bbox.w > w)
        throw DimensionError("blur_region: bbox outside image");

    auto out = image;
    const auto kernel = gaussian_kernel(sigma);
    if (kernel.size() == 1) return out;  // delta kernel: bit-identical

    std::vector<float> crop(static_cast<std::size_t>(bbox.h) * bbox.w);
    std::vector<float> tmp(crop.size());
    for (int c = 0; c < 3; ++c) {
        const std::size_t plane = static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < bbox.h; ++y)
            for (int x = 0; x < bbox.w; ++x)
                crop[static_cast<std::size_t>(y) * bbox.w + x] =
                    image[plane + static_cast<std::size_t>(bbox.row + y) * w + (bbox.col + x)];
        // horizontal then vertical pass over the crop only
        for (int y = 0; y < bbox.h; ++y)
            blur_line(crop.data() + static_cast<std::size_t>(y) * bbox.w,
                      tmp.data() + static_cast<std::size_t>(y) * bbox.w, bbox.w, 1, kernel);
        for (int x = 0; x < bbox.w; ++x)
            blur_line(tmp.data() + x, crop.data() + x, bbox.h, bbox.w, kernel);
        for (int y = 0; y < bbox.h; ++y)
            for (int x = 0; x < bbox.w; ++x)
                out[plane + static_cast<std::size_t>(bbox.row + y) * w + (bbox.col + x)] =
                    crop[static_cast<std::size_t>(y) * bbox.w + x];
    }
    return out;
}

data::Dataset blur_dataset(const data::Dataset& ds, const BlurConfig& cfg) {
    if (cfg.sigma < 0.f) throw ConfigError("blur sigma must be non-negative");
    data::Dataset out = ds;
    for (auto& s : out.samples) {
        const data::BBox box = cfg.region == BlurConfig::Region::bbox
                                   ? s.bbox
                                   : data::BBox{0, 0, ds.meta.h, ds.meta.w};
        s.image = blur_region(s.image, ds.meta.h, ds.meta.w, box, cfg.sigma);
    }
    return out;
}

DomainBounds normalized_domain(const data::DatasetMeta& meta) {
    DomainBounds d;
    for (int c = 0; c < 3; ++c) {
        d.lo[c] = (0.f - meta.mean[c]) / meta.stddev[c];
        d.hi[c] = (1.f - meta.mean[c]) / meta.stddev[c];
    }
    return d;
}

AdversarialBatch fgsm(const LogitsFn& f, const Tensor& x, const Tensor& targets, float epsilon,
                      const DomainBounds& domain, const std::string& source_id) {
    if (epsilon < 0.f) throw ConfigError("fgsm epsilon must be non-negative");
    if (x.rank() != 4) throw DimensionError("fgsm expects N x C x H x W input");

    auto x_in = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()});
    x_in.set_requires_grad(true);
    auto loss = softmax_cross_entropy(f(x_in), targets);
    backward(loss);
    auto grad = x_in.grad();

    AdversarialBatch out;
    out.epsilon = epsilon;
    out.source_id = source_id;
    out.eta = Tensor::zeros(x.shape());
    out.x_adv = Tensor::zeros(x.shape());
    const int N = x.size(0), C = x.size(1);
    const std::size_t plane = static_cast<std::size_t>(x.size(2)) * x.size(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const float lo = domain.lo[c % 3], hi = domain.hi[c % 3];
            for (std::size_t i = 0; i < plane; ++i) {
                const float g = grad.data()[off + i];
                const float step = g > 0.f ? epsilon : (g < 0.f ? -epsilon : 0.f);
                out.eta.data()[off + i] = step;
                out.x_adv.data()[off + i] =
                    std::min(hi, std::max(lo, x.data()[off + i] + step));
            }
        }
    return out;
}

AdversarialBatch fgsm(const model::Classifier& source, const Tensor& x, const Tensor& targets,
                      float epsilon, const DomainBounds& domain) {
    LogitsFn f = [&source](const Tensor& in) { return source.logits(in, /*train_mode=*/false); };
    return fgsm(f, x, targets, epsilon, domain, model::kind_name(source.kind));
}

TransferResult transfer_attack(const model::Classifier& source,
                               std::vector<const model::Classifier*> targets,
                               const data::Dataset& testset, float epsilon, int batch_size) {
    if (testset.samples.empty()) throw ConfigError("transfer_attack: empty dataset");
    bool has_source = false;
    for (const auto* t : targets) has_source = has_source || t == &source;
    if (!has_source) targets.insert(targets.begin(), &source);
    for (const auto* t : targets)
        if (t->class_count != source.class_count)
            throw ConfigError("transfer_attack: class count mismatch between models");

    const auto domain = normalized_domain(testset.meta);
    std::vector<std::size_t> correct(targets.size(), 0);
    const std::size_t n = testset.samples.size();
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, begin + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        auto batch = data::make_batch(testset, idx, /*normalized=*/true);
        auto adv = fgsm(source, batch.images, batch.targets, epsilon, domain);
        for (std::size_t t = 0; t < targets.size(); ++t) {
            auto pred = model::predict(*targets[t], adv.x_adv);
            for (std::size_t i = 0; i < batch.labels.size(); ++i)
                if (pred.labels[i] == batch.labels[i]) ++correct[t];
        }
    }
    TransferResult res;
    res.models = std::move(targets);
    for (std::size_t c : correct)
        res.accuracy.push_back(static_cast<double>(c) / static_cast<double>(n));
    return res;
}

}  // namespace fusion::attack
