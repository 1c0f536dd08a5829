#include "fusionbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fusionbench/rng.hpp"

namespace fusion::train {

Sgd::Sgd(std::vector<Tensor> params, float lr, float momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    if (lr_ <= 0.f) throw ConfigError("learning rate must be positive");
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.f);
}

void Sgd::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto g = params_[i].grad();
        auto w = params_[i].data();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = momentum_ * v[j] + g.data()[j];
            w[j] -= lr_ * v[j];
        }
    }
}

void Sgd::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Tensor regularized_joint_loss(const Tensor& logits, const Tensor& targets,
                              model::FusionHead& head, float alpha) {
    if (alpha < 0.f) throw ConfigError("alpha must be non-negative");
    auto ce = softmax_cross_entropy(logits, targets);
    if (alpha == 0.f) return ce;
    return add(ce, scale(sum_squares_rows(head.W, 0, head.d_fg), alpha));
}

Tensor mixed_adversarial_batch(const model::Classifier& clf, const Tensor& images,
                               const Tensor& targets, float eps,
                               const attack::DomainBounds& domain) {
    const int n = images.size(0);
    const int half = n / 2;
    if (half == 0) return images;
    const std::size_t sample = images.numel() / static_cast<std::size_t>(n);

    auto adv_images = Tensor::zeros({n - half, images.size(1), images.size(2), images.size(3)});
    std::copy_n(images.data().begin() + half * sample, (n - half) * sample,
                adv_images.data().begin());
    auto adv_targets = Tensor::zeros({n - half, targets.size(1)});
    std::copy_n(targets.data().begin() + static_cast<std::size_t>(half) * targets.size(1),
                static_cast<std::size_t>(n - half) * targets.size(1), adv_targets.data().begin());

    auto adv = attack::fgsm(clf, adv_images, adv_targets, eps, domain);
    auto mixed = Tensor::zeros(images.shape());
    std::copy(images.data().begin(), images.data().end(), mixed.data().begin());
    std::copy(adv.x_adv.data().begin(), adv.x_adv.data().end(),
              mixed.data().begin() + half * sample);
    return mixed;
}

namespace {

struct LossOpts {
    float alpha = 0.f;     // penalty on the fusion head's foreground rows
    float adv_eps = -1.f;  // >= 0 enables adversarial mixing
};

// Batch index ranges over a shuffled order; a trailing singleton is absorbed
// into the previous batch so batch statistics stay well defined.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, int batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t b = static_cast<std::size_t>(batch_size);
    for (std::size_t begin = 0; begin < n; begin += b) {
        std::size_t end = std::min(n, begin + b);
        if (n - end == 1) end = n;
        out.emplace_back(begin, end);
        if (end == n) break;
    }
    return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
    const std::size_t row = src.numel() / static_cast<std::size_t>(src.size(0));
    std::vector<int> shape = src.shape();
    shape[0] = static_cast<int>(end - begin);
    auto out = Tensor::zeros(shape);
    for (std::size_t i = begin; i < end; ++i)
        std::copy_n(src.data().begin() + order[i] * row, row,
                    out.data().begin() + (i - begin) * row);
    return out;
}

Tensor all_features(const model::Classifier& clf, const Tensor& images, int chunk = 256) {
    NoGradGuard ng;
    const int n = images.size(0);
    Tensor out;
    for (int begin = 0; begin < n; begin += chunk) {
        const int end = std::min(n, begin + chunk);
        std::vector<int> shape = images.shape();
        shape[0] = end - begin;
        auto part = Tensor::zeros(shape);
        const std::size_t sample = images.numel() / static_cast<std::size_t>(n);
        std::copy_n(images.data().begin() + begin * sample, (end - begin) * sample,
                    part.data().begin());
        auto f = clf.features(part, /*train_mode=*/false);
        if (out.numel() == 0) {
            out = Tensor::zeros({n, f.size(1)});
        }
        std::copy(f.data().begin(), f.data().end(),
                  out.data().begin() + static_cast<std::size_t>(begin) * f.size(1));
    }
    return out;
}

double eval_accuracy_features(const Tensor& feats, const Tensor& W, const Tensor& b,
                              const std::vector<int>& labels) {
    NoGradGuard ng;
    auto logits = linear(feats, W, b);
    auto pred = argmax_rows(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double eval_accuracy_full(const model::Classifier& clf, const Tensor& images,
                          const std::vector<int>& labels, int chunk = 256) {
    NoGradGuard ng;
    const int n = images.size(0);
    const std::size_t sample = images.numel() / static_cast<std::size_t>(n);
    std::size_t correct = 0;
    for (int begin = 0; begin < n; begin += chunk) {
        const int end = std::min(n, begin + chunk);
        std::vector<int> shape = images.shape();
        shape[0] = end - begin;
        auto part = Tensor::zeros(shape);
        std::copy_n(images.data().begin() + begin * sample, (end - begin) * sample,
                    part.data().begin());
        auto pred = model::predict(clf, part);
        for (int i = begin; i < end; ++i)
            if (pred.labels[i - begin] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

void check_compat(const model::Classifier& clf, const data::Dataset& ds) {
    if (ds.samples.empty()) throw ConfigError("training set is empty");
    if (ds.meta.class_count != clf.class_count)
        throw ConfigError("dataset has " + std::to_string(ds.meta.class_count) +
                          " classes, classifier expects " + std::to_string(clf.class_count));
}

TrainHistory run_loop(model::Classifier& clf, const data::Dataset& train_set,
                      const data::Dataset& test_set, const TrainConfig& cfg,
                      const LossOpts& opts) {
    check_compat(clf, train_set);
    check_compat(clf, test_set);
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    const bool head_only = cfg.mode == TrainConfig::Mode::head_only;
    if (head_only) {
        if ((clf.fg && !clf.fg->frozen()) || (clf.bg && !clf.bg->frozen()))
            throw ConfigError("head_only mode requires frozen extractors");
    }
    if (opts.alpha > 0.f && clf.kind != model::Kind::joint)
        throw ConfigError("regularized training requires a joint classifier");

    const bool adversarial = opts.adv_eps >= 0.f;
    const auto domain = attack::normalized_domain(train_set.meta);

    auto train_batch = data::make_batch(train_set);
    auto test_batch = data::make_batch(test_set);
    const std::size_t n = train_set.samples.size();
    const int C = clf.class_count;

    auto params = clf.trainable_params(head_only);
    for (auto& p : params) p.set_requires_grad(true);
    Sgd sgd(params, cfg.lr, cfg.momentum);

    Tensor& W = clf.kind == model::Kind::joint ? clf.fusion.W : clf.head.W;
    Tensor& b = clf.kind == model::Kind::joint ? clf.fusion.b : clf.head.b;

    // With frozen extractors the clean features are a fixed function of the
    // inputs, so they are cached once; adversarial rows are recomputed since
    // they depend on the evolving head.
    Tensor train_feats, test_feats;
    if (head_only) {
        train_feats = all_features(clf, train_batch.images);
        test_feats = all_features(clf, test_batch.images);
    }

    TrainHistory hist;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::keyed(cfg.seed, 0xE70C0000ULL + static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (auto [begin, end] : batch_ranges(n, cfg.batch_size)) {
            auto images = gather_rows(train_batch.images, order, begin, end);
            auto targets = gather_rows(train_batch.targets, order, begin, end);

            if (adversarial) images = mixed_adversarial_batch(clf, images, targets, opts.adv_eps, domain);
            sgd.zero_grad();  // crafting gradients must not leak into the step

            Tensor logits;
            if (head_only) {
                Tensor x;
                if (adversarial) {
                    NoGradGuard ng;
                    x = clf.features(images, /*train_mode=*/false);
                } else {
                    x = gather_rows(train_feats, order, begin, end);
                }
                logits = linear(x, W, b);
            } else {
                logits = clf.logits(images, /*train_mode=*/true);
            }
            auto loss = opts.alpha > 0.f
                            ? regularized_joint_loss(logits, targets, clf.fusion, opts.alpha)
                            : softmax_cross_entropy(logits, targets);
            backward(loss);
            sgd.step();

            const std::size_t bn = end - begin;
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(bn);
            auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < bn; ++i) {
                const int label = [&] {
                    for (int c = 0; c < C; ++c)
                        if (targets.data()[i * C + c] == 1.f) return c;
                    return 0;
                }();
                if (pred[i] == label) ++correct;
            }
        }
        hist.train_loss.push_back(loss_sum / static_cast<double>(n));
        hist.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(n));
        hist.test_acc.push_back(head_only
                                    ? eval_accuracy_features(test_feats, W, b, test_batch.labels)
                                    : eval_accuracy_full(clf, test_batch.images, test_batch.labels));
    }

    hist.metadata = {{"lr", std::to_string(cfg.lr)},
                     {"momentum", std::to_string(cfg.momentum)},
                     {"epochs", std::to_string(cfg.epochs)},
                     {"batch_size", std::to_string(cfg.batch_size)},
                     {"seed", std::to_string(cfg.seed)},
                     {"mode", head_only ? "head_only" : "full"}};
    if (opts.alpha > 0.f) hist.metadata.emplace_back("alpha", std::to_string(opts.alpha));
    if (adversarial) hist.metadata.emplace_back("adv_eps", std::to_string(opts.adv_eps));
    return hist;
}

}  // namespace

TrainHistory train(model::Classifier& clf, const data::Dataset& train_set,
                   const data::Dataset& test_set, const TrainConfig& cfg) {
    return run_loop(clf, train_set, test_set, cfg, LossOpts{});
}

TrainHistory train_regularized_joint(model::Classifier& joint, const data::Dataset& train_set,
                                     const data::Dataset& test_set, const TrainConfig& cfg,
                                     float alpha) {
    if (joint.kind != model::Kind::joint)
        throw ConfigError("regularized training requires a joint classifier");
    if (alpha < 0.f) throw ConfigError("alpha must be non-negative");
    LossOpts opts;
    opts.alpha = alpha;
    auto hist = run_loop(joint, train_set, test_set, cfg, opts);
    if (alpha == 0.f) hist.metadata.emplace_back("alpha", std::to_string(alpha));
    return hist;
}

TrainHistory adversarial_retrain(model::Classifier& clf, const data::Dataset& train_set,
                                 const data::Dataset& test_set, float eps_train,
                                 const TrainConfig& cfg) {
    if (eps_train < 0.f) throw ConfigError("eps_train must be non-negative");
    LossOpts opts;
    opts.adv_eps = eps_train;
    return run_loop(clf, train_set, test_set, cfg, opts);
}

std::string history_csv(const TrainHistory& h,
                        const std::vector<std::pair<std::string, std::string>>& extra) {
    std::string out;
    for (const auto& [k, v] : extra) out += "# " + k + "=" + v + "\n";
    for (const auto& [k, v] : h.metadata) out += "# " + k + "=" + v + "\n";
    out += "epoch,train_loss,train_acc,test_acc\n";
    char line[128];
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.4f,%.4f\n", e + 1, h.train_loss[e],
                      h.train_acc[e], h.test_acc[e]);
        out += line;
    }
    return out;
}

void save_history_csv(const std::string& path, const TrainHistory& h,
                      const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << history_csv(h, extra);
}

}  // namespace fusion::train
