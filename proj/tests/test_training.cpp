#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fusionbench/checkpoint.hpp"
#include "fusionbench/rng.hpp"
#include "fusionbench/training.hpp"
#include "oracles.hpp"

using namespace fusion;
namespace tr = fusion::train;
using fusion::train::TrainConfig;
using fusion::train::TrainHistory;
using fusion::train::Sgd;
using fusion::train::history_csv;
using fusion::train::regularized_joint_loss;
using fusion::train::train_regularized_joint;
using fusion::train::adversarial_retrain;
using fusion::train::mixed_adversarial_batch;

namespace {

// Small frozen-extractor setup shared by the loop tests.
struct Fixture {
    data::Dataset train_set, test_set;
    model::ArchConfig arch;

    explicit Fixture(data::ContextMode mode = data::ContextMode::dissimilar, int per_class = 24) {
        data::DatasetMeta meta;
        meta.class_count = 4;
        meta.mode = mode;
        auto ds = data::generate_synthetic(meta, per_class, 77);
        auto parts = data::split(ds, 0.75, 5);
        train_set = std::move(parts.first);
        test_set = std::move(parts.second);
        arch.channels = {4, 8};
        arch.output_dim = 16;
    }

    model::Classifier frozen_classifier(model::Kind kind, std::uint64_t seed) const {
        auto clf = model::build_classifier(kind, arch, 4, seed);
        if (clf.fg) clf.fg->set_frozen(true);
        if (clf.bg) clf.bg->set_frozen(true);
        return clf;
    }
};

std::vector<std::uint8_t> head_bytes(const model::Classifier& clf) {
    return ckpt::encode(model::classifier_snapshot(clf));
}

TrainConfig quick_cfg(int epochs = 3) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.seed = 4;
    return cfg;
}

}  // namespace

TEST_CASE("one SGD step on a 1-D quadratic") {
    // loss = 0.5 * (w - 3)^2 from w = 0, lr 0.1: step lands at 0.3
    auto w = Tensor::zeros({1, 1});
    w.set_requires_grad(true);
    Sgd sgd({w}, 0.1f, 0.9f);
    auto c = Tensor::filled({1, 1}, -3.f);
    auto loss = scale(sum_squares_rows(add(w, c), 0, 1), 0.5f);
    backward(loss);
    sgd.step();
    CHECK(w.data()[0] == doctest::Approx(0.3f));
}

TEST_CASE("head_only training keeps extractor checkpoints bit-identical") {
    Fixture fx;
    auto clf = fx.frozen_classifier(model::Kind::joint, 3);
    auto before_fg = ckpt::encode(model::extractor_snapshot(*clf.fg));
    auto before_bg = ckpt::encode(model::extractor_snapshot(*clf.bg));
    auto hist = tr::train(clf, fx.train_set, fx.test_set, quick_cfg());
    CHECK(hist.train_loss.size() == 3);
    CHECK(ckpt::encode(model::extractor_snapshot(*clf.fg)) == before_fg);
    CHECK(ckpt::encode(model::extractor_snapshot(*clf.bg)) == before_bg);
}

TEST_CASE("head_only mode rejects unfrozen extractors") {
    Fixture fx;
    auto clf = model::build_classifier(model::Kind::foreground, fx.arch, 4, 3);
    CHECK_THROWS_AS(tr::train(clf, fx.train_set, fx.test_set, quick_cfg()), ConfigError);
}

TEST_CASE("training is deterministic given (seed, config, dataset)") {
    Fixture fx;
    auto a = fx.frozen_classifier(model::Kind::foreground, 9);
    auto b = fx.frozen_classifier(model::Kind::foreground, 9);
    auto cfg = quick_cfg();
    auto ha = tr::train(a, fx.train_set, fx.test_set, cfg);
    auto hb = tr::train(b, fx.train_set, fx.test_set, cfg);
    CHECK(head_bytes(a) == head_bytes(b));
    CHECK(ha.train_loss == hb.train_loss);
    CHECK(ha.test_acc == hb.test_acc);
}

TEST_CASE("a linearly separable toy set converges quickly") {
    // two classes split by brightness; random frozen features keep the cue
    data::DatasetMeta meta;
    meta.class_count = 2;
    Rng rng(15);
    data::Dataset ds;
    ds.meta = meta;
    for (int i = 0; i < 80; ++i) {
        data::Sample s;
        s.label = i % 2;
        s.bbox = {8, 8, 12, 12};
        s.image.resize(3 * 32 * 32);
        const float lo = s.label ? 0.7f : 0.0f;
        for (auto& v : s.image) v = static_cast<float>(rng.uniform(lo, lo + 0.3));
        ds.samples.push_back(std::move(s));
    }
    auto [tr, te] = data::split(ds, 0.75, 1);

    model::ArchConfig arch;
    arch.channels = {4, 8};
    arch.output_dim = 16;
    auto clf = model::build_classifier(model::Kind::foreground, arch, 2, 8);
    clf.fg->set_frozen(true);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.seed = 2;
    auto hist = tr::train(clf, tr, te, cfg);
    CHECK(hist.train_loss.back() < 0.1);
}

TEST_CASE("regularized_joint_loss: zero penalty cases and direct formula") {
    Fixture fx;
    auto clf = fx.frozen_classifier(model::Kind::joint, 6);
    auto batch = data::make_batch(fx.train_set);
    NoGradGuard ng;
    auto logits = clf.logits(batch.images, false);
    auto ce = softmax_cross_entropy(logits, batch.targets);

    CHECK(regularized_joint_loss(logits, batch.targets, clf.fusion, 0.f).item() == ce.item());

    for (auto& v : clf.fusion.theta_fg()) v = 0.f;
    CHECK(regularized_joint_loss(logits, batch.targets, clf.fusion, 5.f).item() ==
          doctest::Approx(ce.item()));

    CHECK_THROWS_AS(regularized_joint_loss(logits, batch.targets, clf.fusion, -1.f), ConfigError);

    // alpha = 2 with theta_fg = [0.5, -0.5, 0, ...]: penalty = 2 * 0.5 = 1
    clf.fusion.theta_fg()[0] = 0.5f;
    clf.fusion.theta_fg()[1] = -0.5f;
    auto reg = regularized_joint_loss(logits, batch.targets, clf.fusion, 2.f);
    CHECK(reg.item() == doctest::Approx(ce.item() + 1.f).epsilon(1e-6));
}

TEST_CASE("regularized loss gradient: fg rows get 2*alpha*theta, bg rows untouched") {
    // 64-bit replica of the loss composition against finite differences
    Rng rng(41);
    const int N = 6, D_fg = 3, D_bg = 4, C = 3;
    auto x = Tensor64::zeros({N, D_fg + D_bg});
    auto W = Tensor64::zeros({D_fg + D_bg, C});
    auto b = Tensor64::zeros({C});
    for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : W.data()) v = rng.uniform(-1.0, 1.0);
    auto t = Tensor64::zeros({N, C});
    for (int n = 0; n < N; ++n) t.data()[n * C + (n % C)] = 1.0;
    const double alpha = 0.8;

    auto make_loss = [&] {
        auto ce = softmax_cross_entropy(linear(x, W, b), t);
        return add(ce, scale(sum_squares_rows(W, 0, D_fg), alpha));
    };
    CHECK(oracle::max_grad_error(make_loss, {W, b}) <= 1e-4);

    // the penalty leaves theta_bg's gradient exactly equal to the CE gradient
    W.set_requires_grad(true);
    W.zero_grad();
    backward(softmax_cross_entropy(linear(x, W, b), t));
    auto g_ce = W.grad();
    W.zero_grad();
    backward(make_loss());
    auto g_reg = W.grad();
    for (int r = 0; r < D_fg + D_bg; ++r)
        for (int c = 0; c < C; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * C + c;
            if (r < D_fg)
                CHECK(g_reg.data()[i] ==
                      doctest::Approx(g_ce.data()[i] + 2.0 * alpha * W.data()[i]).epsilon(1e-9));
            else
                CHECK(g_reg.data()[i] == g_ce.data()[i]);  // bitwise identical
        }
}

TEST_CASE("alpha = 0 regularized run reproduces plain training bit for bit") {
    Fixture fx;
    auto a = fx.frozen_classifier(model::Kind::joint, 12);
    auto b = fx.frozen_classifier(model::Kind::joint, 12);
    auto cfg = quick_cfg();
    auto ha = tr::train(a, fx.train_set, fx.test_set, cfg);
    auto hb = train_regularized_joint(b, fx.train_set, fx.test_set, cfg, 0.f);
    CHECK(head_bytes(a) == head_bytes(b));
    CHECK(ha.train_loss == hb.train_loss);
}

TEST_CASE("train_regularized_joint rejects non-joint classifiers") {
    Fixture fx;
    auto clf = fx.frozen_classifier(model::Kind::foreground, 2);
    CHECK_THROWS_AS(train_regularized_joint(clf, fx.train_set, fx.test_set, quick_cfg(), 1.f),
                    ConfigError);
}

TEST_CASE("monotone penalty pressure over the alpha sweep") {
    Fixture fx;
    auto cfg = quick_cfg(10);
    double prev_sq = -1.0;
    double prev_avg_abs = -1.0;
    for (float alpha : {0.1f, 1.f, 10.f}) {
        auto clf = fx.frozen_classifier(model::Kind::joint, 30);
        train_regularized_joint(clf, fx.train_set, fx.test_set, cfg, alpha);
        double sq = 0.0, avg = 0.0;
        for (float v : clf.fusion.theta_fg()) {
            sq += static_cast<double>(v) * v;
            avg += std::abs(v);
        }
        avg /= static_cast<double>(clf.fusion.theta_fg().size());
        if (prev_sq >= 0.0) {
            CHECK(sq <= prev_sq);
            CHECK(avg < prev_avg_abs);
        }
        prev_sq = sq;
        prev_avg_abs = avg;
    }
}

TEST_CASE("eps = 0 adversarial retraining reproduces plain training bit for bit") {
    Fixture fx;
    auto a = fx.frozen_classifier(model::Kind::foreground, 21);
    auto b = fx.frozen_classifier(model::Kind::foreground, 21);
    auto cfg = quick_cfg();
    auto ha = tr::train(a, fx.train_set, fx.test_set, cfg);
    auto hb = adversarial_retrain(b, fx.train_set, fx.test_set, 0.f, cfg);
    CHECK(head_bytes(a) == head_bytes(b));
    CHECK(ha.train_loss == hb.train_loss);

    CHECK_THROWS_AS(adversarial_retrain(b, fx.train_set, fx.test_set, -0.5f, cfg), ConfigError);
}

TEST_CASE("full-mode eps = 0 retraining also reduces to plain training") {
    Fixture fx(data::ContextMode::dissimilar, 10);
    model::ArchConfig arch;
    arch.channels = {4};
    arch.output_dim = 8;
    auto a = model::build_classifier(model::Kind::foreground, arch, 4, 33);
    auto b = model::build_classifier(model::Kind::foreground, arch, 4, 33);
    TrainConfig cfg = quick_cfg(2);
    cfg.mode = TrainConfig::Mode::full;
    auto ha = tr::train(a, fx.train_set, fx.test_set, cfg);
    auto hb = adversarial_retrain(b, fx.train_set, fx.test_set, 0.f, cfg);
    CHECK(head_bytes(a) == head_bytes(b));
    CHECK(ha.train_loss == hb.train_loss);
}

TEST_CASE("the adversarial half of each batch respects the epsilon bound") {
    Fixture fx;
    auto clf = fx.frozen_classifier(model::Kind::foreground, 5);
    auto batch = data::make_batch(fx.train_set);
    const float eps = 0.2f;
    auto mixed = mixed_adversarial_batch(clf, batch.images, batch.targets, eps,
                                         attack::normalized_domain(fx.train_set.meta));
    const int n = batch.images.size(0);
    const std::size_t sample = batch.images.numel() / static_cast<std::size_t>(n);
    const int half = n / 2;
    // first half untouched
    for (std::size_t i = 0; i < static_cast<std::size_t>(half) * sample; ++i)
        CHECK(mixed.data()[i] == batch.images.data()[i]);
    // second half within the L-inf ball
    float worst = 0.f;
    bool any_moved = false;
    for (std::size_t i = half * sample; i < mixed.numel(); ++i) {
        worst = std::max(worst, std::abs(mixed.data()[i] - batch.images.data()[i]));
        any_moved = any_moved || mixed.data()[i] != batch.images.data()[i];
    }
    CHECK(worst <= eps + 1e-7f);
    CHECK(any_moved);
}

TEST_CASE("history CSV carries metadata and one row per epoch") {
    TrainHistory h;
    h.train_loss = {2.0, 1.5};
    h.train_acc = {0.3, 0.5};
    h.test_acc = {0.25, 0.45};
    h.metadata = {{"lr", "0.05"}};
    auto csv = history_csv(h, {{"config_hash", "deadbeef"}});
    CHECK(csv.find("# config_hash=deadbeef\n") != std::string::npos);
    CHECK(csv.find("# lr=0.05\n") != std::string::npos);
    CHECK(csv.find("epoch,train_loss,train_acc,test_acc\n") != std::string::npos);
    CHECK(csv.find("1,2.000000,0.3000,0.2500\n") != std::string::npos);
    CHECK(csv.find("2,1.500000,0.5000,0.4500\n") != std::string::npos);
}
