#include "fusionbench/model.hpp"

#include <algorithm>
#include <cmath>

#include "fusionbench/rng.hpp"

namespace fusion::model {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng rng) {
    auto t = Tensor::zeros(std::move(shape));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
    return t;
}

ConvBnBlock make_block(int in_ch, int out_ch, int kernel, std::uint64_t seed, int layer_index) {
    ConvBnBlock b;
    b.conv_w = he_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel,
                         Rng::keyed(seed, static_cast<std::uint64_t>(layer_index)));
    b.gamma = Tensor::filled({out_ch}, 1.f);
    b.beta = Tensor::zeros({out_ch});
    b.stats.mean.assign(out_ch, 0.f);
    b.stats.var.assign(out_ch, 1.f);
    return b;
}

void record_tensor(ParamList& out, const std::string& name, const Tensor& t) {
    out.push_back({name, t.shape(), {t.data().begin(), t.data().end()}, 0});
}

void record_vec(ParamList& out, const std::string& name, const std::vector<float>& v) {
    out.push_back({name, {static_cast<int>(v.size())}, v, 0});
}

const ParamRecord& find_record(const ParamList& params, const std::string& name) {
    for (const auto& r : params)
        if (r.name == name) return r;
    throw ParseError("checkpoint missing parameter '" + name + "'", 0);
}

void load_tensor(const ParamList& params, const std::string& name, Tensor& t) {
    const auto& r = find_record(params, name);
    if (r.shape != t.shape())
        throw ParseError("checkpoint parameter '" + name + "' has shape " + shape_str(r.shape) +
                             ", expected " + shape_str(t.shape()),
                         r.offset);
    std::copy(r.values.begin(), r.values.end(), t.data().begin());
}

void load_vec(const ParamList& params, const std::string& name, std::vector<float>& v) {
    const auto& r = find_record(params, name);
    if (r.values.size() != v.size())
        throw ParseError("checkpoint parameter '" + name + "' has " +
                             std::to_string(r.values.size()) + " values, expected " +
                             std::to_string(v.size()),
                         r.offset);
    v = r.values;
}

}  // namespace

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::foreground: return "foreground";
        case Kind::background: return "background";
        case Kind::joint: return "joint";
    }
    return "?";
}

FeatureExtractor::FeatureExtractor(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.output_dim <= 0) throw ConfigError("output_dim must be positive");
    if (arch.input_hw <= 0 || arch.input_channels <= 0)
        throw ConfigError("input extents must be positive");
    int hw = arch.input_hw;
    int in_ch = arch.input_channels;
    int layer = 0;
    for (int out_ch : arch.channels) {
        if (out_ch <= 0) throw ConfigError("channel widths must be positive");
        if (hw % 2 != 0)
            throw ConfigError("input extent " + std::to_string(arch.input_hw) +
                              " is not divisible by the pooling stack");
        blocks_.push_back(make_block(in_ch, out_ch, 3, seed, layer));
        in_ch = out_ch;
        hw /= 2;
        layer += 8;
    }
    feature_kernel_ = hw;
    feature_ = make_block(in_ch, arch.output_dim, feature_kernel_, seed, layer);
}

Tensor FeatureExtractor::forward(const Tensor& images, bool train_mode) {
    if (images.rank() != 4 || images.size(1) != arch_.input_channels ||
        images.size(2) != arch_.input_hw || images.size(3) != arch_.input_hw)
        throw DimensionError("extractor expects [N," + std::to_string(arch_.input_channels) + "," +
                             std::to_string(arch_.input_hw) + "," + std::to_string(arch_.input_hw) +
                             "], got " + shape_str(images.shape()));
    const bool training = train_mode && !frozen_;
    Tensor h = images;
    for (auto& blk : blocks_) {
        h = conv2d(h, blk.conv_w, 1, 1);
        h = batchnorm2d(h, blk.gamma, blk.beta, blk.stats, training);
        h = relu(h);
        h = avg_pool2d(h, 2);
    }
    h = conv2d(h, feature_.conv_w, 1, 0);
    h = batchnorm2d(h, feature_.gamma, feature_.beta, feature_.stats, training);
    return reshape(h, {images.size(0), arch_.output_dim});
}

void FeatureExtractor::set_frozen(bool f) {
    frozen_ = f;
    if (!f) return;  // unfreezing leaves flags to the next trainer
    // keep frozen parameters off the gradient path entirely
    auto off = [](ConvBnBlock& blk) {
        blk.conv_w.set_requires_grad(false);
        blk.gamma.set_requires_grad(false);
        blk.beta.set_requires_grad(false);
    };
    for (auto& blk : blocks_) off(blk);
    off(feature_);
}

std::vector<Tensor> FeatureExtractor::trainable_params() {
    if (frozen_) return {};
    std::vector<Tensor> out;
    for (auto& blk : blocks_) {
        out.push_back(blk.conv_w);
        out.push_back(blk.gamma);
        out.push_back(blk.beta);
    }
    out.push_back(feature_.conv_w);
    out.push_back(feature_.gamma);
    out.push_back(feature_.beta);
    return out;
}

ParamList FeatureExtractor::snapshot(const std::string& prefix) const {
    ParamList out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& blk = blocks_[i];
        const std::string p = prefix + "b" + std::to_string(i) + ".";
        record_tensor(out, p + "conv.w", blk.conv_w);
        record_tensor(out, p + "bn.gamma", blk.gamma);
        record_tensor(out, p + "bn.beta", blk.beta);
        record_vec(out, p + "bn.rmean", blk.stats.mean);
        record_vec(out, p + "bn.rvar", blk.stats.var);
    }
    record_tensor(out, prefix + "feat.conv.w", feature_.conv_w);
    record_tensor(out, prefix + "feat.bn.gamma", feature_.gamma);
    record_tensor(out, prefix + "feat.bn.beta", feature_.beta);
    record_vec(out, prefix + "feat.bn.rmean", feature_.stats.mean);
    record_vec(out, prefix + "feat.bn.rvar", feature_.stats.var);
    return out;
}

void FeatureExtractor::restore(const ParamList& params, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto& blk = blocks_[i];
        const std::string p = prefix + "b" + std::to_string(i) + ".";
        load_tensor(params, p + "conv.w", blk.conv_w);
        load_tensor(params, p + "bn.gamma", blk.gamma);
        load_tensor(params, p + "bn.beta", blk.beta);
        load_vec(params, p + "bn.rmean", blk.stats.mean);
        load_vec(params, p + "bn.rvar", blk.stats.var);
    }
    load_tensor(params, prefix + "feat.conv.w", feature_.conv_w);
    load_tensor(params, prefix + "feat.bn.gamma", feature_.gamma);
    load_tensor(params, prefix + "feat.bn.beta", feature_.beta);
    load_vec(params, prefix + "feat.bn.rmean", feature_.stats.mean);
    load_vec(params, prefix + "feat.bn.rvar", feature_.stats.var);
}

Tensor Classifier::features(const Tensor& images, bool train_mode) const {
    switch (kind) {
        case Kind::foreground: return fg->forward(images, train_mode);
        case Kind::background: return bg->forward(images, train_mode);
        case Kind::joint:
            return concat_cols(fg->forward(images, train_mode), bg->forward(images, train_mode));
    }
    throw ContractError("unreachable classifier kind");
}

Tensor Classifier::logits(const Tensor& images, bool train_mode) const {
    auto f = features(images, train_mode);
    if (kind == Kind::joint) return linear(f, fusion.W, fusion.b);
    return linear(f, head.W, head.b);
}

std::vector<Tensor> Classifier::head_params() {
    if (kind == Kind::joint) return {fusion.W, fusion.b};
    return {head.W, head.b};
}

std::vector<Tensor> Classifier::trainable_params(bool head_only) {
    auto out = head_params();
    if (head_only) return out;
    if (fg)
        for (auto& t : fg->trainable_params()) out.push_back(t);
    if (bg)
        for (auto& t : bg->trainable_params()) out.push_back(t);
    return out;
}

Classifier build_classifier(Kind kind, const ArchConfig& arch, int class_count,
                            std::uint64_t seed) {
    if (class_count <= 0) throw ConfigError("class count must be positive");
    if (arch.output_dim <= 0) throw ConfigError("output_dim must be positive");
    Classifier clf;
    clf.kind = kind;
    clf.arch = arch;
    clf.class_count = class_count;
    if (kind == Kind::foreground || kind == Kind::joint)
        clf.fg = std::make_shared<FeatureExtractor>(arch, Rng::keyed(seed, 1).next());
    if (kind == Kind::background || kind == Kind::joint)
        clf.bg = std::make_shared<FeatureExtractor>(arch, Rng::keyed(seed, 2).next());

    const int C = class_count;
    if (kind == Kind::joint) {
        const int d = arch.output_dim;
        clf.fusion.d_fg = d;
        clf.fusion.d_bg = d;
        clf.fusion.W = he_normal({2 * d, C}, 2 * d, Rng::keyed(seed, 3));
        clf.fusion.b = Tensor::zeros({C});
    } else {
        clf.head.W = he_normal({arch.output_dim, C}, arch.output_dim, Rng::keyed(seed, 3));
        clf.head.b = Tensor::zeros({C});
    }
    return clf;
}

Classifier make_joint(std::shared_ptr<FeatureExtractor> fg, std::shared_ptr<FeatureExtractor> bg,
                      int class_count, std::uint64_t seed) {
    if (!fg || !bg) throw ConfigError("joint classifier needs both extractors");
    Classifier clf;
    clf.kind = Kind::joint;
    clf.arch = fg->arch();
    clf.class_count = class_count;
    clf.fg = std::move(fg);
    clf.bg = std::move(bg);
    const int d_fg = clf.fg->output_dim();
    const int d_bg = clf.bg->output_dim();
    clf.fusion.d_fg = d_fg;
    clf.fusion.d_bg = d_bg;
    clf.fusion.W = he_normal({d_fg + d_bg, class_count}, d_fg + d_bg, Rng::keyed(seed, 3));
    clf.fusion.b = Tensor::zeros({class_count});
    return clf;
}

Prediction predict(const Classifier& clf, const Tensor& images) {
    NoGradGuard ng;
    Prediction p;
    p.logits = clf.logits(images, /*train_mode=*/false);
    p.labels = argmax_rows(p.logits);
    return p;
}

double accuracy(const Classifier& clf, const Tensor& images, const std::vector<int>& labels) {
    auto p = predict(clf, images);
    if (p.labels.size() != labels.size())
        throw DimensionError("accuracy: label count mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (p.labels[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

constexpr float kMetaExtractor = 3.f;

ParamRecord meta_record(float kind_code, const ArchConfig& arch, int class_count) {
    std::vector<float> m{kind_code,
                         static_cast<float>(class_count),
                         static_cast<float>(arch.input_channels),
                         static_cast<float>(arch.input_hw),
                         static_cast<float>(arch.output_dim),
                         static_cast<float>(arch.channels.size())};
    for (int c : arch.channels) m.push_back(static_cast<float>(c));
    return {"__meta__", {static_cast<int>(m.size())}, std::move(m), 0};
}

struct DecodedMeta {
    float kind_code;
    int class_count;
    ArchConfig arch;
};

DecodedMeta decode_meta(const ParamList& params) {
    const auto& r = find_record(params, "__meta__");
    if (r.values.size() < 6) throw ParseError("checkpoint meta record too short", r.offset);
    DecodedMeta m;
    m.kind_code = r.values[0];
    m.class_count = static_cast<int>(r.values[1]);
    m.arch.input_channels = static_cast<int>(r.values[2]);
    m.arch.input_hw = static_cast<int>(r.values[3]);
    m.arch.output_dim = static_cast<int>(r.values[4]);
    const int n_blocks = static_cast<int>(r.values[5]);
    if (r.values.size() != static_cast<std::size_t>(6 + n_blocks))
        throw ParseError("checkpoint meta record length mismatch", r.offset);
    m.arch.channels.clear();
    for (int i = 0; i < n_blocks; ++i)
        m.arch.channels.push_back(static_cast<int>(r.values[6 + i]));
    return m;
}

}  // namespace

ParamList classifier_snapshot(const Classifier& clf) {
    ParamList out;
    out.push_back(meta_record(static_cast<float>(clf.kind), clf.arch, clf.class_count));
    if (clf.fg) {
        auto p = clf.fg->snapshot("fg.");
        out.insert(out.end(), p.begin(), p.end());
    }
    if (clf.bg) {
        auto p = clf.bg->snapshot("bg.");
        out.insert(out.end(), p.begin(), p.end());
    }
    if (clf.kind == Kind::joint) {
        record_tensor(out, "head.w", clf.fusion.W);
        record_tensor(out, "head.b", clf.fusion.b);
    } else {
        record_tensor(out, "head.w", clf.head.W);
        record_tensor(out, "head.b", clf.head.b);
    }
    return out;
}

Classifier classifier_from_params(const ParamList& params) {
    auto m = decode_meta(params);
    if (m.kind_code < 0.f || m.kind_code > 2.f)
        throw ParseError("checkpoint meta kind out of range", 0);
    auto clf = build_classifier(static_cast<Kind>(static_cast<int>(m.kind_code)), m.arch,
                                m.class_count, /*seed=*/0);
    if (clf.fg) clf.fg->restore(params, "fg.");
    if (clf.bg) clf.bg->restore(params, "bg.");
    if (clf.kind == Kind::joint) {
        load_tensor(params, "head.w", clf.fusion.W);
        load_tensor(params, "head.b", clf.fusion.b);
    } else {
        load_tensor(params, "head.w", clf.head.W);
        load_tensor(params, "head.b", clf.head.b);
    }
    return clf;
}

ParamList extractor_snapshot(const FeatureExtractor& ext) {
    ParamList out;
    out.push_back(meta_record(kMetaExtractor, ext.arch(), 0));
    auto p = ext.snapshot("");
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

FeatureExtractor extractor_from_params(const ParamList& params) {
    auto m = decode_meta(params);
    if (m.kind_code != kMetaExtractor)
        throw ParseError("checkpoint is not an extractor checkpoint", 0);
    FeatureExtractor ext(m.arch, /*seed=*/0);
    ext.restore(params, "");
    return ext;
}

}  // namespace fusion::model
