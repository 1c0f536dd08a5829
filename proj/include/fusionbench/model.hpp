#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fusionbench/ops.hpp"
#include "fusionbench/tensor.hpp"

namespace fusion::model {

struct ArchConfig {
    int input_channels = 3;
    int input_hw = 32;
    std::vector<int> channels{8, 16, 32};  // one conv/bn/relu/pool block per entry
    int output_dim = 64;
};

// Named parameter snapshot; the unit of checkpointing and freeze checks.
struct ParamRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
    std::size_t offset = 0;  // byte offset when decoded from a checkpoint
};
using ParamList = std::vector<ParamRecord>;

struct ConvBnBlock {
    Tensor conv_w;
    Tensor gamma, beta;
    BnStats<float> stats;
};

// Stack of conv3x3 -> batchnorm -> relu -> avgpool2 blocks followed by a
// feature stage (conv spanning the remaining spatial extent -> batchnorm)
// whose flattened output is the per-stream feature vector.
class FeatureExtractor {
public:
    FeatureExtractor(const ArchConfig& arch, std::uint64_t seed);

    // N x C x H x W images -> N x output_dim features. train_mode selects
    // batch statistics; a frozen extractor always runs in eval mode.
    Tensor forward(const Tensor& images, bool train_mode);

    int output_dim() const { return arch_.output_dim; }
    const ArchConfig& arch() const { return arch_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool f);

    // Trainable tensors; empty while frozen so optimizers cannot touch them.
    std::vector<Tensor> trainable_params();

    ParamList snapshot(const std::string& prefix) const;
    void restore(const ParamList& params, const std::string& prefix);

private:
    ArchConfig arch_;
    std::vector<ConvBnBlock> blocks_;
    ConvBnBlock feature_;
    int feature_kernel_;
    bool frozen_ = false;
};

struct LinearHead {
    Tensor W;  // D x C
    Tensor b;  // C
};

// Head over concatenated [foreground | background] features. The row blocks
// theta_fg = W[0:d_fg) and theta_bg = W[d_fg:d_fg+d_bg) are spans into W's
// storage: mutating a block mutates W.
struct FusionHead {
    Tensor W;  // (d_fg + d_bg) x C
    Tensor b;  // C
    int d_fg = 0;
    int d_bg = 0;

    std::span<float> theta_fg() {
        return W.data().subspan(0, static_cast<std::size_t>(d_fg) * W.size(1));
    }
    std::span<const float> theta_fg() const {
        return W.data().subspan(0, static_cast<std::size_t>(d_fg) * W.size(1));
    }
    std::span<float> theta_bg() {
        return W.data().subspan(static_cast<std::size_t>(d_fg) * W.size(1));
    }
    std::span<const float> theta_bg() const {
        return W.data().subspan(static_cast<std::size_t>(d_fg) * W.size(1));
    }
};

enum class Kind { foreground, background, joint };

const char* kind_name(Kind k);

struct Classifier {
    Kind kind = Kind::foreground;
    ArchConfig arch;
    int class_count = 0;
    std::shared_ptr<FeatureExtractor> fg;  // foreground and joint kinds
    std::shared_ptr<FeatureExtractor> bg;  // background and joint kinds
    LinearHead head;                       // foreground / background
    FusionHead fusion;                     // joint

    // Feature matrix feeding the head; the joint kind concatenates the
    // foreground stream first.
    Tensor features(const Tensor& images, bool train_mode = false) const;
    Tensor logits(const Tensor& images, bool train_mode = false) const;

    std::vector<Tensor> head_params();
    std::vector<Tensor> trainable_params(bool head_only);
};

// Deterministic construction: same (kind, arch, C, seed) gives bit-identical
// parameters. He-style fan-in init for conv/linear weights, zero biases.
Classifier build_classifier(Kind kind, const ArchConfig& arch, int class_count,
                            std::uint64_t seed);

// Joint classifier over two existing (typically pretrained) extractors.
Classifier make_joint(std::shared_ptr<FeatureExtractor> fg, std::shared_ptr<FeatureExtractor> bg,
                      int class_count, std::uint64_t seed);

struct Prediction {
    Tensor logits;
    std::vector<int> labels;  // argmax per row, ties toward the smallest index
};

Prediction predict(const Classifier& clf, const Tensor& images);
double accuracy(const Classifier& clf, const Tensor& images, const std::vector<int>& labels);

ParamList classifier_snapshot(const Classifier& clf);
Classifier classifier_from_params(const ParamList& params);

ParamList extractor_snapshot(const FeatureExtractor& ext);
FeatureExtractor extractor_from_params(const ParamList& params);

}  // namespace fusion::model
