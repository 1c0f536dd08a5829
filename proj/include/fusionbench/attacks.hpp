#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "fusionbench/data.hpp"
#include "fusionbench/model.hpp"
#include "fusionbench/tensor.hpp"

namespace fusion::attack {

struct BlurConfig {
    float sigma = 0.f;
    enum class Region { bbox, full_image } region = Region::bbox;
};

struct AttackConfig {
    float epsilon = 0.f;
    std::string source_model;
    std::string loss_id = "softmax_cross_entropy";
};

// Truncated normalized Gaussian: radius ceil(3*sigma), weights summing to 1.
// Sigma below 0.01 collapses to the delta kernel [1].
std::vector<float> gaussian_kernel(float sigma);

// Separable blur of the bbox crop (horizontal then vertical pass, reflect
// padding at the crop borders). Pixels outside the bbox are bit-identical to
// the input. A degenerate bbox returns the input unchanged.
std::vector<float> blur_region(const std::vector<float>& image, int h, int w,
                               const data::BBox& bbox, float sigma);

data::Dataset blur_dataset(const data::Dataset& ds, const BlurConfig& cfg);

// Valid value range per channel after normalization; FGSM clamps into it.
struct DomainBounds {
    std::array<float, 3> lo{0.f, 0.f, 0.f};
    std::array<float, 3> hi{1.f, 1.f, 1.f};
};

DomainBounds normalized_domain(const data::DatasetMeta& meta);

// Eval-mode forward producing N x C logits; gradient flows to the input.
using LogitsFn = std::function<Tensor(const Tensor&)>;

struct AdversarialBatch {
    Tensor x_adv;
    Tensor eta;  // epsilon * sign(grad), before clamping
    float epsilon = 0.f;
    std::string source_id;
};

// x_adv = clamp(x + epsilon * sign(dJ/dx)) with sign(0) = 0. J is the
// cross-entropy of f(x) against the true one-hot targets.
AdversarialBatch fgsm(const LogitsFn& f, const Tensor& x, const Tensor& targets, float epsilon,
                      const DomainBounds& domain, const std::string& source_id = "");

AdversarialBatch fgsm(const model::Classifier& source, const Tensor& x, const Tensor& targets,
                      float epsilon, const DomainBounds& domain);

struct TransferResult {
    std::vector<const model::Classifier*> models;  // source first if it was absent
    std::vector<double> accuracy;
};

// Craft once against `source` over the whole test set, evaluate every target
// on the same adversarial inputs. The source itself is evaluated too
// (white-box column) even when missing from `targets`.
TransferResult transfer_attack(const model::Classifier& source,
                               std::vector<const model::Classifier*> targets,
                               const data::Dataset& testset, float epsilon,
                               int batch_size = 256);

}  // namespace fusion::attack
