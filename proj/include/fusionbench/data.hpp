#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fusionbench/tensor.hpp"

namespace fusion::data {

struct BBox {
    int row = 0, col = 0, h = 0, w = 0;
    int area() const { return h * w; }
};

struct Sample {
    std::vector<float> image;  // 3*H*W row-major, values in [0,1]
    int label = 0;
    int supercategory_id = 0;
    int context_id = 0;
    BBox bbox;
};

enum class ContextMode : std::uint8_t { dissimilar = 0, similar = 1, uniform = 2 };

const char* mode_name(ContextMode m);
ContextMode mode_from_name(const std::string& name);

struct DatasetMeta {
    int class_count = 8;
    int h = 32, w = 32;
    ContextMode mode = ContextMode::dissimilar;
    std::vector<int> class_to_supercat;  // derived from mode when empty
    std::array<float, 3> mean{0.f, 0.f, 0.f};
    std::array<float, 3> stddev{1.f, 1.f, 1.f};
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Sample> samples;
};

struct Batch {
    Tensor images;   // N x 3 x H x W
    Tensor targets;  // N x C one-hot
    std::vector<int> labels;
    std::vector<BBox> bboxes;
};

// Procedural object-on-context images. Context texture is keyed by
// context_id with per-sample jitter; the class-keyed glyph sits inside a
// random bbox of area in [0.15, 0.5] * H * W. Context assignment:
//   dissimilar - one class per supercategory, context_id == supercategory_id
//   similar    - classes grouped into supercategories; each sample draws a
//                context from its supercategory's pool
//   uniform    - context_id uniform over all contexts (negative control)
Dataset generate_synthetic(DatasetMeta meta, int n_per_class, std::uint64_t seed);

// Foreground pretraining view: everything outside the bbox -> neutral gray.
Dataset object_only(const Dataset& ds);
// Background pretraining view: bbox interior -> neutral gray.
Dataset context_only(const Dataset& ds);

// CIFAR-10 binary batch: records of 1 label byte + 3072 channel-planar
// pixel bytes; pixels scaled to [0,1].
std::vector<std::pair<int, std::vector<float>>> parse_cifar10_batch(
    std::span<const std::uint8_t> bytes);

Dataset dataset_from_cifar(std::span<const std::uint8_t> bytes);

// Per-channel (x - mean) / std over an N x 3 x H x W tensor.
Tensor normalize_images(const Tensor& images, const std::array<float, 3>& mean,
                        const std::array<float, 3>& stddev);
Tensor unnormalize_images(const Tensor& images, const std::array<float, 3>& mean,
                          const std::array<float, 3>& stddev);

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, bool normalized = true);
Batch make_batch(const Dataset& ds, bool normalized = true);

// Seeded stratified split: per class, shuffled then prefix to train with the
// remainder to test. Per-class train counts deviate from the target fraction
// by at most one sample.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);

// Dataset container, all integers little-endian:
//   magic "CFDS", version u16, C u16, H u16, W u16, mode u8, count u32;
//   per sample: label u16, supercategory u16, context u16, bbox 4 x u16,
//   image as f32. Mode byte 255 marks adversarial batches.
constexpr std::uint8_t kAdversarialModeByte = 255;
std::vector<std::uint8_t> encode_cfds(const Dataset& ds, std::uint8_t mode_byte_override = 0xFE);
Dataset decode_cfds(std::span<const std::uint8_t> bytes);
void save_cfds(const std::string& path, const Dataset& ds,
               std::uint8_t mode_byte_override = 0xFE);
Dataset load_cfds(const std::string& path);

int context_count(const DatasetMeta& meta);

}  // namespace fusion::data
