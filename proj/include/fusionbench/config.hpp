#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fusionbench/data.hpp"
#include "fusionbench/model.hpp"
#include "fusionbench/training.hpp"

namespace fusion::cfg {

// Flat key=value configuration: one pair per line, '#' comments, dotted
// section prefixes (dataset.classes=8). Unknown keys are rejected.
struct KeyValues {
    std::vector<std::pair<std::string, std::string>> items;

    const std::string* find(const std::string& key) const;
    bool has(const std::string& key) const { return find(key) != nullptr; }
    void set(const std::string& key, const std::string& value);
};

KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::string& path);

// Canonical form (sorted keys) and its FNV-1a hash, stamped into outputs.
std::string canonical_text(const KeyValues& kv);
std::string config_hash_hex(const KeyValues& kv);

// Typed experiment configuration with workbench defaults.
struct ExperimentConfig {
    // dataset
    data::ContextMode mode = data::ContextMode::dissimilar;
    int classes = 8;
    int per_class = 500;
    int image_hw = 32;
    std::uint64_t data_seed = 7;
    double train_fraction = 0.75;
    std::string dataset_path;  // defaults to <out_dir>/dataset.cfds
    std::string cifar_path;    // when set, gen-data ingests this instead

    // model
    std::vector<int> channels{8, 16, 32};
    int output_dim = 64;
    std::uint64_t model_seed = 101;

    // extractor pretraining (full-mode)
    train::TrainConfig pretrain;

    // head training
    train::TrainConfig head;
    std::string train_kind = "joint";  // foreground | background | joint
    float train_alpha = 0.f;
    float train_adv_eps = -1.f;  // >= 0 switches to adversarial retraining
    bool warm_start = false;

    // attacks and sweeps
    std::vector<float> eps_grid{0.f, 0.05f, 0.1f, 0.2f, 0.3f, 0.5f};
    std::vector<float> sigma_grid{0.f, 0.5f, 1.f, 2.f, 5.f, 10.f, 45.f};
    std::string attack_source = "foreground";
    std::string attack_kind = "fgsm";  // fgsm | blur
    float attack_epsilon = 0.1f;
    float attack_sigma = 5.f;
    std::vector<std::string> curve_models{"foreground", "background", "joint"};
    std::string curve_axis = "epsilon";

    // regularization sweep
    std::vector<float> alphas{0.1f, 1.f, 10.f};
    float retrain_eps = 0.3f;

    std::string out_dir = "out";
    bool deterministic = false;

    model::ArchConfig arch() const;
    data::DatasetMeta dataset_meta() const;
    std::string path_in_out(const std::string& name) const;
};

// Parse + validate; FUSIONBENCH_OUT overrides out.dir when set.
ExperimentConfig experiment_from(const KeyValues& kv);

ExperimentConfig defaults_with_overrides(const KeyValues& kv);

}  // namespace fusion::cfg
