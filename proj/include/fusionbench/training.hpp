#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusionbench/attacks.hpp"
#include "fusionbench/data.hpp"
#include "fusionbench/model.hpp"

namespace fusion::train {

struct TrainConfig {
    float lr = 0.05f;
    float momentum = 0.9f;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 11;
    enum class Mode { full, head_only } mode = Mode::head_only;
};

struct RegConfig {
    float alpha = 0.f;
    // start from the unregularized head instead of a fresh init
    bool warm_start = false;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> train_acc;
    std::vector<double> test_acc;
    std::vector<std::pair<std::string, std::string>> metadata;
};

// Plain SGD with momentum: v = mu * v + g; w -= lr * v.
class Sgd {
public:
    Sgd(std::vector<Tensor> params, float lr, float momentum);
    void step();
    void zero_grad();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> velocity_;
    float lr_;
    float momentum_;
};

// Mini-batch SGD over seeded shuffles. head_only mode requires frozen
// extractors and trains only the head; full mode trains everything that is
// not frozen. Deterministic given (seed, config, dataset).
TrainHistory train(model::Classifier& clf, const data::Dataset& train_set,
                   const data::Dataset& test_set, const TrainConfig& cfg);

// Cross entropy plus alpha * sum(theta_fg^2); the penalty covers only the
// foreground row block, not the bias and not theta_bg. alpha = 0 returns the
// cross entropy node itself, so training reduces to the plain loss bit for
// bit.
Tensor regularized_joint_loss(const Tensor& logits, const Tensor& targets,
                              model::FusionHead& head, float alpha);

TrainHistory train_regularized_joint(model::Classifier& joint, const data::Dataset& train_set,
                                     const data::Dataset& test_set, const TrainConfig& cfg,
                                     float alpha);

// Each mini-batch mixes 50% clean samples with 50% FGSM examples crafted
// on the fly against the current model at eps_train; plain cross entropy
// over the mixed batch. eps_train = 0 reproduces train() bit for bit.
TrainHistory adversarial_retrain(model::Classifier& clf, const data::Dataset& train_set,
                                 const data::Dataset& test_set, float eps_train,
                                 const TrainConfig& cfg);

// Replace the second half of the batch with FGSM examples against `clf`.
Tensor mixed_adversarial_batch(const model::Classifier& clf, const Tensor& images,
                               const Tensor& targets, float eps,
                               const attack::DomainBounds& domain);

// History CSV: '#'-prefixed key=value metadata lines, then
// "epoch,train_loss,train_acc,test_acc" rows.
std::string history_csv(const TrainHistory& h,
                        const std::vector<std::pair<std::string, std::string>>& extra = {});
void save_history_csv(const std::string& path, const TrainHistory& h,
                      const std::vector<std::pair<std::string, std::string>>& extra = {});

}  // namespace fusion::train
