#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fusionbench/analysis.hpp"
#include "fusionbench/config.hpp"
#include "fusionbench/training.hpp"

namespace fusion::exp {

// Progress callback; the CLI prints, tests stay quiet.
using Log = std::function<void(const std::string&)>;
inline void no_log(const std::string&) {}

// One fully prepared experiment context: generated data, pretrained frozen
// extractors, and the three trained classifier heads.
struct Workbench {
    data::Dataset train_set, test_set;
    std::shared_ptr<model::FeatureExtractor> fg_ext, bg_ext;
    model::Classifier fg, bg, joint;
    train::TrainHistory fg_hist, bg_hist, joint_hist;
    train::TrainHistory fg_pretrain_hist, bg_pretrain_hist;
};

// Pretrains the foreground extractor on object-only renderings against class
// labels and the background extractor on context-only renderings against
// context ids, freezes both, then trains the three heads.
Workbench build_workbench(const cfg::ExperimentConfig& ec, data::ContextMode mode,
                          const Log& log = no_log);

// Same pipeline but starting from an existing dataset.
Workbench build_workbench_from(const cfg::ExperimentConfig& ec, const data::Dataset& full,
                               const Log& log = no_log);

struct PretrainResult {
    std::shared_ptr<model::FeatureExtractor> fg_ext, bg_ext;
    train::TrainHistory fg_hist, bg_hist;
};

PretrainResult pretrain_extractors(const cfg::ExperimentConfig& ec, const data::Dataset& train_set,
                                   const data::Dataset& test_set, const Log& log = no_log);

// Classifier of the given kind over already-pretrained frozen extractors,
// with a deterministically seeded fresh head.
model::Classifier assemble_classifier(model::Kind kind,
                                      std::shared_ptr<model::FeatureExtractor> fg_ext,
                                      std::shared_ptr<model::FeatureExtractor> bg_ext,
                                      int class_count, std::uint64_t model_seed);

struct Fig2Result {
    float sigma = 5.f;
    analysis::ShiftReport fg_shift, bg_shift;
    analysis::Pca2Result fg_pca, bg_pca;  // fitted on clean+blurred, stacked
    std::vector<int> labels;              // per clean row; blurred rows repeat them
    int clean_count = 0;
};

// Feature-shift study: blur the test set inside the bbox and compare the
// per-stream subspace shift; the PCA projections back the scatter plots.
Fig2Result run_fig2(Workbench& wb, float sigma = 5.f);

// Blur robustness curve for {foreground, background, joint}.
analysis::RobustnessCurve run_blur_curve(Workbench& wb, const std::vector<float>& sigma_grid);

struct Fig4Result {
    analysis::RobustnessCurve transfer;  // foreground-crafted FGSM
    analysis::WeightSummary weights;     // trained joint head
};

Fig4Result run_fig4(Workbench& wb, const std::vector<float>& eps_grid);

struct Fig5Result {
    std::vector<float> alphas;
    std::vector<model::Classifier> joints;  // one per alpha, trained from scratch
    std::vector<analysis::WeightSummary> weights;
    model::Classifier retrained;  // foreground head retrained at retrain_eps
    train::TrainHistory retrained_hist;
    // rows: foreground, background, joint_a<alpha>..., retrained_transfer,
    // retrained_whitebox (crafted against the retrained model itself)
    analysis::RobustnessCurve curve;
};

Fig5Result run_fig5(Workbench& wb, const cfg::ExperimentConfig& ec, const Log& log = no_log);

// Artifact writers used by the CLI `reproduce` subcommand.
void write_fig2(const std::string& dir, const Fig2Result& r,
                const std::vector<std::string>& header);
void write_curve(const std::string& dir, const std::string& name,
                 const analysis::RobustnessCurve& curve, const std::string& title,
                 const std::vector<std::string>& header);
void write_fig4(const std::string& dir, const std::string& tag, const Fig4Result& r,
                const std::vector<std::string>& header);
void write_fig5(const std::string& dir, const Fig5Result& r,
                const std::vector<std::string>& header);

void ensure_dir(const std::string& path);

}  // namespace fusion::exp
